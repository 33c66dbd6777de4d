"""Per-step simulation engine.

Each step (1) draws one noisy observation of the source, (2) folds it into
every agent's mixture belief with the Bayesian update, (3) mixes means,
variances, and weights with in-neighbors through the social policies, all
reading post-Bayes values only (Jacobi-style, never partially updated
neighbors), and (4) overwrites stubborn agents' mode means with their pinned
value. State is stacked into (agents, modes) arrays internally; the engine is
deterministic given the generator passed in.

Two gain modes exist. The default "exact" mode runs the full per-mode gains
and variance recursion. The "steady" mode freezes every variance at the
fixed point sigma_inf and uses the constant gain sigma_inf/(sigma_inf +
sigma_y), which makes one engine step on means exactly equal to the linear
map A mu + B 1 y of the matrix form.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import (
    GaussianMixtureBelief,
    ObservationModel,
    _bayes_arrays_exact,
    _bayes_arrays_steady,
    _normalize_log_weights,
)
from .errors import InvalidParameterError
from .network import SocialGraph

__all__ = [
    "PolicyConfig",
    "AgentState",
    "RunStats",
    "TrajectoryRecord",
    "draw_observation",
    "social_step_means",
    "social_step_variances",
    "social_step_weights",
    "step",
    "simulate",
]

log = logging.getLogger(__name__)

#: Variances produced by the social step are clamped up to this floor.
VARIANCE_FLOOR = 1e-12

#: Weights below this floor enter the geometric policy's log transform at the floor.
GEOMETRIC_WEIGHT_FLOOR = 1e-300

#: Recorded weights must sum to 1 per agent within this tolerance.
SIMPLEX_TOL = 1e-10

WEIGHT_POLICIES = ("identity", "geometric")
GAIN_MODES = ("exact", "steady")


@dataclass(frozen=True)
class PolicyConfig:
    """Social mixing rates and the weight policy selector.

    delta_mu scales mean mixing, delta_sigma scales variance mixing, nu is
    the constant variance inflation added every step, and weight_policy picks
    how mode weights react to neighbors: "identity" leaves them to the
    Bayesian update alone, "geometric" mixes their logs with edge weights as
    exponents.
    """

    delta_mu: float
    delta_sigma: float
    nu: float
    weight_policy: str = "identity"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delta_mu) and self.delta_mu > 0.0):
            raise InvalidParameterError(
                f"delta_mu must be positive, got {self.delta_mu}"
            )
        if not (math.isfinite(self.delta_sigma) and self.delta_sigma >= 0.0):
            raise InvalidParameterError(
                f"delta_sigma must be >= 0, got {self.delta_sigma}"
            )
        if not (math.isfinite(self.nu) and self.nu >= 0.0):
            raise InvalidParameterError(f"nu must be >= 0, got {self.nu}")
        if self.weight_policy not in WEIGHT_POLICIES:
            raise InvalidParameterError(
                f"weight_policy must be one of {WEIGHT_POLICIES}, "
                f"got {self.weight_policy!r}"
            )


@dataclass(frozen=True)
class AgentState:
    """One agent's belief plus its stubbornness setting."""

    belief: GaussianMixtureBelief
    stubborn: bool = False
    stubborn_value: float = 0.0

    def __post_init__(self) -> None:
        if self.stubborn and not math.isfinite(self.stubborn_value):
            raise InvalidParameterError("stubborn_value must be finite")


@dataclass
class RunStats:
    """Diagnostics accumulated over a run."""

    variance_clamps: int = 0
    weight_degeneracies: int = 0


@dataclass
class TrajectoryRecord:
    """Everything a run produced, stacked by step.

    means, variances, weights have shape (horizon, n_agents, n_modes) and
    hold post-social-step values; step k of the run (1-based in the CSV) is
    row k-1. observations has shape (horizon,) for a shared draw per step or
    (horizon, n_agents) for independent draws. The post-Bayes intermediates
    are retained only on request.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    observations: np.ndarray
    stats: RunStats = field(default_factory=RunStats)
    post_means: np.ndarray | None = None
    post_variances: np.ndarray | None = None
    post_weights: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.means.shape[0]

    @property
    def n_agents(self) -> int:
        return self.means.shape[1]

    @property
    def n_modes(self) -> int:
        return self.means.shape[2]

    def observation_for(self, k: int, agent: int) -> float:
        """Observation seen by agent (1-based) at step k (1-based)."""
        row = self.observations[k - 1]
        return float(row if np.ndim(row) == 0 else row[agent - 1])

    def trailing_means(self, window: int) -> np.ndarray:
        """Per-agent per-mode average of means over the last `window` steps."""
        if not (1 <= window <= self.n_steps):
            raise InvalidParameterError(
                f"window must lie in [1, {self.n_steps}], got {window}"
            )
        return self.means[-window:].mean(axis=0)

    def trailing_mixture_means(self, window: int) -> np.ndarray:
        """Per-agent average of the weight-mixed mean over the last `window` steps."""
        if not (1 <= window <= self.n_steps):
            raise InvalidParameterError(
                f"window must lie in [1, {self.n_steps}], got {window}"
            )
        mixed = np.sum(self.weights[-window:] * self.means[-window:], axis=2)
        return mixed.mean(axis=0)

    def validate(self) -> None:
        """Check recorded-shape consistency and the per-step weight simplex."""
        shape = self.means.shape
        if self.variances.shape != shape or self.weights.shape != shape:
            raise InvalidParameterError("trajectory arrays disagree on shape")
        sums = self.weights.sum(axis=2)
        worst = float(np.max(np.abs(sums - 1.0), initial=0.0))
        if worst > SIMPLEX_TOL:
            raise InvalidParameterError(
                f"recorded weights leave the simplex by {worst:.3e}"
            )

    def to_csv(self, path: str | Path) -> None:
        """Write the long-format trajectory: k,agent,mode,mu,sigma,alpha,y.

        Ids are 1-based; values print with 17 significant digits.
        """
        t, n, m = self.means.shape
        shared = self.observations.ndim == 1
        lines = ["k,agent,mode,mu,sigma,alpha,y"]
        for k in range(t):
            yk = self.observations[k]
            for a in range(n):
                y = float(yk) if shared else float(yk[a])
                for i in range(m):
                    lines.append(
                        f"{k + 1},{a + 1},{i + 1},{self.means[k, a, i]:.16e},"
                        f"{self.variances[k, a, i]:.16e},"
                        f"{self.weights[k, a, i]:.16e},{y:.16e}"
                    )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrajectoryRecord":
        """Read a trajectory written by :meth:`to_csv`."""
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["k", "agent", "mode", "mu", "sigma", "alpha", "y"]:
                raise InvalidParameterError(f"{path}: unexpected header {header}")
            rows = [
                (int(r[0]), int(r[1]), int(r[2]), float(r[3]), float(r[4]),
                 float(r[5]), float(r[6]))
                for r in reader
            ]
        if not rows:
            raise InvalidParameterError(f"{path}: empty trajectory")
        t = max(r[0] for r in rows)
        n = max(r[1] for r in rows)
        m = max(r[2] for r in rows)
        means = np.full((t, n, m), np.nan)
        variances = np.full((t, n, m), np.nan)
        weights = np.full((t, n, m), np.nan)
        obs = np.full((t, n), np.nan)
        for k, a, i, mu, sigma, alpha, y in rows:
            means[k - 1, a - 1, i - 1] = mu
            variances[k - 1, a - 1, i - 1] = sigma
            weights[k - 1, a - 1, i - 1] = alpha
            obs[k - 1, a - 1] = y
        if np.any(np.isnan(means)) or np.any(np.isnan(obs)):
            raise InvalidParameterError(f"{path}: incomplete trajectory grid")
        if np.all(obs == obs[:, :1]):
            observations = obs[:, 0]
        else:
            observations = obs
        return cls(
            means=means, variances=variances, weights=weights,
            observations=observations,
        )


def draw_observation(obs: ObservationModel, rng: np.random.Generator) -> float:
    """One noisy observation y = theta + sqrt(sigma_y) * z, z standard normal."""
    return float(obs.theta + math.sqrt(obs.sigma_y) * rng.standard_normal())


def _mixing_matrix(g: SocialGraph, rate: float) -> np.ndarray:
    """I + rate * (W^T - D): one in-neighbor averaging step on stacked columns."""
    return np.eye(g.n) + rate * (g.weights.T - np.diag(g.in_weight_sums()))


def _as_agent_mode(values, n: int, name: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(values, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != n:
        raise InvalidParameterError(
            f"{name} must have one row per agent ({n}), got shape {arr.shape}"
        )
    return arr, squeeze


def social_step_means(post_means, g: SocialGraph, delta_mu: float) -> np.ndarray:
    """Mix post-Bayes means with in-neighbors, each mode independently.

    mu_j <- mu_j + delta_mu * sum over in-neighbors l of w_lj (mu_l - mu_j).
    Accepts shape (n,) or (n, modes).
    """
    arr, squeeze = _as_agent_mode(post_means, g.n, "post_means")
    out = _mixing_matrix(g, delta_mu) @ arr
    return out[:, 0] if squeeze else out


def social_step_variances(
    post_vars, g: SocialGraph, delta_sigma: float, nu: float
) -> np.ndarray:
    """Mix post-Bayes variances with in-neighbors and add the inflation nu.

    Results are clamped up to ``VARIANCE_FLOOR``; a non-positive pre-clamp
    value is possible only for extreme delta_sigma and is logged.
    """
    arr, squeeze = _as_agent_mode(post_vars, g.n, "post_vars")
    out = _mixing_matrix(g, delta_sigma) @ arr + nu
    bad = int(np.count_nonzero(out <= 0.0))
    if bad:
        log.warning("social variance step clamped %d non-positive values", bad)
    out = np.maximum(out, VARIANCE_FLOOR)
    return out[:, 0] if squeeze else out


def _geometric_weights(post_weights: np.ndarray, mix: np.ndarray) -> tuple[np.ndarray, int]:
    """Log-space geometric weight mixing; returns (weights, degenerate rows)."""
    floored = np.maximum(post_weights, GEOMETRIC_WEIGHT_FLOOR)
    log_w = np.log(floored)
    mixed = mix @ log_w
    return _normalize_log_weights(mixed)


def social_step_weights(post_weights, g: SocialGraph, policy: PolicyConfig) -> np.ndarray:
    """Apply the configured weight policy to post-Bayes weights.

    identity: unchanged. geometric: each weight is multiplied by the product
    of neighbor/own weight ratios raised to the edge weights, then the agent's
    weights are renormalized; computed in log space with a 1e-300 floor.
    """
    arr, squeeze = _as_agent_mode(post_weights, g.n, "post_weights")
    if policy.weight_policy == "identity":
        out = arr.copy()
    else:
        out, degenerate = _geometric_weights(arr, _mixing_matrix(g, 1.0))
        if degenerate:
            log.warning("geometric weight step hit %d degenerate rows", degenerate)
    return out[:, 0] if squeeze else out


def _states_to_arrays(
    states: Sequence[AgentState],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if not states:
        raise InvalidParameterError("need at least one agent")
    m = states[0].belief.n_modes
    if any(s.belief.n_modes != m for s in states):
        raise InvalidParameterError("all agents must have the same mode count")
    means = np.array([s.belief.means for s in states], dtype=float)
    variances = np.array([s.belief.variances for s in states], dtype=float)
    weights = np.array([s.belief.weights for s in states], dtype=float)
    stubborn = np.array([s.stubborn for s in states], dtype=bool)
    values = np.array([s.stubborn_value for s in states], dtype=float)
    return means, variances, weights, stubborn, values


def _arrays_to_states(
    means: np.ndarray,
    variances: np.ndarray,
    weights: np.ndarray,
    stubborn: np.ndarray,
    values: np.ndarray,
) -> list[AgentState]:
    return [
        AgentState(
            belief=GaussianMixtureBelief.from_arrays(
                means[j], variances[j], weights[j]
            ),
            stubborn=bool(stubborn[j]),
            stubborn_value=float(values[j]),
        )
        for j in range(means.shape[0])
    ]


class _Engine:
    """Precomputed per-run state for the stacked-array step."""

    def __init__(
        self,
        g: SocialGraph,
        policy: PolicyConfig,
        obs: ObservationModel,
        gain_mode: str,
        sigma_inf: float | None,
    ) -> None:
        if gain_mode not in GAIN_MODES:
            raise InvalidParameterError(
                f"gain_mode must be one of {GAIN_MODES}, got {gain_mode!r}"
            )
        if gain_mode == "steady":
            if sigma_inf is None:
                raise InvalidParameterError(
                    "steady gain mode needs sigma_inf (see sigma_fixed_point)"
                )
            if sigma_inf < 0.0:
                raise InvalidParameterError(f"sigma_inf must be >= 0, got {sigma_inf}")
        self.g = g
        self.policy = policy
        self.obs = obs
        self.gain_mode = gain_mode
        self.sigma_inf = sigma_inf
        self.mix_mu = _mixing_matrix(g, policy.delta_mu)
        self.mix_sigma = _mixing_matrix(g, policy.delta_sigma)
        self.mix_alpha = _mixing_matrix(g, 1.0)

    def advance(self, means, variances, weights, stubborn, values, y, stats):
        if self.gain_mode == "steady":
            post_means, post_weights, degenerate = _bayes_arrays_steady(
                means, weights, y, self.sigma_inf, self.obs.sigma_y
            )
            post_vars = variances
        else:
            post_means, post_vars, post_weights, degenerate = _bayes_arrays_exact(
                means, variances, weights, y, self.obs.sigma_y
            )
        stats.weight_degeneracies += degenerate

        new_means = self.mix_mu @ post_means
        if self.gain_mode == "steady":
            new_vars = post_vars
        else:
            new_vars = self.mix_sigma @ post_vars + self.policy.nu
            bad = int(np.count_nonzero(new_vars <= 0.0))
            if bad:
                stats.variance_clamps += bad
                new_vars = np.maximum(new_vars, VARIANCE_FLOOR)
        if self.policy.weight_policy == "geometric":
            new_weights, degenerate = _geometric_weights(post_weights, self.mix_alpha)
            stats.weight_degeneracies += degenerate
        else:
            new_weights = post_weights

        if stubborn.any():
            new_means[stubborn, :] = values[stubborn, None]
        post = (post_means, post_vars, post_weights)
        return new_means, new_vars, new_weights, post


def _draw_step_observation(
    obs: ObservationModel,
    rng: np.random.Generator,
    n: int,
    observation: str,
    noise_free: bool,
):
    if noise_free:
        return obs.theta if observation == "shared" else np.full(n, obs.theta)
    if observation == "shared":
        return draw_observation(obs, rng)
    return obs.theta + math.sqrt(obs.sigma_y) * rng.standard_normal(n)


def step(
    states: Sequence[AgentState],
    g: SocialGraph,
    policy: PolicyConfig,
    obs: ObservationModel,
    rng: np.random.Generator,
    *,
    gain_mode: str = "exact",
    sigma_inf: float | None = None,
    noise_free: bool = False,
) -> tuple[list[AgentState], float]:
    """Advance every agent one step; returns (new states, observation).

    Order inside the step: draw y, Bayesian-update all agents (stubborn ones
    included), social-mix means/variances/weights off the post-Bayes values,
    then overwrite stubborn agents' mode means with their pinned value.
    """
    means, variances, weights, stubborn, values = _states_to_arrays(states)
    if len(states) != g.n:
        raise InvalidParameterError(
            f"graph has {g.n} nodes but {len(states)} states were given"
        )
    engine = _Engine(g, policy, obs, gain_mode, sigma_inf)
    y = _draw_step_observation(obs, rng, g.n, "shared", noise_free)
    stats = RunStats()
    new_means, new_vars, new_weights, _ = engine.advance(
        means, variances, weights, stubborn, values, y, stats
    )
    if stats.variance_clamps:
        log.warning("step clamped %d variances", stats.variance_clamps)
    if stats.weight_degeneracies:
        log.warning("step hit %d weight degeneracies", stats.weight_degeneracies)
    return _arrays_to_states(new_means, new_vars, new_weights, stubborn, values), float(y)


def simulate(
    states: Sequence[AgentState],
    g: SocialGraph,
    policy: PolicyConfig,
    obs: ObservationModel,
    horizon: int,
    rng: np.random.Generator,
    *,
    gain_mode: str = "exact",
    sigma_inf: float | None = None,
    observation: str = "shared",
    noise_free: bool = False,
    retain_intermediate: bool = False,
) -> TrajectoryRecord:
    """Run the engine `horizon` steps from the given initial states.

    The initial states are step 0 and are not recorded; rows hold the states
    after steps 1..horizon. With observation="independent" each agent draws
    its own y per step (an off-contract exploration variant; the shared draw
    is what the linear theory models). noise_free pins every draw at theta.
    """
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    if observation not in ("shared", "independent"):
        raise InvalidParameterError(
            f"observation must be 'shared' or 'independent', got {observation!r}"
        )
    means, variances, weights, stubborn, values = _states_to_arrays(states)
    if len(states) != g.n:
        raise InvalidParameterError(
            f"graph has {g.n} nodes but {len(states)} states were given"
        )
    engine = _Engine(g, policy, obs, gain_mode, sigma_inf)
    if gain_mode == "steady":
        variances = np.full_like(variances, engine.sigma_inf)

    n, m = means.shape
    rec_means = np.empty((horizon, n, m))
    rec_vars = np.empty((horizon, n, m))
    rec_weights = np.empty((horizon, n, m))
    rec_obs = np.empty(horizon) if observation == "shared" else np.empty((horizon, n))
    keep = retain_intermediate
    rec_post = (
        (np.empty((horizon, n, m)), np.empty((horizon, n, m)), np.empty((horizon, n, m)))
        if keep
        else None
    )
    stats = RunStats()

    for k in range(horizon):
        y = _draw_step_observation(obs, rng, n, observation, noise_free)
        means, variances, weights, post = engine.advance(
            means, variances, weights, stubborn, values, y, stats
        )
        rec_means[k] = means
        rec_vars[k] = variances
        rec_weights[k] = weights
        rec_obs[k] = y
        if keep:
            rec_post[0][k], rec_post[1][k], rec_post[2][k] = post

    record = TrajectoryRecord(
        means=rec_means,
        variances=rec_vars,
        weights=rec_weights,
        observations=rec_obs,
        stats=stats,
        post_means=rec_post[0] if keep else None,
        post_variances=rec_post[1] if keep else None,
        post_weights=rec_post[2] if keep else None,
    )
    record.validate()
    return record
