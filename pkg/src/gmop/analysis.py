"""Closed-form predictors and stability diagnostics for the mean dynamics.

The common mode variance has a unique fixed point sigma_inf = (nu +
sqrt(nu^2 + 4 nu sigma_y)) / 2, zero exactly when nu is zero. At that fixed
point the stacked mean dynamics are linear, mu[k+1] = A mu[k] + B 1 y[k];
when the spectral radius of A is below one the means converge in expectation
to the truth theta with limiting covariance c 1 1^T, c = sigma_y *
sigma_inf / (sigma_inf + 2 sigma_y). Pinning one agent's means to mu_dagger
shifts the crowd to the equilibrium gamma of the reduced block system, and
the average displacement of gamma from theta measures how much leverage that
agent has over the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InstabilityError, InvalidParameterError, NumericalError
from .network import (
    SocialGraph,
    build_system_matrices,
    check_row_sum_condition,
    spectral_radius,
)

__all__ = [
    "TheoryPrediction",
    "StabilityReport",
    "sigma_fixed_point",
    "asymptotic_mean_cov",
    "verify_covariance_fixed_point",
    "stubborn_equilibrium",
    "centrality_score",
    "stability_report",
    "predict",
    "build_summary",
]


def sigma_fixed_point(nu: float, sigma_y: float) -> float:
    """Unique non-negative fixed point of x -> x*sigma_y/(x+sigma_y) + nu.

    Returns (nu + sqrt(nu^2 + 4*nu*sigma_y)) / 2; zero when nu is zero.
    """
    if not (math.isfinite(nu) and nu >= 0.0):
        raise InvalidParameterError(f"nu must be >= 0, got {nu}")
    if not (math.isfinite(sigma_y) and sigma_y > 0.0):
        raise InvalidParameterError(f"sigma_y must be positive, got {sigma_y}")
    return (nu + math.sqrt(nu * nu + 4.0 * nu * sigma_y)) / 2.0


def asymptotic_mean_cov(
    theta: float, sigma_y: float, sigma_inf: float, n: int
) -> tuple[np.ndarray, float]:
    """Limits of the stacked mean process under the stability conditions.

    Returns (mean vector, c) where the mean is theta at every agent and the
    limiting covariance is c times the all-ones matrix, with
    c = sigma_y * sigma_inf / (sigma_inf + 2 * sigma_y).
    """
    if not math.isfinite(theta):
        raise InvalidParameterError(f"theta must be finite, got {theta}")
    if sigma_y <= 0.0:
        raise InvalidParameterError(f"sigma_y must be positive, got {sigma_y}")
    if sigma_inf < 0.0:
        raise InvalidParameterError(f"sigma_inf must be >= 0, got {sigma_inf}")
    if n < 1:
        raise InvalidParameterError(f"n must be positive, got {n}")
    c = sigma_y * sigma_inf / (sigma_inf + 2.0 * sigma_y)
    return np.full(n, float(theta)), c


def verify_covariance_fixed_point(
    P: np.ndarray, A: np.ndarray, B_eff: np.ndarray, sigma_y: float
) -> float:
    """Max-abs residual of P - (A P A^T + sigma_y * B_eff 1 1^T B_eff^T)."""
    P = np.asarray(P, dtype=float)
    A = np.asarray(A, dtype=float)
    B_eff = np.asarray(B_eff, dtype=float)
    n = A.shape[0]
    ones = np.ones((n, 1))
    forcing = sigma_y * (B_eff @ ones) @ (B_eff @ ones).T
    residual = P - (A @ P @ A.T + forcing)
    return float(np.max(np.abs(residual)))


def _partition(
    g: SocialGraph, delta_mu: float, sigma_inf: float, sigma_y: float, stubborn_id: int
) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """Split A into the malleable block and the stubborn column."""
    if not (1 <= stubborn_id <= g.n):
        raise InvalidParameterError(
            f"stubborn node must lie in [1, {g.n}], got {stubborn_id}"
        )
    mats = build_system_matrices(g, delta_mu, sigma_inf, sigma_y)
    keep = np.array([j for j in range(g.n) if j != stubborn_id - 1])
    a_sub = mats.A[np.ix_(keep, keep)]
    a_col = mats.A[keep, stubborn_id - 1]
    return a_sub, a_col, mats.sigma_scalar, keep


def stubborn_equilibrium(
    g: SocialGraph,
    delta_mu: float,
    sigma_inf: float,
    sigma_y: float,
    stubborn_id: int,
    mu_dagger: float,
    theta: float,
) -> np.ndarray:
    """Limit means gamma of the malleable agents when one agent is pinned.

    Solves (I - A_sub) gamma = B_sub 1 theta + a_col mu_dagger, where the
    block partition removes the stubborn agent's row and column. The result
    is ordered by original node id with the stubborn node skipped.

    Raises InstabilityError when the reduced block's spectral radius reaches
    one, and NumericalError (with a condition estimate) if the solve fails.
    """
    a_sub, a_col, sigma_scalar, _ = _partition(
        g, delta_mu, sigma_inf, sigma_y, stubborn_id
    )
    rho = spectral_radius(a_sub)
    if rho >= 1.0:
        raise InstabilityError(
            f"reduced system is unstable: spectral radius {rho:.6f} >= 1"
        )
    system = np.eye(g.n - 1) - a_sub
    rhs = (1.0 - sigma_scalar) * theta + a_col * mu_dagger
    try:
        gamma = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"singular reduced system (condition estimate "
            f"{np.linalg.cond(system):.3e})"
        ) from exc
    if not np.all(np.isfinite(gamma)):
        raise NumericalError(
            f"non-finite equilibrium (condition estimate "
            f"{np.linalg.cond(system):.3e})"
        )
    return gamma


def centrality_score(
    g: SocialGraph,
    delta_mu: float,
    sigma_inf: float,
    sigma_y: float,
    node: int,
    mu_dagger: float,
    theta: float,
) -> float:
    """Mean absolute displacement of the crowd's limit from theta.

    score(s) = (1/(N-1)) * sum over j != s of |gamma_j(s) - theta| when node
    s is made stubborn with opinion mu_dagger. Larger scores mean the node
    can drag the network further from the truth.
    """
    gamma = stubborn_equilibrium(
        g, delta_mu, sigma_inf, sigma_y, node, mu_dagger, theta
    )
    return float(np.mean(np.abs(gamma - theta)))


@dataclass(frozen=True)
class TheoryPrediction:
    """Bundle of the closed-form limits for one configured system."""

    sigma_inf: float
    limit_mean: np.ndarray
    limit_cov_scalar: float
    spectral_radius: float
    conditions: dict


@dataclass(frozen=True)
class StabilityReport:
    """Hypothesis checks for the convergence results."""

    spectral_radius: float
    stubborn_spectral_radius: float | None
    row_sum_residual: float
    sigma_inf: float
    conditions: dict

    def to_dict(self) -> dict:
        return {
            "spectral_radius": self.spectral_radius,
            "stubborn_spectral_radius": self.stubborn_spectral_radius,
            "row_sum_residual": self.row_sum_residual,
            "sigma_inf": self.sigma_inf,
            "conditions": dict(self.conditions),
        }


#: Row-sum residuals above this fail the identity check.
ROW_SUM_TOL = 1e-12


def stability_report(
    g: SocialGraph,
    delta_mu: float,
    sigma_inf: float,
    sigma_y: float,
    stubborn: Iterable[int] = (),
) -> StabilityReport:
    """Evaluate the spectral and row-sum hypotheses on a concrete graph.

    Reports rho(A), rho of the reduced block with the stubborn nodes removed
    (when any), the row-sum residual, and pass/fail booleans. sigma_inf = 0
    is flagged as the degenerate-gain regime: the constant-gain abstraction
    then collapses to pure averaging with no observation injection, so the
    linear predictions stop being meaningful even though rho may be < 1.
    """
    stubborn = sorted(set(int(s) for s in stubborn))
    for s in stubborn:
        if not (1 <= s <= g.n):
            raise InvalidParameterError(f"stubborn node {s} outside [1, {g.n}]")
    mats = build_system_matrices(g, delta_mu, sigma_inf, sigma_y)
    rho = spectral_radius(mats.A)
    residual = check_row_sum_condition(g)
    stub_rho: float | None = None
    if stubborn:
        keep = np.array([j for j in range(g.n) if j + 1 not in stubborn])
        if keep.size:
            stub_rho = spectral_radius(mats.A[np.ix_(keep, keep)])
    conditions = {
        "row_sum_ok": residual <= ROW_SUM_TOL,
        "spectral_ok": rho < 1.0,
        "degenerate_gain": sigma_inf == 0.0,
    }
    if stub_rho is not None:
        conditions["stubborn_spectral_ok"] = stub_rho < 1.0
    return StabilityReport(
        spectral_radius=rho,
        stubborn_spectral_radius=stub_rho,
        row_sum_residual=residual,
        sigma_inf=sigma_inf,
        conditions=conditions,
    )


def predict(
    g: SocialGraph,
    delta_mu: float,
    nu: float,
    sigma_y: float,
    theta: float,
    stubborn_id: int | None = None,
    mu_dagger: float | None = None,
) -> TheoryPrediction:
    """Full closed-form prediction for one configured system.

    Without a stubborn agent the limit mean is theta everywhere. With one,
    the limit mean holds gamma at the malleable agents and mu_dagger at the
    stubborn one (predictions require the reduced block to be stable).
    """
    sigma_inf = sigma_fixed_point(nu, sigma_y)
    report = stability_report(
        g,
        delta_mu,
        sigma_inf,
        sigma_y,
        stubborn=() if stubborn_id is None else (stubborn_id,),
    )
    limit_mean, c = asymptotic_mean_cov(theta, sigma_y, sigma_inf, g.n)
    if stubborn_id is not None:
        if mu_dagger is None:
            raise InvalidParameterError("mu_dagger required with a stubborn agent")
        gamma = stubborn_equilibrium(
            g, delta_mu, sigma_inf, sigma_y, stubborn_id, mu_dagger, theta
        )
        limit_mean = np.array(limit_mean)
        keep = [j for j in range(g.n) if j != stubborn_id - 1]
        limit_mean[keep] = gamma
        limit_mean[stubborn_id - 1] = mu_dagger
    return TheoryPrediction(
        sigma_inf=sigma_inf,
        limit_mean=limit_mean,
        limit_cov_scalar=c,
        spectral_radius=report.spectral_radius,
        conditions=dict(report.conditions),
    )


def build_summary(
    prediction: TheoryPrediction,
    report: StabilityReport,
    gamma: np.ndarray | None = None,
    centrality: Iterable[float] | None = None,
) -> dict:
    """Assemble the summary document written next to run artifacts."""
    return {
        "sigma_inf": prediction.sigma_inf,
        "spectral_radius": report.spectral_radius,
        "stubborn_spectral_radius": report.stubborn_spectral_radius,
        "row_sum_residual": report.row_sum_residual,
        "conditions": dict(report.conditions),
        "limit_mean": [float(x) for x in prediction.limit_mean],
        "limit_cov_scalar": prediction.limit_cov_scalar,
        "gamma": None if gamma is None else [float(x) for x in gamma],
        "centrality": None if centrality is None else [float(x) for x in centrality],
    }
