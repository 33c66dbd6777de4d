"""Social graph construction and linear-system extraction.

Graphs are weighted and directed: edge (i, j) means agent i influences agent
j, and w_ij may differ from w_ji even when the adjacency is symmetric. The
experiment topology is a Watts-Strogatz ring with rewiring, plus an optional
influencer hub wired symmetrically to a fraction of the other nodes, plus
independent Uniform(0,1) edge weights. An optional normalization stage
rescales each node's incoming weights to sum to one; with that scaling the
mean update matrix is a positive multiple of a row-stochastic matrix, so the
linear dynamics are contractive for any mixing rate delta_mu in (0, 1].
Unnormalized graphs are fully supported; the spectral diagnostics report
whether their dynamics are stable.

Node ids are 1-based in the public API and the edge-list file format; the
weight matrix is indexed 0-based with weights[i-1, j-1] = w_ij.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "SocialGraph",
    "SystemMatrices",
    "generate_watts_strogatz",
    "add_influencer_hub",
    "assign_random_weights",
    "normalize_in_weights",
    "in_weight_diagonal",
    "build_system_matrices",
    "spectral_radius",
    "check_row_sum_condition",
    "save_edge_list",
    "load_edge_list",
]

log = logging.getLogger(__name__)

#: Largest matrix handed to the dense eigensolver by spectral_radius.
DENSE_EIG_LIMIT = 512


def _frozen_array(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SocialGraph:
    """Weighted directed graph on n agents.

    ``weights[i, j]`` (0-based) is the weight of the directed edge from agent
    i+1 to agent j+1; an entry is 0.0 exactly when the edge is absent. The
    diagonal is identically zero (no self-loops). Instances are immutable.
    """

    n: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvalidParameterError(f"n must be positive, got {self.n}")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.n, self.n):
            raise InvalidParameterError(
                f"weights must have shape ({self.n}, {self.n}), got {w.shape}"
            )
        if not np.all(np.isfinite(w)):
            raise InvalidParameterError("weights must be finite")
        if np.any(np.diagonal(w) != 0.0):
            raise InvalidParameterError("self-loops are not allowed")
        object.__setattr__(self, "weights", _frozen_array(w))

    @classmethod
    def from_edges(
        cls, n: int, edges: Iterable[tuple[int, int, float]]
    ) -> "SocialGraph":
        """Build a graph from (i, j, w_ij) triples with 1-based node ids."""
        w = np.zeros((n, n), dtype=float)
        for i, j, weight in edges:
            if not (1 <= i <= n and 1 <= j <= n):
                raise InvalidParameterError(
                    f"edge ({i}, {j}) references a node outside [1, {n}]"
                )
            if i == j:
                raise InvalidParameterError(f"self-loop on node {i}")
            if w[i - 1, j - 1] != 0.0:
                raise InvalidParameterError(f"duplicate edge ({i}, {j})")
            if weight == 0.0:
                raise InvalidParameterError(
                    f"edge ({i}, {j}) has zero weight; absent edges are implicit"
                )
            w[i - 1, j - 1] = weight
        return cls(n=n, weights=w)

    def edges(self) -> Iterator[tuple[int, int, float]]:
        """Yield (i, j, w_ij) with 1-based ids in row-major order."""
        rows, cols = np.nonzero(self.weights)
        for i, j in zip(rows, cols):
            yield int(i) + 1, int(j) + 1, float(self.weights[i, j])

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    def has_edge(self, i: int, j: int) -> bool:
        return self.weights[i - 1, j - 1] != 0.0

    def in_weight_sums(self) -> np.ndarray:
        """Vector of incoming-weight sums, one per node."""
        return self.weights.sum(axis=0)

    def adjacency(self) -> np.ndarray:
        """Boolean edge-presence matrix."""
        return self.weights != 0.0

    def is_connected(self) -> bool:
        """Weak connectivity of the underlying undirected adjacency."""
        if self.n == 1:
            return True
        adj = self.adjacency() | self.adjacency().T
        seen = np.zeros(self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            node = stack.pop()
            for nxt in np.nonzero(adj[node])[0]:
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append(int(nxt))
        return bool(seen.all())


def generate_watts_strogatz(
    n: int, k_ws: int, p_ws: float, rng: np.random.Generator
) -> SocialGraph:
    """Generate a small-world ring with symmetric unweighted adjacency.

    Starts from a ring lattice where each node links to its floor(k_ws/2)
    nearest neighbors on each side, then rewires the far endpoint of each
    lattice edge with probability p_ws, avoiding self-loops and duplicate
    edges. Edge count is preserved. Present edges carry weight 1.0 until
    :func:`assign_random_weights` replaces them.

    The rewiring scan is deterministic given the generator state: offsets
    d = 1..floor(k_ws/2) in the outer loop, nodes in ascending order inside.
    A disconnected result is allowed but logged as a diagnostic.
    """
    if n < 3:
        raise InvalidParameterError(f"n must be at least 3, got {n}")
    if k_ws < 1:
        raise InvalidParameterError(f"k_ws must be at least 1, got {k_ws}")
    if k_ws >= n:
        raise InvalidParameterError(f"k_ws must be below n, got k_ws={k_ws}, n={n}")
    if not (0.0 <= p_ws <= 1.0):
        raise InvalidParameterError(f"p_ws must lie in [0, 1], got {p_ws}")

    half = k_ws // 2
    adj = np.zeros((n, n), dtype=bool)
    for d in range(1, half + 1):
        for i in range(n):
            j = (i + d) % n
            adj[i, j] = adj[j, i] = True

    for d in range(1, half + 1):
        for i in range(n):
            j = (i + d) % n
            if not adj[i, j]:
                continue  # already rewired away as some earlier edge's target
            if rng.random() >= p_ws:
                continue
            candidates = np.nonzero(~adj[i])[0]
            candidates = candidates[candidates != i]
            if candidates.size == 0:
                continue
            new_j = int(candidates[rng.integers(candidates.size)])
            adj[i, j] = adj[j, i] = False
            adj[i, new_j] = adj[new_j, i] = True

    graph = SocialGraph(n=n, weights=adj.astype(float))
    if not graph.is_connected():
        log.warning(
            "generated graph is disconnected (n=%d, k_ws=%d, p_ws=%g)", n, k_ws, p_ws
        )
    return graph


def add_influencer_hub(
    g: SocialGraph, hub: int, fraction: float, rng: np.random.Generator
) -> SocialGraph:
    """Wire a hub node symmetrically to a fraction of the other nodes.

    Selects floor(fraction * (n-1)) distinct non-hub targets uniformly among
    the nodes not already adjacent to the hub (fewer if the candidate pool is
    smaller) and adds both directed edges for each, with placeholder weight
    1.0. Returns a new graph; the input is untouched.
    """
    if not (1 <= hub <= g.n):
        raise InvalidParameterError(f"hub must lie in [1, {g.n}], got {hub}")
    if not (0.0 < fraction <= 1.0):
        raise InvalidParameterError(f"fraction must lie in (0, 1], got {fraction}")
    count = int(math.floor(fraction * (g.n - 1)))
    if count == 0:
        return g
    h = hub - 1
    linked = g.adjacency()[h] | g.adjacency()[:, h]
    pool = np.array(
        [v for v in range(g.n) if v != h and not linked[v]], dtype=int
    )
    if pool.size == 0:
        return g
    count = min(count, int(pool.size))
    chosen = rng.choice(pool, size=count, replace=False)
    w = np.array(g.weights)
    w[h, chosen] = 1.0
    w[chosen, h] = 1.0
    return SocialGraph(n=g.n, weights=w)


def assign_random_weights(g: SocialGraph, rng: np.random.Generator) -> SocialGraph:
    """Replace every present edge weight with an independent Uniform(0,1) draw.

    Each directed edge draws separately, so w_ij != w_ji in general even on
    symmetric adjacency. Draws happen in row-major edge order, which pins the
    result for a given generator state. An exact 0.0 draw is redrawn, keeping
    weights in the open interval and edge presence identical to adjacency.
    """
    w = np.array(g.weights)
    rows, cols = np.nonzero(w)
    draws = rng.random(rows.size)
    for idx in np.nonzero(draws == 0.0)[0]:
        value = 0.0
        while value == 0.0:
            value = rng.random()
        draws[idx] = value
    w[rows, cols] = draws
    return SocialGraph(n=g.n, weights=w)


def normalize_in_weights(g: SocialGraph) -> SocialGraph:
    """Rescale each node's incoming weights to sum to one.

    After this step the in-weight diagonal is the identity (on nodes that
    have any in-edges; isolated-in nodes are left untouched), and the mean
    update matrix built from the graph is Sigma_scalar times a row-stochastic
    matrix for any delta_mu in (0, 1], which bounds its spectral radius by
    Sigma_scalar. Intended for positively weighted graphs such as the output
    of :func:`assign_random_weights`.
    """
    sums = g.in_weight_sums()
    scale = np.where(sums != 0.0, sums, 1.0)
    w = np.array(g.weights) / scale[None, :]
    return SocialGraph(n=g.n, weights=w)


def in_weight_diagonal(g: SocialGraph) -> np.ndarray:
    """Diagonal matrix D of incoming-weight sums, D_jj = sum_l w_lj."""
    return np.diag(g.in_weight_sums())


@dataclass(frozen=True)
class SystemMatrices:
    """Linear form of the mean dynamics: mu[k+1] = A mu[k] + B 1 y[k].

    A encodes one Bayesian gain step followed by one social mixing step, row
    j aggregating over the in-neighbors of j. sigma_scalar is the gain factor
    sigma_y / (sigma_inf + sigma_y); B = (1 - sigma_scalar) I. Rows of A + B
    sum to one.
    """

    A: np.ndarray
    B: np.ndarray
    sigma_scalar: float
    D: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", _frozen_array(self.A))
        object.__setattr__(self, "B", _frozen_array(self.B))
        object.__setattr__(self, "D", _frozen_array(self.D))


def build_system_matrices(
    g: SocialGraph, delta_mu: float, sigma_inf: float, sigma_y: float
) -> SystemMatrices:
    """Assemble the linear mean-update matrices for a weighted graph.

    Row j of A implements the per-agent update
    mu_j <- sigma_scalar * (mu_j + delta_mu * sum_l w_lj (mu_l - mu_j)),
    i.e. aggregation over in-neighbors, which makes (A + B) row sums equal
    one identically regardless of the weights.
    """
    if sigma_y <= 0.0:
        raise InvalidParameterError(f"sigma_y must be positive, got {sigma_y}")
    if sigma_inf < 0.0:
        raise InvalidParameterError(f"sigma_inf must be >= 0, got {sigma_inf}")
    if delta_mu < 0.0:
        raise InvalidParameterError(f"delta_mu must be >= 0, got {delta_mu}")
    scalar = sigma_y / (sigma_inf + sigma_y)
    d_vec = g.in_weight_sums()
    inner = np.eye(g.n) + delta_mu * (g.weights.T - np.diag(d_vec))
    return SystemMatrices(
        A=scalar * inner,
        B=(1.0 - scalar) * np.eye(g.n),
        sigma_scalar=scalar,
        D=np.diag(d_vec),
    )


def _arpack_radius(m: np.ndarray) -> float:
    from scipy.sparse import linalg as sparse_linalg

    v0 = np.linspace(1.0, 2.0, m.shape[0])  # fixed start vector, deterministic
    vals = sparse_linalg.eigs(
        m, k=1, which="LM", v0=v0, tol=1e-9, return_eigenvectors=False
    )
    return float(np.max(np.abs(vals)))


def spectral_radius(m: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix.

    Dense eigensolve up to ``DENSE_EIG_LIMIT`` nodes; an iterative
    largest-magnitude solve above that, falling back to the dense path if
    the iteration fails to converge. Relative accuracy 1e-9 or better.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidParameterError(f"matrix must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidParameterError("matrix entries must be finite")
    if m.shape[0] <= DENSE_EIG_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    try:
        return _arpack_radius(m)
    except Exception:  # pragma: no cover - ARPACK non-convergence is rare
        log.warning("iterative eigensolve failed, falling back to dense")
        return float(np.max(np.abs(np.linalg.eigvals(m))))


def check_row_sum_condition(g: SocialGraph) -> float:
    """Max-abs residual of (W - D) 1 = 0 in the in-neighbor convention.

    Zero up to rounding by construction: both terms are the vector of
    incoming-weight sums, computed along different reduction paths.
    """
    ones = np.ones(g.n)
    return float(np.max(np.abs(g.weights.T @ ones - g.in_weight_sums()), initial=0.0))


def save_edge_list(g: SocialGraph, path: str | Path) -> None:
    """Write the plain-text edge list: header ``n=<N>``, lines ``i j w_ij``.

    Node ids are 1-based; weights print with 17 significant digits so the
    loader round-trips exactly.
    """
    lines = [f"n={g.n}"]
    lines.extend(f"{i} {j} {w:.16e}" for i, j, w in g.edges())
    Path(path).write_text("\n".join(lines) + "\n")


def load_edge_list(path: str | Path) -> SocialGraph:
    """Read a graph written by :func:`save_edge_list`.

    Accepts any finite nonzero weights, including negative ones. Rejects
    self-loops, duplicate edges, out-of-range ids, and malformed lines.
    """
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n="):
        raise InvalidParameterError(f"{path}: missing 'n=<N>' header")
    try:
        n = int(lines[0][2:])
    except ValueError as exc:
        raise InvalidParameterError(f"{path}: bad header {lines[0]!r}") from exc
    edges = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 3:
            raise InvalidParameterError(f"{path}:{lineno}: expected 'i j w', got {ln!r}")
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise InvalidParameterError(f"{path}:{lineno}: bad edge line {ln!r}") from exc
        if not math.isfinite(w):
            raise InvalidParameterError(f"{path}:{lineno}: non-finite weight")
        edges.append((i, j, w))
    return SocialGraph.from_edges(n, edges)
