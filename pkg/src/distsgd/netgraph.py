"""Communication topologies and doubly stochastic combination matrices.

The combination matrix ``h`` is applied column-wise: node ``i`` combines its
neighbours with weights ``h[j, i]``. Every matrix built here carries its
second-largest singular value ``sigma``, the mixing rate that enters all the
convergence bounds in :mod:`distsgd.analysis`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from distsgd.errors import ConstructionFailure, InternalError, InvalidArgument, NumericalFailure

TOPOLOGY_KINDS = ("star", "circle", "random", "complete", "line")
STOCHASTIC_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected connected graph on ``n_nodes`` nodes.

    ``adjacency`` holds the off-diagonal edges only; every node is implicitly
    its own neighbour.
    """

    n_nodes: int
    adjacency: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if self.n_nodes < 2:
            raise InvalidArgument(f"a topology needs at least 2 nodes, got {self.n_nodes}")
        if adj.shape != (self.n_nodes, self.n_nodes):
            raise InvalidArgument(f"adjacency shape {adj.shape} does not match n_nodes={self.n_nodes}")
        if not np.array_equal(adj, adj.T):
            raise InvalidArgument("adjacency must be symmetric")
        adj = adj.copy()
        np.fill_diagonal(adj, False)
        if not is_connected(adj):
            raise InvalidArgument("topology is not connected")
        object.__setattr__(self, "adjacency", _frozen(adj))

    @classmethod
    def from_edges(cls, n_nodes: int, edges, kind: str = "custom") -> "Topology":
        adj = np.zeros((n_nodes, n_nodes), dtype=bool)
        for i, j in edges:
            adj[i, j] = adj[j, i] = True
        return cls(n_nodes, adj, kind)

    def neighbors(self, i: int) -> np.ndarray:
        """Neighbourhood of ``i`` including ``i`` itself."""
        row = self.adjacency[i].copy()
        row[i] = True
        return np.flatnonzero(row)

    def degrees(self) -> np.ndarray:
        """Neighbourhood sizes ``n_i``, counting the node itself."""
        return self.adjacency.sum(axis=1) + 1

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def to_csv(self, path) -> None:
        np.savetxt(Path(path), self.adjacency.astype(int), fmt="%d", delimiter=",")


@dataclass(frozen=True, eq=False)
class CombinationMatrix:
    h: np.ndarray
    sigma: float
    topology: Topology | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "h", _frozen(np.asarray(self.h, dtype=float)))

    @property
    def n_nodes(self) -> int:
        return self.h.shape[0]

    def to_csv(self, path) -> None:
        np.savetxt(Path(path), self.h, fmt="%.17g", delimiter=",")


def is_connected(adjacency: np.ndarray) -> bool:
    n_comp, _ = connected_components(np.asarray(adjacency, dtype=bool), directed=False)
    return n_comp == 1


def build_topology(
    kind: str,
    n: int,
    edge_prob: float = 0.3,
    seed: int = 0,
    max_retries: int = 1000,
) -> Topology:
    """Build one of the named topology families.

    ``star`` uses node 0 as the hub, ``circle`` links ``i`` to ``i +- 1 mod n``
    and ``random`` is Erdos-Renyi with ``edge_prob``; a disconnected draw is
    discarded and redrawn with ``seed + 1``, ``seed + 2``, ... until
    ``max_retries`` is exhausted.
    """
    if kind not in TOPOLOGY_KINDS:
        raise InvalidArgument(f"unknown topology kind {kind!r}; expected one of {', '.join(TOPOLOGY_KINDS)}")
    if n < 2:
        raise InvalidArgument(f"topology needs n >= 2, got {n}")

    adj = np.zeros((n, n), dtype=bool)
    if kind == "star":
        adj[0, 1:] = adj[1:, 0] = True
    elif kind == "circle":
        idx = np.arange(n)
        adj[idx, (idx + 1) % n] = True
        adj |= adj.T
    elif kind == "line":
        idx = np.arange(n - 1)
        adj[idx, idx + 1] = True
        adj |= adj.T
    elif kind == "complete":
        adj[:] = True
    else:
        if not 0.0 < edge_prob <= 1.0:
            raise InvalidArgument(f"edge_prob must lie in (0, 1], got {edge_prob}")
        for attempt in range(max_retries):
            rng = np.random.default_rng(seed + attempt)
            upper = np.triu(rng.random((n, n)) < edge_prob, k=1)
            adj = upper | upper.T
            if is_connected(adj):
                break
        else:
            raise ConstructionFailure(
                f"no connected Erdos-Renyi graph with n={n}, p={edge_prob} after {max_retries} draws"
            )
    np.fill_diagonal(adj, False)
    return Topology(n, adj, kind)


def metropolis_matrix(topo: Topology, *, seed: int = 0) -> CombinationMatrix:
    """Metropolis weights ``1/max(n_i, n_j)`` on edges, remainder on the diagonal.

    ``n_i`` counts node ``i`` itself, which keeps e.g. the 3-node star doubly
    stochastic.
    """
    deg = topo.degrees()
    h = np.where(topo.adjacency, 1.0 / np.maximum.outer(deg, deg), 0.0)
    np.fill_diagonal(h, 1.0 - h.sum(axis=1))
    return _finish(h, topo, seed)


def uniform_matrix(topo: Topology, *, seed: int = 0) -> CombinationMatrix:
    """Max-degree rule: every edge gets ``1/max_k n_k``.

    On the complete graph this is exactly ``(1/N) 11^T``.
    """
    w = 1.0 / topo.degrees().max()
    h = np.where(topo.adjacency, w, 0.0)
    np.fill_diagonal(h, 1.0 - h.sum(axis=1))
    return _finish(h, topo, seed)


def _finish(h: np.ndarray, topo: Topology, seed: int) -> CombinationMatrix:
    if (np.abs(h.sum(axis=1) - 1.0).max() > STOCHASTIC_TOL
            or np.abs(h.sum(axis=0) - 1.0).max() > STOCHASTIC_TOL
            or (h < 0).any()):
        raise InternalError("combination matrix is not doubly stochastic; topology is broken")
    return CombinationMatrix(h, second_singular_value(h, seed=seed), topo)


def second_singular_value(
    h: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    seed: int = 0,
) -> float:
    """Second-largest singular value of a doubly stochastic matrix.

    The leading singular pair of ``h`` is ``(1, 1/sqrt(N))``; subtracting
    ``(1/N) 11^T`` removes it exactly, so the answer is the spectral norm of
    ``M = h - (1/N) 11^T``. That norm is found by power iteration on ``M^T M``
    and the iteration stops once the eigen-residual falls below ``tol``
    relative to the current estimate.

    Raises:
        NumericalFailure: when ``max_iter`` iterations do not converge.
    """
    h = np.asarray(h, dtype=float)
    n = h.shape[0]
    m = h - 1.0 / n
    if np.abs(m).max() <= 8 * np.finfo(float).eps:
        # h is the averaging matrix up to rounding
        return 0.0
    a = m.T @ m

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    res = np.inf
    for _ in range(max_iter):
        av = a @ v
        nav = np.linalg.norm(av)
        if nav <= 1e-150:
            # start vector fell into the null space; only possible if a == 0
            # along v, so re-randomize and try again.
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        lam = float(v @ av)
        res = float(np.linalg.norm(av - lam * v))
        if res <= tol * max(lam, 1e-300):
            return float(np.sqrt(max(lam, 0.0)))
        v = av / nav
    raise NumericalFailure(
        f"power iteration did not converge in {max_iter} iterations (residual {res:.3e})",
        last_iterate=v,
        residual=res,
    )


def mixing_decay_violations(h: np.ndarray, sigma: float, z_max: int = 20, tol: float = 1e-12) -> list[tuple[int, int]]:
    """Return ``(z, i)`` pairs where ``||(1/N) 1 - h^z e_i|| > sigma^z``."""
    h = np.asarray(h, dtype=float)
    n = h.shape[0]
    power = np.eye(n)
    bad = []
    for z in range(1, z_max + 1):
        power = h @ power
        dev = np.linalg.norm(1.0 / n - power, axis=0)
        for i in np.flatnonzero(dev > sigma**z + tol):
            bad.append((z, int(i)))
    return bad


def validate_matrix(h, topo: Topology | None = None, tol: float = STOCHASTIC_TOL) -> list[str]:
    """Human-readable list of violated combination-matrix invariants; empty when valid."""
    h = np.asarray(h, dtype=float)
    problems: list[str] = []
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        return [f"matrix must be square, got shape {h.shape}"]
    n = h.shape[0]
    if (h < 0).any():
        problems.append("negative entries present")
    for i, s in enumerate(h.sum(axis=1)):
        if abs(s - 1.0) > tol:
            problems.append(f"row {i} sum ≠ 1 ({s:.17g})")
    for j, s in enumerate(h.sum(axis=0)):
        if abs(s - 1.0) > tol:
            problems.append(f"column {j} sum ≠ 1 ({s:.17g})")
    if topo is not None:
        if topo.n_nodes != n:
            problems.append(f"matrix size {n} does not match topology size {topo.n_nodes}")
        else:
            allowed = topo.adjacency | np.eye(n, dtype=bool)
            for i, j in zip(*np.nonzero(~allowed & (h != 0))):
                problems.append(f"nonzero weight on non-edge ({i},{j})")
            for i, j in zip(*np.nonzero(allowed & (h <= 0))):
                problems.append(f"zero weight on edge ({i},{j})")
    else:
        for i in np.flatnonzero(np.diag(h) <= 0):
            problems.append(f"zero weight on edge ({i},{i})")
    try:
        sigma = second_singular_value(h)
    except NumericalFailure as exc:
        problems.append(f"sigma not computable: {exc}")
    else:
        if sigma >= 1.0 - tol:
            problems.append(f"sigma ≥ 1 ({sigma:.17g})")
    return problems
