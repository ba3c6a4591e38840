"""One synchronous round of the distributed SGD variants.

Algorithms differ only in step-size schedule and in which vector they report:

* ``tvw``: step ``2/(lam (t+1))``, reports the time-weighted average
  ``(2/(T(T+1))) sum_t t w_t``.
* ``uw``: step ``1/(lam t)``, reports the uniform running mean.
* ``vss``: step ``1/(lam t)``, reports the raw iterate.
* ``css``: constant step, reports the raw iterate.

Each can run under adapt-then-combine diffusion or combine-then-adapt
consensus. A round is a pure function of the network state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from distsgd.errors import InvalidArgument
from distsgd.losses import LossModel, Sample, gradient_batch, project_batch

ALGORITHM_KINDS = ("tvw", "uw", "vss", "css")
STRATEGIES = ("diffusion", "consensus")


@dataclass(frozen=True)
class AlgorithmSpec:
    kind: str
    strategy: str = "diffusion"
    step_size: float | None = None

    def __post_init__(self):
        if self.kind not in ALGORITHM_KINDS:
            raise InvalidArgument(f"unknown algorithm {self.kind!r}; expected one of {', '.join(ALGORITHM_KINDS)}")
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"unknown strategy {self.strategy!r}; expected diffusion or consensus")
        if self.kind == "css":
            if self.step_size is None or not self.step_size >= 0:
                raise InvalidArgument("css requires a nonnegative constant step_size")

    @property
    def averages(self) -> bool:
        return self.kind in ("tvw", "uw")


@dataclass(frozen=True)
class NodeState:
    w: np.ndarray
    w_bar: np.ndarray
    psi: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Stacked per-node vectors, one row per node.

    ``t`` is the index of the next round. ``oracle_calls`` counts gradient
    evaluations per node and ``g_max`` is the running max gradient norm.
    """

    w: np.ndarray
    w_bar: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    t: int = 1
    oracle_calls: np.ndarray | None = None
    g_max: float = 0.0

    @classmethod
    def initial(cls, n_nodes: int, dim: int, w1: np.ndarray | None = None) -> "NetworkState":
        """All nodes start from the same ``w1`` (zero by default)."""
        w1 = np.zeros(dim) if w1 is None else np.asarray(w1, dtype=float)
        w = np.tile(w1, (n_nodes, 1))
        zeros = np.zeros((n_nodes, dim))
        return cls(w, zeros.copy(), zeros.copy(), zeros.copy(), 1, np.zeros(n_nodes, dtype=np.int64), 0.0)

    @property
    def n_nodes(self) -> int:
        return self.w.shape[0]

    def node(self, i: int) -> NodeState:
        return NodeState(self.w[i], self.w_bar[i], self.psi[i], self.phi[i])

    def network_average(self) -> np.ndarray:
        return self.w.mean(axis=0)


def step_size(spec: AlgorithmSpec, lam: float, t: int) -> float:
    if t < 1:
        raise InvalidArgument(f"round index must be >= 1, got {t}")
    if spec.kind == "tvw":
        return 2.0 / (lam * (t + 1))
    if spec.kind == "css":
        return float(spec.step_size)
    return 1.0 / (lam * t)


def tvw_update(w_bar: np.ndarray, w_next: np.ndarray, t_next: int) -> np.ndarray:
    """Fold ``w_T`` (``T = t_next``) into the linearly weighted average.

    Keeps ``w_bar_T = (2/(T(T+1))) sum_{t<=T} t w_t`` exactly, with
    ``w_bar_0 = 0``.
    """
    T = t_next
    return (T - 1) / (T + 1) * w_bar + 2.0 / (T + 1) * w_next


def uw_update(w_bar: np.ndarray, w_next: np.ndarray, t_next: int) -> np.ndarray:
    T = t_next
    return (T - 1) / T * w_bar + 1.0 / T * w_next


def reporting_iterate(spec: AlgorithmSpec, node) -> np.ndarray:
    """Vector the algorithm predicts with; works on a NodeState or a NetworkState."""
    return node.w_bar if spec.averages else node.w


def _as_arrays(samples, n_nodes: int):
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        u, d = samples
    else:
        samples = list(samples)
        if samples and not isinstance(samples[0], Sample):
            raise InvalidArgument("samples must be Sample objects or a (u, d) array pair")
        u = np.array([s.u for s in samples], dtype=float)
        d = np.array([s.d for s in samples], dtype=float)
    if u.shape[0] != n_nodes or d.shape != (n_nodes,):
        raise InvalidArgument(f"expected one sample per node ({n_nodes}), got {u.shape[0]}")
    return u, d


def _combine(h: np.ndarray, x: np.ndarray) -> np.ndarray:
    # out[i] = sum_j h[j, i] x[j], summed in fixed j order
    return (h[:, :, None] * x[:, None, :]).sum(axis=0)


def _matrix(h) -> np.ndarray:
    return np.asarray(getattr(h, "h", h), dtype=float)


def _finish_round(state: NetworkState, spec: AlgorithmSpec, w_next, psi, phi, grads) -> NetworkState:
    t = state.t
    if spec.kind == "tvw":
        w_bar = tvw_update(state.w_bar, state.w, t)
    elif spec.kind == "uw":
        w_bar = uw_update(state.w_bar, state.w, t)
    else:
        w_bar = state.w_bar
    g_max = max(state.g_max, float(np.sqrt(np.einsum("ij,ij->i", grads, grads)).max(initial=0.0)))
    calls = state.oracle_calls + 1
    return replace(state, w=w_next, w_bar=w_bar, psi=psi, phi=phi, t=t + 1, oracle_calls=calls, g_max=g_max)


def adapt(state: NetworkState, model: LossModel, u, d, spec: AlgorithmSpec):
    """Local step of every node: gradient, SGD move, projection."""
    mu = step_size(spec, model.lam, state.t)
    grads = gradient_batch(model, state.w, u, d)
    psi = state.w - mu * grads
    return grads, psi, project_batch(psi, model.radius)


def diffusion_round(state: NetworkState, h, model: LossModel, samples, spec: AlgorithmSpec) -> NetworkState:
    """Adapt-then-combine: ``w_{t+1,i} = sum_j h[j,i] Proj(w_{t,j} - mu_t g_{t,j})``."""
    u, d = _as_arrays(samples, state.n_nodes)
    grads, psi, phi = adapt(state, model, u, d, spec)
    w_next = _combine(_matrix(h), phi)
    return _finish_round(state, spec, w_next, psi, phi, grads)


def consensus_round(state: NetworkState, h, model: LossModel, samples, spec: AlgorithmSpec) -> NetworkState:
    """Combine-then-adapt: ``w_{t+1,i} = Proj(sum_j h[j,i] w_{t,j} - mu_t g_{t,i})``.

    The gradient is taken at the node's own pre-mix iterate.
    """
    u, d = _as_arrays(samples, state.n_nodes)
    mu = step_size(spec, model.lam, state.t)
    grads = gradient_batch(model, state.w, u, d)
    psi = _combine(_matrix(h), state.w) - mu * grads
    w_next = project_batch(psi, model.radius)
    return _finish_round(state, spec, w_next, psi, w_next, grads)


def run_round(state: NetworkState, h, model: LossModel, samples, spec: AlgorithmSpec) -> NetworkState:
    if spec.strategy == "diffusion":
        return diffusion_round(state, h, model, samples, spec)
    return consensus_round(state, h, model, samples, spec)
