"""Synthetic data, deterministic multi-trial experiments, and per-round metrics.

Randomness is derived from one master seed. Each (trial, purpose, node)
triple gets its own :class:`numpy.random.SeedSequence` stream, so a trial's
output depends only on the config and its index, never on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from distsgd import dataio
from distsgd.errors import InvalidArgument
from distsgd.losses import (
    AnalyticEvaluator,
    EmpiricalEvaluator,
    LossModel,
    Sample,
    data_loss_batch,
    global_cost,
    global_cost_batch,
    optimum,
)
from distsgd.netgraph import CombinationMatrix, build_topology, metropolis_matrix, uniform_matrix
from distsgd.strategies import AlgorithmSpec, NetworkState, reporting_iterate, run_round

# stream purposes
_TOPOLOGY, _MODEL, _DATA, _PARTITION, _POWER = range(5)

CSV_HEADER = "t,nce_mean,nce_var,msd_mean,msd_var,regret_mean,regret_var,g_max"
PREDICTION_NOTE = "prequential: each algorithm's reporting iterate before the round's update"


def stream(master_seed: int, trial: int, purpose: int, node: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial, purpose, node)))


def stream_seed(master_seed: int, trial: int, purpose: int, node: int = 0) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial, purpose, node))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# -- synthetic linear-Gaussian model --------------------------------------------

@dataclass(frozen=True, eq=False)
class SyntheticModel:
    """``d = w0^T u + v`` with ``u ~ N(0, R_i)`` at node ``i`` and ``v ~ N(0, noise_var)``."""

    w0: np.ndarray
    cov: np.ndarray
    noise_var: float
    snr_db: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "chol", np.linalg.cholesky(self.cov))

    @property
    def n_nodes(self) -> int:
        return self.cov.shape[0]

    @property
    def dim(self) -> int:
        return self.w0.shape[0]

    def realized_snr(self) -> np.ndarray:
        return np.einsum("j,ijk,k->i", self.w0, self.cov, self.w0) / self.noise_var

    def evaluator(self) -> AnalyticEvaluator:
        return AnalyticEvaluator(self.w0, self.cov, self.noise_var)


def build_synthetic(
    n: int,
    p: int,
    noise_var: float = 0.1,
    snr_db_range: tuple[float, float] = (-15.0, 10.0),
    seed: int = 0,
) -> SyntheticModel:
    """Random unit-norm ``w0`` and per-node covariances hitting stratified SNR targets.

    Node SNRs are drawn one per equal-width stratum of ``snr_db_range`` (strata
    shuffled across nodes). Each covariance is ``A A^T + 1e-6 I`` for Gaussian
    ``A``, rescaled so that ``w0^T R_i w0 = noise_var * 10^(snr_i/10)``.
    """
    if p < 1 or n < 1:
        raise InvalidArgument("need n >= 1 and p >= 1")
    lo, hi = map(float, snr_db_range)
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise InvalidArgument(f"bad SNR range {snr_db_range}")
    if not noise_var > 0:
        raise InvalidArgument("noise_var must be positive")
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal(p)
    w0 /= np.linalg.norm(w0)
    snr = lo + (hi - lo) * (rng.permutation(n) + rng.random(n)) / n
    cov = np.empty((n, p, p))
    for i in range(n):
        a = rng.standard_normal((p, p))
        r = a @ a.T + 1e-6 * np.eye(p)
        cov[i] = r * (noise_var * 10.0 ** (snr[i] / 10.0) / (w0 @ r @ w0))
    return SyntheticModel(w0, cov, float(noise_var), snr)


def draw_block(model: SyntheticModel, node: int, rng: np.random.Generator, count: int):
    """``count`` consecutive samples for one node as ``(u, d)`` arrays."""
    if not 0 <= node < model.n_nodes:
        raise InvalidArgument(f"node {node} out of range")
    z = rng.standard_normal((count, model.dim))
    u = z @ model.chol[node].T
    d = u @ model.w0 + math.sqrt(model.noise_var) * rng.standard_normal(count)
    return u, d


def draw_sample(model: SyntheticModel, node: int, rng: np.random.Generator) -> Sample:
    u, d = draw_block(model, node, rng, 1)
    return Sample(u[0], float(d[0]))


# -- experiment configuration -------------------------------------------------

@dataclass(frozen=True)
class SyntheticSource:
    noise_var: float = 0.1
    snr_db_range: tuple[float, float] = (-15.0, 10.0)


@dataclass(frozen=True)
class DatasetSource:
    path: str
    partition: str = "shuffled"
    normalize: str = "unit_norm"
    positive_label: float | None = None
    reference_iters: int = 20_000


@dataclass(frozen=True)
class ExperimentConfig:
    n_nodes: int = 20
    dim: int = 5
    rounds: int = 1000
    trials: int = 1
    topology: str = "circle"
    edge_prob: float = 0.3
    rule: str = "metropolis"
    algorithm: AlgorithmSpec = AlgorithmSpec("tvw")
    loss: LossModel = LossModel("squared", 0.01)
    data: SyntheticSource | DatasetSource = SyntheticSource()
    master_seed: int = 0
    eval_every: int = 1
    label: str = ""

    def __post_init__(self):
        if self.trials < 1 or self.rounds < 1 or self.dim < 1 or self.n_nodes < 1:
            raise InvalidArgument("trials, rounds, dim and n_nodes must all be >= 1")
        if self.rule not in ("metropolis", "uniform"):
            raise InvalidArgument(f"unknown combination rule {self.rule!r}")
        if self.eval_every < 1:
            raise InvalidArgument("eval_every must be >= 1")

    @property
    def name(self) -> str:
        return self.label or self.algorithm.kind


@dataclass
class TrajectoryRecord:
    """Per-round metrics of one trial; index ``k`` holds round ``t = k + 1``.

    ``regret_nodes[k, i]`` is ``f(report_i) - f(w*)`` after round ``t`` (NaN on
    rounds skipped by ``eval_every``). ``avg_msd[k]`` is the squared distance of
    the network-average raw iterate ``w_{t+1}`` from ``w*``.
    """

    nce: np.ndarray
    msd: np.ndarray
    regret_nodes: np.ndarray
    avg_msd: np.ndarray
    g_max: np.ndarray
    oracle_calls: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def regret(self) -> np.ndarray:
        return self.regret_nodes.mean(axis=1)

    @property
    def rounds(self) -> int:
        return len(self.nce)


@dataclass
class _Context:
    """Trial-independent inputs shared by every trial of one experiment."""

    dataset: dataio.Dataset | None = None
    evaluator: EmpiricalEvaluator | None = None
    w_star: np.ndarray | None = None
    f_star: float | None = None


def prepare_context(config: ExperimentConfig) -> _Context:
    if not isinstance(config.data, DatasetSource):
        return _Context()
    src = config.data
    ds = dataio.normalize(dataio.parse_libsvm(src.path, src.positive_label), src.normalize)
    if len(ds) == 0:
        raise InvalidArgument(f"data set {src.path} is empty")
    ev = EmpiricalEvaluator.pooled(ds.x, ds.y, config.n_nodes)
    w_star = optimum(config.loss, ev, max_iter=src.reference_iters)
    return _Context(ds, ev, w_star, global_cost(config.loss, ev, w_star))


def combination_matrix(config: ExperimentConfig, trial: int) -> CombinationMatrix:
    if config.n_nodes == 1:
        return CombinationMatrix(np.ones((1, 1)), 0.0)
    topo = build_topology(config.topology, config.n_nodes, config.edge_prob,
                          seed=stream_seed(config.master_seed, trial, _TOPOLOGY))
    build = metropolis_matrix if config.rule == "metropolis" else uniform_matrix
    return build(topo, seed=stream_seed(config.master_seed, trial, _POWER))


def trial_data(config: ExperimentConfig, trial: int, ctx: _Context):
    """Regressors ``(T, N, p)``, observations ``(T, N)``, evaluator, reference vector."""
    T, N = config.rounds, config.n_nodes
    if ctx.dataset is None:
        model = build_synthetic(N, config.dim, config.data.noise_var, config.data.snr_db_range,
                                seed=stream_seed(config.master_seed, trial, _MODEL))
        u = np.empty((T, N, config.dim))
        d = np.empty((T, N))
        for i in range(N):
            u[:, i], d[:, i] = draw_block(model, i, stream(config.master_seed, trial, _DATA, i), T)
        ev = model.evaluator()
        w_star = optimum(config.loss, ev)
        return u, d, ev, w_star, global_cost(config.loss, ev, w_star), model.w0
    part = dataio.partition(ctx.dataset, N, config.data.partition, T,
                            seed=stream_seed(config.master_seed, trial, _PARTITION))
    idx = np.stack([q[:T] for q in part.queues], axis=1)
    return ctx.dataset.x[idx], ctx.dataset.y[idx], ctx.evaluator, ctx.w_star, ctx.f_star, ctx.w_star


def run_trial(config: ExperimentConfig, trial_index: int, ctx: _Context | None = None) -> TrajectoryRecord:
    """Run one trial under the prequential protocol.

    Each round every node first scores its incoming sample with its current
    reporting iterate, then makes exactly one oracle call inside the round.
    """
    ctx = prepare_context(config) if ctx is None else ctx
    T, N = config.rounds, config.n_nodes
    spec, loss = config.algorithm, config.loss
    h = combination_matrix(config, trial_index)
    u, d, ev, w_star, f_star, w_ref = trial_data(config, trial_index, ctx)

    nce = np.empty(T)
    msd = np.empty(T)
    avg_msd = np.empty(T)
    g_max = np.empty(T)
    regret = np.full((T, N), np.nan)
    state = NetworkState.initial(N, u.shape[2])
    cum = 0.0
    for k in range(T):
        t = k + 1
        cum += float(data_loss_batch(loss.family, reporting_iterate(spec, state), u[k], d[k]).sum())
        nce[k] = cum / (N * t)
        state = run_round(state, h, loss, (u[k], d[k]), spec)
        rep = reporting_iterate(spec, state)
        diff = rep - w_ref
        msd[k] = np.einsum("ij,ij->", diff, diff) / N
        avg = state.network_average() - w_star
        avg_msd[k] = avg @ avg
        g_max[k] = state.g_max
        if t % config.eval_every == 0 or t == T:
            regret[k] = global_cost_batch(loss, ev, rep) - f_star

    meta = {
        "sigma": h.sigma,
        "n_nodes": N,
        "lam": loss.lam,
        "algorithm": spec.kind,
        "strategy": spec.strategy,
        "trial": trial_index,
        "prediction": PREDICTION_NOTE,
    }
    return TrajectoryRecord(nce, msd, regret, avg_msd, g_max, state.oracle_calls, meta)


# -- multi-trial aggregation ----------------------------------------------------

@dataclass
class ExperimentResult:
    """Pointwise trial mean and (population) variance of every series."""

    config: ExperimentConfig
    mean: dict
    var: dict
    regret_nodes_mean: np.ndarray
    g_max: np.ndarray
    sigma: float
    trials: int
    metadata: dict = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return len(self.g_max)

    def csv_text(self) -> str:
        cols = [
            np.arange(1, self.rounds + 1),
            self.mean["nce"], self.var["nce"],
            self.mean["msd"], self.var["msd"],
            self.mean["regret"], self.var["regret"],
            self.g_max,
        ]
        lines = [CSV_HEADER]
        for row in zip(*cols):
            lines.append(str(int(row[0])) + "," + ",".join(f"{v:.17g}" for v in row[1:]))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8")


_SERIES = ("nce", "msd", "regret", "avg_msd")


def aggregate(config: ExperimentConfig, records: list[TrajectoryRecord]) -> ExperimentResult:
    """Reduce trial records in the given (trial-index) order."""
    stacks = {name: np.stack([getattr(r, name) for r in records]) for name in _SERIES}
    return ExperimentResult(
        config=config,
        mean={k: v.mean(axis=0) for k, v in stacks.items()},
        var={k: v.var(axis=0) for k, v in stacks.items()},
        regret_nodes_mean=np.mean([r.regret_nodes for r in records], axis=0),
        g_max=np.max([r.g_max for r in records], axis=0),
        sigma=max(r.metadata["sigma"] for r in records),
        trials=len(records),
        metadata={
            "prediction": PREDICTION_NOTE,
            "oracle_calls_per_node": int(records[0].oracle_calls[0]),
            "sigmas": [r.metadata["sigma"] for r in records],
        },
    )


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run ``config.trials`` independent trials and average them.

    ``threads > 1`` farms trials out to worker processes; results are gathered
    in trial order, so the output does not depend on ``threads``.
    """
    ctx = prepare_context(config)
    job = partial(run_trial, config, ctx=ctx)
    if threads > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(job, range(config.trials)))
    else:
        records = [job(i) for i in range(config.trials)]
    return aggregate(config, records)
