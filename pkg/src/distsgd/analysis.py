"""Theoretical regret / MSD bounds and empirical checks against them."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from distsgd.errors import InvalidArgument


@dataclass(frozen=True)
class BoundInputs:
    n_nodes: int
    lam: float
    sigma: float
    g: float
    rounds: int

    def __post_init__(self):
        if not 0.0 <= self.sigma < 1.0:
            raise InvalidArgument(f"sigma must lie in [0, 1), got {self.sigma}")
        if self.n_nodes < 1 or self.rounds < 1 or not self.lam > 0 or self.g < 0:
            raise InvalidArgument("n_nodes, rounds and lam must be positive and g nonnegative")


def theorem1_bound(b: BoundInputs) -> float:
    """Expected excess cost of the time-weighted average at any node:
    ``4 N G^2 / (lam (T+1)) * (3 + 8 sigma sqrt(N) / (1 - sigma))``.
    """
    n = b.n_nodes
    return 4.0 * n * b.g**2 / (b.lam * (b.rounds + 1)) * (3.0 + 8.0 * b.sigma * math.sqrt(n) / (1.0 - b.sigma))


def theorem2_bound(b: BoundInputs) -> float:
    """Expected squared distance of the network-average iterate ``w_{T+1}`` from ``w*``:
    ``24 G^2 / (lam^2 (T+1)) * (1 + 2 sigma sqrt(N) / (1 - sigma))``.
    """
    return 24.0 * b.g**2 / (b.lam**2 * (b.rounds + 1)) * (1.0 + 2.0 * b.sigma * math.sqrt(b.n_nodes) / (1.0 - b.sigma))


BOUNDS = {"t1": theorem1_bound, "t2": theorem2_bound}


@dataclass
class BoundReport:
    which: str
    rounds: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    violations: list

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.empirical / self.bound

    @property
    def max_ratio(self) -> float:
        r = self.ratio
        r = r[np.isfinite(r)]
        return float(r.max()) if r.size else float("nan")

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        status = "OK" if self.ok else f"{len(self.violations)} VIOLATIONS"
        return (f"{self.which}: {status}; max empirical/bound = {self.max_ratio:.3e}; "
                f"final bound = {self.bound[-1]:.6g} over {len(self.rounds)} rounds")

    def csv_text(self) -> str:
        lines = ["t,empirical,bound,ratio"]
        for t, e, b, r in zip(self.rounds, self.empirical, self.bound, self.ratio):
            lines.append(f"{int(t)},{e:.17g},{b:.17g},{r:.17g}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8")


def bound_inputs(result, g: float | None = None) -> BoundInputs:
    """Bound inputs from an experiment result; ``g`` overrides the empirical max gradient norm."""
    return BoundInputs(
        n_nodes=result.config.n_nodes,
        lam=result.config.loss.lam,
        sigma=result.sigma,
        g=float(result.g_max[-1]) if g is None else g,
        rounds=result.rounds,
    )


def empirical_series(result, which: str, node: int | None = None) -> np.ndarray:
    """Trial-averaged quantity each bound constrains.

    ``t1``: excess cost of the reporting iterate (node mean, or one ``node``).
    ``t2``: squared distance of the network-average iterate from ``w*``.
    """
    if which == "t1":
        if node is None:
            return result.mean["regret"]
        return result.regret_nodes_mean[:, node]
    if which == "t2":
        return result.mean["avg_msd"]
    raise InvalidArgument(f"unknown bound {which!r}; expected t1 or t2")


def check_trajectory(empirical, b: BoundInputs, which: str, scale: float = 1.0) -> BoundReport:
    """Compare a per-round series against the bound evaluated at ``T = t``.

    Entry ``k`` of ``empirical`` belongs to round ``t = k + 1``; NaN entries
    (unevaluated rounds) are skipped. ``scale`` multiplies the bound and exists
    to sanity-check the checker itself.
    """
    if which not in BOUNDS:
        raise InvalidArgument(f"unknown bound {which!r}; expected t1 or t2")
    if empirical is None:
        raise InvalidArgument(f"missing series for {which}")
    empirical = np.asarray(empirical, dtype=float)
    rounds = np.arange(1, len(empirical) + 1)
    fn = BOUNDS[which]
    bound = np.array([scale * fn(replace(b, rounds=int(t))) for t in rounds])
    keep = np.isfinite(empirical)
    violations = [int(t) for t in rounds[keep & (empirical > bound)]]
    return BoundReport(which, rounds[keep], empirical[keep], bound[keep], violations)


def check_result(result, which: str, node: int | None = None, g: float | None = None,
                 scale: float = 1.0) -> BoundReport:
    """:func:`check_trajectory` on an :class:`~distsgd.sim.ExperimentResult`."""
    return check_trajectory(empirical_series(result, which, node), bound_inputs(result, g), which, scale)


@dataclass
class GapReport:
    msd_diffusion: np.ndarray
    msd_consensus: np.ndarray
    consensus_better: list

    @property
    def final_gap(self) -> float:
        """Final consensus MSD minus diffusion MSD (positive favours diffusion)."""
        return float(self.msd_consensus[-1] - self.msd_diffusion[-1])

    def summary(self) -> str:
        return (f"final MSD diffusion={self.msd_diffusion[-1]:.6g} consensus={self.msd_consensus[-1]:.6g}; "
                f"consensus ahead on {len(self.consensus_better)} of {len(self.msd_diffusion)} rounds")


def strategy_gap(config, consensus_config=None, threads: int = 1) -> GapReport:
    """Paired diffusion vs consensus run (same seeds, same data).

    With one config, its algorithm is run under both strategies. With two,
    they must be identical apart from ``algorithm.strategy``. Rounds where
    consensus has lower MSD are listed for information only.
    """
    from distsgd.sim import run_experiment

    diff_cfg = replace(config, algorithm=replace(config.algorithm, strategy="diffusion"))
    if consensus_config is None:
        cons_cfg = replace(config, algorithm=replace(config.algorithm, strategy="consensus"))
    else:
        cons_cfg = consensus_config
        if replace(cons_cfg, algorithm=replace(cons_cfg.algorithm, strategy="diffusion")) != diff_cfg:
            raise InvalidArgument("diffusion and consensus configs must differ only in strategy")
    return gap_from_results(run_experiment(diff_cfg, threads), run_experiment(cons_cfg, threads))


def gap_from_results(diffusion, consensus) -> GapReport:
    a, c = diffusion.mean["msd"], consensus.mean["msd"]
    better = [int(t) for t in np.flatnonzero(c < a) + 1]
    return GapReport(a, c, better)
