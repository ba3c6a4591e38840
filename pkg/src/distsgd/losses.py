"""Regularized per-node losses, their gradient oracles, and the global cost.

Every instantaneous loss has the form ``l(w; u, d) + (lam/2) ||w||^2`` with
``l`` one of the squared error, hinge, or squared hinge. The batch functions
(``*_batch``) act row-wise on stacked iterates and samples and are what the
network simulator calls; the single-sample functions route through them so
both paths share identical floating-point arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from distsgd.errors import InvalidArgument, NumericalFailure

LOSS_FAMILIES = ("squared", "hinge", "squared_hinge")


@dataclass(frozen=True)
class LossModel:
    family: str
    lam: float
    radius: float = 10.0

    def __post_init__(self):
        if self.family not in LOSS_FAMILIES:
            raise InvalidArgument(f"unknown loss family {self.family!r}; expected one of {', '.join(LOSS_FAMILIES)}")
        if not self.lam > 0:
            raise InvalidArgument(f"lam must be positive for strong convexity, got {self.lam}")
        if not self.radius > 0:
            raise InvalidArgument(f"radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Sample:
    u: np.ndarray
    d: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 1 or not np.isfinite(u).all() or not math.isfinite(self.d):
            raise InvalidArgument("sample must have a finite 1-d regressor and finite observation")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "d", float(self.d))


@dataclass
class GradientBoundEstimate:
    """Running maximum of observed stochastic-gradient norms (the constant G)."""

    g_max: float = 0.0

    def observe(self, norms) -> None:
        m = float(np.max(norms, initial=0.0))
        if m > self.g_max:
            self.g_max = m

    def merge(self, other: "GradientBoundEstimate") -> "GradientBoundEstimate":
        return GradientBoundEstimate(max(self.g_max, other.g_max))


# -- batch primitives -------------------------------------------------------

def _check_batch(w: np.ndarray, u: np.ndarray, d: np.ndarray) -> None:
    if w.shape != u.shape or d.shape != u.shape[:1]:
        raise InvalidArgument(f"dimension mismatch: w {w.shape}, u {u.shape}, d {d.shape}")


def _inner(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", w, u)


def data_loss_batch(family: str, w: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Unregularized loss ``l(w_i; u_i, d_i)`` per row."""
    _check_batch(w, u, d)
    z = _inner(w, u)
    if family == "squared":
        return (d - z) ** 2
    margin = np.maximum(0.0, 1.0 - d * z)
    if family == "hinge":
        return margin
    return margin**2


def loss_batch(model: LossModel, w: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
    reg = 0.5 * model.lam * np.einsum("ij,ij->i", w, w)
    return data_loss_batch(model.family, w, u, d) + reg


def gradient_batch(model: LossModel, w: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Row-wise stochastic (sub)gradients. At the hinge kink the zero branch is taken."""
    _check_batch(w, u, d)
    z = _inner(w, u)
    if model.family == "squared":
        coef = -2.0 * (d - z)
    elif model.family == "hinge":
        coef = np.where(d * z < 1.0, -d, 0.0)
    else:
        coef = -2.0 * np.maximum(0.0, 1.0 - d * z) * d
    return coef[:, None] * u + model.lam * w


def project_batch(w: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise Euclidean projection onto the ball ``||w|| <= radius``."""
    if math.isinf(radius):
        return w.copy()
    norms = np.sqrt(np.einsum("ij,ij->i", w, w))
    scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return w * scale[:, None]


# -- single-sample API ------------------------------------------------------

def _row(w, s: Sample):
    w = np.asarray(w, dtype=float)
    if w.shape != s.u.shape:
        raise InvalidArgument(f"dimension mismatch: w has shape {w.shape}, u has shape {s.u.shape}")
    return w[None, :], s.u[None, :], np.array([s.d])


def instant_loss(model: LossModel, w, s: Sample) -> float:
    return float(loss_batch(model, *_row(w, s))[0])


def stochastic_gradient(model: LossModel, w, s: Sample) -> np.ndarray:
    return gradient_batch(model, *_row(w, s))[0]


def project(w, radius: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return project_batch(w[None, :], radius)[0]


# -- global cost -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AnalyticEvaluator:
    """Closed-form expected squared-loss cost under the Gaussian linear model.

    ``cov`` stacks the per-node regressor covariances ``R_i``.
    """

    w0: np.ndarray
    cov: np.ndarray
    noise_var: float
    cov_sum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cov_sum", np.asarray(self.cov).sum(axis=0))

    @property
    def n_nodes(self) -> int:
        return self.cov.shape[0]


@dataclass(frozen=True, eq=False)
class EmpiricalEvaluator:
    """Sample-average cost: ``sum_b mult_b * mean_k loss(w; x_bk, y_bk)``.

    Each block is ``(x, y, multiplicity)``; one block per node gives the plain
    per-node sum, while a single pooled block with multiplicity ``N`` stands in
    for ``N`` nodes drawing from the same data set.
    """

    blocks: tuple

    @classmethod
    def per_node(cls, node_data) -> "EmpiricalEvaluator":
        return cls(tuple((np.asarray(x, float), np.asarray(y, float), 1) for x, y in node_data))

    @classmethod
    def pooled(cls, x, y, n_nodes: int) -> "EmpiricalEvaluator":
        return cls(((np.asarray(x, float), np.asarray(y, float), int(n_nodes)),))

    @property
    def n_nodes(self) -> int:
        return sum(m for _, _, m in self.blocks)


def global_cost_batch(model: LossModel, evaluator, w: np.ndarray) -> np.ndarray:
    """Global cost ``sum_j E f_j(w)`` for each row of ``w`` (shape ``(k, p)``)."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    n = evaluator.n_nodes
    reg = 0.5 * n * model.lam * np.einsum("ij,ij->i", w, w)
    if isinstance(evaluator, AnalyticEvaluator):
        if model.family != "squared":
            raise InvalidArgument(f"analytic evaluator only supports squared loss, not {model.family!r}")
        diff = evaluator.w0 - w
        quad = np.einsum("ij,jk,ik->i", diff, evaluator.cov_sum, diff)
        return quad + n * evaluator.noise_var + reg
    total = np.zeros(w.shape[0])
    for x, y, mult in evaluator.blocks:
        if len(y) == 0:
            continue
        z = x @ w.T  # (n_samples, k)
        if model.family == "squared":
            vals = (y[:, None] - z) ** 2
        else:
            margin = np.maximum(0.0, 1.0 - y[:, None] * z)
            vals = margin if model.family == "hinge" else margin**2
        total += mult * vals.mean(axis=0)
    return total + reg


def global_cost(model: LossModel, evaluator, w) -> float:
    return float(global_cost_batch(model, evaluator, np.asarray(w, dtype=float)[None, :])[0])


def global_gradient(model: LossModel, evaluator, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    n = evaluator.n_nodes
    if isinstance(evaluator, AnalyticEvaluator):
        return 2.0 * evaluator.cov_sum @ (w - evaluator.w0) + n * model.lam * w
    g = n * model.lam * w
    for x, y, mult in evaluator.blocks:
        if len(y) == 0:
            continue
        z = x @ w
        if model.family == "squared":
            coef = -2.0 * (y - z)
        elif model.family == "hinge":
            coef = np.where(y * z < 1.0, -y, 0.0)
        else:
            coef = -2.0 * np.maximum(0.0, 1.0 - y * z) * y
        g = g + mult * (x.T @ coef) / len(y)
    return g


# -- reference optimum -------------------------------------------------------

def optimum(model: LossModel, evaluator, tol: float = 1e-9, max_iter: int = 1_000_000) -> np.ndarray:
    """Minimizer ``w*`` of the global cost over the feasible ball.

    The analytic case solves ``(2 sum R_i + N lam I) w = 2 sum R_i w0``; if that
    point lies outside the ball, the constrained minimizer is found by a scalar
    root search on the multiplier. The empirical case runs a full-batch solver
    (see :func:`_empirical_optimum`).
    """
    if isinstance(evaluator, AnalyticEvaluator):
        if model.family != "squared":
            raise InvalidArgument(f"analytic optimum only exists for squared loss, not {model.family!r}")
        return _analytic_optimum(model, evaluator)
    return _empirical_optimum(model, evaluator, tol, max_iter)


def _analytic_optimum(model: LossModel, ev: AnalyticEvaluator) -> np.ndarray:
    a = 2.0 * ev.cov_sum + ev.n_nodes * model.lam * np.eye(len(ev.w0))
    b = 2.0 * ev.cov_sum @ ev.w0
    if np.linalg.cond(a) > 1e14:
        raise NumericalFailure("global cost Hessian is singular; no unique optimum")
    w = np.linalg.solve(a, b)
    r = model.radius
    if math.isinf(r) or np.linalg.norm(w) <= r:
        return w
    eye = np.eye(len(b))

    def excess(eta):
        return np.linalg.norm(np.linalg.solve(a + eta * eye, b)) - r

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
    eta = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-15)
    return project(np.linalg.solve(a + eta * eye, b), r)


def _lipschitz(model: LossModel, ev: EmpiricalEvaluator) -> float:
    curv = 0.0
    for x, y, mult in ev.blocks:
        if len(y):
            curv += mult * 2.0 * np.linalg.norm(x, 2) ** 2 / len(y)
    return curv + ev.n_nodes * model.lam


def _empirical_optimum(model: LossModel, ev: EmpiricalEvaluator, tol: float, max_iter: int) -> np.ndarray:
    """Full-batch projected solver for the sample-average cost.

    Smooth families (squared, squared hinge) use accelerated projected gradient
    with step ``1/L`` and stop when the gradient mapping drops below ``tol``.
    The plain hinge uses projected subgradient steps ``2/(mu (t+1))`` with
    ``mu = N lam`` and returns the time-weighted average iterate.
    """
    p = ev.blocks[0][0].shape[1]
    r = model.radius
    mu = ev.n_nodes * model.lam
    w = np.zeros(p)
    if model.family == "hinge":
        avg = np.zeros(p)
        for t in range(1, max_iter + 1):
            w = project(w - 2.0 / (mu * (t + 1)) * global_gradient(model, ev, w), r)
            avg = (t - 1) / (t + 1) * avg + 2.0 / (t + 1) * w
        return avg

    lip = _lipschitz(model, ev)
    beta = (math.sqrt(lip) - math.sqrt(mu)) / (math.sqrt(lip) + math.sqrt(mu))
    y = w.copy()
    for _ in range(max_iter):
        w_next = project(y - global_gradient(model, ev, y) / lip, r)
        step = lip * np.linalg.norm(w_next - y)
        y = w_next + beta * (w_next - w)
        w = w_next
        if step <= tol:
            return w
    return w
