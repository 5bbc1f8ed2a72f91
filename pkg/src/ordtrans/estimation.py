"""Penalized log-likelihood, its gradient, and the gradient-ascent fit.

The objective is the data log-likelihood minus an elastic-net penalty on the
non-intercept coefficients::

    l(theta) = sum_k log p(c_I(k) -> c_F(k) | x_k, y_k)
               - lambda11 * sum |beta_li| - lambda12 * sum beta_li**2
               - lambda21 * sum |delta_mj| - lambda22 * sum delta_mj**2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .data import Dataset
from .model import EXP_CLAMP, VALIDITY_ALL, HyperParams, InvalidProbabilityError, ModelParams, weight_matrix
from .optim import DivergenceError, ascend

__all__ = [
    "Design",
    "FitReport",
    "DivergenceError",
    "design",
    "log_likelihood",
    "gradient",
    "penalty",
    "feasible_start",
    "unbounded_intercepts",
    "fit",
]


@dataclass(frozen=True, eq=False)
class Design:
    """Kernel-ready arrays: intercept-augmented features and 0-based level indices."""

    X1: np.ndarray
    Y1: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    n_rows: int
    n_cols: int
    mode: str

    @property
    def n_obs(self):
        return len(self.rows)


def design(ds: Dataset) -> Design:
    if not ds.fully_observed():
        raise ValueError("dataset has missing values; impute before fitting")
    n = ds.n_obs
    X1 = np.ascontiguousarray(np.column_stack([np.ones(n), ds.x]))
    Y1 = np.ascontiguousarray(np.column_stack([np.ones(n), ds.y]))
    return Design(
        X1, Y1,
        np.ascontiguousarray(ds.c_initial - 1, dtype=np.int64),
        np.ascontiguousarray(ds.c_final - 1, dtype=np.int64),
        ds.k, ds.n_cols, ds.mode,
    )


def _as_design(data) -> Design:
    return data if isinstance(data, Design) else design(data)


def _check_shapes(params: ModelParams, d: Design):
    if params.beta.shape != (d.n_rows, d.X1.shape[1]) or params.delta.shape != (d.n_cols - 1, d.Y1.shape[1]):
        raise ValueError(
            f"parameter shapes {params.beta.shape}/{params.delta.shape} do not fit the data "
            f"(K={d.n_rows}, columns={d.n_cols}, L={d.X1.shape[1] - 1}, M={d.Y1.shape[1] - 1})"
        )


def penalty(params: ModelParams, hp: HyperParams) -> float:
    b = params.beta[:, 1:]
    g = params.delta[:, 1:]
    return float(
        hp.lambda11 * np.abs(b).sum() + hp.lambda12 * (b * b).sum()
        + hp.lambda21 * np.abs(g).sum() + hp.lambda22 * (g * g).sum()
    )


def _penalty_grad(params: ModelParams, hp: HyperParams):
    gb = np.zeros_like(params.beta)
    gd = np.zeros_like(params.delta)
    b = params.beta[:, 1:]
    g = params.delta[:, 1:]
    gb[:, 1:] = -hp.lambda11 * np.sign(b) - 2.0 * hp.lambda12 * b
    gd[:, 1:] = -hp.lambda21 * np.sign(g) - 2.0 * hp.lambda22 * g
    return gb, gd


def _data_term(params, hp, d, with_grad):
    W = weight_matrix(hp.c_weight, d.n_rows, d.mode)
    return _backend.loglik_grad(
        np.ascontiguousarray(params.beta), np.ascontiguousarray(params.delta),
        d.X1, d.Y1, d.rows, d.cols, W, hp.alpha, with_grad, hp.validity == VALIDITY_ALL,
    )


def log_likelihood(params: ModelParams, hp: HyperParams, data) -> float:
    d = _as_design(data)
    _check_shapes(params, d)
    ll, bad, _, _ = _data_term(params, hp, d, False)
    if bad >= 0:
        raise InvalidProbabilityError(f"invalid probability vector at observation {bad}", bad)
    return ll - penalty(params, hp)


def gradient(params: ModelParams, hp: HyperParams, data) -> ModelParams:
    """Gradient of the penalized log-likelihood, shaped like ``params``.

    The subgradient of ``|.|`` at zero is taken as zero.
    """
    d = _as_design(data)
    _check_shapes(params, d)
    _, bad, gb, gd = _data_term(params, hp, d, True)
    if bad >= 0:
        raise InvalidProbabilityError(f"invalid probability vector at observation {bad}", bad)
    pb, pd = _penalty_grad(params, hp)
    return ModelParams(gb + pb, gd + pd, params.mode, params.n_cols)


@dataclass
class FitReport:
    params: ModelParams
    iterations: int
    trace: list
    converged: bool
    final_step_delta: float
    log_likelihood: float
    n_obs: int = 0
    backend: str = field(default_factory=lambda: _backend.BACKEND)

    def to_dict(self, with_trace=False) -> dict:
        d = {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_step_delta": self.final_step_delta,
            "log_likelihood": self.log_likelihood,
            "n_obs": self.n_obs,
            "n_free_parameters": self.params.n_free,
        }
        if with_trace:
            d["trace"] = list(self.trace)
        return d


def objective(hp: HyperParams, d: Design, template: ModelParams):
    """``theta -> (penalized log-likelihood, gradient)`` over flat parameter vectors."""
    W = weight_matrix(hp.c_weight, d.n_rows, d.mode)
    nb = template.beta.size
    bshape, dshape = template.beta.shape, template.delta.shape
    loglik_grad = _backend.loglik_grad
    check_all = hp.validity == VALIDITY_ALL

    def f(theta):
        beta = theta[:nb].reshape(bshape)
        delta = theta[nb:].reshape(dshape)
        ll, bad, gb, gd = loglik_grad(beta, delta, d.X1, d.Y1, d.rows, d.cols, W, hp.alpha, True, check_all)
        if bad >= 0:
            return -np.inf, None
        b, g = beta[:, 1:], delta[:, 1:]
        pen = (hp.lambda11 * np.abs(b).sum() + hp.lambda12 * (b * b).sum()
               + hp.lambda21 * np.abs(g).sum() + hp.lambda22 * (g * g).sum())
        gb[:, 1:] -= hp.lambda11 * np.sign(b) + 2.0 * hp.lambda12 * b
        gd[:, 1:] -= hp.lambda21 * np.sign(g) + 2.0 * hp.lambda22 * g
        return ll - pen, np.concatenate([gb.ravel(), gd.ravel()])

    return f


START_SHIFT = 0.5


def unbounded_intercepts(d: Design):
    """Intercepts whose likelihood keeps rising toward the exponent clamp.

    A row level with no observation in the last column gains likelihood as
    its row effect grows without bound; one with only last-column
    observations gains as it shrinks; an outcome column that is never
    observed gains as its column effect grows.  Returns
    ``(rows_up, rows_down, cols_up)`` as 0-based index arrays.
    """
    last = d.n_cols - 1
    rows_up, rows_down = [], []
    for i in range(d.n_rows):
        at = d.cols[d.rows == i]
        if at.size == 0:
            continue
        if not np.any(at == last):
            rows_up.append(i)
        elif np.all(at == last):
            rows_down.append(i)
    seen = np.bincount(d.cols, minlength=d.n_cols)
    cols_up = [j for j in range(last) if seen[j] == 0]
    return np.array(rows_up, int), np.array(rows_down, int), np.array(cols_up, int)


def feasible_start(hp: HyperParams, data) -> ModelParams:
    """All-zero coefficients, adjusted so the start point is usable.

    Under the default validity rule, intercepts listed by
    :func:`unbounded_intercepts` start at the clamp bound, where their
    maximum lies; gradient ascent would otherwise creep
    toward it for an impractical number of iterations.  If the remaining
    unit effects give near-diagonal probabilities summing past 1 (many
    levels), every ``delta[j, 0]`` is raised by ``START_SHIFT`` until the
    start point is valid.
    """
    d = _as_design(data)
    params = ModelParams.zeros(d.n_rows, d.X1.shape[1] - 1, d.Y1.shape[1] - 1, d.mode)
    cols_up = np.array([], int)
    if hp.validity != VALIDITY_ALL:
        # with every vector constrained these intercepts stay bounded
        rows_up, rows_down, cols_up = unbounded_intercepts(d)
        params.beta[rows_up, 0] = EXP_CLAMP
        params.beta[rows_down, 0] = -EXP_CLAMP
        params.delta[cols_up, 0] = EXP_CLAMP
    free = np.setdiff1d(np.arange(d.n_cols - 1), cols_up)
    while True:
        ll, bad, _, _ = _data_term(params, hp, d, False)
        if bad < 0:
            return params
        if free.size == 0 or params.delta[free[0], 0] >= EXP_CLAMP:
            raise DivergenceError("no valid starting point found")
        params.delta[free, 0] += START_SHIFT


def fit(data, hp: HyperParams = HyperParams(), init: ModelParams | None = None) -> FitReport:
    """Fit the transition model by gradient ascent.

    The default start is :func:`feasible_start`.  Non-convergence within
    ``hp.max_iter`` is reported, not raised; a start point with an invalid
    probability vector raises :class:`DivergenceError`.
    """
    d = _as_design(data)
    if d.n_obs < d.n_rows:
        raise ValueError(f"need at least K={d.n_rows} observations, got {d.n_obs}")
    if init is None:
        init = feasible_start(hp, d)
    _check_shapes(init, d)
    res = ascend(objective(hp, d, init), init.flat(), hp.eta, hp.tol, int(hp.max_iter))
    return FitReport(
        params=init.unflat(res.theta),
        iterations=res.iterations,
        trace=res.trace,
        converged=res.converged,
        final_step_delta=res.final_step_delta,
        log_likelihood=res.value,
        n_obs=d.n_obs,
    )
