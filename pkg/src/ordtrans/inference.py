"""Prediction, change-of-level (delta) outcomes, effect ranking and bootstrap p-values."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _backend
from .data import Dataset, build_contingency
from .estimation import Design, FitReport, design, fit
from .model import (
    DELTA,
    HyperParams,
    InvalidProbabilityError,
    ModelParams,
    STANDARD,
    transition_probability,
    weight_matrix,
)
from .optim import DivergenceError

log = logging.getLogger(__name__)

DELTA_LABELS = (-1, 0, 1)


# ---------------------------------------------------------------- prediction


def _column_distance(n_rows: int, n_cols: int, mode: str) -> np.ndarray:
    if mode == DELTA:
        return np.broadcast_to(np.abs(np.arange(n_cols) - 1)[None, :], (n_rows, n_cols))
    return np.abs(np.arange(n_cols)[None, :] - np.arange(n_rows)[:, None])


def _argmax_rows(P: np.ndarray, rows: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the column nearest the diagonal, then the smaller one."""
    n_cols = P.shape[1]
    top = P == P.max(axis=1, keepdims=True)
    key = dist[rows] * (n_cols + 1) + np.arange(n_cols)[None, :]
    key = np.where(top, key, np.iinfo(np.int64).max)
    return key.argmin(axis=1)


def predict(params: ModelParams, hp: HyperParams, i: int, x, y, strict: bool = True):
    """Predicted outcome column (1-based) and the probability vector for one subject."""
    p = transition_probability(params, hp, i, x, y, strict=strict)
    dist = _column_distance(params.n_rows, params.n_cols, params.mode)
    j = _argmax_rows(p[None, :], np.array([i - 1]), dist)[0]
    return int(j) + 1, p


@dataclass
class Prediction:
    levels: np.ndarray
    probabilities: np.ndarray
    invalid: np.ndarray

    @property
    def n_invalid(self) -> int:
        return int(self.invalid.sum())


def predict_dataset(params: ModelParams, hp: HyperParams, data, strict: bool = False) -> Prediction:
    """Batch prediction for every observation of an (encoded) dataset.

    Vectors whose completed last entry is negative are flagged in
    ``Prediction.invalid``; with ``strict`` the first one raises instead.
    The argmax is well defined either way since a negative entry never wins.
    """
    d = data if isinstance(data, Design) else _design_for_prediction(data)
    W = weight_matrix(hp.c_weight, params.n_rows, params.mode)
    P = _backend.probabilities(
        np.ascontiguousarray(params.beta), np.ascontiguousarray(params.delta),
        d.X1, d.Y1, d.rows, W, hp.alpha,
    )
    invalid = P[:, -1] < 0
    if strict and invalid.any():
        k = int(np.flatnonzero(invalid)[0])
        raise InvalidProbabilityError(f"invalid probability vector at observation {k}", k)
    dist = _column_distance(params.n_rows, params.n_cols, params.mode)
    return Prediction(_argmax_rows(P, d.rows, dist) + 1, P, invalid)


def _design_for_prediction(ds: Dataset) -> Design:
    # outcome may be unknown at prediction time
    if ds.x_mask.any() or ds.y_mask.any() or (ds.c_initial == 0).any():
        raise ValueError("prediction needs fully observed features and initial levels")
    n = ds.n_obs
    return Design(
        np.ascontiguousarray(np.column_stack([np.ones(n), ds.x])),
        np.ascontiguousarray(np.column_stack([np.ones(n), ds.y])),
        np.ascontiguousarray(ds.c_initial - 1, dtype=np.int64),
        np.ascontiguousarray(np.maximum(ds.c_final - 1, 0), dtype=np.int64),
        ds.k, ds.n_cols, ds.mode,
    )


# ---------------------------------------------------------------- delta outcome


def to_delta(ds: Dataset) -> Dataset:
    """Replace the final level by the sign of the change: columns 1, 2, 3 = -1, 0, +1."""
    if ds.mode == DELTA:
        return ds
    change = np.sign(ds.c_final - ds.c_initial) + 2
    change = np.where((ds.c_final == 0) | (ds.c_initial == 0), 0, change)
    return replace(ds, c_final=change, mode=DELTA)


def delta_labels(ds: Dataset) -> np.ndarray:
    if ds.mode != DELTA:
        raise ValueError("not a delta-mode dataset")
    return ds.c_final - 2


def delta_contingency(ds: Dataset):
    return build_contingency(to_delta(ds))


@dataclass
class EffectRanking:
    """y-features ordered by their coefficient on the improvement column (Delta = -1)."""

    names: tuple
    coefficients: np.ndarray
    p_values: np.ndarray | None = None

    def rows(self):
        for i, name in enumerate(self.names):
            p = None if self.p_values is None else float(self.p_values[i])
            yield name, float(self.coefficients[i]), p

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["Treatment", "Coefficient", "P-Value"])
            for name, coef, p in self.rows():
                w.writerow([name, f"{coef:.6g}", "" if p is None else f"{p:.6g}"])

    def to_markdown(self) -> str:
        lines = ["| Treatment | Coefficient | P-Value |", "|---|---|---|"]
        for name, coef, p in self.rows():
            lines.append(f"| {name} | {coef:.3f} | {'' if p is None else f'{p:.3f}'} |")
        return "\n".join(lines)


def rank_improving_features(report: FitReport, feature_names, p_values=None) -> EffectRanking:
    params = report.params
    if params.mode != DELTA:
        raise ValueError("ranking needs a delta-mode fit (see to_delta)")
    if not report.converged:
        raise ValueError("delta-mode fit did not converge; refit with more iterations or a larger tol")
    names = tuple(feature_names)
    if len(names) != params.n_y:
        raise ValueError(f"expected {params.n_y} feature names, got {len(names)}")
    coef = params.delta[0, 1:]
    order = np.argsort(coef, kind="stable")
    pv = None if p_values is None else np.asarray(p_values, dtype=float)[order]
    return EffectRanking(tuple(names[i] for i in order), coef[order].copy(), pv)


# ---------------------------------------------------------------- bootstrap


def empirical_p_value(observed: float, null_draws) -> float:
    """Two-sided tail proportion ``2 * min(#{T_b > t}, #{T_b < t}) / B`` (strict inequalities)."""
    null_draws = np.asarray(null_draws, dtype=float)
    if null_draws.size == 0:
        raise ValueError("no bootstrap replicates")
    b = null_draws.size
    above = np.count_nonzero(null_draws > observed) / b
    below = np.count_nonzero(null_draws < observed) / b
    return float(min(1.0, 2.0 * min(above, below)))


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))


def _sampling_probabilities(P: np.ndarray) -> np.ndarray:
    # a negative completed entry cannot be sampled; clip and renormalize
    Q = np.clip(P, 0.0, None)
    return Q / Q.sum(axis=1, keepdims=True)


def sample_outcomes(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One multinomial draw per row of ``P``; returns 0-based column indices."""
    cdf = np.cumsum(_sampling_probabilities(P), axis=1)
    u = rng.random(P.shape[0])
    return np.minimum((u[:, None] >= cdf).sum(axis=1), P.shape[1] - 1)


@dataclass
class BootstrapResult:
    p_value: float
    observed: float
    null_draws: np.ndarray
    dropped: int


def bootstrap_null(data, hp: HyperParams, fitted: ModelParams, target, n_boot: int = 500,
                   seed: int = 0, threads: int = 1, max_drop: float = 0.10) -> BootstrapResult:
    """Empirical p-value for one column-effect coefficient.

    ``target = (m, j)``: feature ``m`` (1-based, so ``m >= 1``) of outcome
    column ``j`` (1-based, ``j < n_cols``).  For every replicate the
    coefficient is zeroed, a new outcome is drawn for each observation from
    the resulting model, and the model is refit from the zeroed estimate.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    d = data if isinstance(data, Design) else design(data)
    m, j = target
    if not (1 <= m <= fitted.n_y and 1 <= j <= fitted.n_cols - 1):
        raise ValueError(f"target {target} outside delta shape {fitted.delta.shape}")
    observed = float(fitted.delta[j - 1, m])
    null = fitted.copy()
    null.delta[j - 1, m] = 0.0
    W = weight_matrix(hp.c_weight, null.n_rows, null.mode)
    P = _backend.probabilities(null.beta, null.delta, d.X1, d.Y1, d.rows, W, hp.alpha)

    def replicate(b):
        rng = replicate_rng(seed, b)
        cols = np.ascontiguousarray(sample_outcomes(P, rng), dtype=np.int64)
        db = replace(d, cols=cols)
        try:
            rep = fit(db, hp, init=null)
        except DivergenceError as exc:
            log.warning("bootstrap replicate %d dropped: %s", b, exc)
            return None
        return float(rep.params.delta[j - 1, m])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            draws = list(pool.map(replicate, range(n_boot)))
    else:
        draws = [replicate(b) for b in range(n_boot)]
    kept = np.array([v for v in draws if v is not None])
    dropped = n_boot - kept.size
    if dropped > max_drop * n_boot:
        raise RuntimeError(f"{dropped} of {n_boot} bootstrap refits diverged")
    return BootstrapResult(empirical_p_value(observed, kept), observed, kept, dropped)


def bootstrap_p_value(data, hp, fitted, target, n_boot=500, seed=0, threads=1) -> float:
    return bootstrap_null(data, hp, fitted, target, n_boot, seed, threads).p_value


def improving_feature_p_values(data, hp, fitted, n_boot=500, seed=0, threads=1) -> np.ndarray:
    """p-values of every y-feature's coefficient on the improvement column."""
    return np.array([
        bootstrap_p_value(data, hp, fitted, (m, 1), n_boot, seed + 7919 * m, threads)
        for m in range(1, fitted.n_y + 1)
    ])
