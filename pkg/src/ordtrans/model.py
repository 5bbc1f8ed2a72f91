"""Transition-probability form of the ordinal transition model.

A subject at initial level ``i`` moves to final level ``j`` with probability

    p(i -> j | x, y) = lam_i(x) / (alpha + lam_i(x) + K_ij * gam_j(y)),   j < J
    p(i -> J | x, y) = 1 - sum_{j<J} p(i -> j | x, y)

where ``lam_i`` (row effect) and ``gam_j`` (column effect) are exponentials of
affine forms in the pre-transition features ``x`` and the transition-period
features ``y``, and ``K_ij = C * (dist(i, j)**2 + 1)`` favours transitions that
stay close to the diagonal.

Levels are 1-based in the public functions of this module; arrays are
0-indexed internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

EXP_CLAMP = 30.0

STANDARD = "standard"
DELTA = "delta"
MODES = (STANDARD, DELTA)

# Which observations must have a positive completed last probability while
# fitting: only those whose outcome is the last column, or all of them.
VALIDITY_OBSERVED = "observed"
VALIDITY_ALL = "all"
VALIDITY_MODES = (VALIDITY_OBSERVED, VALIDITY_ALL)


class InvalidProbabilityError(ValueError):
    """The completed final-column probability came out negative."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 0.001
    c_weight: float = 1.0
    lambda11: float = 0.001
    lambda12: float = 0.01
    lambda21: float = 0.001
    lambda22: float = 0.01
    eta: float = 0.01
    tol: float = 1e-4
    max_iter: int = 10000
    seed: int = 0
    validity: str = VALIDITY_OBSERVED

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.c_weight > 0:
            raise ValueError(f"c_weight must be > 0, got {self.c_weight}")
        for name in ("lambda11", "lambda12", "lambda21", "lambda22"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.validity not in VALIDITY_MODES:
            raise ValueError(f"validity must be one of {VALIDITY_MODES}, got {self.validity!r}")

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class ModelParams:
    """Row-effect coefficients ``beta`` and column-effect coefficients ``delta``.

    ``beta`` has shape ``(n_rows, L + 1)`` with the intercept in column 0;
    ``delta`` has shape ``(n_cols - 1, M + 1)``, again intercept first.  The
    last outcome column has no coefficients of its own: its probability is
    the remainder.
    """

    beta: np.ndarray
    delta: np.ndarray
    mode: str = STANDARD
    n_cols: int | None = field(default=None)

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=float, ndmin=2)
        self.delta = np.array(self.delta, dtype=float, ndmin=2)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n_cols is None:
            self.n_cols = self.delta.shape[0] + 1
        if self.delta.shape[0] != self.n_cols - 1:
            raise ValueError("delta must have n_cols - 1 rows")
        if self.mode == STANDARD and self.n_cols != self.n_rows:
            raise ValueError("standard mode needs a square level set")
        if self.mode == DELTA and self.n_cols != 3:
            raise ValueError("delta mode has exactly 3 outcome columns")
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.delta))):
            raise ValueError("model coefficients must be finite")

    @classmethod
    def zeros(cls, n_rows: int, n_x: int, n_y: int, mode: str = STANDARD) -> "ModelParams":
        n_cols = n_rows if mode == STANDARD else 3
        return cls(np.zeros((n_rows, n_x + 1)), np.zeros((n_cols - 1, n_y + 1)), mode, n_cols)

    @property
    def n_rows(self) -> int:
        return self.beta.shape[0]

    @property
    def n_x(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def n_y(self) -> int:
        return self.delta.shape[1] - 1

    @property
    def n_free(self) -> int:
        return self.beta.size + self.delta.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta.ravel(), self.delta.ravel()])

    def unflat(self, theta: np.ndarray) -> "ModelParams":
        nb = self.beta.size
        return ModelParams(
            theta[:nb].reshape(self.beta.shape),
            theta[nb:].reshape(self.delta.shape),
            self.mode,
            self.n_cols,
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.beta.copy(), self.delta.copy(), self.mode, self.n_cols)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "beta": self.beta.tolist(),
            "delta": self.delta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        n_x = len(d["beta"][0]) - 1 if d["beta"] else 0
        beta = np.asarray(d["beta"], dtype=float).reshape(d["n_rows"], n_x + 1)
        delta = np.asarray(d["delta"], dtype=float)
        if delta.size == 0:
            delta = delta.reshape(d["n_cols"] - 1, 1)
        return cls(beta, delta, d.get("mode", STANDARD), d["n_cols"])


def free_parameter_count(k: int, n_x: int, n_y: int) -> int:
    return k * (n_x + n_y + 2) - (n_y + 1)


def _affine_exp(coef, v):
    z = coef[0] + float(np.dot(coef[1:], v)) if len(coef) > 1 else coef[0]
    return math.exp(min(max(z, -EXP_CLAMP), EXP_CLAMP))


def row_effect(params: ModelParams, i: int, x) -> float:
    """``exp(beta_0i + sum_l beta_li x_l)`` with the exponent clamped."""
    if not 1 <= i <= params.n_rows:
        raise ValueError(f"row level {i} outside 1..{params.n_rows}")
    return _affine_exp(params.beta[i - 1], np.asarray(x, dtype=float))


def column_effect(params: ModelParams, j: int, y) -> float:
    if not 1 <= j <= params.n_cols - 1:
        raise ValueError(f"column level {j} outside 1..{params.n_cols - 1}")
    return _affine_exp(params.delta[j - 1], np.asarray(y, dtype=float))


def k_weight(c: float, i: int, j: int) -> float:
    return c * ((j - i) ** 2 + 1)


def weight_matrix(c: float, n_rows: int, mode: str = STANDARD) -> np.ndarray:
    """``K_ij`` for every (row, column) pair.

    In delta mode the columns are the changes -1, 0, +1 and the distance is
    the change itself, so ``K_i,d = C * (d**2 + 1)`` regardless of the row.
    """
    rows = np.arange(n_rows)[:, None]
    if mode == STANDARD:
        dist = np.arange(n_rows)[None, :] - rows
    elif mode == DELTA:
        dist = np.broadcast_to(np.array([-1, 0, 1])[None, :], (n_rows, 3))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.ascontiguousarray(c * (dist.astype(float) ** 2 + 1.0))


def default_c(counts) -> float:
    """Diagonal-to-off-diagonal count ratio of a square contingency table."""
    counts = np.asarray(getattr(counts, "counts", counts))
    n_d = float(np.trace(counts))
    n_o = float(counts.sum()) - n_d
    if n_o <= 0:
        raise ValueError("off-diagonal count is zero")
    return n_d / n_o


def transition_probability(params: ModelParams, hp: HyperParams, i: int, x, y, strict=True):
    """Probability vector over the ``n_cols`` outcome columns for row level ``i``.

    With ``strict`` an :class:`InvalidProbabilityError` is raised when the
    completed last entry is negative.
    """
    lam = row_effect(params, i, x)
    w = weight_matrix(hp.c_weight, params.n_rows, params.mode)[i - 1]
    p = np.empty(params.n_cols)
    for j in range(params.n_cols - 1):
        p[j] = lam / (hp.alpha + lam + w[j] * column_effect(params, j + 1, y))
    p[-1] = 1.0 - p[:-1].sum()
    if strict and p[-1] < 0:
        raise InvalidProbabilityError("invalid probability vector: final entry is negative")
    return p
