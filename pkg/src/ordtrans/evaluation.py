"""Accuracy metrics, stratified k-fold cross-validation and the comparison models.

Every model follows the same small protocol: ``fit(train)`` returns the
model, ``predict(test)`` returns 1-based final levels.  Models receive raw
(unencoded) datasets and fit their own :class:`FeatureEncoder` on the training
split, so standardization constants never see the held-out data.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DataError, FeatureEncoder, build_contingency
from .estimation import FitReport, fit
from .inference import predict_dataset
from .model import HyperParams, default_c
from .optim import ascend

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    overestimate: float
    underestimate: float

    def as_tuple(self):
        return (self.accuracy, self.overestimate, self.underestimate)


def metrics(true_levels, predicted_levels) -> Metrics:
    t = np.asarray(true_levels)
    p = np.asarray(predicted_levels)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise ValueError("no samples to score")
    n = t.size
    over = np.count_nonzero(p > t)
    under = np.count_nonzero(p < t)
    # the three counts partition the samples; the float proportions sum to one up to rounding
    return Metrics((n - over - under) / n, over / n, under / n)


# ---------------------------------------------------------------- models


def _features(enc: FeatureEncoder, ds: Dataset) -> np.ndarray:
    e = enc.transform(ds)
    return np.hstack([e.x, e.y])


class MultinomialLR:
    """Multinomial logistic regression with an L2 penalty, fitted by :func:`ascend`.

    The first class is the reference (its weights are fixed at zero); the
    intercepts are not penalized.
    """

    def __init__(self, l2=0.01, eta=0.01, tol=1e-4, max_iter=10000):
        self.l2, self.eta, self.tol, self.max_iter = l2, eta, tol, max_iter
        self.classes_ = None
        self.weights = None
        self.result = None

    def fit(self, X, labels):
        labels = np.asarray(labels)
        self.classes_ = np.unique(labels)
        n_cls = self.classes_.size
        X1 = np.column_stack([np.ones(len(X)), X])
        if n_cls == 1:
            self.weights = np.zeros((0, X1.shape[1]))
            return self
        onehot = (labels[:, None] == self.classes_[None, :]).astype(float)
        shape = (n_cls - 1, X1.shape[1])
        l2 = self.l2

        def objective(theta):
            W = theta.reshape(shape)
            logits = np.zeros((len(X1), n_cls))
            logits[:, 1:] = X1 @ W.T
            top = logits.max(axis=1, keepdims=True)
            ez = np.exp(logits - top)
            z = ez.sum(axis=1, keepdims=True)
            lse = top[:, 0] + np.log(z[:, 0])
            ll = np.sum((logits * onehot).sum(axis=1) - lse) - l2 * np.sum(W[:, 1:] ** 2)
            g = (onehot - ez / z)[:, 1:].T @ X1
            g[:, 1:] -= 2.0 * l2 * W[:, 1:]
            return ll, g.ravel()

        self.result = ascend(objective, np.zeros(shape).ravel(), self.eta, self.tol, self.max_iter)
        self.weights = self.result.theta.reshape(shape)
        return self

    def predict(self, X):
        if self.weights.shape[0] == 0:
            return np.full(len(X), self.classes_[0])
        X1 = np.column_stack([np.ones(len(X)), X])
        logits = np.zeros((len(X1), self.classes_.size))
        logits[:, 1:] = X1 @ self.weights.T
        return self.classes_[logits.argmax(axis=1)]


class DiagonalModel:
    """Predicts no change: the final level equals the initial level."""

    name = "DIAG"

    def fit(self, train: Dataset):
        return self

    def predict(self, test: Dataset):
        return np.asarray(test.c_initial).copy()


class NewModel:
    """The transition model fitted by penalized gradient ascent.

    With ``auto_c`` the distance weight ``C`` is set to the diagonal to
    off-diagonal count ratio of the training table (kept at the given value
    when the table has no off-diagonal counts).
    """

    name = "NEW"

    def __init__(self, hp: HyperParams = HyperParams(), auto_c: bool = True):
        self.hp = hp
        self.auto_c = auto_c
        self.encoder = None
        self.report: FitReport | None = None
        self.n_invalid = 0

    def fit(self, train: Dataset):
        self.encoder = FeatureEncoder.fit(train)
        hp = self.hp
        if self.auto_c:
            try:
                hp = hp.with_(c_weight=default_c(build_contingency(train)))
            except ValueError:
                pass
        self.fitted_hp = hp
        self.report = fit(self.encoder.transform(train), hp)
        return self

    def predict(self, test: Dataset):
        enc = self.encoder.transform(test)
        pred = predict_dataset(self.report.params, self.fitted_hp, enc, strict=False)
        self.n_invalid = pred.n_invalid
        return pred.levels

    def info(self) -> dict:
        return {
            "iterations": self.report.iterations,
            "converged": self.report.converged,
            "c_weight": self.fitted_hp.c_weight,
            "invalid_test_vectors": self.n_invalid,
        }


class LRDeltaModel:
    """Multinomial LR on the level change ``c_F - c_I`` from concatenated (x, y)."""

    name = "LR"

    def __init__(self, l2=0.01, eta=0.01, tol=1e-4, max_iter=10000):
        self.lr = MultinomialLR(l2, eta, tol, max_iter)
        self.encoder = None

    def fit(self, train: Dataset):
        self.encoder = FeatureEncoder.fit(train)
        self.k = train.k
        self.lr.fit(_features(self.encoder, train), train.c_final - train.c_initial)
        return self

    def predict(self, test: Dataset):
        d = self.lr.predict(_features(self.encoder, test))
        return np.clip(test.c_initial + d, 1, self.k)

    def info(self) -> dict:
        r = self.lr.result
        return {"iterations": r.iterations if r else 0, "converged": r.converged if r else True}


class LRRowModel:
    """One multinomial LR per initial level predicting the final level from (x, y)."""

    name = "LR_row"

    def __init__(self, l2=0.01, eta=0.01, tol=1e-4, max_iter=10000):
        self.args = (l2, eta, tol, max_iter)
        self.models = {}
        self.encoder = None

    def fit(self, train: Dataset):
        self.encoder = FeatureEncoder.fit(train)
        X = _features(self.encoder, train)
        self.models = {}
        for i in np.unique(train.c_initial):
            sel = train.c_initial == i
            self.models[int(i)] = MultinomialLR(*self.args).fit(X[sel], train.c_final[sel])
        return self

    def predict(self, test: Dataset):
        X = _features(self.encoder, test)
        out = np.asarray(test.c_initial).copy()
        for i in np.unique(test.c_initial):
            sel = test.c_initial == i
            model = self.models.get(int(i))
            if model is None:
                log.warning("initial level %d unseen in training; predicting no change", i)
                continue
            out[sel] = model.predict(X[sel])
        return out

    def info(self) -> dict:
        return {"iterations": {i: (m.result.iterations if m.result else 0) for i, m in self.models.items()}}


MODEL_FACTORIES = {
    "NEW": NewModel,
    "LR": LRDeltaModel,
    "LR_row": LRRowModel,
    "DIAG": DiagonalModel,
}


# ---------------------------------------------------------------- cross-validation


def stratified_folds(ds: Dataset, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Fold id per observation, stratified by (c_I, c_F) cell.

    Each cell's observations are shuffled, cells are concatenated in row-major
    order, and folds are dealt round-robin along the concatenation.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if folds > ds.n_obs:
        raise ValueError(f"cannot make {folds} folds from {ds.n_obs} observations")
    rng = np.random.default_rng(seed)
    cell = ds.c_initial * (ds.n_cols + 1) + ds.c_final
    order = []
    for c in np.unique(cell):
        idx = np.flatnonzero(cell == c)
        rng.shuffle(idx)
        order.append(idx)
    order = np.concatenate(order)
    assignment = np.empty(ds.n_obs, dtype=np.int64)
    assignment[order] = np.arange(ds.n_obs) % folds
    return assignment


@dataclass
class ModelResult:
    name: str
    folds: list = field(default_factory=list)
    info: list = field(default_factory=list)

    def _col(self, attr):
        return np.array([getattr(m, attr) for m in self.folds])

    @property
    def mean_accuracy(self) -> float:
        return float(self._col("accuracy").mean())

    @property
    def sd_accuracy(self) -> float:
        a = self._col("accuracy")
        return float(a.std(ddof=1)) if a.size > 1 else 0.0

    @property
    def mean_overestimate(self) -> float:
        return float(self._col("overestimate").mean())

    @property
    def mean_underestimate(self) -> float:
        return float(self._col("underestimate").mean())


@dataclass
class EvalReport:
    assignment: np.ndarray
    results: dict
    n_folds: int
    seed: int

    def __getitem__(self, name) -> ModelResult:
        return self.results[name]

    def summary(self) -> str:
        lines = [f"{'model':<8} {'accuracy':>9} {'sd':>7} {'over':>7} {'under':>7}"]
        for name, r in self.results.items():
            lines.append(
                f"{name:<8} {r.mean_accuracy:9.4f} {r.sd_accuracy:7.4f} "
                f"{r.mean_overestimate:7.4f} {r.mean_underestimate:7.4f}"
            )
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "fold", "accuracy", "overestimate", "underestimate"])
            for name, r in self.results.items():
                for f, m in enumerate(r.folds):
                    w.writerow([name, f, *(f"{v:.6f}" for v in m.as_tuple())])
                w.writerow([name, "mean", f"{r.mean_accuracy:.6f}",
                            f"{r.mean_overestimate:.6f}", f"{r.mean_underestimate:.6f}"])

    def to_dict(self) -> dict:
        return {
            "folds": self.n_folds,
            "seed": self.seed,
            "models": {
                name: {
                    "mean_accuracy": r.mean_accuracy,
                    "sd_accuracy": r.sd_accuracy,
                    "mean_overestimate": r.mean_overestimate,
                    "mean_underestimate": r.mean_underestimate,
                    "folds": [list(m.as_tuple()) for m in r.folds],
                    "info": r.info,
                }
                for name, r in self.results.items()
            },
        }


def cross_validate(ds: Dataset, models, folds: int = 5, seed: int = 0, threads: int = 1) -> EvalReport:
    """k-fold evaluation of several models on the same stratified folds.

    ``models`` maps a name to a zero-argument factory (a class or a lambda)
    that builds a fresh model for each fold.
    """
    if not ds.fully_observed():
        raise DataError("cross-validation needs a fully observed dataset; impute first")
    assignment = stratified_folds(ds, folds, seed)
    levels = set(range(1, ds.k + 1))
    for f in range(folds):
        seen = set(np.unique(ds.c_initial[assignment != f]).tolist())
        if not levels <= seen:
            raise DataError(
                f"training split of fold {f} lacks initial level(s) {sorted(levels - seen)}; use fewer folds"
            )
    splits = [(ds.subset(assignment != f), ds.subset(assignment == f)) for f in range(folds)]

    def run(job):
        name, factory, f = job
        train, test = splits[f]
        model = factory().fit(train)
        m = metrics(test.c_final, model.predict(test))
        info = model.info() if hasattr(model, "info") else {}
        return name, f, m, info

    jobs = [(name, factory, f) for name, factory in models.items() for f in range(folds)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(run, jobs))
    else:
        out = [run(j) for j in jobs]
    results = {name: ModelResult(name) for name in models}
    for name, _, m, info in out:  # jobs are already in (model, fold) order
        results[name].folds.append(m)
        results[name].info.append(info)
    return EvalReport(assignment, results, folds, seed)
