"""Association-score imputation of categorical features, and a masking benchmark.

Two observations are compared on every feature column other than the one
being imputed.  With ``C`` the number of columns where both observations are
observed and equal and ``D`` the number where both are observed and differ,
the association score is ``Q = (C - D) / (C + D)``.  A missing categorical
cell is filled with the value of a donor drawn uniformly from the ``m``
observations with the highest score among those that observe the column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, DataError

log = logging.getLogger(__name__)

DEFAULT_NEIGHBORS = 5


@dataclass(frozen=True)
class AssociationScore:
    value: float
    comparable_count: int
    concordant: int
    discordant: int

    @property
    def defined(self) -> bool:
        return self.comparable_count > 0


def association(a, b, mask_a=None, mask_b=None) -> AssociationScore:
    """Association score between two feature vectors; NaN or a True mask entry means missing.

    ``value`` is NaN when no position is observed in both vectors.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"vectors differ in length: {a.shape} vs {b.shape}")
    miss_a = np.isnan(a) if mask_a is None else np.asarray(mask_a, bool) | np.isnan(a)
    miss_b = np.isnan(b) if mask_b is None else np.asarray(mask_b, bool) | np.isnan(b)
    both = ~miss_a & ~miss_b
    n = int(both.sum())
    c = int(np.count_nonzero(a[both] == b[both]))
    d = n - c
    return AssociationScore((c - d) / n if n else float("nan"), n, c, d)


def association_scores(target_row: np.ndarray, donors: np.ndarray):
    """Vectorized scores of one row against many; returns ``(Q, comparable_count)``."""
    both = ~np.isnan(donors) & ~np.isnan(target_row)[None, :]
    n = both.sum(axis=1)
    c = np.count_nonzero((donors == target_row[None, :]) & both, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = (2 * c - n) / n
    return q, n


# ---------------------------------------------------------------- helpers


def column_index(ds: Dataset, column) -> int:
    """Position of ``column`` (name or index) in ``ds.feature_matrix()``."""
    feats = ds.features
    if isinstance(column, (int, np.integer)):
        if not 0 <= column < len(feats):
            raise DataError(f"feature index {column} out of range")
        return int(column)
    for idx, f in enumerate(feats):
        if f.name == column:
            return idx
    raise DataError(f"unknown feature {column!r}")


def quartile_bins(v: np.ndarray) -> np.ndarray:
    """Quartile bin codes 0..3 for a continuous column; NaN stays NaN."""
    obs = v[~np.isnan(v)]
    if obs.size == 0:
        return v.copy()
    cuts = np.quantile(obs, [0.25, 0.5, 0.75])
    out = np.searchsorted(cuts, v, side="right").astype(float)
    out[np.isnan(v)] = np.nan
    return out


def comparison_matrix(ds: Dataset, bin_continuous: bool = True) -> np.ndarray:
    """Feature matrix on which equality is meaningful.

    Categorical codes are used as they are; continuous columns are replaced by
    quartile bins, or dropped (all-NaN) when ``bin_continuous`` is off.
    """
    z = ds.feature_matrix().copy()
    for idx, f in enumerate(ds.features):
        if f.kind == "continuous":
            z[:, idx] = quartile_bins(z[:, idx]) if bin_continuous else np.nan
    return z


def cell_rng(seed: int, column: int, row: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(column), int(row)]))


def top_donors(q: np.ndarray, m: int) -> np.ndarray:
    """Indices of the ``m`` highest scores, plus every donor tied with the m-th."""
    if q.size <= m:
        return np.arange(q.size)
    cutoff = np.partition(q, q.size - m)[q.size - m]
    return np.flatnonzero(q >= cutoff)


# ---------------------------------------------------------------- imputers


def impute_categorical(ds: Dataset, column, m: int = DEFAULT_NEIGHBORS, seed: int = 0,
                       bin_continuous: bool = True, scores_from: Dataset | None = None) -> Dataset:
    """Fill the missing cells of one categorical column by association-score donors.

    ``scores_from`` supplies the matrix the scores are computed on (defaults
    to ``ds``); :func:`impute_all` passes the unimputed data so the result
    does not depend on column order.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    col = column_index(ds, column)
    if ds.features[col].kind != "categorical":
        raise DataError(f"feature {ds.features[col].name!r} is not categorical")
    z = ds.feature_matrix()
    target = z[:, col]
    missing = np.isnan(target)
    if not missing.any():
        return ds
    observed = np.flatnonzero(~missing)
    if observed.size == 0:
        raise DataError(f"feature {ds.features[col].name!r} has no observed values")

    comp = comparison_matrix(scores_from if scores_from is not None else ds, bin_continuous)
    comp = np.delete(comp, col, axis=1)
    donors = comp[observed]
    donor_values = target[observed]
    filled = target.copy()
    n_fallback = 0
    for row in np.flatnonzero(missing):
        rng = cell_rng(seed, col, row)
        q, n = association_scores(comp[row], donors)
        usable = np.flatnonzero(n > 0)
        if usable.size == 0:
            n_fallback += 1
            filled[row] = donor_values[rng.integers(donor_values.size)]
            continue
        chosen = usable[top_donors(q[usable], m)]
        filled[row] = donor_values[chosen[rng.integers(chosen.size)]]
    if n_fallback:
        log.info("%s: %d cells had no comparable donor; sampled from the marginal",
                 ds.features[col].name, n_fallback)
    out = z.copy()
    out[:, col] = filled
    return ds.with_feature_matrix(out)


def impute_continuous_mean(ds: Dataset, column) -> Dataset:
    col = column_index(ds, column)
    z = ds.feature_matrix()
    v = z[:, col]
    missing = np.isnan(v)
    if not missing.any():
        return ds
    if missing.all():
        raise DataError(f"feature {ds.features[col].name!r} has no observed values")
    out = z.copy()
    out[missing, col] = v[~missing].mean()
    return ds.with_feature_matrix(out)


@dataclass
class FillReport:
    counts: dict

    def rows(self):
        return sorted(self.counts.items())


def impute_all(ds: Dataset, m: int = DEFAULT_NEIGHBORS, seed: int = 0,
               bin_continuous: bool = True) -> tuple[Dataset, FillReport]:
    """Impute every feature column: association donors for categoricals, means otherwise.

    Missing levels are not imputed.
    """
    original = ds
    out = ds
    counts = {}
    for idx, f in enumerate(ds.features):
        n_missing = int(np.isnan(ds.feature_matrix()[:, idx]).sum())
        counts[f.name] = n_missing
        if not n_missing:
            continue
        if f.kind == "categorical":
            out = impute_categorical(out, idx, m, seed, bin_continuous, scores_from=original)
        else:
            out = impute_continuous_mean(out, idx)
    return out, FillReport(counts)


# Imputers for the masking benchmark share the signature
# ``imputer(masked: Dataset, column: int, seed: int) -> Dataset``.


def association_imputer(m: int = DEFAULT_NEIGHBORS, bin_continuous: bool = True):
    def imputer(ds, column, seed):
        return impute_categorical(ds, column, m, seed, bin_continuous)

    imputer.__name__ = f"association(m={m})"
    return imputer


def _fill_with(ds, column, draw):
    z = ds.feature_matrix().copy()
    missing = np.isnan(z[:, column])
    z[missing, column] = draw(int(missing.sum()), z[~missing, column])
    return ds.with_feature_matrix(z)


def uniform_imputer(ds, column, seed):
    """Uniform draw over the column's declared categories."""
    card = ds.features[column].cardinality
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(column)]))
    return _fill_with(ds, column, lambda n, _: rng.integers(card, size=n).astype(float))


def marginal_imputer(ds, column, seed):
    """Draw from the column's observed values."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(column)]))
    return _fill_with(ds, column, lambda n, obs: rng.choice(obs, size=n))


class TruthImputer:
    """Reads the hidden values back from the unmasked dataset (benchmark sanity check)."""

    __name__ = "truth"

    def __init__(self, truth: Dataset):
        self.truth = truth.feature_matrix()

    def __call__(self, ds, column, seed):
        z = ds.feature_matrix().copy()
        missing = np.isnan(z[:, column])
        z[missing, column] = self.truth[missing, column]
        return ds.with_feature_matrix(z)


@dataclass
class MaskScore:
    mean: float
    sd: float
    per_repeat: np.ndarray


def mask_and_score(ds: Dataset, columns, fraction: float = 0.10, imputer=None,
                   repeats: int = 5, seed: int = 0) -> MaskScore:
    """Hide ``fraction`` of each column's cells, then score how many the imputer recovers exactly.

    Accuracy per repeat is the share of hidden cells (over all ``columns``)
    filled with their true value; ``sd`` is the sample standard deviation
    across repeats.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    imputer = imputer or association_imputer()
    cols = [column_index(ds, c) for c in columns]
    z = ds.feature_matrix()
    for c in cols:
        if np.isnan(z[:, c]).any():
            raise DataError(f"feature {ds.features[c].name!r} must be fully observed to be scored")
    n_hide = max(1, int(round(fraction * ds.n_obs)))
    scores = []
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        masked = z.copy()
        hidden = {}
        for c in cols:
            rows = rng.choice(ds.n_obs, size=n_hide, replace=False)
            masked[rows, c] = np.nan
            hidden[c] = rows
        work = ds.with_feature_matrix(masked)
        correct = total = 0
        for c in cols:
            # each column is imputed from the masked data, as the benchmark sees it
            filled = imputer(work, c, int(rng.integers(2**31))).feature_matrix()[:, c]
            rows = hidden[c]
            correct += int(np.count_nonzero(filled[rows] == z[rows, c]))
            total += rows.size
        scores.append(correct / total)
    scores = np.array(scores)
    sd = float(scores.std(ddof=1)) if repeats > 1 else 0.0
    return MaskScore(float(scores.mean()), sd, scores)
