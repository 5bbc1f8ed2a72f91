"""Datasets, level groupings, contingency tables and CSV/manifest ingestion.

A manifest is a YAML document::

    columns:
      age:        {role: x, kind: continuous}
      smoking:    {role: x, kind: categorical, categories: ["0", "1"]}
      aspirin:    {role: y, kind: categorical}
      rankin_in:  {role: c_initial}
      rankin_out: {role: c_final}
      patient_id: {role: ignore}
    levels:
      raw_range: [1, 7]                    # optional
      grouping: [[1], [2, 3], [4, 5, 6, 7]]  # optional
      k: 3                                 # optional, declared K wins
    missing: ["", "NA"]
    standardize: true

Levels are 1-based integers; ``0`` marks a missing level in the arrays.
Categorical feature values are stored as integer codes into the feature's
``categories`` tuple, and missing feature cells as NaN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .model import DELTA, STANDARD

ROLES = ("x", "y", "c_initial", "c_final", "ignore")
KINDS = ("continuous", "categorical")
DEFAULT_MISSING = ("", "NA")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = "continuous"
    categories: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.categories:
            raise DataError(f"feature {self.name!r}: categorical feature needs categories")

    @property
    def cardinality(self):
        return len(self.categories) if self.categories else None


def _freeze(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    c_initial: np.ndarray
    c_final: np.ndarray
    x_features: tuple = ()
    y_features: tuple = ()
    k: int | None = None
    mode: str = STANDARD
    standardize: bool = True

    def __post_init__(self):
        n = len(self.c_initial)
        x = np.asarray(self.x, dtype=float).reshape(n, -1) if n else np.zeros((0, len(self.x_features)))
        y = np.asarray(self.y, dtype=float).reshape(n, -1) if n else np.zeros((0, len(self.y_features)))
        ci = np.asarray(self.c_initial, dtype=np.int64)
        cf = np.asarray(self.c_final, dtype=np.int64)
        if n < 1:
            raise DataError("dataset needs at least one observation")
        if len(cf) != n:
            raise DataError("c_initial and c_final lengths differ")
        xf = tuple(self.x_features) or tuple(Feature(f"x{i + 1}") for i in range(x.shape[1]))
        yf = tuple(self.y_features) or tuple(Feature(f"y{i + 1}") for i in range(y.shape[1]))
        if len(xf) != x.shape[1] or len(yf) != y.shape[1]:
            raise DataError("feature declarations do not match matrix widths")
        k = self.k
        if k is None:
            k = int(max(ci.max(), cf.max() if self.mode == STANDARD else 0, 1))
        n_cols = k if self.mode == STANDARD else 3
        if ci.min() < 0 or ci.max() > k:
            raise DataError(f"level out of range 1..{k} in c_initial")
        if cf.min() < 0 or cf.max() > n_cols:
            raise DataError(f"level out of range 1..{n_cols} in c_final")
        for mat, feats in ((x, xf), (y, yf)):
            for col, f in enumerate(feats):
                if f.kind == "categorical":
                    v = mat[:, col]
                    v = v[~np.isnan(v)]
                    if np.any((v < 0) | (v >= f.cardinality) | (v != np.round(v))):
                        raise DataError(f"feature {f.name!r}: value outside its category set")
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "c_initial", _freeze(ci))
        object.__setattr__(self, "c_final", _freeze(cf))
        object.__setattr__(self, "x_features", xf)
        object.__setattr__(self, "y_features", yf)
        object.__setattr__(self, "k", int(k))

    @property
    def n_obs(self) -> int:
        return len(self.c_initial)

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def n_cols(self) -> int:
        return self.k if self.mode == STANDARD else 3

    @property
    def x_mask(self) -> np.ndarray:
        return np.isnan(self.x)

    @property
    def y_mask(self) -> np.ndarray:
        return np.isnan(self.y)

    @property
    def missing_mask(self) -> tuple:
        return self.x_mask, self.y_mask

    @property
    def features(self) -> tuple:
        return self.x_features + self.y_features

    def fully_observed(self) -> bool:
        return not (
            self.x_mask.any() or self.y_mask.any()
            or (self.c_initial == 0).any() or (self.c_final == 0).any()
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            x=self.x[idx],
            y=self.y[idx],
            c_initial=self.c_initial[idx],
            c_final=self.c_final[idx],
        )

    def with_(self, **changes) -> "Dataset":
        return replace(self, **changes)

    def feature_matrix(self) -> np.ndarray:
        """x and y side by side, the layout imputation works on."""
        return np.hstack([self.x, self.y])

    def with_feature_matrix(self, z) -> "Dataset":
        return replace(self, x=z[:, : self.n_x], y=z[:, self.n_x:])

    def equals(self, other: "Dataset") -> bool:
        return (
            self.k == other.k
            and self.mode == other.mode
            and self.x_features == other.x_features
            and self.y_features == other.y_features
            and np.array_equal(self.x, other.x, equal_nan=True)
            and np.array_equal(self.y, other.y, equal_nan=True)
            and np.array_equal(self.c_initial, other.c_initial)
            and np.array_equal(self.c_final, other.c_final)
        )


@dataclass(frozen=True)
class LevelGrouping:
    """Monotone, surjective map from raw ordinal scores onto groups ``1..K``."""

    mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        m = {int(k): int(v) for k, v in dict(self.mapping).items()}
        if not m:
            raise DataError("empty grouping")
        keys = sorted(m)
        if keys != list(range(keys[0], keys[-1] + 1)):
            raise DataError("grouping must cover a contiguous raw range")
        vals = [m[k] for k in keys]
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise DataError("grouping must be monotone non-decreasing")
        if sorted(set(vals)) != list(range(1, max(vals) + 1)):
            raise DataError("grouping must be onto 1..K")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def from_groups(cls, groups) -> "LevelGrouping":
        return cls({raw: g for g, members in enumerate(groups, 1) for raw in members})

    @classmethod
    def identity(cls, k: int) -> "LevelGrouping":
        return cls({i: i for i in range(1, k + 1)})

    @property
    def k(self) -> int:
        return max(self.mapping.values())

    @property
    def domain(self) -> range:
        keys = sorted(self.mapping)
        return range(keys[0], keys[-1] + 1)

    def groups(self) -> list:
        out = [[] for _ in range(self.k)]
        for raw in sorted(self.mapping):
            out[self.mapping[raw] - 1].append(raw)
        return out

    def __call__(self, level: int) -> int:
        try:
            return self.mapping[int(level)]
        except KeyError:
            raise DataError(f"level {level} outside grouping domain") from None


# Rankin 1 | 2-3 | 4-7, the three-level grouping used for the stroke data.
RANKIN_GROUPING = LevelGrouping.from_groups([[1], [2, 3], [4, 5, 6, 7]])


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray
    mode: str = STANDARD

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or np.any(c < 0) or np.any(c != np.round(c)):
            raise DataError("contingency counts must be a matrix of non-negative integers")
        if self.mode == STANDARD and c.shape[0] != c.shape[1]:
            raise DataError("standard contingency table must be square")
        if self.mode == DELTA and c.shape[1] != 3:
            raise DataError("delta contingency table has 3 columns")
        object.__setattr__(self, "counts", _freeze(c.astype(np.int64)))

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return (
            isinstance(other, ContingencyTable)
            and self.mode == other.mode
            and np.array_equal(self.counts, other.counts)
        )

    def tolist(self):
        return self.counts.tolist()


def apply_grouping(ds: Dataset, g: LevelGrouping) -> Dataset:
    def remap(levels):
        return np.array([g(v) if v else 0 for v in levels], dtype=np.int64)

    return replace(ds, c_initial=remap(ds.c_initial), c_final=remap(ds.c_final), k=g.k)


def build_contingency(ds: Dataset) -> ContingencyTable:
    if (ds.c_initial == 0).any() or (ds.c_final == 0).any():
        raise DataError("missing level value")
    counts = np.zeros((ds.k, ds.n_cols), dtype=np.int64)
    np.add.at(counts, (ds.c_initial - 1, ds.c_final - 1), 1)
    return ContingencyTable(counts, ds.mode)


# ---------------------------------------------------------------- manifests


@dataclass
class Manifest:
    columns: dict
    missing: tuple = DEFAULT_MISSING
    k: int | None = None
    raw_range: tuple | None = None
    grouping: LevelGrouping | None = None
    standardize: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        if not isinstance(d, dict) or "columns" not in d:
            raise DataError("manifest needs a 'columns' mapping")
        cols = {}
        for name, spec in d["columns"].items():
            spec = {"role": spec} if isinstance(spec, str) else dict(spec or {})
            role = spec.get("role")
            if role not in ROLES:
                raise DataError(f"column {name!r}: role must be one of {ROLES}")
            kind = spec.get("kind", "continuous")
            if kind not in KINDS:
                raise DataError(f"column {name!r}: kind must be one of {KINDS}")
            cats = spec.get("categories")
            spec = {"role": role, "kind": kind}
            if cats is not None:
                spec["categories"] = tuple(str(c) for c in cats)
            cols[str(name)] = spec
        roles = [s["role"] for s in cols.values()]
        for r in ("c_initial", "c_final"):
            if roles.count(r) != 1:
                raise DataError(f"manifest needs exactly one {r} column")
        lv = d.get("levels") or {}
        grouping = LevelGrouping.from_groups(lv["grouping"]) if lv.get("grouping") else None
        raw_range = tuple(int(v) for v in lv["raw_range"]) if lv.get("raw_range") else None
        return cls(
            columns=cols,
            missing=tuple(str(m) for m in d.get("missing", DEFAULT_MISSING)),
            k=int(lv["k"]) if lv.get("k") is not None else None,
            raw_range=raw_range,
            grouping=grouping,
            standardize=bool(d.get("standardize", True)),
        )

    def to_dict(self) -> dict:
        cols = {}
        for name, spec in self.columns.items():
            s = {"role": spec["role"]}
            if spec["role"] in ("x", "y"):
                s["kind"] = spec["kind"]
                if spec.get("categories"):
                    s["categories"] = list(spec["categories"])
            cols[name] = s
        levels = {}
        if self.k is not None:
            levels["k"] = self.k
        if self.raw_range is not None:
            levels["raw_range"] = list(self.raw_range)
        if self.grouping is not None:
            levels["grouping"] = self.grouping.groups()
        d = {"columns": cols, "missing": list(self.missing), "standardize": self.standardize}
        if levels:
            d["levels"] = levels
        return d


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path) as fh:
        return Manifest.from_dict(yaml.safe_load(fh))


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(manifest.to_dict(), fh, sort_keys=False)


def _level_range(manifest: Manifest):
    if manifest.raw_range is not None:
        return manifest.raw_range
    if manifest.grouping is not None:
        d = manifest.grouping.domain
        return d.start, d.stop - 1
    if manifest.k is not None:
        return 1, manifest.k
    return None


def build_dataset(rows, manifest: Manifest, apply_levels: bool = True) -> Dataset:
    """Turn tabular records (dicts of strings) into a :class:`Dataset`.

    With ``apply_levels`` the manifest's grouping is applied and its declared
    K enforced.
    """
    rows = list(rows)
    if rows:
        unknown = [c for c in manifest.columns if c not in rows[0]]
        if unknown:
            raise DataError(f"unknown column in manifest: {unknown[0]!r}")
        unassigned = [c for c in rows[0] if c not in manifest.columns]
        if unassigned:
            raise DataError(f"column {unassigned[0]!r} has no role in the manifest")
    missing = set(manifest.missing)
    lo_hi = _level_range(manifest)

    def level(raw, name, r):
        raw = raw.strip()
        if raw in missing:
            return 0
        try:
            v = int(raw)
        except ValueError:
            raise DataError(f"row {r}: non-integer level {raw!r} in {name!r}") from None
        if v < 1 or (lo_hi and not lo_hi[0] <= v <= lo_hi[1]):
            raise DataError(f"row {r}: level out of range ({v}) in {name!r}")
        return v

    feats = {"x": [], "y": []}
    cols = {"x": [], "y": []}
    ci = cf = None
    for name, spec in manifest.columns.items():
        role = spec["role"]
        values = [row[name] for row in rows]
        if role == "c_initial":
            ci = [level(v, name, r) for r, v in enumerate(values)]
        elif role == "c_final":
            cf = [level(v, name, r) for r, v in enumerate(values)]
        elif role in ("x", "y"):
            if spec["kind"] == "continuous":
                col = []
                for r, v in enumerate(values):
                    v = v.strip()
                    if v in missing:
                        col.append(np.nan)
                        continue
                    try:
                        col.append(float(v))
                    except ValueError:
                        raise DataError(
                            f"row {r}: non-numeric value {v!r} in continuous column {name!r}"
                        ) from None
                feats[role].append(Feature(name))
            else:
                cats = spec.get("categories")
                if cats is None:
                    cats = tuple(sorted({v.strip() for v in values} - missing, key=_natural_key))
                index = {c: i for i, c in enumerate(cats)}
                col = []
                for r, v in enumerate(values):
                    v = v.strip()
                    if v in missing:
                        col.append(np.nan)
                    elif v not in index:
                        raise DataError(f"row {r}: value {v!r} not in categories of {name!r}")
                    else:
                        col.append(float(index[v]))
                feats[role].append(Feature(name, "categorical", tuple(cats)))
            cols[role].append(col)
    n = len(rows)

    def mat(side):
        return np.array(cols[side], dtype=float).T.reshape(n, len(cols[side]))

    k = manifest.k
    grouping = manifest.grouping if apply_levels else None
    ds = Dataset(
        mat("x"), mat("y"), ci, cf, tuple(feats["x"]), tuple(feats["y"]),
        k=None if grouping is not None else (k if apply_levels else None),
        standardize=manifest.standardize,
    )
    if grouping is not None:
        ds = apply_grouping(ds, grouping)
        if k is not None:
            if k < ds.k:
                raise DataError(f"declared k={k} smaller than the grouping's {ds.k} groups")
            ds = replace(ds, k=k)
    return ds


def _natural_key(s):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def read_csv_rows(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_dataset(csv_path, manifest_path) -> Dataset:
    return build_dataset(read_csv_rows(csv_path), read_manifest(manifest_path))


def dataset_manifest(ds: Dataset, names=("c_initial", "c_final")) -> Manifest:
    cols = {}
    for role, feats in (("x", ds.x_features), ("y", ds.y_features)):
        for f in feats:
            spec = {"role": role, "kind": f.kind}
            if f.categories:
                spec["categories"] = tuple(f.categories)
            cols[f.name] = spec
    cols[names[0]] = {"role": "c_initial", "kind": "continuous"}
    cols[names[1]] = {"role": "c_final", "kind": "continuous"}
    return Manifest(columns=cols, k=ds.k, standardize=ds.standardize)


def _fmt(v, f: Feature):
    if np.isnan(v):
        return "NA"
    if f.kind == "categorical":
        return f.categories[int(v)]
    return repr(float(v))


def write_dataset(ds: Dataset, csv_path, manifest_path=None, names=("c_initial", "c_final")):
    """Write ``ds`` as CSV (+ manifest) that :func:`load_dataset` reads back identically."""
    manifest = dataset_manifest(ds, names)
    header = list(manifest.columns)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(ds.n_obs):
            rec = [_fmt(ds.x[r, i], f) for i, f in enumerate(ds.x_features)]
            rec += [_fmt(ds.y[r, i], f) for i, f in enumerate(ds.y_features)]
            rec += [
                str(ds.c_initial[r]) if ds.c_initial[r] else "NA",
                str(ds.c_final[r]) if ds.c_final[r] else "NA",
            ]
            w.writerow(rec)
    if manifest_path is not None:
        write_manifest(manifest, manifest_path)
    return manifest


# ---------------------------------------------------------------- encoding


@dataclass
class FeatureEncoder:
    """Z-scores continuous columns and one-hot encodes categoricals (first level dropped).

    Fit on training data only; the constants travel with the fitted model.
    """

    x_features: tuple
    y_features: tuple
    means: dict
    sds: dict
    standardize: bool = True

    @classmethod
    def fit(cls, ds: Dataset) -> "FeatureEncoder":
        means, sds = {}, {}
        for mat, feats in ((ds.x, ds.x_features), (ds.y, ds.y_features)):
            for col, f in enumerate(feats):
                if f.kind != "continuous":
                    continue
                v = mat[:, col]
                v = v[~np.isnan(v)]
                mu = float(v.mean()) if v.size else 0.0
                sd = float(v.std()) if v.size > 1 else 0.0
                means[f.name] = mu
                sds[f.name] = sd if sd > 0 else 1.0
        return cls(ds.x_features, ds.y_features, means, sds, ds.standardize)

    def _encode(self, mat, feats):
        cols, names = [], []
        for col, f in enumerate(feats):
            v = mat[:, col]
            if f.kind == "continuous":
                if self.standardize:
                    v = (v - self.means[f.name]) / self.sds[f.name]
                cols.append(v)
                names.append(f.name)
            else:
                for code in range(1, f.cardinality):
                    cols.append(np.where(np.isnan(v), np.nan, (v == code).astype(float)))
                    names.append(f"{f.name}={f.categories[code]}")
        m = np.column_stack(cols) if cols else np.zeros((mat.shape[0], 0))
        return m, tuple(Feature(n) for n in names)

    def transform(self, ds: Dataset) -> Dataset:
        if ds.x_features != self.x_features or ds.y_features != self.y_features:
            raise DataError("dataset features differ from the encoder's")
        x, xf = self._encode(ds.x, ds.x_features)
        y, yf = self._encode(ds.y, ds.y_features)
        return replace(ds, x=x, y=y, x_features=xf, y_features=yf, standardize=False)

    def encoded_names(self) -> tuple:
        dummy = Dataset(
            np.zeros((1, len(self.x_features))), np.zeros((1, len(self.y_features))),
            [1], [1], self.x_features, self.y_features,
        )
        enc = self.transform(dummy)
        return tuple(f.name for f in enc.x_features), tuple(f.name for f in enc.y_features)

    def to_dict(self) -> dict:
        def feats(fs):
            return [
                {"name": f.name, "kind": f.kind, **({"categories": list(f.categories)} if f.categories else {})}
                for f in fs
            ]

        return {
            "x_features": feats(self.x_features),
            "y_features": feats(self.y_features),
            "means": self.means,
            "sds": self.sds,
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEncoder":
        def feats(fs):
            return tuple(
                Feature(f["name"], f["kind"], tuple(f["categories"]) if f.get("categories") else None)
                for f in fs
            )

        return cls(feats(d["x_features"]), feats(d["y_features"]), dict(d["means"]),
                   dict(d["sds"]), bool(d.get("standardize", True)))
