"""Synthetic transition data with Gaussian features.

Every cell (i, j) of a contingency table yields exactly ``n_ij`` observations
with ``x ~ N(mu_x(i), I)`` and ``y ~ N(mu_y(j), I)``, where component ``l``
(1-based) of ``mu_x(i)`` is ``i + l - 1`` and component ``m`` of ``mu_y(j)``
is ``3 + m - j``.  The table therefore comes out exactly as given; only the
feature noise depends on the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ContingencyTable, Dataset, Feature

# Three-level grouped stroke table (rows: admission group, cols: discharge group).
REDUCED_TABLE = ((22, 0, 0), (41, 99, 2), (0, 40, 71))

MULTIPLIERS = (2, 10, 15, 20)

# Tables for K = 3..6 with a nominal N of 5500.  The K=6 entries add up to 5680;
# they are used unchanged rather than rescaled.
K_TABLES = {
    3: ((440, 0, 0), (820, 1980, 40), (0, 800, 1420)),
    4: (
        (270, 170, 0, 0),
        (300, 990, 90, 40),
        (230, 300, 790, 100),
        (0, 300, 720, 1200),
    ),
    5: (
        (270, 110, 60, 0, 0),
        (100, 580, 110, 50, 20),
        (80, 200, 420, 50, 10),
        (70, 150, 260, 740, 200),
        (0, 200, 320, 500, 1000),
    ),
    6: (
        (300, 100, 70, 30, 0, 0),
        (120, 480, 150, 80, 20, 10),
        (80, 150, 370, 100, 50, 10),
        (70, 150, 200, 740, 160, 100),
        (30, 70, 110, 200, 500, 100),
        (0, 25, 60, 150, 225, 670),
    ),
}

FEATURE_DIM = 6


def reduced_table() -> ContingencyTable:
    return ContingencyTable(np.array(REDUCED_TABLE))


def scale_table(base: ContingencyTable, multiplier: int) -> ContingencyTable:
    if int(multiplier) != multiplier or multiplier < 1:
        raise ValueError(f"multiplier must be a positive integer, got {multiplier}")
    return ContingencyTable(base.counts * int(multiplier), base.mode)


def k_table(k: int) -> ContingencyTable:
    if k not in K_TABLES:
        raise ValueError(f"unsupported k={k}; available: {sorted(K_TABLES)}")
    return ContingencyTable(np.array(K_TABLES[k]))


def x_mean(i: int, dim: int = FEATURE_DIM) -> np.ndarray:
    return i + np.arange(dim, dtype=float)


def y_mean(j: int, dim: int = FEATURE_DIM) -> np.ndarray:
    return 4.0 - j + np.arange(dim, dtype=float)


@dataclass(frozen=True)
class SimSpec:
    base_table: ContingencyTable
    multiplier: int = 1
    feature_dim: int = FEATURE_DIM
    seed: int = 0

    def __post_init__(self):
        if int(self.multiplier) != self.multiplier or self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")

    @property
    def table(self) -> ContingencyTable:
        return scale_table(self.base_table, self.multiplier)

    @property
    def n_obs(self) -> int:
        return self.multiplier * self.base_table.total


def _cell_rng(seed: int, i: int, j: int) -> np.random.Generator:
    # Philox is counter-based: each cell owns an independent stream.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i, j])))


def generate(spec, seed: int | None = None, feature_dim: int | None = None) -> Dataset:
    """Dataset whose contingency table equals ``spec``'s table exactly.

    ``spec`` is a :class:`SimSpec` or a :class:`ContingencyTable`; observations
    are emitted cell by cell in row-major order.
    """
    if isinstance(spec, SimSpec):
        table = spec.table
        seed = spec.seed if seed is None else seed
        dim = spec.feature_dim if feature_dim is None else feature_dim
    else:
        table = spec if isinstance(spec, ContingencyTable) else ContingencyTable(np.asarray(spec))
        seed = 0 if seed is None else seed
        dim = FEATURE_DIM if feature_dim is None else feature_dim
    counts = table.counts
    xs, ys, ci, cf = [], [], [], []
    for i in range(1, counts.shape[0] + 1):
        for j in range(1, counts.shape[1] + 1):
            n = int(counts[i - 1, j - 1])
            if n == 0:
                continue
            rng = _cell_rng(seed, i, j)
            noise = rng.standard_normal((n, 2 * dim))
            xs.append(x_mean(i, dim) + noise[:, :dim])
            ys.append(y_mean(j, dim) + noise[:, dim:])
            ci.append(np.full(n, i))
            cf.append(np.full(n, j))
    return Dataset(
        np.vstack(xs), np.vstack(ys), np.concatenate(ci), np.concatenate(cf),
        tuple(Feature(f"x{l + 1}") for l in range(dim)),
        tuple(Feature(f"y{m + 1}") for m in range(dim)),
        k=counts.shape[0], mode=table.mode,
    )
