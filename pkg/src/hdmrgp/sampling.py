"""Sobol sampling, datasets (ingestion, normalization, splits) and the
synthetic PES-like target used for desk-scale experiments.

Direction numbers: Joe & Kuo, ``new-joe-kuo-6.21201``, first 16 dimensions
(dimension 1 is the van der Corput sequence in base 2).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

DIRECTION_TABLE_ID = "new-joe-kuo-6.21201"
_BITS = 32

# dimension, degree s, polynomial coefficients a, initial m_1..m_s
_JOE_KUO = """\
2 1 0 1
3 2 1 1 3
4 3 1 1 3 1
5 3 2 1 1 1
6 4 1 1 1 3 3
7 4 4 1 3 5 13
8 5 2 1 1 5 5 17
9 5 4 1 1 5 5 5
10 5 7 1 1 7 11 19
11 5 11 1 1 5 1 1
12 5 13 1 1 1 3 11
13 5 14 1 3 5 5 31
14 6 1 1 3 3 9 7 49
15 6 13 1 1 1 15 21 21
16 6 16 1 3 1 13 27 49
"""

MAX_SOBOL_DIM = 1 + len(_JOE_KUO.splitlines())


def _direction_numbers(D: int) -> np.ndarray:
    V = np.zeros((D, _BITS), dtype=np.uint64)
    V[0] = [1 << (_BITS - 1 - i) for i in range(_BITS)]
    rows = [list(map(int, line.split())) for line in _JOE_KUO.splitlines()]
    for j in range(1, D):
        _, s, a, *m = rows[j - 1]
        v = [0] * _BITS
        for i in range(s):
            v[i] = m[i] << (_BITS - 1 - i)
        for i in range(s, _BITS):
            x = v[i - s] ^ (v[i - s] >> s)
            for k in range(1, s):
                if (a >> (s - 1 - k)) & 1:
                    x ^= v[i - k]
            v[i] = x
        V[j] = v
    return V


class SobolStream:
    """Sequential unscrambled Sobol generator over ``[0, 1)^D``.

    Parameters
    ----------
    D : int
        Dimension, at most ``MAX_SOBOL_DIM``.
    skip_zero : bool
        Start at index 1, dropping the all-zeros point.
    offset : int
        Additional number of points to skip.  Disjoint offsets give
        independent, order-deterministic blocks of one sequence.
    """

    table_id = DIRECTION_TABLE_ID

    def __init__(self, D: int, skip_zero: bool = True, offset: int = 0):
        if not 1 <= D <= MAX_SOBOL_DIM:
            raise ValueError(f"Sobol dimension must be in [1, {MAX_SOBOL_DIM}], got {D}")
        if offset < 0:
            raise ValueError("offset must be non-negative")
        self.D = D
        self.skip_zero = skip_zero
        self.start = int(offset) + (1 if skip_zero else 0)
        self.counter = self.start
        self._V = _direction_numbers(D)

    def points(self, start: int, n: int) -> np.ndarray:
        """Points ``start .. start+n-1`` of the raw sequence (index 0 is zero)."""
        if start + n > 2 ** _BITS:
            raise ValueError("Sobol sequence exhausted")
        idx = np.arange(start, start + n, dtype=np.uint64)
        gray = idx ^ (idx >> np.uint64(1))
        x = np.zeros((n, self.D), dtype=np.uint64)
        for k in range(_BITS):
            bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
            if bit.any():
                x[bit] ^= self._V[:, k]
        return x.astype(float) / float(2 ** _BITS)

    def next(self, n: int) -> np.ndarray:
        return sobol_next(self, n)

    def describe(self) -> str:
        return f"sobol(D={self.D}, table={self.table_id}, start={self.start}, skip_zero={self.skip_zero})"


def sobol_next(stream: SobolStream, n: int) -> np.ndarray:
    """Advance ``stream`` by ``n`` points and return them as an (n, D) array.

    Equivalent to the Gray-code recurrence ``x_{k+1} = x_k XOR V[c(k)]``;
    each point is formed directly from its Gray code so blocks can be
    generated independently.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    out = stream.points(stream.counter, n)
    stream.counter += n
    return out


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

PROVENANCES = ("real-file", "synthetic-analytic", "synthetic-from-reference")


@dataclass
class Dataset:
    """Features, targets, normalization scales and named disjoint splits.

    ``X_norm = X_raw / scales`` column-wise.  For datasets normalized on
    construction the columns of ``X_norm`` have unit population standard
    deviation; synthetic-from-reference sets reuse their source's scales.
    """

    X_raw: np.ndarray
    X_norm: np.ndarray
    y: np.ndarray
    scales: np.ndarray
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: str = "real-file"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        N = self.y.shape[0]
        if self.X_raw.shape[0] != N or self.X_norm.shape != self.X_raw.shape:
            raise ValueError("features and targets disagree in size")
        _check_splits(self.splits, N)

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def D(self) -> int:
        return self.X_raw.shape[1]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """``(X_norm, y)`` restricted to split ``name``."""
        if name not in self.splits:
            raise KeyError(f"dataset has no {name!r} split (has {sorted(self.splits)})")
        idx = self.splits[name]
        return self.X_norm[idx], self.y[idx]

    def has(self, name: str) -> bool:
        return name in self.splits and len(self.splits[name]) > 0


def _check_splits(splits: Mapping[str, np.ndarray], N: int):
    seen = np.zeros(N, dtype=bool)
    for name, idx in splits.items():
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= N):
            raise ValueError(f"split {name!r} has indices out of range")
        if seen[idx].any() or len(np.unique(idx)) != idx.size:
            raise ValueError(f"split {name!r} overlaps another split")
        seen[idx] = True


def normalize(X_raw) -> tuple[np.ndarray, np.ndarray]:
    """Divide each column by its population standard deviation (no centering)."""
    X_raw = np.asarray(X_raw, dtype=float)
    scales = X_raw.std(axis=0)
    bad = np.flatnonzero(~(scales > 0))
    if bad.size:
        raise ValueError(f"feature column(s) {bad.tolist()} have zero variance; cannot normalize")
    return X_raw / scales, scales


def from_arrays(X_raw, y, provenance: str = "real-file", meta: dict | None = None) -> Dataset:
    X_raw = np.asarray(X_raw, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X_raw.ndim != 2:
        raise ValueError("features must form a 2-D array")
    X_norm, scales = normalize(X_raw)
    return Dataset(X_raw, X_norm, y, scales, {}, provenance, dict(meta or {}))


_SPLIT_RE = re.compile(r"[,\s]+")


def load_dataset(path, delimiter: str | None = None) -> Dataset:
    """Parse a delimited text file of ``D`` feature columns plus a target.

    Lines starting with ``#`` are comments; ``# key: value`` comment lines
    are kept in ``meta``.  Comma and/or whitespace delimit fields unless
    ``delimiter`` is given.
    """
    path = Path(path)
    rows, meta = [], {}
    ncol = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                k, sep, v = s[1:].partition(":")
                if sep:
                    meta[k.strip()] = v.strip()
                continue
            fields = s.split(delimiter) if delimiter else _SPLIT_RE.split(s)
            try:
                vals = [float(t) for t in fields]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field in {s!r}") from None
            if ncol is None:
                ncol = len(vals)
                if ncol < 2:
                    raise ValueError(f"{path}:{lineno}: need at least one feature and a target")
            elif len(vals) != ncol:
                raise ValueError(f"{path}:{lineno}: expected {ncol} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    A = np.array(rows)
    ds = from_arrays(A[:, :-1], A[:, -1], "real-file", meta)
    ds.meta.setdefault("source", str(path))
    return ds


def save_dataset(path, ds: Dataset, delimiter: str = ","):
    """Write raw features and targets, with provenance comment lines."""
    header = [f"provenance: {ds.provenance}"]
    for k, v in ds.meta.items():
        if k != "provenance":
            header.append(f"{k}: {v}")
    np.savetxt(Path(path), np.column_stack([ds.X_raw, ds.y]), delimiter=delimiter,
               header="\n".join(header), fmt="%.17g")


def split(ds: Dataset, train: int, testtrain: int = 0, test: int | None = None, seed: int = 0) -> Dataset:
    """Assign disjoint random ``train``/``testtrain``/``test`` splits.

    ``test=None`` takes all remaining points.  Empty splits are omitted.
    """
    if test is None:
        test = ds.N - train - testtrain
    sizes = {"train": train, "testtrain": testtrain, "test": test}
    if any(v < 0 for v in sizes.values()):
        raise ValueError(f"split sizes must be non-negative, got {sizes}")
    if sum(sizes.values()) > ds.N:
        raise ValueError(f"split sizes {sizes} exceed dataset size {ds.N}")
    perm = np.random.default_rng(seed).permutation(ds.N)
    splits, start = {}, 0
    for name, n in sizes.items():
        if n:
            splits[name] = np.sort(perm[start:start + n])
        start += n
    meta = dict(ds.meta, split_seed=seed)
    return Dataset(ds.X_raw, ds.X_norm, ds.y, ds.scales, splits, ds.provenance, meta)


# ---------------------------------------------------------------------------
# Synthetic PES-like target
# ---------------------------------------------------------------------------

class SyntheticPES:
    """Smooth, mostly additive test function on ``[-1, 1]^D``.

    ``y = sum_i a_i z_i^2 + b_i z_i^3 + s * sum_{i<j} w_ij z_i z_j`` with
    ``z = x - c``, affinely mapped onto ``y_range``.  The pair scale ``s``
    is solved so that the pure second-order ANOVA part carries exactly a
    ``coupling`` fraction of the variance under the uniform measure.
    """

    def __init__(self, D: int, seed: int = 0, coupling: float = 0.1,
                 y_range: tuple[float, float] = (0.0, 6629.0)):
        if D < 2:
            raise ValueError("synthetic PES needs D >= 2")
        if not 0.0 <= coupling < 1.0:
            raise ValueError("coupling must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        self.D, self.seed, self.coupling = D, seed, coupling
        self.a = rng.uniform(0.5, 1.5, D)
        self.b = rng.uniform(-0.3, 0.3, D)
        self.c = rng.uniform(-0.2, 0.2, D)
        self.W = np.triu(rng.normal(size=(D, D)), 1)
        self.pair_scale = self._solve_pair_scale(coupling)
        # fixed affine map calibrated on a dense Sobol sample of the cube
        cal = self._raw(2.0 * SobolStream(D).next(1 << 14) - 1.0)
        lo, hi = float(cal.min()), float(cal.max())
        self.y_range = (float(y_range[0]), float(y_range[1]))
        self._shift = lo
        self._gain = (self.y_range[1] - self.y_range[0]) / (hi - lo)

    def _solve_pair_scale(self, coupling: float) -> float:
        if coupling == 0.0:
            return 0.0
        # per-coordinate first-order pieces under x ~ U(-1, 1), exact by
        # Gauss-Legendre (polynomials of degree <= 6)
        t, w = np.polynomial.legendre.leggauss(8)
        w = w / 2.0
        Ws = self.W + self.W.T
        # linear coefficient of x_i in the pair term: -sum_j W_ij c_j
        lin = -(Ws @ self.c)
        var_add = cov = var_lin = 0.0
        for i in range(self.D):
            z = t - self.c[i]
            g = self.a[i] * z ** 2 + self.b[i] * z ** 3
            h = lin[i] * t
            gm, hm = w @ g, w @ h
            var_add += w @ (g - gm) ** 2
            cov += w @ ((g - gm) * (h - hm))
            var_lin += w @ (h - hm) ** 2
        var_int = float(np.sum(self.W ** 2)) / 9.0
        k = coupling / (1.0 - coupling)
        # s^2 var_int = k (var_add + 2 s cov + s^2 var_lin)
        A, B, C = var_int - k * var_lin, -2.0 * k * cov, -k * var_add
        if A <= 0:
            raise ValueError(f"coupling {coupling} not attainable for this draw")
        return float((-B + math.sqrt(B * B - 4 * A * C)) / (2 * A))

    def _raw(self, X) -> np.ndarray:
        z = np.asarray(X, dtype=float) - self.c
        add = z ** 2 @ self.a + z ** 3 @ self.b
        if self.pair_scale == 0.0:
            return add
        return add + self.pair_scale * np.einsum("ni,ij,nj->n", z, self.W, z)

    def additive_part(self, X) -> np.ndarray:
        """Target with the pair couplings removed (same affine map)."""
        z = np.asarray(X, dtype=float) - self.c
        return self.y_range[0] + self._gain * (z ** 2 @ self.a + z ** 3 @ self.b - self._shift)

    def __call__(self, X) -> np.ndarray:
        return self.y_range[0] + self._gain * (self._raw(X) - self._shift)

    def describe(self) -> str:
        return f"synthetic-pes(D={self.D}, seed={self.seed}, coupling={self.coupling}, range={self.y_range})"


def make_synthetic_pes(D: int, seed: int = 0, N: int = 50000, coupling: float = 0.1,
                       y_range: tuple[float, float] = (0.0, 6629.0)) -> Dataset:
    """Sample :class:`SyntheticPES` at ``N`` Sobol points of ``[-1, 1]^D``."""
    if N < 1:
        raise ValueError("N must be positive")
    fn = SyntheticPES(D, seed, coupling, y_range)
    X = 2.0 * SobolStream(D).next(N) - 1.0
    return from_arrays(X, fn(X), "synthetic-analytic", {"generator": fn.describe()})
