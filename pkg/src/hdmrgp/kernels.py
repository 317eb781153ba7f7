"""Isotropic covariance functions and Gram/cross-covariance assembly.

A kernel is a sum over variable subsets of a radial profile evaluated on
the Euclidean distance restricted to that subset.  One subset holding all
coordinates gives the ordinary full-dimensional kernel, ``D`` singleton
subsets give the first-order HDMR (additive) kernel.

Coordinates are indexed from 0.  The physical length scale is
``exp(log_length)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

FAMILIES = ("se", "matern12", "matern32", "matern52")

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of a (possibly additive) isotropic kernel.

    Parameters
    ----------
    family : str
        One of ``"se"`` (squared exponential), ``"matern12"``,
        ``"matern32"`` or ``"matern52"``.
    log_length : float
        Log of the length scale; the kernel width is ``exp(log_length)``.
    subsets : tuple of tuple of int
        Variable-index subsets whose kernels are summed.
    prefactor : float
        Signal variance multiplying every summand.
    """

    family: str
    log_length: float
    subsets: tuple[tuple[int, ...], ...]
    prefactor: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not math.isfinite(self.log_length):
            raise ValueError("log_length must be finite")
        if not (self.prefactor >= 0.0 and math.isfinite(self.prefactor)):
            raise ValueError(f"prefactor must be a finite non-negative number, got {self.prefactor}")
        subsets = tuple(tuple(int(i) for i in s) for s in self.subsets)
        if not subsets:
            raise ValueError("a kernel needs at least one variable subset")
        for s in subsets:
            if not s:
                raise ValueError("variable subsets must be non-empty")
            if any(i < 0 for i in s):
                raise ValueError(f"negative coordinate index in subset {s}")
            if list(s) != sorted(set(s)):
                raise ValueError(f"subset {s} must be sorted and duplicate-free")
        object.__setattr__(self, "subsets", subsets)

    @property
    def length(self) -> float:
        return math.exp(self.log_length)

    @property
    def min_dim(self) -> int:
        """Smallest feature dimension this spec can be applied to."""
        return 1 + max(max(s) for s in self.subsets)

    @property
    def is_additive(self) -> bool:
        return len(self.subsets) > 1

    @property
    def self_covariance(self) -> float:
        """k(x, x), identical for every x since all profiles are stationary."""
        return self.prefactor * len(self.subsets)

    def with_log_length(self, log_length: float) -> "KernelSpec":
        return KernelSpec(self.family, float(log_length), self.subsets, self.prefactor)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "log_length": self.log_length,
            "subsets": [list(s) for s in self.subsets],
            "prefactor": self.prefactor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], float(d["log_length"]), tuple(tuple(s) for s in d["subsets"]),
                   float(d.get("prefactor", 1.0)))


def full_spec(D: int, log_length: float = 0.0, family: str = "se") -> KernelSpec:
    """Single kernel over all ``D`` coordinates."""
    return KernelSpec(family, float(log_length), (tuple(range(D)),))


def additive_spec(D: int, log_length: float = 0.0, family: str = "se") -> KernelSpec:
    """First-order HDMR kernel: a sum of ``D`` one-dimensional kernels."""
    return KernelSpec(family, float(log_length), tuple((i,) for i in range(D)))


@dataclass
class GramMatrix:
    """Symmetric training covariance ``K + delta*I``.

    ``condition_estimate`` is filled in by whoever factorizes the matrix;
    ``inf`` marks a failed factorization.
    """

    values: np.ndarray
    delta: float
    condition_estimate: float | None = field(default=None)


def profile(sqdist, length: float, family: str):
    """Radial profile of ``family`` evaluated on squared distances."""
    sqdist = np.asarray(sqdist, dtype=float)
    if family == "se":
        return np.exp(sqdist * (-0.5 / (length * length)))
    u = np.sqrt(sqdist) / length
    if family == "matern12":
        return np.exp(-u)
    if family == "matern32":
        a = _SQRT3 * u
        return (1.0 + a) * np.exp(-a)
    if family == "matern52":
        a = _SQRT5 * u
        return (1.0 + a + a * a / 3.0) * np.exp(-a)
    raise ValueError(f"unknown kernel family {family!r}")


def _check_dims(spec: KernelSpec, D: int):
    if spec.min_dim > D:
        raise ValueError(f"kernel uses coordinate {spec.min_dim - 1} but points have only {D} coordinates")


def eval_kernel(spec: KernelSpec, x: Sequence[float], x2: Sequence[float]) -> float:
    """k(x, x2) for two single points."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    _check_dims(spec, x.shape[0])
    total = 0.0
    for s in spec.subsets:
        d = x[list(s)] - x2[list(s)]
        total += spec.prefactor * float(profile(float(d @ d), spec.length, spec.family))
    return total


def _as_matrix(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def condensed_sqdist(spec: KernelSpec, X) -> list[np.ndarray]:
    """Per-subset condensed (upper-triangle) squared distances of ``X``.

    Reusable across length scales, which is what the likelihood optimizer
    exploits.
    """
    X = _as_matrix(X)
    _check_dims(spec, X.shape[1])
    return [pdist(X[:, list(s)], "sqeuclidean") for s in spec.subsets]


def gram_from_condensed(spec: KernelSpec, sqd: list[np.ndarray], M: int, delta: float) -> GramMatrix:
    if delta < 0 or not math.isfinite(delta):
        raise ValueError(f"delta must be finite and non-negative, got {delta}")
    acc = None
    for d in sqd:
        term = profile(d, spec.length, spec.family)
        acc = term if acc is None else acc + term
    if spec.prefactor != 1.0:
        acc = acc * spec.prefactor
    # squareform mirrors the upper triangle; the diagonal is set exactly
    K = squareform(acc, checks=False) if M > 1 else np.zeros((1, 1))
    K[np.diag_indices(M)] = spec.self_covariance + delta
    return GramMatrix(K, float(delta))


def build_gram(spec: KernelSpec, X, delta: float = 0.0) -> GramMatrix:
    """Training covariance matrix ``K + delta*I``."""
    X = _as_matrix(X)
    if X.shape[0] < 1:
        raise ValueError("need at least one training point")
    return gram_from_condensed(spec, condensed_sqdist(spec, X), X.shape[0], delta)


def build_cross(spec: KernelSpec, X_train, X_query) -> np.ndarray:
    """Q x M matrix of ``k(x_query[q], x_train[n])`` (no delta)."""
    X_train = _as_matrix(X_train, "X_train")
    X_query = _as_matrix(X_query, "X_query")
    if X_train.shape[1] != X_query.shape[1]:
        raise ValueError(f"dimension mismatch: train has {X_train.shape[1]} columns, query {X_query.shape[1]}")
    _check_dims(spec, X_train.shape[1])
    out = np.zeros((X_query.shape[0], X_train.shape[0]))
    for s in spec.subsets:
        cols = list(s)
        out += profile(cdist(X_query[:, cols], X_train[:, cols], "sqeuclidean"), spec.length, spec.family)
    if spec.prefactor != 1.0:
        out *= spec.prefactor
    return out
