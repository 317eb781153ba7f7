"""First-order HDMR reference model built from an additive GPR kernel.

The additive fit ``f(x) ~ sum_i f_i(x_i)`` uses ``D`` one-dimensional
kernels that share one length parameter.  Once trained it can be evaluated
anywhere, which is what makes it usable as a reference function for
labelling arbitrarily large synthetic test sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hdmrgp.gpr import TrainedModel, predict_mean, train, _require_stable, QUERY_BLOCK
from hdmrgp.kernels import additive_spec, build_cross, KernelSpec
from hdmrgp.sampling import Dataset, SobolStream, sobol_next


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    base: TrainedModel

    def __post_init__(self):
        spec = self.base.spec
        if spec.subsets != tuple((i,) for i in range(self.base.D)):
            raise ValueError("additive model needs one singleton subset per coordinate")

    @property
    def D(self) -> int:
        return self.base.D

    @property
    def stable(self) -> bool:
        return self.base.stable


@dataclass(frozen=True, eq=False)
class ReferenceFunction:
    """An additive model plus a record of how it was obtained."""

    model: AdditiveModel
    provenance: dict = field(default_factory=dict)

    def __call__(self, X_query) -> np.ndarray:
        return evaluate_reference(self, X_query)


def fit_additive(X, f, l: float, delta: float, family: str = "se") -> AdditiveModel:
    """Train the d=1 HDMR GPR: ``c' = (sum_i K_i + delta*I)^-1 f``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("additive fit needs an (M, D) array with M >= 2")
    return AdditiveModel(train(additive_spec(X.shape[1], l, family), X, f, delta))


def component(model: AdditiveModel, i: int, xi) -> np.ndarray:
    """Component function ``f_i`` on the grid ``xi`` (coordinate ``i``, 0-based)."""
    if not 0 <= i < model.D:
        raise IndexError(f"component index {i} outside [0, {model.D})")
    base = model.base
    _require_stable(base)
    xi = np.asarray(xi, dtype=float).reshape(-1, 1)
    spec_i = KernelSpec(base.spec.family, base.spec.log_length, ((0,),), base.spec.prefactor)
    out = np.empty(xi.shape[0])
    for s in range(0, xi.shape[0], QUERY_BLOCK):
        Ki = build_cross(spec_i, base.X_train[:, [i]], xi[s:s + QUERY_BLOCK])
        out[s:s + QUERY_BLOCK] = Ki @ base.coefficients
    return out


def evaluate_reference(ref: ReferenceFunction, X_query) -> np.ndarray:
    return predict_mean(ref.model.base, X_query)


def bounding_box(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    return X.min(axis=0), X.max(axis=0)


def sample_box(stream: SobolStream, N: int, lo, hi) -> np.ndarray:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if stream.D != lo.shape[0]:
        raise ValueError(f"sampler dimension {stream.D} does not match data dimension {lo.shape[0]}")
    return lo + (hi - lo) * sobol_next(stream, N)


def synthesize_dataset(ref: ReferenceFunction, N: int, sampler: SobolStream,
                       scales=None) -> Dataset:
    """Label ``N`` Sobol points of the training bounding box with ``ref``.

    Points are drawn in normalized coordinates; ``scales`` (the source
    dataset's) recover raw coordinates.  Every point lands in the ``test``
    split.
    """
    if N < 1:
        raise ValueError("N must be positive")
    lo, hi = bounding_box(ref.model.base.X_train)
    Xn = sample_box(sampler, N, lo, hi)
    y = evaluate_reference(ref, Xn)
    scales = np.ones(ref.model.D) if scales is None else np.asarray(scales, dtype=float)
    meta = {"reference": ref.provenance, "sampler": sampler.describe()}
    return Dataset(Xn * scales, Xn, y, scales, {"test": np.arange(N)}, "synthetic-from-reference", meta)


def reference_dataset(ref: ReferenceFunction, N: int, sampler: SobolStream, scales=None) -> Dataset:
    """Reference-labelled scan set: the training inputs relabelled by ``ref``
    (``train`` split) followed by ``N`` fresh synthetic points (``test``)."""
    Xt = ref.model.base.X_train
    synth = synthesize_dataset(ref, N, sampler, scales)
    yt = evaluate_reference(ref, Xt)
    Xn = np.vstack([Xt, synth.X_norm])
    M = Xt.shape[0]
    splits = {"train": np.arange(M), "test": M + np.arange(N)}
    return Dataset(Xn * synth.scales, Xn, np.concatenate([yt, synth.y]), synth.scales, splits,
                   "synthetic-from-reference", synth.meta)
