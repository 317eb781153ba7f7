"""Exact GPR: training by Cholesky factorization, prediction, likelihood.

The posterior mean is the basis expansion ``sum_n k(x, x_n) c_n`` with
``c = (K + delta*I)^-1 f``.  Targets are used as given (no centering or
scaling); only features are expected to be pre-normalized.

A failed factorization, or one whose condition proxy exceeds
``COND_THRESHOLD``, produces a model flagged ``stable=False`` instead of an
exception or a silently jittered answer.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf, dpotrs

from hdmrgp.kernels import KernelSpec, GramMatrix, build_cross, build_gram, _as_matrix

COND_THRESHOLD = 1.0 / (100.0 * np.finfo(float).eps)
FORMAT_VERSION = 1
QUERY_BLOCK = 4096


class UnstableModelError(RuntimeError):
    """Raised when predicting from a model whose factorization failed."""


class NegativeVarianceWarning(RuntimeWarning):
    """Predicted variance came out clearly negative before clamping."""


@dataclass(frozen=True, eq=False)
class TrainedModel:
    spec: KernelSpec
    delta: float
    X_train: np.ndarray
    targets: np.ndarray
    coefficients: np.ndarray | None
    factor: np.ndarray | None  # lower Cholesky factor of K + delta*I
    stable: bool
    condition_estimate: float
    diagnostic: str = ""

    @property
    def M(self) -> int:
        return self.X_train.shape[0]

    @property
    def D(self) -> int:
        return self.X_train.shape[1]

    def train_predictions(self) -> np.ndarray:
        """Posterior mean at the training inputs, ``K c = f - delta*c``."""
        _require_stable(self)
        return self.targets - self.delta * self.coefficients


def factorize(gram: GramMatrix, overwrite: bool = False):
    """Cholesky-factor a Gram matrix in place of LAPACK's ``dpotrf``.

    Returns ``(L, condition_estimate, diagnostic)``; ``L`` is ``None`` when
    the factorization failed or the condition proxy is over threshold.
    The proxy is ``(max L_ii / min L_ii)**2``.
    """
    L, info = dpotrf(gram.values, lower=1, clean=1, overwrite_a=int(overwrite))
    if info > 0:
        gram.condition_estimate = math.inf
        return None, math.inf, f"non-positive pivot at row {info - 1}"
    if info < 0:
        raise ValueError(f"dpotrf rejected argument {-info}")
    d = np.diag(L)
    dmin = float(d.min())
    cond = math.inf if dmin <= 0.0 else float(d.max() / dmin) ** 2
    gram.condition_estimate = cond
    if not math.isfinite(cond) or cond > COND_THRESHOLD:
        return None, cond, f"condition estimate {cond:.3e} exceeds {COND_THRESHOLD:.3e}"
    return L, cond, ""


def train_from_gram(spec: KernelSpec, gram: GramMatrix, X, f, overwrite: bool = False) -> TrainedModel:
    """Train using an already assembled Gram matrix (must match ``spec`` and ``X``)."""
    L, cond, diag = factorize(gram, overwrite=overwrite)
    if L is None:
        return TrainedModel(spec, gram.delta, X, f, None, None, False, cond, diag)
    c, info = dpotrs(L, f, lower=1)
    if info != 0 or not np.all(np.isfinite(c)):
        return TrainedModel(spec, gram.delta, X, f, None, None, False, cond, "triangular solve failed")
    return TrainedModel(spec, gram.delta, X, f, c, L, True, cond, "")


def train(spec: KernelSpec, X, f, delta: float) -> TrainedModel:
    """Fit GPR coefficients ``c = (K + delta*I)^-1 f``.

    Parameters
    ----------
    spec : KernelSpec
    X : (M, D) array
        Training inputs (normalized features).
    f : (M,) array
        Training targets.
    delta : float
        Non-negative diagonal regularization.
    """
    X = _as_matrix(X)
    f = np.asarray(f, dtype=float).ravel()
    if X.shape[0] < 1:
        raise ValueError("need at least one training point")
    if f.shape[0] != X.shape[0]:
        raise ValueError(f"dimension mismatch: {X.shape[0]} inputs but {f.shape[0]} targets")
    if not np.all(np.isfinite(f)):
        raise ValueError("targets contain non-finite values")
    gram = build_gram(spec, X, delta)
    return train_from_gram(spec, gram, X, f, overwrite=True)


def _require_stable(model: TrainedModel):
    if not model.stable:
        raise UnstableModelError(f"model is unstable: {model.diagnostic}")


def _query(model: TrainedModel, X_query) -> np.ndarray:
    Xq = _as_matrix(X_query, "X_query")
    if Xq.shape[1] != model.D:
        raise ValueError(f"dimension mismatch: model has {model.D} features, query {Xq.shape[1]}")
    return Xq


def predict_mean(model: TrainedModel, X_query) -> np.ndarray:
    """Posterior mean ``K* c`` at each query row."""
    _require_stable(model)
    Xq = _query(model, X_query)
    out = np.empty(Xq.shape[0])
    for i in range(0, Xq.shape[0], QUERY_BLOCK):
        out[i:i + QUERY_BLOCK] = build_cross(model.spec, model.X_train, Xq[i:i + QUERY_BLOCK]) @ model.coefficients
    return out


def predict_variance(model: TrainedModel, X_query) -> np.ndarray:
    """Posterior variance ``K** - K* (K + delta*I)^-1 K*^T``, clamped at 0."""
    _require_stable(model)
    Xq = _query(model, X_query)
    prior = model.spec.self_covariance
    out = np.empty(Xq.shape[0])
    for i in range(0, Xq.shape[0], QUERY_BLOCK):
        Ks = build_cross(model.spec, model.X_train, Xq[i:i + QUERY_BLOCK])
        V = solve_triangular(model.factor, Ks.T, lower=True, check_finite=False)
        out[i:i + QUERY_BLOCK] = prior - np.einsum("ij,ij->j", V, V)
    if np.any(out < -1e-8 * prior):
        warnings.warn(f"posterior variance down to {out.min():.3e} before clamping; "
                      "the factorization is losing accuracy", NegativeVarianceWarning, stacklevel=2)
    return np.maximum(out, 0.0)


def log_marginal_likelihood(model: TrainedModel) -> float:
    """``-1/2 ln|K+dI| - 1/2 f^T (K+dI)^-1 f - M/2 ln(2 pi)``; ``-inf`` if unstable."""
    if not model.stable:
        return -math.inf
    logdet = 2.0 * float(np.sum(np.log(np.diag(model.factor))))
    quad = float(model.targets @ model.coefficients)
    return -0.5 * logdet - 0.5 * quad - 0.5 * model.M * math.log(2.0 * math.pi)


def save_model(path, model: TrainedModel):
    """Write ``model`` to an ``.npz`` archive.

    The factor is not stored; :func:`load_model` refactorizes, which is
    deterministic on a given platform.
    """
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "hdmrgp.TrainedModel",
        "spec": model.spec.to_dict(),
        "delta": model.delta,
        "stable": model.stable,
        "condition_estimate": model.condition_estimate,
        "diagnostic": model.diagnostic,
    }
    arrays = {"X_train": model.X_train, "targets": model.targets}
    if model.coefficients is not None:
        arrays["coefficients"] = model.coefficients
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_model(path) -> TrainedModel:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {meta.get('format_version')}")
        X = z["X_train"]
        f = z["targets"]
        c = z["coefficients"] if "coefficients" in z.files else None
    spec = KernelSpec.from_dict(meta["spec"])
    model = train(spec, X, f, meta["delta"])
    if model.stable and c is not None:
        # keep the stored coefficients so predictions replay exactly
        model = TrainedModel(spec, model.delta, X, f, c, model.factor, True,
                             model.condition_estimate, model.diagnostic)
    return model
