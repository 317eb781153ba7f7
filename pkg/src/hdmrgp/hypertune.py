"""Hyperparameter selection: grid scans with a guarded best-test rule,
likelihood maximization, and the basis-completeness error.

Length parameters are the log length ``l`` (kernel width ``exp(l)``);
regularization is scanned and optimized as ``log10(delta)``.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from hdmrgp.gpr import (
    QUERY_BLOCK,
    TrainedModel,
    log_marginal_likelihood,
    predict_mean,
    train,
    train_from_gram,
)
from hdmrgp.hdmr import bounding_box, sample_box
from hdmrgp.kernels import (
    KernelSpec,
    additive_spec,
    build_cross,
    condensed_sqdist,
    full_spec,
    gram_from_condensed,
)
from hdmrgp.sampling import Dataset, SobolStream

GUARDED = "guarded-best-test"
MLE = "mle"

# fresh probe points start far past anything used for training or synthesis
PROBE_OFFSET = 1 << 24


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.size == 0:
        raise ValueError("rmse of empty vectors")
    d = pred - truth
    return float(np.sqrt(np.mean(d * d)))


def pearson_r(pred, truth) -> float:
    """Sample Pearson correlation between predictions and truth."""
    x = np.asarray(pred, dtype=float).ravel()
    y = np.asarray(truth, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.size < 2:
        raise ValueError("pearson_r needs at least two points")
    x = x - x.mean()
    y = y - y.mean()
    sxx, syy = float(x @ x), float(y @ y)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for zero-variance input")
    return float(np.clip((x @ y) / math.sqrt(sxx * syy), -1.0, 1.0))


def _safe_pearson(pred, truth):
    try:
        return pearson_r(pred, truth)
    except ValueError:
        return None


def _monotone(v: Sequence[float]) -> bool:
    d = np.diff(np.asarray(v, dtype=float))
    return bool(np.all(d > 0) or np.all(d < 0))


def parse_range(text: str) -> tuple[float, ...]:
    """``"a:b:step"`` (inclusive of ``b``) or a comma list ``"1,2,3"``."""
    text = text.strip()
    if ":" in text:
        a, b, step = (float(t) for t in text.split(":"))
        if step == 0 or (b - a) * step < 0:
            raise ValueError(f"bad range {text!r}")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        return tuple(round(a + k * step, 12) for k in range(n))
    return tuple(float(t) for t in text.split(","))


@dataclass(frozen=True)
class ScanGrid:
    l_values: tuple[float, ...]
    log10_delta_values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "l_values", tuple(float(v) for v in self.l_values))
        object.__setattr__(self, "log10_delta_values", tuple(float(v) for v in self.log10_delta_values))
        for name in ("l_values", "log10_delta_values"):
            v = getattr(self, name)
            if not v:
                raise ValueError(f"{name} must be non-empty")
            if len(v) > 1 and not _monotone(v):
                raise ValueError(f"{name} must be strictly monotone")

    @classmethod
    def parse(cls, l_text: str, logdelta_text: str) -> "ScanGrid":
        return cls(parse_range(l_text), parse_range(logdelta_text))

    @classmethod
    def default(cls) -> "ScanGrid":
        return cls((2.5, 3.0, 3.5, 4.0, 4.5, 5.0), (-2, -3, -4, -5, -6, -7))

    def __len__(self):
        return len(self.l_values) * len(self.log10_delta_values)


TABLE_COLUMNS = ("l", "log10_delta", "train_rmse", "testtrain_rmse", "test_rmse",
                 "pearson_train", "pearson_test", "stable", "seconds")


@dataclass
class ScanCell:
    l: float
    log10_delta: float
    train_rmse: float | None = None
    testtrain_rmse: float | None = None
    test_rmse: float | None = None
    pearson_train: float | None = None
    pearson_test: float | None = None
    stable: bool = False
    seconds: float = 0.0
    condition_estimate: float = math.nan

    @property
    def delta(self) -> float:
        return 10.0 ** self.log10_delta


@dataclass
class ScanReport:
    cells: list[ScanCell]
    provenance: str
    meta: dict = field(default_factory=dict)

    def cell(self, l: float, log10_delta: float) -> ScanCell:
        for c in self.cells:
            if math.isclose(c.l, l, abs_tol=1e-12) and math.isclose(c.log10_delta, log10_delta, abs_tol=1e-12):
                return c
        raise KeyError((l, log10_delta))

    def stable_cells(self) -> list[ScanCell]:
        return [c for c in self.cells if c.stable]

    def best(self, metric: str = "test_rmse") -> ScanCell:
        """Stable cell with the smallest ``metric``, no guard applied."""
        cands = [c for c in self.stable_cells() if getattr(c, metric) is not None]
        if not cands:
            raise ValueError(f"no stable cell carries {metric}")
        return min(cands, key=lambda c: (getattr(c, metric), -c.l, -c.log10_delta))

    def write_table(self, path, timing: bool = True):
        """Delimited table, one row per cell; ``timing=False`` blanks seconds."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write(f"# provenance: {self.provenance}\n")
            for k, v in self.meta.items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            for c in self.cells:
                row = [_fmt(getattr(c, k)) for k in TABLE_COLUMNS[:-2]]
                row.append(int(c.stable))
                row.append(f"{c.seconds:.3f}" if timing else "")
                w.writerow(row)

    @classmethod
    def read_table(cls, path) -> "ScanReport":
        provenance, meta, lines = "", {}, []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].partition(":")
                    if k.strip() == "provenance":
                        provenance = v.strip()
                    else:
                        meta[k.strip()] = v.strip()
                else:
                    lines.append(line)
        cells = []
        for row in csv.DictReader(lines):
            kw = {k: _parse(row[k]) for k in TABLE_COLUMNS[2:-2]}
            cells.append(ScanCell(float(row["l"]), float(row["log10_delta"]), stable=row["stable"] == "1",
                                  seconds=float(row["seconds"] or 0.0), **kw))
        return cls(cells, provenance, meta)


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def _parse(s: str):
    return float(s) if s else None


@dataclass
class SelectionResult:
    l: float
    delta: float
    guard_ratio: float | None
    rule: str
    train_rmse: float | None = None
    test_rmse: float | None = None
    objective: float | None = None
    evaluations: int = 0
    details: dict = field(default_factory=dict)

    @property
    def log10_delta(self) -> float:
        return math.log10(self.delta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["log10_delta"] = self.log10_delta
        return d


class NoSelectionError(ValueError):
    """No stable cell passes the guard; ``best_unguarded`` is the fallback."""

    def __init__(self, message: str, best_unguarded: ScanCell | None):
        super().__init__(message)
        self.best_unguarded = best_unguarded


def make_spec(D: int, l: float, family: str = "se", additive: bool = False) -> KernelSpec:
    return (additive_spec if additive else full_spec)(D, l, family)


def _predict_many(spec: KernelSpec, X_train, C: np.ndarray, Xq) -> np.ndarray:
    out = np.empty((Xq.shape[0], C.shape[1]))
    for i in range(0, Xq.shape[0], QUERY_BLOCK):
        out[i:i + QUERY_BLOCK] = build_cross(spec, X_train, Xq[i:i + QUERY_BLOCK]) @ C
    return out


def _scan_length(spec: KernelSpec, sqd, X, y, log_deltas, evals) -> list[ScanCell]:
    t0 = time.perf_counter()
    M = X.shape[0]
    base = gram_from_condensed(spec, sqd, M, 0.0)
    shared = time.perf_counter() - t0
    cells, models = [], []
    for ld in log_deltas:
        t1 = time.perf_counter()
        g = type(base)(base.values.copy(), 10.0 ** ld)
        g.values[np.diag_indices(M)] += g.delta
        model = train_from_gram(spec, g, X, y, overwrite=True)
        cell = ScanCell(spec.log_length, ld, stable=model.stable, condition_estimate=model.condition_estimate)
        cell.seconds = time.perf_counter() - t1
        if model.stable:
            p = model.train_predictions()
            cell.train_rmse = rmse(p, y)
            cell.pearson_train = _safe_pearson(p, y)
        cells.append(cell)
        models.append(model)
    live = [k for k, m in enumerate(models) if m.stable]
    if live:
        C = np.column_stack([models[k].coefficients for k in live])
        for name, (Xq, yq) in evals.items():
            t1 = time.perf_counter()
            P = _predict_many(spec, X, C, Xq)
            share = (time.perf_counter() - t1) / len(live)
            for j, k in enumerate(live):
                setattr(cells[k], f"{name}_rmse", rmse(P[:, j], yq))
                if name == "test":
                    cells[k].pearson_test = _safe_pearson(P[:, j], yq)
                cells[k].seconds += share
    for c in cells:
        c.seconds += shared / len(cells)
    return cells


def scan(dataset: Dataset, grid: ScanGrid, family: str = "se", additive: bool = False,
         workers: int = 1, evaluate: Sequence[str] = ("testtrain", "test")) -> ScanReport:
    """Train on the ``train`` split at every grid cell and score the others.

    Cells are grouped by length parameter so that the Gram matrix and the
    cross-covariances are built once per ``l``.  Unstable cells are flagged
    and carry no error values.

    Parameters
    ----------
    dataset : Dataset
        Needs a non-empty ``train`` split; every split named in
        ``evaluate`` that exists is scored.
    grid : ScanGrid
    family, additive
        Kernel family and whether to use the first-order HDMR kernel.
    workers : int
        Number of length-parameter groups processed concurrently.
    """
    if len(grid) == 0:
        raise ValueError("empty scan grid")
    if not dataset.has("train"):
        raise ValueError("dataset has no train split")
    X, y = dataset.part("train")
    evals = {}
    for name in evaluate:
        if dataset.has(name):
            evals[name] = dataset.part(name)
        elif name in dataset.splits:
            raise ValueError(f"split {name!r} is empty")
    if not evals:
        raise ValueError(f"dataset has none of the evaluation splits {tuple(evaluate)}")
    probe = make_spec(X.shape[1], grid.l_values[0], family, additive)
    sqd = condensed_sqdist(probe, X)

    def run(l):
        return _scan_length(probe.with_log_length(l), sqd, X, y, grid.log10_delta_values, evals)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(run, grid.l_values))
    else:
        groups = [run(l) for l in grid.l_values]
    meta = {"family": family, "additive": additive, "M": X.shape[0],
            "evaluated": ",".join(f"{k}={v[0].shape[0]}" for k, v in evals.items())}
    return ScanReport([c for g in groups for c in g], dataset.provenance, meta)


def select_guarded(report: ScanReport, ratio_cap: float = 2.0, metric: str = "test") -> SelectionResult:
    """Lowest ``metric`` rmse among stable cells whose ``metric``/train ratio
    is at most ``ratio_cap``.

    Ties within 1e-9 relative go to the larger ``l``, then the larger delta.
    Raises :class:`NoSelectionError` if no cell passes the guard.
    """
    key = f"{metric}_rmse"
    scored = [c for c in report.stable_cells() if getattr(c, key) is not None and c.train_rmse is not None]
    if not scored:
        raise NoSelectionError(f"no stable cell with {key}", None)

    def ratio(c):
        t = getattr(c, key)
        if c.train_rmse > 0:
            return t / c.train_rmse
        return 1.0 if t == 0 else math.inf

    ok = [c for c in scored if ratio(c) <= ratio_cap]
    if not ok:
        fallback = min(scored, key=lambda c: getattr(c, key))
        raise NoSelectionError(
            f"no cell has {metric}/train rmse <= {ratio_cap}; best unguarded is "
            f"l={fallback.l}, log10_delta={fallback.log10_delta} ({key}={getattr(fallback, key):.6g})",
            fallback)
    best = min(getattr(c, key) for c in ok)
    tied = [c for c in ok if getattr(c, key) <= best * (1.0 + 1e-9)]
    pick = max(tied, key=lambda c: (c.l, c.log10_delta))
    return SelectionResult(pick.l, pick.delta, ratio(pick), GUARDED, pick.train_rmse, getattr(pick, key),
                           details={"metric": metric, "ratio_cap": ratio_cap, "candidates": len(ok)})


def optimize_mle(dataset: Dataset, family: str = "se", additive: bool = False,
                 optimize_delta: bool = True, init: tuple[float, float] = (3.5, -5.0),
                 l_bounds: tuple[float, float] = (-5.0, 8.0),
                 log10_delta_bounds: tuple[float, float] = (-8.0, 4.0),
                 starts: Sequence[tuple[float, float]] | None = None,
                 restarts: int = 1, maxfev: int = 400) -> SelectionResult:
    """Maximize the log marginal likelihood with Nelder-Mead.

    ``init`` is ``(l, log10_delta)``; with ``optimize_delta=False`` the
    delta of ``init`` is held fixed.  Each of ``starts`` (default just
    ``init``) is polished by ``restarts`` extra simplex restarts from its
    optimum.  Unstable points score ``-inf``.  The optimum is returned
    whatever its quality.
    """
    if not dataset.has("train"):
        raise ValueError("dataset has no train split")
    X, y = dataset.part("train")
    M, D = X.shape
    spec0 = make_spec(D, init[0], family, additive)
    # distance cache is reused across evaluations when it fits comfortably
    cache = condensed_sqdist(spec0, X) if len(spec0.subsets) * M * (M - 1) // 2 <= 60_000_000 else None
    fixed_ld = float(init[1])
    seen: dict[tuple, float] = {}

    def point(theta):
        l = float(theta[0])
        ld = float(theta[1]) if optimize_delta else fixed_ld
        return l, ld

    def lml_at(l, ld):
        spec = spec0.with_log_length(l)
        if cache is not None:
            g = gram_from_condensed(spec, cache, M, 10.0 ** ld)
            model = train_from_gram(spec, g, X, y, overwrite=True)
        else:
            model = train(spec, X, y, 10.0 ** ld)
        return log_marginal_likelihood(model)

    def objective(theta):
        l, ld = point(theta)
        if not (l_bounds[0] <= l <= l_bounds[1] and log10_delta_bounds[0] <= ld <= log10_delta_bounds[1]):
            return math.inf
        k = (l, ld)
        if k not in seen:
            seen[k] = lml_at(l, ld)
        v = seen[k]
        return -v if math.isfinite(v) else math.inf

    bounds = [l_bounds] + ([log10_delta_bounds] if optimize_delta else [])
    starts = [tuple(init)] if starts is None else [tuple(s) for s in starts]
    best_x, best_f = None, math.inf
    for s in starts:
        x0 = np.array([s[0], s[1]] if optimize_delta else [s[0]], dtype=float)
        for _ in range(1 + restarts):
            res = minimize(objective, x0, method="Nelder-Mead", bounds=bounds,
                           options={"xatol": 1e-4, "fatol": 1e-9, "maxfev": maxfev, "adaptive": False})
            x0 = np.asarray(res.x, dtype=float)
            f = objective(x0)
            if f < best_f:
                best_x, best_f = x0.copy(), f
    if best_x is None:
        best_x = np.array([init[0], init[1]] if optimize_delta else [init[0]], dtype=float)
    l, ld = point(best_x)
    lml = -best_f if math.isfinite(best_f) else -math.inf
    return SelectionResult(l, 10.0 ** ld, None, MLE, objective=lml, evaluations=len(seen),
                           details={"optimize_delta": optimize_delta, "init": list(init),
                                    "additive": additive, "family": family})


def completeness_error(spec: KernelSpec, delta: float, X_train, probe: Callable, N_probe: int,
                       sampler: SobolStream | None = None) -> float:
    """Representation error of ``probe`` in the kernel basis centred at ``X_train``.

    The basis is fitted to ``probe`` at the training inputs; the error is
    the rmse against ``probe`` on ``N_probe`` fresh Sobol points spanning
    the training bounding box.  An unstable basis yields ``inf``.
    """
    if N_probe < 1:
        raise ValueError("N_probe must be positive")
    X_train = np.asarray(X_train, dtype=float)
    model = train(spec, X_train, probe(X_train), delta)
    if not model.stable:
        return math.inf
    if sampler is None:
        sampler = SobolStream(X_train.shape[1], offset=PROBE_OFFSET)
    Xp = sample_box(sampler, N_probe, *bounding_box(X_train))
    return rmse(predict_mean(model, Xp), probe(Xp))


def evaluate_model(model: TrainedModel, dataset: Dataset, splits=("train", "testtrain", "test")) -> dict:
    """rmse and Pearson R of ``model`` on every available split."""
    out = {}
    for name in splits:
        if dataset.has(name):
            Xs, ys = dataset.part(name)
            p = predict_mean(model, Xs)
            out[name] = {"rmse": rmse(p, ys), "pearson": _safe_pearson(p, ys), "n": int(ys.size)}
    return out
