"""End-to-end experiment: reference model, synthetic scan, MLE comparison.

Stages run in order and each failure is reported with its stage name; a
run directory whose pipeline did not finish carries an ``INCOMPLETE``
marker.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from hdmrgp.gpr import TrainedModel, predict_mean, save_model, train
from hdmrgp.hdmr import ReferenceFunction, fit_additive, reference_dataset
from hdmrgp.hypertune import (
    NoSelectionError,
    ScanGrid,
    SelectionResult,
    completeness_error,
    evaluate_model,
    make_spec,
    optimize_mle,
    pearson_r,
    scan,
    select_guarded,
)
from hdmrgp.kernels import FAMILIES
from hdmrgp.sampling import Dataset, SobolStream, load_dataset, make_synthetic_pes, split

log = logging.getLogger(__name__)

# synthetic reference-labelled points start past any Sobol index used for data
SYNTH_OFFSET = 1 << 20


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    data: str | None = None
    synthetic: dict | None = None
    splits: tuple[int, int, int] = (5000, 5000, 40000)
    family: str = "se"
    grid_l: tuple[float, ...] = (2.5, 3.0, 3.5, 4.0, 4.5, 5.0)
    grid_logdelta: tuple[float, ...] = (-2.0, -3.0, -4.0, -5.0, -6.0, -7.0)
    ref_grid_l: tuple[float, ...] = (2.5, 3.0, 3.5, 4.0)
    ref_grid_logdelta: tuple[float, ...] = (-3.0, -4.0, -5.0)
    ratio_cap: float = 2.0
    nref: int = 40000
    n_probe: int = 10000
    mle_init: tuple[float, float] = (3.5, -5.0)
    mle_fixed_logdelta: float | None = -5.0
    oracle_scan: bool = True
    seed: int = 0
    out: str = "runs/latest"
    workers: int = 1
    save_models: bool = True

    def validate(self, need_testtrain: bool = True):
        if (self.data is None) == (self.synthetic is None):
            raise ValueError("give exactly one of a data file or a synthetic spec")
        if self.synthetic is not None:
            missing = {"D", "n"} - set(self.synthetic)
            if missing:
                raise ValueError(f"synthetic spec lacks {sorted(missing)}")
            if int(self.synthetic["D"]) < 2 or int(self.synthetic["n"]) < 1:
                raise ValueError("synthetic spec needs D >= 2 and n >= 1")
        if self.data is not None and not Path(self.data).is_file():
            raise ValueError(f"data file {self.data} not found")
        if len(self.splits) != 3 or self.splits[0] < 2 or self.splits[2] < 1 or min(self.splits) < 0:
            raise ValueError(f"splits must be M,T1,T2 with M >= 2 and T2 >= 1, got {self.splits}")
        if need_testtrain and self.splits[1] < 1:
            raise ValueError("the reference model needs a non-empty test-train split (T1 >= 1)")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        ScanGrid(self.grid_l, self.grid_logdelta)
        ScanGrid(self.ref_grid_l, self.ref_grid_logdelta)
        if not self.ratio_cap > 0:
            raise ValueError("ratio cap must be positive")
        if self.nref < 1 or self.n_probe < 1:
            raise ValueError("nref and n_probe must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for k in ("splits", "grid_l", "grid_logdelta", "ref_grid_l", "ref_grid_logdelta", "mle_init"):
            if k in d and d[k] is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def plan(self) -> list[str]:
        src = self.data if self.data else f"synthetic {self.synthetic}"
        M, T1, T2 = self.splits
        return [
            f"1. dataset: {src}; splits train={M} testtrain={T1} test={T2} (seed {self.seed})",
            f"2. d=1 reference: scan l={list(self.ref_grid_l)} x log10 delta={list(self.ref_grid_logdelta)} on testtrain",
            f"3. synthesize {self.nref} reference-labelled Sobol points",
            f"4. full {self.family} scan l={list(self.grid_l)} x log10 delta={list(self.grid_logdelta)}; "
            f"guard test <= {self.ratio_cap} x train",
            f"5. MLE from l={self.mle_init[0]}, log10 delta={self.mle_init[1]} (free delta"
            + (f"; fixed log10 delta={self.mle_fixed_logdelta})" if self.mle_fixed_logdelta is not None else ")"),
            "6. final fits on real data at every selection" + ("; oracle scan on real test" if self.oracle_scan else ""),
            f"7. write tables, summaries, correlation data to {self.out}",
        ]


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data is not None:
        ds = load_dataset(cfg.data)
    else:
        s = cfg.synthetic
        ds = make_synthetic_pes(int(s["D"]), int(s.get("seed", 0)), int(s["n"]),
                                float(s.get("coupling", 0.1)))
    M, T1, T2 = cfg.splits
    return split(ds, M, T1, T2, seed=cfg.seed)


def write_correlation(path: Path, truth, pred):
    """Two-column truth/prediction file with a Pearson R footer."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    try:
        r = f"{pearson_r(pred, truth):.10f}"
    except ValueError:
        r = "undefined"
    np.savetxt(path, np.column_stack([truth, pred]), delimiter=",", header="truth,prediction",
               footer=f"pearson_r: {r}", fmt="%.10g")


def fit_reference(ds: Dataset, cfg: ExperimentConfig):
    """Scan the d=1 model on the test-train split and fit it at the choice."""
    grid = ScanGrid(cfg.ref_grid_l, cfg.ref_grid_logdelta)
    rep = scan(ds, grid, cfg.family, additive=True, workers=cfg.workers, evaluate=("testtrain",))
    try:
        sel = select_guarded(rep, cfg.ratio_cap, metric="testtrain")
    except NoSelectionError as e:
        if e.best_unguarded is None:
            raise
        c = e.best_unguarded
        sel = SelectionResult(c.l, c.delta, c.testtrain_rmse / c.train_rmse, "best-testtrain-unguarded",
                              c.train_rmse, c.testtrain_rmse)
    X, y = ds.part("train")
    model = fit_additive(X, y, sel.l, sel.delta, cfg.family)
    if not model.stable:
        raise RuntimeError(f"reference fit at l={sel.l}, delta={sel.delta} is unstable")
    ref = ReferenceFunction(model, {"dataset": ds.meta.get("source", ds.meta.get("generator", "")),
                                    "split_seed": cfg.seed, "l": sel.l, "delta": sel.delta})
    return ref, rep, sel


def run_pipeline(cfg: ExperimentConfig) -> dict:
    """Run every stage and write all artifacts under ``cfg.out``.

    Returns the summary dictionary also written to ``summary.json``.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "INCOMPLETE"
    marker.write_text("pipeline started\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    summary: dict = {"config": cfg.to_dict(), "stages": {}}
    t_start = time.perf_counter()
    stage = "init"

    def begin(name):
        nonlocal stage
        stage = name
        marker.write_text(f"pipeline stopped during stage: {name}\n")
        log.info("stage %s", name)
        return time.perf_counter()

    try:
        t = begin("dataset")
        ds = build_dataset(cfg)
        D = ds.D
        summary["dataset"] = {"N": ds.N, "D": D, "provenance": ds.provenance,
                              "splits": {k: int(v.size) for k, v in ds.splits.items()}}
        summary["stages"]["dataset"] = time.perf_counter() - t

        t = begin("reference")
        ref, ref_rep, ref_sel = fit_reference(ds, cfg)
        ref_rep.write_table(out / "reference_scan.csv")
        ref_eval = evaluate_model(ref.model.base, ds)
        summary["reference"] = {"selection": ref_sel.to_dict(), "metrics": ref_eval}
        if cfg.save_models:
            save_model(out / "reference_model.npz", ref.model.base)
        summary["stages"]["reference"] = time.perf_counter() - t

        t = begin("synthesize")
        rds = reference_dataset(ref, cfg.nref, SobolStream(D, offset=SYNTH_OFFSET), ds.scales)
        summary["stages"]["synthesize"] = time.perf_counter() - t

        t = begin("reference-scan")
        grid = ScanGrid(cfg.grid_l, cfg.grid_logdelta)
        rep = scan(rds, grid, cfg.family, workers=cfg.workers, evaluate=("test",))
        rep.write_table(out / "scan_reference.csv")
        guarded = select_guarded(rep, cfg.ratio_cap)
        summary["guarded"] = guarded.to_dict()
        summary["stages"]["reference-scan"] = time.perf_counter() - t

        t = begin("mle")
        mles = {"mle_free": optimize_mle(ds, cfg.family, optimize_delta=True, init=cfg.mle_init)}
        if cfg.mle_fixed_logdelta is not None:
            mles["mle_fixed_delta"] = optimize_mle(ds, cfg.family, optimize_delta=False,
                                                   init=(cfg.mle_init[0], cfg.mle_fixed_logdelta))
        summary["mle"] = {k: v.to_dict() for k, v in mles.items()}
        summary["stages"]["mle"] = time.perf_counter() - t

        t = begin("final-fits")
        X, y = ds.part("train")
        choices = {"guarded": guarded, **mles}
        finals = {}
        for name, sel in choices.items():
            spec = make_spec(D, sel.l, cfg.family)
            model = train(spec, X, y, sel.delta)
            entry = {"l": sel.l, "log10_delta": sel.log10_delta, "stable": model.stable}
            if model.stable:
                entry["metrics"] = evaluate_model(model, ds)
                tr, te = entry["metrics"]["train"]["rmse"], entry["metrics"]["test"]["rmse"]
                entry["test_train_ratio"] = te / tr if tr > 0 else math.inf
                sel.train_rmse, sel.test_rmse = tr, te
                _write_correlations(out, name, model, ds)
                if cfg.save_models:
                    save_model(out / f"model_{name}.npz", model)
            entry["completeness_error"] = completeness_error(spec, sel.delta, X, ref, cfg.n_probe)
            finals[name] = entry
        _write_correlations(out, "reference", ref.model.base, ds)
        summary["final"] = finals
        summary["stages"]["final-fits"] = time.perf_counter() - t

        if cfg.oracle_scan:
            t = begin("oracle-scan")
            orep = scan(ds, grid, cfg.family, workers=cfg.workers, evaluate=("test",))
            orep.write_table(out / "scan_oracle.csv")
            best = orep.best("test_rmse")
            summary["oracle_best"] = {"l": best.l, "log10_delta": best.log10_delta,
                                      "train_rmse": best.train_rmse, "test_rmse": best.test_rmse}
            summary["stages"]["oracle-scan"] = time.perf_counter() - t

        t = begin("write")
        _write_selection_table(out / "selections.csv", summary)
        summary["seconds"] = time.perf_counter() - t_start
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable) + "\n")
    except Exception as exc:
        raise PipelineError(stage, exc) from exc
    marker.unlink()
    return summary


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_correlations(out: Path, name: str, model: TrainedModel, ds: Dataset):
    for split_name in ("train", "test"):
        if ds.has(split_name):
            Xs, ys = ds.part(split_name)
            write_correlation(out / f"correlation_{name}_{split_name}.csv", ys, predict_mean(model, Xs))


def _write_selection_table(path: Path, summary: dict):
    """Table-1-style summary: one row per selection, rmse on the real splits."""
    M = summary["dataset"]["splits"]["train"]
    rows = ["selection,M,l,log10_delta,train_rmse,testtrain_rmse,test_rmse,pearson_test,completeness_error"]

    def fmt(v):
        return "" if v is None else repr(float(v))

    ref = summary["reference"]
    m = ref["metrics"]
    rows.append(",".join(["reference_d1", str(M), fmt(ref["selection"]["l"]), fmt(ref["selection"]["log10_delta"]),
                          fmt(m["train"]["rmse"]), fmt(m.get("testtrain", {}).get("rmse")),
                          fmt(m["test"]["rmse"]), fmt(m["test"]["pearson"]), ""]))
    for name, e in summary["final"].items():
        mm = e.get("metrics", {})
        rows.append(",".join([name, str(M), fmt(e["l"]), fmt(e["log10_delta"]),
                              fmt(mm.get("train", {}).get("rmse")), fmt(mm.get("testtrain", {}).get("rmse")),
                              fmt(mm.get("test", {}).get("rmse")), fmt(mm.get("test", {}).get("pearson")),
                              fmt(e["completeness_error"])]))
    if "oracle_best" in summary:
        o = summary["oracle_best"]
        rows.append(",".join(["oracle_best", str(M), fmt(o["l"]), fmt(o["log10_delta"]),
                              fmt(o["train_rmse"]), "", fmt(o["test_rmse"]), "", ""]))
    path.write_text("\n".join(rows) + "\n")
