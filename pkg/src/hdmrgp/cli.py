"""Command-line entry point.

Subcommands::

    hdmrgp run        full pipeline (reference model, synthetic scan, MLE, final fits)
    hdmrgp reference  fit and scan the d=1 HDMR reference model only
    hdmrgp scan       grid scan of a full (or additive) GPR on a dataset
    hdmrgp mle        likelihood maximization on a dataset
    hdmrgp generate   write a synthetic PES dataset file
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from hdmrgp.hypertune import ScanGrid, evaluate_model, make_spec, optimize_mle, parse_range, scan
from hdmrgp.gpr import save_model, train
from hdmrgp.pipeline import ExperimentConfig, PipelineError, build_dataset, fit_reference, run_pipeline
from hdmrgp.sampling import make_synthetic_pes, save_dataset

log = logging.getLogger("hdmrgp")


def parse_synthetic(text: str) -> dict:
    """``D=15,seed=0,n=50000[,coupling=0.1]`` -> dict."""
    out = {}
    for item in text.split(","):
        k, sep, v = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"bad synthetic item {item!r}; expected key=value")
        k = k.strip()
        if k not in ("D", "seed", "n", "coupling"):
            raise argparse.ArgumentTypeError(f"unknown synthetic key {k!r}")
        out[k] = float(v) if k == "coupling" else int(v)
    return out


def parse_splits(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("splits must be M,T1,T2")
    return tuple(parts)


def _pair(text: str) -> tuple[float, float]:
    a, b = (float(t) for t in text.split(","))
    return a, b


def _common(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", metavar="PATH", help="delimited data file: D feature columns + target")
    src.add_argument("--synthetic", type=parse_synthetic, metavar="D=..,seed=..,n=..",
                     help="generate a synthetic PES-like dataset instead of reading a file")
    p.add_argument("--splits", type=parse_splits, default=(5000, 5000, 40000), metavar="M,T1,T2",
                   help="train, test-train and test sizes (default 5000,5000,40000)")
    p.add_argument("--family", default="se", choices=["se", "matern12", "matern32", "matern52"])
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--out", default="runs/latest", metavar="DIR")
    p.add_argument("--workers", type=int, default=1, metavar="W")
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdmrgp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full experiment pipeline")
    _common(run)
    run.add_argument("--grid-l", default="2.5:5.0:0.5", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    run.add_argument("--grid-logdelta", default="-2:-7:-1", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    run.add_argument("--ref-grid-l", default="2.5:4.0:0.5", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    run.add_argument("--ref-grid-logdelta", default="-3:-5:-1", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    run.add_argument("--nref", type=int, default=40000, metavar="N", help="synthetic reference-labelled points")
    run.add_argument("--n-probe", type=int, default=10000, help="points for the completeness error")
    run.add_argument("--ratio-cap", type=float, default=2.0, metavar="R")
    run.add_argument("--mle-init", type=_pair, default=(3.5, -5.0), metavar="L,LOGDELTA")
    run.add_argument("--mle-fixed-logdelta", type=float, default=-5.0,
                     help="log10 delta for the fixed-delta MLE run")
    run.add_argument("--no-fixed-mle", action="store_true", help="skip the fixed-delta MLE run")
    run.add_argument("--no-oracle-scan", action="store_true",
                     help="skip the scan against the real test split")
    run.add_argument("--no-models", action="store_true", help="do not persist trained models")
    run.add_argument("--config", metavar="JSON", help="resolved config from an earlier run (flags ignored)")

    ref = sub.add_parser("reference", help="d=1 HDMR reference model")
    _common(ref)
    ref.add_argument("--grid-l", default="2.5:4.0:0.5", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    ref.add_argument("--grid-logdelta", default="-3:-5:-1", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    ref.add_argument("--ratio-cap", type=float, default=2.0, metavar="R")

    sc = sub.add_parser("scan", help="grid scan on a dataset")
    _common(sc)
    sc.add_argument("--grid-l", default="2.5:5.0:0.5", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    sc.add_argument("--grid-logdelta", default="-2:-7:-1", metavar="a:b:step",
                     help="range a:b:step or comma list; write --opt=-3:-5:-1 for negative starts")
    sc.add_argument("--additive", action="store_true", help="use the d=1 HDMR kernel")

    mle = sub.add_parser("mle", help="maximize the log marginal likelihood")
    _common(mle)
    mle.add_argument("--init", type=_pair, default=(3.5, -5.0), metavar="L,LOGDELTA")
    mle.add_argument("--fix-delta", action="store_true", help="keep log10 delta at its initial value")
    mle.add_argument("--additive", action="store_true")

    gen = sub.add_parser("generate", help="write a synthetic dataset file")
    gen.add_argument("--synthetic", type=parse_synthetic, required=True, metavar="D=..,seed=..,n=..")
    gen.add_argument("--output", required=True, metavar="PATH")
    return parser


def _config_from_args(args, **extra) -> ExperimentConfig:
    return ExperimentConfig(data=args.data, synthetic=args.synthetic, splits=tuple(args.splits),
                            family=args.family, seed=args.seed, out=args.out, workers=args.workers, **extra)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, default=float) + "\n")


def cmd_run(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = _config_from_args(
            args,
            grid_l=parse_range(args.grid_l), grid_logdelta=parse_range(args.grid_logdelta),
            ref_grid_l=parse_range(args.ref_grid_l), ref_grid_logdelta=parse_range(args.ref_grid_logdelta),
            ratio_cap=args.ratio_cap, nref=args.nref, n_probe=args.n_probe, mle_init=tuple(args.mle_init),
            mle_fixed_logdelta=None if args.no_fixed_mle else args.mle_fixed_logdelta,
            oracle_scan=not args.no_oracle_scan, save_models=not args.no_models)
    cfg.validate()
    if args.dry_run:
        print("\n".join(cfg.plan()))
        return 0
    summary = run_pipeline(cfg)
    g = summary["final"]["guarded"]
    print(f"guarded: l={g['l']} log10_delta={g['log10_delta']} "
          f"train={g['metrics']['train']['rmse']:.4g} test={g['metrics']['test']['rmse']:.4g}")
    for k in ("mle_free", "mle_fixed_delta"):
        if k in summary["final"] and "metrics" in summary["final"][k]:
            e = summary["final"][k]
            print(f"{k}: l={e['l']:.3f} log10_delta={e['log10_delta']:.3f} "
                  f"train={e['metrics']['train']['rmse']:.4g} test={e['metrics']['test']['rmse']:.4g}")
    print(f"artifacts in {cfg.out}")
    return 0


def _prepare(args, need_testtrain=False, **extra):
    cfg = _config_from_args(args, **extra).validate(need_testtrain)
    if args.dry_run:
        return cfg, None, None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"command": args.command, **cfg.to_dict(), **_extra_args(args)})
    return cfg, build_dataset(cfg), out


def _extra_args(args) -> dict:
    skip = {"data", "synthetic", "splits", "family", "seed", "out", "workers", "dry_run", "verbose", "command", "func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def cmd_reference(args) -> int:
    cfg, ds, out = _prepare(args, need_testtrain=True, ref_grid_l=parse_range(args.grid_l),
                            ref_grid_logdelta=parse_range(args.grid_logdelta), ratio_cap=args.ratio_cap)
    if ds is None:
        print(f"reference scan l={list(cfg.ref_grid_l)} x log10 delta={list(cfg.ref_grid_logdelta)}; no computation")
        return 0
    ref, rep, sel = fit_reference(ds, cfg)
    rep.write_table(out / "reference_scan.csv")
    save_model(out / "reference_model.npz", ref.model.base)
    metrics = evaluate_model(ref.model.base, ds)
    _write_json(out / "reference.json", {"selection": sel.to_dict(), "metrics": metrics})
    print(f"reference: l={sel.l} log10_delta={sel.log10_delta} "
          + " ".join(f"{k}={v['rmse']:.4g}" for k, v in metrics.items()))
    return 0


def cmd_scan(args) -> int:
    cfg, ds, out = _prepare(args, grid_l=parse_range(args.grid_l), grid_logdelta=parse_range(args.grid_logdelta))
    grid = ScanGrid(cfg.grid_l, cfg.grid_logdelta)
    if ds is None:
        print(f"scan {len(grid)} cells; no computation")
        return 0
    rep = scan(ds, grid, cfg.family, additive=args.additive, workers=cfg.workers)
    rep.write_table(out / "scan.csv")
    print(f"wrote {len(rep.cells)} cells to {out / 'scan.csv'}")
    return 0


def cmd_mle(args) -> int:
    cfg, ds, out = _prepare(args)
    if ds is None:
        print(f"MLE from {args.init}, fix_delta={args.fix_delta}; no computation")
        return 0
    res = optimize_mle(ds, cfg.family, additive=args.additive, optimize_delta=not args.fix_delta,
                       init=tuple(args.init))
    X, y = ds.part("train")
    model = train(make_spec(ds.D, res.l, cfg.family, args.additive), X, y, res.delta)
    payload = res.to_dict()
    if model.stable:
        payload["metrics"] = evaluate_model(model, ds)
        save_model(out / "model_mle.npz", model)
    _write_json(out / "mle.json", payload)
    print(f"mle: l={res.l:.4f} log10_delta={res.log10_delta:.4f} lml={res.objective:.6g} ({res.evaluations} evals)")
    return 0


def cmd_generate(args) -> int:
    s = args.synthetic
    if "D" not in s or "n" not in s:
        raise ValueError("synthetic spec needs D and n")
    ds = make_synthetic_pes(s["D"], s.get("seed", 0), s["n"], s.get("coupling", 0.1))
    save_dataset(args.output, ds)
    print(f"wrote {ds.N} rows x {ds.D} features to {args.output}")
    return 0


COMMANDS = {"run": cmd_run, "reference": cmd_reference, "scan": cmd_scan, "mle": cmd_mle, "generate": cmd_generate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command != "generate" and args.data is None and args.synthetic is None \
            and not getattr(args, "config", None):
        parser.error("one of --data or --synthetic is required")
    try:
        return COMMANDS[args.command](args)
    except PipelineError as e:
        print(f"error: pipeline failed {e}; partial outputs marked INCOMPLETE", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
