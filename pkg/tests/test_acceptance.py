"""Acceptance suite.

Each criterion is a ``check_*`` function returning ``(passed, detail)`` (or
``None`` when its input data are missing).  Under pytest one verdict line
per criterion is collected and printed in the terminal summary; running
``python tests/test_acceptance.py`` prints the same lines directly.

Criteria 6-9 run the full experiment on the 15-D synthetic target and take
tens of minutes on one core.  Criteria 10-12 need the UF6 data file; point
``HDMRGP_UF6_DATA`` at it to enable them.  ``HDMRGP_ACCEPTANCE_DIR`` keeps
the run artifacts of criteria 6-9 (a temporary directory is used otherwise).
"""

from __future__ import annotations

import functools
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.special import gamma, kv
from scipy.stats import qmc

from hdmrgp.gpr import log_marginal_likelihood, predict_mean, predict_variance, train
from hdmrgp.hdmr import component, fit_additive
from hdmrgp.hypertune import rmse
from hdmrgp.kernels import FAMILIES, additive_spec, build_gram, eval_kernel, full_spec, profile
from hdmrgp.pipeline import ExperimentConfig, build_dataset, fit_reference, run_pipeline
from hdmrgp.sampling import SobolStream, load_dataset, sobol_next, split

SEED = 20221014

# desk-scale reproduction settings
D_SYN = 15
M_MAIN = 5000
SPLITS_MAIN = (M_MAIN, 5000, 40000)
M_STABILITY = (500, 1000, 5000)
SUITE_SEEDS = range(10)
SUITE_SPLITS = (1000, 1000, 10000)


def _rng(k: int) -> np.random.Generator:
    return np.random.default_rng([SEED, k])


def _points(rng, M, D):
    """Uniform points in [-1, 1]^D with no near-duplicates."""
    while True:
        X = rng.uniform(-1, 1, size=(M, D))
        if M < 2:
            return X
        d = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
        if d[np.triu_indices(M, 1)].min() > 0.1 * M ** (-1.0 / D):
            return X


def _nn_spacing(X) -> float:
    d = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def _random_spec(rng, D, log_length):
    family = FAMILIES[rng.integers(len(FAMILIES))]
    if D > 1 and rng.random() < 0.5:
        return additive_spec(D, log_length, family)
    return full_spec(D, log_length, family)


def _relerr(a, b) -> float:
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), np.finfo(float).tiny))


# ---------------------------------------------------------------------------
# property-based core
# ---------------------------------------------------------------------------

def check_1():
    """Interpolation at delta = 0 on 50 random instances."""
    rng = _rng(1)
    worst, unstable = 0.0, 0
    for _ in range(50):
        M, D = int(rng.integers(2, 31)), int(rng.integers(1, 6))
        X = _points(rng, M, D)
        f = rng.normal(size=M)
        spec = _random_spec(rng, D, math.log(_nn_spacing(X) * rng.uniform(0.3, 1.0)))
        m = train(spec, X, f, 0.0)
        if not m.stable:
            unstable += 1
            continue
        worst = max(worst, float(np.linalg.norm(predict_mean(m, X) - f) / np.linalg.norm(f)))
    ok = unstable == 0 and worst <= 1e-7
    return ok, f"max relative residual {worst:.2e} (tol 1e-7), unstable instances {unstable}/50"


def _dense_oracle(spec, X, f, delta, Xq):
    M = X.shape[0]
    K = np.array([[eval_kernel(spec, a, b) for b in X] for a in X]) + delta * np.eye(M)
    Kinv = np.linalg.inv(K)
    Ks = np.array([[eval_kernel(spec, q, b) for b in X] for q in Xq])
    mean = Ks @ Kinv @ f
    var = np.array([eval_kernel(spec, q, q) for q in Xq]) - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    _, logdet = np.linalg.slogdet(K)
    lml = -0.5 * logdet - 0.5 * f @ Kinv @ f - 0.5 * M * math.log(2 * math.pi)
    return mean, var, lml


def check_2():
    """Dense-inverse oracle agreement and matrix form vs explicit basis sum."""
    rng = _rng(2)
    e_mean = e_var = e_lml = e_sum = 0.0
    n = 0
    for M in range(1, 21):
        for _ in range(8):
            D = int(rng.integers(1, 6))
            X = _points(rng, M, D)
            f = rng.normal(size=M)
            delta = 10.0 ** rng.uniform(-3, 0)
            spec = _random_spec(rng, D, rng.uniform(-1.0, 1.0))
            Xq = rng.uniform(-1.2, 1.2, size=(10, D))
            m = train(spec, X, f, delta)
            mean, var, lml = _dense_oracle(spec, X, f, delta, Xq)
            p = predict_mean(m, Xq)
            e_mean = max(e_mean, _relerr(p, mean))
            e_var = max(e_var, _relerr(predict_variance(m, Xq), var))
            e_lml = max(e_lml, _relerr(log_marginal_likelihood(m), lml))
            explicit = np.array([sum(c * eval_kernel(spec, q, x) for c, x in zip(m.coefficients, X)) for q in Xq])
            e_sum = max(e_sum, _relerr(p, explicit))
            n += 1
    ok = max(e_mean, e_var, e_lml) <= 1e-9 and e_sum <= 1e-10
    return ok, (f"{n} instances M<=20: mean {e_mean:.1e}, variance {e_var:.1e}, lml {e_lml:.1e} (tol 1e-9); "
                f"matrix vs summed basis {e_sum:.1e} (tol 1e-10)")


def _matern_bessel(r, length, nu):
    u = np.sqrt(2 * nu) * np.asarray(r) / length
    with np.errstate(invalid="ignore"):
        v = 2 ** (1 - nu) / gamma(nu) * u ** nu * kv(nu, u)
    return np.where(u == 0, 1.0, v)


def check_3():
    """Symmetry, PSD, D=1 additive = full, Matern 1/2 closed form; 100 cases each."""
    rng = _rng(3)
    fails = []
    worst_psd = 0.0
    for _ in range(100):
        M, D = int(rng.integers(2, 41)), int(rng.integers(1, 7))
        X = rng.uniform(-2, 2, size=(M, D))
        K = build_gram(_random_spec(rng, D, rng.uniform(-2, 2)), X).values
        if not np.array_equal(K, K.T):
            fails.append("symmetry")
        w = np.linalg.eigvalsh(K)
        worst_psd = min(worst_psd, w.min() / w.max())
        if w.min() < -1e-9 * w.max():
            fails.append("psd")
    worst_id = 0.0
    for _ in range(100):
        M, l, fam = int(rng.integers(2, 41)), rng.uniform(-2, 2), FAMILIES[rng.integers(len(FAMILIES))]
        X = rng.uniform(-2, 2, size=(M, 1))
        Ka = build_gram(additive_spec(1, l, fam), X).values
        Kf = build_gram(full_spec(1, l, fam), X).values
        direct = profile((X - X.T) ** 2, np.exp(l), fam)
        if not np.array_equal(Ka, Kf):
            fails.append("additive-identity")
        worst_id = max(worst_id, float(np.abs(Ka - direct).max()))
    if worst_id > 1e-14:
        fails.append("additive-identity")
    worst_m12 = 0.0
    for _ in range(100):
        l = rng.uniform(-2, 2)
        r = np.concatenate([[0.0], rng.exponential(np.exp(l), size=30)])
        got = profile(r ** 2, np.exp(l), "matern12")
        worst_m12 = max(worst_m12, _relerr(got, np.exp(-r / np.exp(l))),
                        _relerr(got, _matern_bessel(r, np.exp(l), 0.5)))
    if worst_m12 > 1e-12:
        fails.append("matern12")
    ok = not fails
    return ok, (f"min eig/max {worst_psd:.1e} (tol -1e-9), additive = full bit-exact, vs direct profile {worst_id:.1e}, "
                f"matern 1/2 closed form rel {worst_m12:.1e}; failed: {sorted(set(fails)) or 'none'}")


def check_4():
    """Component functions sum to the additive prediction on 1,000 points."""
    rng = _rng(4)
    D, M = 6, 300
    X = rng.uniform(-1, 1, size=(M, D))
    f = np.sin(3 * X).sum(1) + 0.3 * X[:, 0] * X[:, 1]
    model = fit_additive(X, f, -0.5, 1e-4)
    Xq = rng.uniform(-1, 1, size=(1000, D))
    pred = predict_mean(model.base, Xq)
    total = sum(component(model, i, Xq[:, i]) for i in range(D))
    err = float(np.abs(total - pred).max() / max(1.0, np.abs(pred).max()))
    return err <= 1e-10, f"max |sum of components - prediction| / max(1, |prediction|) = {err:.1e} (tol 1e-10)"


def _box_discrepancy(P, bins=16):
    H, _, _ = np.histogram2d(P[:, 0], P[:, 1], bins=bins, range=[[0, 1], [0, 1]])
    C = H.cumsum(0).cumsum(1) / P.shape[0]
    g = np.arange(1, bins + 1) / bins
    return float(np.abs(C - np.outer(g, g)).max())


def check_5():
    """Sobol exactness against scipy and discrepancy against pseudorandom."""
    exact = True
    for D in range(1, 7):
        ref = qmc.Sobol(D, scramble=False).random_base2(5)
        exact &= np.array_equal(sobol_next(SobolStream(D, skip_zero=False), 16), ref[:16])
        exact &= np.array_equal(sobol_next(SobolStream(D), 16), ref[1:17])
    sob = _box_discrepancy(sobol_next(SobolStream(2), 256))
    wins = sum(sob < _box_discrepancy(np.random.default_rng(s).random((256, 2))) for s in range(100))
    ok = exact and wins >= 95
    return ok, f"first 16 points D=1..6 exact: {exact}; Sobol wins {wins}/100 (need >= 95) at N=256"


# ---------------------------------------------------------------------------
# desk-scale reproduction on the synthetic 15-D target
# ---------------------------------------------------------------------------

def _workdir() -> Path:
    d = os.environ.get("HDMRGP_ACCEPTANCE_DIR")
    return Path(d) if d else Path(tempfile.mkdtemp(prefix="hdmrgp-acceptance-"))


@functools.lru_cache(maxsize=None)
def _workroot() -> Path:
    return _workdir()


def _main_config(**kw) -> ExperimentConfig:
    base = dict(synthetic={"D": D_SYN, "seed": 0, "n": 50000}, splits=SPLITS_MAIN, seed=0,
                out=str(_workroot() / "main"))
    base.update(kw)
    return ExperimentConfig(**base)


@functools.lru_cache(maxsize=None)
def _main_run() -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return run_pipeline(_main_config())


def check_6():
    """d=1 reference: train/test within 10%, test rmse stable across M."""
    s = _main_run()
    tr, te = s["reference"]["metrics"]["train"]["rmse"], s["reference"]["metrics"]["test"]["rmse"]
    within = abs(te - tr) <= 0.1 * min(tr, te)
    tests = {M_MAIN: te}
    for M in M_STABILITY:
        if M == M_MAIN:
            continue
        cfg = _main_config(splits=(M, 5000, 40000))
        ds = build_dataset(cfg)
        ref, _, _ = fit_reference(ds, cfg)
        Xt, yt = ds.part("test")
        tests[M] = rmse(ref(Xt), yt)
    spread = (max(tests.values()) - min(tests.values())) / min(tests.values())
    ok = within and spread <= 0.1
    per_m = ", ".join(f"M={M}: {v:.2f}" for M, v in sorted(tests.items()))
    return ok, (f"M={M_MAIN} train {tr:.2f} test {te:.2f} (gap {abs(te - tr) / min(tr, te):.1%}, tol 10%); "
                f"test rmse {per_m} (spread {spread:.1%}, tol 10%)")


def check_7():
    """Free (l, delta) MLE: test/train >= 10 and test >= 5x the guarded test rmse."""
    s = _main_run()
    mle, g = s["final"]["mle_free"], s["final"]["guarded"]
    if not mle["stable"]:
        return False, f"MLE optimum l={mle['l']:.3f} log10 delta={mle['log10_delta']:.3f} is unstable"
    tr, te = mle["metrics"]["train"]["rmse"], mle["metrics"]["test"]["rmse"]
    gte = g["metrics"]["test"]["rmse"]
    ratio, factor = te / tr, te / gte
    ok = ratio >= 10 and factor >= 5
    fx = s["final"].get("mle_fixed_delta", {})
    extra = ""
    if fx.get("stable"):
        extra = (f"; fixed-delta MLE (info) l={fx['l']:.3f} train {fx['metrics']['train']['rmse']:.3g} "
                 f"test {fx['metrics']['test']['rmse']:.3g}")
    return ok, (f"MLE l={mle['l']:.3f} log10 delta={mle['log10_delta']:.3f}: train {tr:.2f} test {te:.2f}, "
                f"test/train {ratio:.2f} (need >= 10), test/guarded test {factor:.1f} (need >= 5){extra}")


def check_8():
    """Guarded selection: ratio <= 2 and real test within 1.5x of the oracle best."""
    s = _main_run()
    g, sel, o = s["final"]["guarded"], s["guarded"], s["oracle_best"]
    te = g["metrics"]["test"]["rmse"]
    ok = sel["guard_ratio"] <= 2 and te <= 1.5 * o["test_rmse"]
    return ok, (f"guarded l={g['l']} log10 delta={g['log10_delta']}: guard ratio {sel['guard_ratio']:.2f} "
                f"(cap 2), real test {te:.2f} vs oracle best {o['test_rmse']:.2f} at l={o['l']} "
                f"log10 delta={o['log10_delta']} (x{te / o['test_rmse']:.2f}, tol 1.5)")


def check_9():
    """Completeness error of the guarded choice below the MLE choice on 10 seeds."""
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for s in SUITE_SEEDS:
            N = sum(SUITE_SPLITS)
            cfg = ExperimentConfig(synthetic={"D": D_SYN, "seed": s, "n": N}, splits=SUITE_SPLITS, seed=s,
                                   nref=10000, n_probe=10000, mle_fixed_logdelta=None, oracle_scan=False,
                                   save_models=False, out=str(_workroot() / f"suite_{s}"))
            f = run_pipeline(cfg)["final"]
            rows.append((s, f["guarded"]["completeness_error"], f["mle_free"]["completeness_error"]))
    wins = sum(g < m for _, g, m in rows)
    detail = "; ".join(f"seed {s}: {g:.3g} < {m:.3g}" if g < m else f"seed {s}: {g:.3g} >= {m:.3g}"
                       for s, g, m in rows)
    return wins == len(rows), f"{wins}/{len(rows)} seeds ordered (M={SUITE_SPLITS[0]}): {detail}"


# ---------------------------------------------------------------------------
# conditional on the UF6 data file
# ---------------------------------------------------------------------------

def _uf6_path():
    p = os.environ.get("HDMRGP_UF6_DATA")
    return Path(p) if p and Path(p).is_file() else None


@functools.lru_cache(maxsize=None)
def _uf6():
    ds = load_dataset(_uf6_path())
    return split(ds, 5000, 5000, 40000, seed=0)


def _within(got, want, tol):
    return abs(got - want) <= tol * abs(want)


def check_10():
    """Full GPR at l=4.5, log10 delta=-6: train 26.7 / test 47.8 within 10%."""
    if _uf6_path() is None:
        return None
    ds = _uf6()
    X, y = ds.part("train")
    m = train(full_spec(ds.D, 4.5), X, y, 1e-6)
    tr, te = rmse(predict_mean(m, X), y), rmse(predict_mean(m, ds.part("test")[0]), ds.part("test")[1])
    ok = m.stable and _within(tr, 26.7, 0.1) and _within(te, 47.8, 0.1)
    return ok, f"train {tr:.2f} (26.7 +-10%), test {te:.2f} (47.8 +-10%)"


def _uf6_reference():
    ds = _uf6()
    X, y = ds.part("train")
    return ds, fit_additive(X, y, 3.0, 1e-4)


def check_11():
    """d=1 HDMR at l=3.0, log10 delta=-4: train 231.5 / test 235.3 within 5%."""
    if _uf6_path() is None:
        return None
    ds, ref = _uf6_reference()
    X, y = ds.part("train")
    Xt, yt = ds.part("test")
    tr, te = rmse(predict_mean(ref.base, X), y), rmse(predict_mean(ref.base, Xt), yt)
    ok = _within(tr, 231.5, 0.05) and _within(te, 235.3, 0.05)
    return ok, f"train {tr:.2f} (231.5 +-5%), test {te:.2f} (235.3 +-5%)"


def check_12():
    """Full GPR refit to the reference at l=4.5, delta=1e-6: train 1.2 / test 1.7 within 25%."""
    if _uf6_path() is None:
        return None
    ds, ref = _uf6_reference()
    X, _ = ds.part("train")
    Xt, _ = ds.part("test")
    fx, ft = predict_mean(ref.base, X), predict_mean(ref.base, Xt)
    m = train(full_spec(ds.D, 4.5), X, fx, 1e-6)
    tr, te = rmse(predict_mean(m, X), fx), rmse(predict_mean(m, Xt), ft)
    ok = m.stable and _within(tr, 1.2, 0.25) and _within(te, 1.7, 0.25)
    return ok, f"train {tr:.3f} (1.2 +-25%), test {te:.3f} (1.7 +-25%)"


CHECKS = {n: globals()[f"check_{n}"] for n in range(1, 13)}


def _line(n, result) -> str:
    if result is None:
        return f"criterion {n:2d}: SKIP (set HDMRGP_UF6_DATA to the UF6 data file)"
    ok, detail = result
    return f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} | {CHECKS[n].__doc__.strip()} | {detail}"


@pytest.mark.parametrize("n", [pytest.param(n, marks=pytest.mark.slow) if n >= 6 else n for n in CHECKS])
def test_criterion(n, acceptance_lines):
    result = CHECKS[n]()
    line = _line(n, result)
    acceptance_lines.append(line)
    print(line)
    if result is None:
        pytest.skip("UF6 data file not supplied")
    assert result[0], line


def main(argv=None) -> int:
    wanted = [int(a) for a in (argv or [])] or list(CHECKS)
    failed = 0
    for n in wanted:
        result = CHECKS[n]()
        print(_line(n, result), flush=True)
        failed += result is not None and not result[0]
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
