import numpy as np
import pytest

from hdmrgp.gpr import predict_mean, train
from hdmrgp.hdmr import (
    AdditiveModel,
    ReferenceFunction,
    component,
    evaluate_reference,
    fit_additive,
    reference_dataset,
    synthesize_dataset,
)
from hdmrgp.kernels import full_spec
from hdmrgp.sampling import SobolStream, sobol_next


def sin_sum(X):
    return np.sin(X).sum(axis=1)


@pytest.fixture(scope="module")
def sine_model():
    X = sobol_next(SobolStream(5), 500)
    return fit_additive(X, sin_sum(X), 0.0, 1e-6)


def test_one_dimension_matches_full_fit(rng):
    X = rng.uniform(-2, 2, size=(30, 1))
    f = np.cos(2 * X[:, 0])
    a = fit_additive(X, f, -0.5, 1e-6)
    full = train(full_spec(1, -0.5), X, f, 1e-6)
    Xq = np.linspace(-2, 2, 50)[:, None]
    np.testing.assert_allclose(predict_mean(a.base, Xq), predict_mean(full, Xq), rtol=1e-12)
    np.testing.assert_allclose(component(a, 0, Xq[:, 0]), predict_mean(full, Xq), rtol=1e-12)


def test_additive_target_recovered(sine_model):
    Xq = sobol_next(SobolStream(5, offset=10_000), 10_000)
    y = sin_sum(Xq)
    err = np.sqrt(np.mean((predict_mean(sine_model.base, Xq) - y) ** 2))
    assert err < 0.01 * y.std()


def test_components_sum_to_prediction(sine_model, rng):
    Xq = rng.uniform(0, 1, size=(1000, 5))
    parts = sum(component(sine_model, i, Xq[:, i]) for i in range(5))
    p = predict_mean(sine_model.base, Xq)
    np.testing.assert_allclose(parts, p, rtol=1e-10, atol=1e-10 * np.abs(p).max())


def test_dummy_coordinate_has_flat_component():
    X = sobol_next(SobolStream(3), 400)
    f = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    m = fit_additive(X, f, -0.5, 1e-6)
    g = np.linspace(0, 1, 101)
    c2 = component(m, 2, g)
    assert np.ptp(c2) < 0.05 * np.ptp(f)
    with pytest.raises(IndexError):
        component(m, 3, g)


def test_reference_equals_predict_mean(sine_model, rng):
    ref = ReferenceFunction(sine_model, {"l": 0.0})
    Xq = rng.uniform(0, 1, size=(1000, 5))
    np.testing.assert_array_equal(evaluate_reference(ref, Xq), predict_mean(sine_model.base, Xq))


def test_reference_interpolates_at_zero_delta(rng):
    X = rng.uniform(-1, 1, size=(20, 3))
    f = sin_sum(X)
    ref = ReferenceFunction(fit_additive(X, f, -0.5, 0.0))
    np.testing.assert_allclose(evaluate_reference(ref, X), f, rtol=1e-8, atol=1e-8 * np.linalg.norm(f))


def test_rejects_non_additive_base(rng):
    X = rng.uniform(size=(5, 2))
    with pytest.raises(ValueError):
        AdditiveModel(train(full_spec(2), X, X[:, 0], 1e-3))


def test_synthesize_deterministic_and_replayable(sine_model):
    ref = ReferenceFunction(sine_model, {"id": "sine"})
    a = synthesize_dataset(ref, 3000, SobolStream(5, offset=1 << 20))
    b = synthesize_dataset(ref, 3000, SobolStream(5, offset=1 << 20))
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.y, evaluate_reference(ref, a.X_norm))
    assert a.provenance == "synthetic-from-reference"
    lo, hi = sine_model.base.X_train.min(0), sine_model.base.X_train.max(0)
    assert np.all(a.X_norm >= lo) and np.all(a.X_norm <= hi)
    with pytest.raises(ValueError):
        synthesize_dataset(ref, 0, SobolStream(5))
    with pytest.raises(ValueError):
        synthesize_dataset(ref, 10, SobolStream(4))


def test_synthetic_large_15d_replay():
    X = sobol_next(SobolStream(15), 300)
    ref = ReferenceFunction(fit_additive(X, (X ** 2).sum(1), 0.5, 1e-5))
    ds = synthesize_dataset(ref, 40_000, SobolStream(15, offset=1 << 20))
    np.testing.assert_array_equal(ds.y, evaluate_reference(ref, ds.X_norm))


def test_synthetic_variance_profile_matches_components():
    D = 4
    X = sobol_next(SobolStream(D), 200)
    w = np.array([3.0, 1.5, 0.8, 0.4])
    f = (np.sin(2 * X) * w).sum(1)
    m = fit_additive(X, f, -0.7, 1e-6)
    ref = ReferenceFunction(m)
    N = 40_000
    ds = synthesize_dataset(ref, N, SobolStream(D, offset=1 << 20))
    # first-order variances of the labels by pick-freeze on independent uniform draws
    r = np.random.default_rng(7)
    lo, hi = X.min(0), X.max(0)
    A = lo + (hi - lo) * r.random((N, D))
    B = lo + (hi - lo) * r.random((N, D))
    fA, fB = ref(A), ref(B)
    V_mc = []
    for i in range(D):
        ABi = A.copy()
        ABi[:, i] = B[:, i]
        V_mc.append(np.mean(fB * (ref(ABi) - fA)))
    V_comp = np.array([np.var(component(m, i, ds.X_norm[:, i])) for i in range(D)])
    V_mc = np.array(V_mc)
    big = V_comp >= 0.05 * V_comp.sum()
    np.testing.assert_allclose(V_mc[big], V_comp[big], rtol=0.05)
    np.testing.assert_allclose(V_mc, V_comp, atol=0.05 * V_comp.sum())
    assert np.var(ds.y) == pytest.approx(V_comp.sum(), rel=0.05)


def test_reference_dataset_layout(sine_model):
    ref = ReferenceFunction(sine_model)
    ds = reference_dataset(ref, 1000, SobolStream(5, offset=1 << 20))
    Xt, yt = ds.part("train")
    np.testing.assert_array_equal(Xt, sine_model.base.X_train)
    np.testing.assert_array_equal(yt, evaluate_reference(ref, Xt))
    assert ds.part("test")[0].shape == (1000, 5)
