import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_sample
from oracles import local_linear_cdf, nested_wls
from lpcond.design import DegenerateDesign, EstimatorConfig, EvalPoint, Sample, SupportModel
from lpcond.estimator import (
    check_estimate,
    density_config,
    empirical_cdf_y,
    estimate,
    estimate_cdf,
    estimate_density,
    fit_grid,
    local_projection,
    min_effective_count,
)
from lpcond.simulation import TruncatedNormalDGP, UniformSquareDGP, sample_dgp


def test_matches_nested_wls_oracle():
    rng = np.random.default_rng(1)
    s = Sample(rng.uniform(0, 1, 200), rng.uniform(0, 1, 200))
    cfg = EstimatorConfig(p=2, q=1, mu=1, h=0.3)
    ev = EvalPoint(0.5, 0.5)
    assert estimate(s, ev, cfg).value == pytest.approx(nested_wls(s, ev, cfg), rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-50, 50), b=st.floats(-50, 50))
def test_shift_invariance(seed, c, b):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, 150)
    cfg = EstimatorConfig(p=2, mu=1, h=0.5)
    base = estimate(s, EvalPoint(0.5, 0.0), cfg).value
    moved = estimate(Sample(s.y + c, s.x + b), EvalPoint(0.5 + c, b), cfg).value
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.05, 20), theta=st.integers(0, 1))
def test_scale_equivariance(seed, a, theta):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, 150)
    cfg = density_config(theta, p=2 + theta, h=0.5)
    base = estimate(s, EvalPoint(0.5, 0.0), cfg).value
    scaled = estimate(Sample(a * s.y, a * s.x), EvalPoint(0.5 * a, 0.0), cfg.with_(h=0.5 * a)).value
    assert scaled == pytest.approx(base * a ** -(1 + theta), rel=1e-9, abs=1e-12)


def test_density_order_precondition():
    with pytest.raises(ValueError):
        density_config(theta=2, p=2)
    s = random_sample(np.random.default_rng(0), 50)
    with pytest.raises(ValueError):
        estimate_density(s, EvalPoint(0.5, 0.0), theta=2, p=2, h=0.5)


def test_density_near_truth_large_n():
    dgp = TruncatedNormalDGP()
    s = sample_dgp(dgp, 20000, 7)
    for y in (-0.5, 0.0, 0.5):
        est = estimate_density(s, EvalPoint(y, 0.0), theta=0, p=2, h=0.35).value
        assert est == pytest.approx(dgp.truth(y, 0.0), abs=0.03)


def test_density_derivative_at_mode_is_near_zero():
    dgp = TruncatedNormalDGP()
    vals = [estimate_density(sample_dgp(dgp, 2000, (3, r)), EvalPoint(0.0, 0.0),
                             theta=1, p=3, h=0.6).value for r in range(30)]
    mc_se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals)) < 2.5 * mc_se


def test_uniform_square_boundary_density():
    s = sample_dgp(UniformSquareDGP(), 4000, 2)
    for y in (0.0, 0.5, 1.0):
        assert estimate_density(s, EvalPoint(y, 0.5), p=2, h=0.3).value == pytest.approx(1.0, abs=0.15)


def test_empty_window_raises_degenerate():
    s = random_sample(np.random.default_rng(0), 50)
    with pytest.raises(DegenerateDesign):
        estimate(s, EvalPoint(10.0, 0.0), EstimatorConfig(p=2, mu=1, h=0.2))


def test_estimate_cdf_extremes_with_local_constant():
    s = random_sample(np.random.default_rng(4), 100)
    cfg = EstimatorConfig(p=0, q=0, mu=0, h=0.4)
    assert estimate_cdf(s, EvalPoint(s.y.max() + 1, 0.0), cfg).value == 1.0
    assert estimate_cdf(s, EvalPoint(s.y.min() - 1, 0.0), cfg).value == 0.0


def test_estimate_cdf_matches_direct_wls():
    s = random_sample(np.random.default_rng(8), 100)
    cfg = EstimatorConfig(p=1, q=1, mu=0, h=0.5)
    ev = EvalPoint(0.4, 0.1)
    assert estimate_cdf(s, ev, cfg).value == pytest.approx(local_linear_cdf(s, ev, cfg), rel=1e-10)


def test_estimate_cdf_clip():
    s = random_sample(np.random.default_rng(9), 60)
    cfg = EstimatorConfig(p=1, q=2, mu=0, h=0.6)
    vals = [estimate_cdf(s, EvalPoint(y, 0.9), cfg, clip=True).value for y in np.linspace(-1, 2, 9)]
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_empirical_cdf_y():
    s = Sample([0.1, 0.2, 0.2, 0.5], [0, 0, 0, 0])
    assert empirical_cdf_y(s, 0.2) == 0.75
    assert empirical_cdf_y(s, 0.0) == 0.0


def test_check_estimate_with_empirical_g_equals_estimate():
    s = random_sample(np.random.default_rng(12), 120)
    cfg = EstimatorConfig(p=2, mu=1, h=0.5)
    ev = EvalPoint(0.3, 0.2)
    got = check_estimate(s, ev, cfg, SupportModel.empirical(s)).value
    assert got == pytest.approx(estimate(s, ev, cfg).value, rel=1e-10)


def test_check_estimate_uniform_g_consistent():
    s = sample_dgp(UniformSquareDGP(), 8000, 4)
    cfg = EstimatorConfig(p=2, mu=1, h=0.3)
    sup = SupportModel((0, 1), [(0, 1)])
    for y in (0.0, 0.5, 1.0):
        assert check_estimate(s, EvalPoint(y, 0.5), cfg, sup).value == pytest.approx(1.0, abs=0.1)


def test_check_estimate_empty_window():
    s = Sample([0.1, 0.2, 0.3], [0.0, 0.1, 0.2])
    cfg = EstimatorConfig(p=1, q=0, mu=1, h=0.05)
    res = check_estimate(s, EvalPoint(0.1, 5.0), cfg, SupportModel((0, 1), [(-1, 6)]))
    assert res.value == 0.0 and res.diagnostics["empty_window"]


def test_local_projection_weights_reproduce_value():
    s = random_sample(np.random.default_rng(13), 150)
    cfg = EstimatorConfig(p=2, mu=1, h=0.5)
    lp = local_projection(s, EvalPoint(0.5, 0.0), cfg)
    brute = sum(lp.a[j] * lp.b[i] for i in range(s.n) for j in range(s.n) if s.y[i] <= s.y[j]) / s.n**2
    assert lp.value == pytest.approx(brute, rel=1e-12)


def test_fit_grid_flags_degenerate_points():
    s = random_sample(np.random.default_rng(14), 200)
    cfg = EstimatorConfig(p=2, mu=1, h=0.3)
    fit = fit_grid(s, ([0.5, 0.5, 9.0], [0.0]), cfg, min_effective_count(cfg, 1))
    assert fit.usable.tolist() == [True, True, False]
    assert 2 in fit.errors and np.isnan(fit.values[2])
    assert not np.any(fit.a[2])
    assert min_effective_count(cfg, 1) == 6
