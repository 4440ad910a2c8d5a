import math

import numpy as np
import pytest
from scipy import integrate

from lpcond.simulation import (
    GridSpec,
    NormalMixtureDGP,
    StudyFailed,
    StudyOptions,
    TruncatedNormalDGP,
    UniformSquareDGP,
    make_dgp,
    run_coverage_study,
    sample_dgp,
    truth_density,
)

DGP = TruncatedNormalDGP()


def test_correlation_and_validation():
    assert DGP.correlation == pytest.approx(-0.05)
    with pytest.raises(ValueError):
        TruncatedNormalDGP(var=1.0, cov=1.5)


def test_acceptance_probability():
    assert DGP.acceptance_probability() == pytest.approx(0.271, abs=0.001)


def test_large_sample_symmetric_and_inside_box():
    s = sample_dgp(DGP, 1_000_000, 0)
    assert s.n == 1_000_000
    assert np.all(np.abs(s.y) <= 1) and np.all(np.abs(s.x) <= 1)
    for v in (s.y, s.x[:, 0]):
        assert abs(v.mean()) < 3 * v.std() / math.sqrt(v.size)


def test_sampling_deterministic():
    a, b = sample_dgp(DGP, 500, (4, 2)), sample_dgp(DGP, 500, (4, 2))
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, sample_dgp(DGP, 500, (4, 3)).y)


def test_truth_point_value():
    s = math.sqrt(1.995)
    phi0 = 1 / math.sqrt(2 * math.pi)
    Z = math.erf(1 / (s * math.sqrt(2)))
    assert truth_density(DGP, 0.0, 0.0) == pytest.approx(phi0 / (s * Z), rel=1e-12)
    assert truth_density(DGP, 0.0, 0.0) == pytest.approx(0.542075, abs=1e-6)


def test_truth_symmetric_at_x0():
    ys = np.linspace(0, 1, 11)
    np.testing.assert_allclose(DGP.truth(ys, 0.0), DGP.truth(-ys, 0.0), rtol=1e-14)


@pytest.mark.parametrize("x", [0.0, 0.8, 1.0])
def test_truth_integrates_to_one(x):
    val, _ = integrate.quad(lambda y: truth_density(DGP, y, x), -1, 1, epsabs=1e-13)
    assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("dgp", [TruncatedNormalDGP(), NormalMixtureDGP()])
def test_truth_derivative_matches_finite_difference(dgp):
    lo, hi = dgp.y_support
    for y in np.linspace(lo + 0.1, hi - 0.1, 5):
        eps = 1e-6
        fd = (truth_density(dgp, y + eps, 0.5) - truth_density(dgp, y - eps, 0.5)) / (2 * eps)
        assert truth_density(dgp, y, 0.5, theta=1) == pytest.approx(fd, abs=1e-6)


def test_truth_outside_box_errors():
    with pytest.raises(ValueError):
        truth_density(DGP, 1.5, 0.0)
    with pytest.raises(ValueError):
        truth_density(UniformSquareDGP(), 0.5, -0.1)


def test_mixture_increasing_and_normalized():
    m = NormalMixtureDGP()
    ys = np.linspace(0, 1, 50)
    for x in (0.0, 0.5, 1.0):
        assert np.all(m.truth(ys, np.full(50, x), 1) > 0)
        val, _ = integrate.quad(lambda y: float(m.truth(y, x)), 0, 1, epsabs=1e-12)
        assert val == pytest.approx(1.0, abs=1e-10)
    s = sample_dgp(m, 2000, 1)
    assert s.y.min() >= 0 and s.y.max() <= 1 and s.x.min() >= 0 and s.x.max() <= 1


def test_uniform_truth():
    u = UniformSquareDGP()
    np.testing.assert_array_equal(u.truth(np.array([0.0, 0.7]), np.array([0.1, 1.0])), [1.0, 1.0])
    assert truth_density(u, 0.3, 0.3, theta=1) == 0.0


def test_make_dgp():
    assert isinstance(make_dgp("mixture"), NormalMixtureDGP)
    with pytest.raises(ValueError):
        make_dgp("cauchy")


SMALL = GridSpec.linspace(0, 1, 6, 0.0)
OPTS = StudyOptions(draws=1000)


def test_single_replication_report():
    r = run_coverage_study(DGP, 800, 1, SMALL, OPTS, seed=5)
    assert r.reps == 1 and r.h.size == 1
    for m in ("WBC", "RBC"):
        assert r.table[m]["uniform_coverage"] == float(r.uniform[m][0])
        np.testing.assert_array_equal(r.per_point[m]["coverage"] == 1.0,
                                      r.per_point[m]["coverage"].astype(bool))
        assert 0 <= r.table[m]["pointwise_coverage"] <= 1


def test_study_deterministic_across_threads():
    a = run_coverage_study(DGP, 600, 4, SMALL, OPTS, seed=8, threads=1)
    b = run_coverage_study(DGP, 600, 4, SMALL, OPTS, seed=8, threads=3)
    assert a.to_json(include_clock=False) == b.to_json(include_clock=False)
    assert a.to_csv() == b.to_csv()


def test_replication_subset_reproducible():
    full = run_coverage_study(DGP, 600, 3, SMALL, OPTS, seed=8)
    first = run_coverage_study(DGP, 600, 1, SMALL, OPTS, seed=8)
    assert full.h[0] == first.h[0]


def test_study_fails_when_most_replications_fail():
    bad = GridSpec((0.0, 5.0), 0.0)
    with pytest.raises(StudyFailed):
        run_coverage_study(DGP, 300, 2, bad, OPTS, seed=1)


def test_report_serialization():
    r = run_coverage_study(DGP, 600, 2, SMALL, OPTS, seed=2)
    lines = r.to_csv().splitlines()
    assert lines[0] == "method,h,bias,se,pointwise_coverage,uniform_coverage,avg_width"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["WBC", "RBC"]
    assert "wall_clock" in r.to_dict() and "wall_clock" not in r.to_dict(include_clock=False)
    assert "RBC" in r.format_table()
    with pytest.raises(ValueError):
        run_coverage_study(DGP, 600, 0, SMALL, OPTS)
