"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest
from scipy import stats

from conftest import criterion
from oracles import brute_r_hat, fan_yao_tong, nested_wls
from lpcond.bandwidth import (
    BiasVarianceConstants,
    case_exponents,
    case_terms,
    mse_objective,
    mse_optimal_h,
    rot_imse_h,
)
from lpcond.cli_io import main
from lpcond.design import (
    EstimatorConfig,
    EvalPoint,
    Sample,
    SupportModel,
    c_hat_x,
    c_hat_y,
    integrated_matrices,
    r_hat,
    s_hat_x,
    s_hat_y,
    solve_design,
)
from lpcond.estimator import density_config, estimate, estimate_density, fit_grid
from lpcond.inference import (
    BandOptions,
    confidence_band,
    shape_test,
    simulate_sup_cv,
    spec_test,
    studentized_fit,
)
from lpcond.kernel_basis import MultiIndexBasis
from lpcond.simulation import (
    GridSpec,
    NormalMixtureDGP,
    StudyOptions,
    TruncatedNormalDGP,
    UniformSquareDGP,
    run_coverage_study,
    sample_dgp,
)

TN = TruncatedNormalDGP()


def _random_instance(rng):
    n = int(rng.integers(120, 301))
    d = int(rng.integers(1, 3))
    s = Sample(rng.uniform(0, 1, n), rng.uniform(0, 1, (n, d)))
    p = int(rng.integers(1, 4))
    mu = int(rng.integers(0, 2)) if p > 1 else 1
    cfg = EstimatorConfig(p=p, q=int(rng.integers(0, 3)), mu=mu, h=float(rng.uniform(0.45, 0.8)))
    ev = EvalPoint(float(rng.uniform(0.1, 0.9)), rng.uniform(0.2, 0.8, d))
    return s, ev, cfg


def test_criterion_01_nested_wls_oracle():
    with criterion(1, "closed form equals nested WLS oracle (30 instances, rel 1e-8, < 10 s)") as info:
        rng = np.random.default_rng(101)
        worst, t0 = 0.0, time.perf_counter()
        for _ in range(30):
            s, ev, cfg = _random_instance(rng)
            got = estimate(s, ev, cfg).value
            ref = nested_wls(s, ev, cfg)
            worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
        elapsed = time.perf_counter() - t0
        info["detail"] = f"max rel err {worst:.2e}, {elapsed:.1f} s"
        assert worst <= 1e-8
        assert elapsed < 10


def test_criterion_02_projection_identities():
    with criterion(2, "projection identities, empirical (20 samples) and integrated matrices") as info:
        rng = np.random.default_rng(202)
        worst = 0.0
        for _ in range(20):
            d, p, q = int(rng.integers(1, 3)), int(rng.integers(0, 4)), int(rng.integers(0, 3))
            s = Sample(rng.uniform(0, 1, 300), rng.uniform(-1, 1, (300, d)))
            cfg = EstimatorConfig(p=p, q=q, mu=0, h=0.9)
            ev = EvalPoint(float(rng.uniform(0.2, 0.8)), rng.uniform(-0.2, 0.2, d))
            Sy, Sx = s_hat_y(s, ev, cfg), s_hat_x(s, ev, cfg)
            for ell in range(p + 1):
                z, _ = solve_design(Sy, c_hat_y(s, ev, cfg, ell))
                worst = max(worst, np.max(np.abs(z - np.eye(p + 1)[ell])))
            basis = MultiIndexBasis(d, q)
            for m in basis.indices:
                z, _ = solve_design(Sx, c_hat_x(s, ev, cfg, m))
                worst = max(worst, np.max(np.abs(z - basis.unit(m))))
        sup = SupportModel((0, 1), [(0, 1)])
        cfg = EstimatorConfig(p=3, mu=1, h=0.3)
        flags = []
        for y0 in (0.5, 0.1, 0.0, 1.0):
            im = integrated_matrices(EvalPoint(y0, 0.5), cfg, sup)
            flags.append(im.y_boundary)
            for ell in range(cfg.p + 1):
                z, _ = solve_design(im.S_y, im.c_y[ell])
                worst = max(worst, np.max(np.abs(z - np.eye(cfg.p + 1)[ell])))
        info["detail"] = f"max abs err {worst:.1e}"
        assert flags == [False, True, True, True]
        assert worst <= 1e-9


@pytest.mark.slow
def test_criterion_03_coverage_study():
    with criterion(3, "desk coverage study: RBC in [0.86, 0.99], WBC < RBC, mean ROT h in [0.30, 0.46]") as info:
        hs = [rot_imse_h(sample_dgp(TN, 5000, (3003, r)), (np.linspace(0, 1, 20), [0.0]),
                         density_config(0, p=2)).h for r in range(50)]
        mean_h = float(np.mean(hs))
        rep = run_coverage_study(TN, 1000, 200, GridSpec.linspace(0, 1, 20, 0.0), StudyOptions(),
                                 seed=2026)
        wbc, rbc = rep.table["WBC"]["uniform_coverage"], rep.table["RBC"]["uniform_coverage"]
        info["detail"] = f"WBC {wbc:.3f}, RBC {rbc:.3f}, mean ROT h {mean_h:.3f}"
        print(rep.format_table())
        assert 0.30 <= mean_h <= 0.46
        assert 0.86 <= rbc <= 0.99
        assert wbc < rbc


def test_criterion_04_critical_value_oracle():
    with criterion(4, "critical values: G=1 -> 1.95996 +/- 0.02, G=4 alpha 0.10 -> 2.2262 +/- 0.03") as info:
        one = simulate_sup_cv(np.eye(1), 0.05, draws=100_000, seed=404).value
        four = simulate_sup_cv(np.eye(4), 0.10, draws=100_000, seed=405).value
        exact4 = stats.norm.ppf((1 + 0.9 ** 0.25) / 2)
        info["detail"] = f"G=1 {one:.4f}, G=4 {four:.4f}"
        assert abs(one - 1.95996) <= 0.02
        assert abs(exact4 - 2.2262) < 1e-4
        assert abs(four - 2.2262) <= 0.03


def test_criterion_05_prefix_sum_equals_double_sum():
    with criterion(5, "prefix-sum R-hat equals brute double sum (50 instances, rel 1e-12, < 5 s)") as info:
        rng = np.random.default_rng(505)
        instances = []
        for k in range(50):
            n = int(rng.integers(20, 80))
            d = int(rng.integers(1, 3))
            y = rng.uniform(0, 1, n)
            if k % 5 == 0:
                y = np.round(y, 1)  # ties in y
            s = Sample(y, rng.uniform(0, 1, (n, d)))
            cfg = EstimatorConfig(p=int(rng.integers(1, 4)), q=int(rng.integers(0, 3)), mu=1, h=0.6)
            instances.append((s, EvalPoint(0.5, np.full(d, 0.5)), cfg))
        t0 = time.perf_counter()
        fast = [r_hat(*inst) for inst in instances]
        elapsed = time.perf_counter() - t0
        worst = 0.0
        for R, inst in zip(fast, instances):
            B = brute_r_hat(*inst)
            worst = max(worst, np.max(np.abs(R - B)) / np.max(np.abs(B)))
        info["detail"] = f"max rel err {worst:.1e}, prefix sums {elapsed:.2f} s"
        assert worst <= 1e-12
        assert elapsed < 5


def test_criterion_06_boundary_adaptivity():
    with criterion(6, "uniform square at y=0: |mean - 1| < 0.1, interior-kernel oracle > 0.3") as info:
        u, h = UniformSquareDGP(), 0.3
        ours, fyt = [], []
        for r in range(50):
            s = sample_dgp(u, 5000, (606, r))
            ours.append(estimate_density(s, EvalPoint(0.0, 0.5), theta=0, p=2, h=h).value)
            fyt.append(fan_yao_tong(s, 0.0, 0.5, h))
        m_ours, m_fyt = float(np.mean(ours)), float(np.mean(fyt))
        info["detail"] = f"mean estimate {m_ours:.3f}, interior-kernel {m_fyt:.3f}"
        assert abs(m_ours - 1) < 0.1
        assert abs(m_fyt - 1) > 0.3


def test_criterion_07_consistency_ordering():
    with criterion(7, "median sup-grid error strictly decreases over n = 500, 2000, 8000") as info:
        ys = np.linspace(-0.5, 0.5, 11)
        truth = TN.truth(ys, np.zeros(ys.size))
        med = []
        for n in (500, 2000, 8000):
            # MSE-rate bandwidth for p=2, d=1: h proportional to n^(-1/6)
            cfg = density_config(0, p=2, h=1.57 * n ** (-1 / 6))
            errs = [np.max(np.abs(fit_grid(sample_dgp(TN, n, (707, n, r)), (ys, [0.0]), cfg).values
                                  - truth)) for r in range(30)]
            med.append(float(np.median(errs)))
        info["detail"] = ", ".join(f"{m:.4f}" for m in med)
        assert med[0] > med[1] > med[2]


def test_criterion_08_first_order_conditions():
    with criterion(8, "MSE stationarity for cases 1-10 (1e-8) and exact n-homogeneity") as info:
        rng = np.random.default_rng(808)
        cfg = EstimatorConfig(p=3, q=2, mu=1)
        worst_foc, worst_hom = 0.0, 0.0
        for case in range(1, 11):
            a, b = case_exponents(case, cfg.p, cfg.q, cfg.mu, (0,), 1)
            for _ in range(5):
                consts = {t: float(rng.uniform(0.05, 3)) for t in case_terms(case)}
                V, n = float(rng.uniform(0.1, 10)), float(10 ** rng.uniform(2, 6))
                c = BiasVarianceConstants(V=V, case_id=case, **consts)
                h = mse_optimal_h(c, cfg, n, 1).h
                f, df = mse_objective(h, V, sum(consts.values()), n, a, b)
                worst_foc = max(worst_foc, abs(df * h) / f)
                ratio = mse_optimal_h(c, cfg, 4 * n, 1).h / h
                worst_hom = max(worst_hom, abs(ratio / 4 ** (-1 / (a + b)) - 1))
        info["detail"] = f"FOC {worst_foc:.1e}, homogeneity {worst_hom:.1e}"
        assert worst_foc <= 1e-8
        assert worst_hom <= 1e-13


@pytest.mark.slow
def test_criterion_09_shape_test_level_and_power():
    with criterion(9, "shape test: level <= alpha + 0.05 at n=2000, power(4000) > power(500)") as info:
        ys = np.linspace(0, 1, 20)
        grid = (ys, [0.0])
        truth = TN.truth(ys, np.zeros(ys.size))
        rejects = []
        for r in range(200):
            opts = BandOptions(seed=r, draws=1000)
            s = sample_dgp(TN, 2000, (909, r))
            surf, _, h, _ = studentized_fit(s, grid, 0, opts)
            c = truth + 5 * np.sqrt(surf.var)
            rejects.append(shape_test(s, grid, c, 0.05, 0, opts, h=h).reject)
        level = float(np.mean(rejects))

        mix = NormalMixtureDGP()
        mgrid = (np.linspace(0.1, 0.9, 10), [0.5])
        power = {}
        for n in (500, 4000):
            rej = [shape_test(sample_dgp(mix, n, (910, n, r)), mgrid, np.zeros(10), 0.05, 1,
                              BandOptions(seed=r, draws=1000)).reject for r in range(40)]
            power[n] = float(np.mean(rej))
        info["detail"] = f"level {level:.3f}, power {power[500]:.3f} -> {power[4000]:.3f}"
        assert level <= 0.05 + 0.05
        assert power[4000] > power[500]


def _strip(doc):
    doc.pop("runtime")
    doc["config"].pop("out")
    return doc


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "bands, tests, MC study and CLI identical across reruns and threads") as info:
        s = sample_dgp(TN, 1000, 1010)
        grid = (np.linspace(0, 1, 10), [0.0])
        runs = [confidence_band(s, grid, 0, 0.05, BandOptions(seed=7, threads=t)) for t in (1, 1, 4)]
        for r in runs[1:]:
            for attr in ("estimates", "se", "lower", "upper"):
                np.testing.assert_array_equal(getattr(r, attr), getattr(runs[0], attr))
            np.testing.assert_array_equal(r.cv.sups, runs[0].cv.sups)
        vals = runs[0].estimates + 0.01
        for fn in (spec_test, shape_test):
            tr = [fn(s, grid, vals, options=BandOptions(seed=7, threads=t)) for t in (1, 1, 4)]
            for r in tr[1:]:
                assert (r.statistic, r.cv.value, r.reject, r.p_value) == \
                       (tr[0].statistic, tr[0].cv.value, tr[0].reject, tr[0].p_value)
        opts = StudyOptions(draws=1000)
        mc = [run_coverage_study(TN, 500, 4, GridSpec.linspace(0, 1, 6, 0.0), opts, seed=11, threads=t)
              for t in (1, 1, 3)]
        assert len({m.to_json(include_clock=False) for m in mc}) == 1
        assert len({m.to_csv() for m in mc}) == 1

        data = tmp_path / "d.csv"
        data.write_text("y,x\n" + "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in zip(s.y, s.x[:, 0]))
                        + "\n")
        outs = []
        for k, t in enumerate((1, 1, 4)):
            out = tmp_path / f"run{k}"
            assert main(["bands", "--input", str(data), "--grid", "0:1:10", "--seed", "7",
                         "--threads", str(t), "--out", str(out)]) == 0
            outs.append(out)
        for o in outs[1:]:
            for name in ("bands.csv", "bands_plot.csv"):
                assert (o / name).read_bytes() == (outs[0] / name).read_bytes()
            assert _strip(json.loads((o / "bands.json").read_text())) == \
                   _strip(json.loads((outs[0] / "bands.json").read_text()))
        info["detail"] = "3 runs each, threads 1/1/4"
