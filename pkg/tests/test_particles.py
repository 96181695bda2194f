"""Configuration process: initialization, stepping, accounting, coupling."""

import math

import numpy as np
import pytest
from scipy.stats import kstest

from annidiff import kernels as kr
from annidiff import particles as ps
from annidiff.diffusion import default_u0
from annidiff.geometry import MINUS, PLUS


def test_init_sample_means():
    p = ps.SimParams(N=10000, seed=7)
    cfg = ps.init(p, default_u0(PLUS), default_u0(MINUS), ps.motion_rng(7, 0))
    xm = cfg.geom.to_physical(PLUS, cfg.pos_plus).mean()
    ym = cfg.geom.to_physical(MINUS, cfg.pos_minus).mean()
    se = 1 / math.sqrt(18 * p.N)     # std of 2(1-x) is 1/sqrt(18)
    assert abs(xm - 1 / 3) < 3 * se
    assert abs(ym + 1 / 3) < 3 * se


def test_init_kolmogorov_smirnov():
    p = ps.SimParams(N=10000, seed=8)
    cfg = ps.init(p, default_u0(PLUS), default_u0(MINUS), ps.motion_rng(8, 0))
    stat = kstest(cfg.pos_plus[:, 0], lambda x: 2 * x - x ** 2).statistic
    assert stat < 0.02


def test_init_refuses_non_unit_mass():
    p = ps.SimParams(N=100, seed=1)
    with pytest.raises(ValueError, match="mass"):
        ps.init(p, lambda x: 4 * (1 - x), default_u0(MINUS), ps.motion_rng(1, 0))


def test_lambda_zero_no_harvest_mass_constant():
    p = ps.SimParams(N=400, seed=3, lam=0.0, harvest_plus=False,
                     harvest_minus=False, T=0.2)
    res = ps.run(p, save_atoms=False)
    assert res.trajectory.mass_plus == [1.0] * len(res.trajectory.mass_plus)
    assert res.trajectory.mass_minus[-1] == 1.0
    assert res.j_n_final == 0.0


def test_lambda_zero_mass_matches_survival():
    # plus-side mass at t = 0.5 vs the mixed-kernel survival probability
    p = ps.SimParams(N=2000, seed=4, lam=0.0, T=0.5)
    masses = []
    for rep in range(4):
        res = ps.run(p, replica=rep, save_atoms=False)
        masses.append(res.trajectory.mass_plus[-1])
    mean = float(np.mean(masses))
    se = float(np.std(masses, ddof=1) / math.sqrt(len(masses)))
    sk = kr.SideKernel(1, harvest=True)
    xs = np.linspace(0, 1, 2001)
    ref = float(np.trapezoid(sk.survival(0.5, xs) * 2 * (1 - xs), xs))
    assert abs(mean - ref) < 3 * se + 2e-3


def test_annihilation_removes_one_from_each_side():
    p = ps.SimParams(N=50, seed=5, lam=200.0, T=0.02, save_stride=1)
    res = ps.run(p, save_atoms=False)
    cfg = res.config
    cfg.check_invariants()
    n_ann = cfg.counts(PLUS)[2]
    assert n_ann > 0
    assert cfg.counts(MINUS)[2] == n_ann
    ann_events = [e for e in res.events if e["kind"] == "annihilation"]
    assert len(ann_events) == n_ann
    # event log positions lie inside the tube
    delta2 = p.potential().delta ** 2
    for ev in ann_events:
        x, y = ev["x_plus"][0], ev["y_minus"][0]
        assert x * x + y * y < delta2


def test_mass_accounting_identity_random_runs():
    rng = np.random.default_rng(0)
    for trial in range(6):
        p = ps.SimParams(N=int(rng.integers(50, 200)), seed=int(rng.integers(1e6)),
                         lam=float(rng.choice([0.0, 1.0, 5.0])), T=0.1)
        res = ps.run(p, save_atoms=False)
        for side in (PLUS, MINUS):
            a, h, k = res.config.counts(side)
            assert a + h + k == res.config.m
        res.config.check_invariants()


def test_seed_determinism_bit_exact():
    p = ps.SimParams(N=300, seed=11, T=0.1)
    r1 = ps.run(p, save_atoms=False)
    r2 = ps.run(p, save_atoms=False)
    assert r1.events == r2.events
    np.testing.assert_array_equal(r1.config.pos_plus, r2.config.pos_plus)
    assert r1.j_n_final == r2.j_n_final


def test_domination_coupling_pathwise():
    # lam = 0 on the same seed dominates the annihilating run at every save
    for seed in (21, 22):
        p1 = ps.SimParams(N=400, seed=seed, lam=1.0)
        p0 = ps.SimParams(N=400, seed=seed, lam=0.0)
        r1 = ps.run(p1, save_atoms=False)
        r0 = ps.run(p0, save_atoms=False)
        for side in (PLUS, MINUS):
            m1 = np.array(getattr(r1.trajectory, f"mass_{side}"))
            m0 = np.array(getattr(r0.trajectory, f"mass_{side}"))
            assert np.all(m0 >= m1 - 1e-15)
        # identical particle paths: harvested sets of the lam=0 run contain
        # exactly the harvested-or-(annihilated ghosts stopped) of the other
        np.testing.assert_array_equal(
            r0.config.move_plus, r1.config.move_plus)


def test_mass_monotone_in_time():
    p = ps.SimParams(N=500, seed=12)
    res = ps.run(p, save_atoms=False)
    for side in (PLUS, MINUS):
        m = np.array(getattr(res.trajectory, f"mass_{side}"))
        assert np.all(np.diff(m) <= 1e-15)


def test_pair_against_examples():
    p = ps.SimParams(N=1000, seed=13)
    cfg = ps.init(p, default_u0(PLUS), default_u0(MINUS), ps.motion_rng(13, 0))
    mu = ps.empirical_measure(cfg, PLUS)
    assert ps.pair_against(lambda pts: np.ones(len(pts)), mu) == pytest.approx(mu.mass)
    empty = ps.EmpiricalMeasure(PLUS, np.zeros((0, 1)), 1000)
    assert ps.pair_against(lambda pts: np.ones(len(pts)), empty) == 0.0


def test_pair_against_eigenfunction_sampling():
    # i.i.d. samples from the normalized first mixed eigenfunction
    m = 10000
    rng = np.random.default_rng(14)
    omega = np.pi / 2
    # density prop cos(omega x): CDF = sin(omega x); inverse = asin(u)/omega
    xs = np.arcsin(rng.random(m)) / omega
    mu = ps.EmpiricalMeasure(PLUS, xs[:, None], m)
    phi = lambda pts: np.sqrt(2) * np.cos(omega * pts[:, 0])
    val = ps.pair_against(phi, mu)
    # oracle: int phi * cos(omega x)*omega dx over [0,1]
    grid = np.linspace(0, 1, 20001)
    oracle = float(np.trapezoid(np.sqrt(2) * np.cos(omega * grid)
                                * omega * np.cos(omega * grid), grid))
    se = float(np.std(np.sqrt(2) * np.cos(omega * xs), ddof=1) / math.sqrt(m))
    assert abs(val - oracle) < 3 * se


def test_j_n_bounded_by_one():
    p = ps.SimParams(N=800, seed=15)
    js = [ps.run(p, replica=r, save_atoms=False).j_n_final for r in range(6)]
    mean = float(np.mean(js))
    se = float(np.std(js, ddof=1) / math.sqrt(len(js)))
    assert mean <= 1.0 + 3 * se


def test_counterexample_schedule_quiet():
    p = ps.SimParams(N=500, seed=16, delta_schedule="counterexample", T=0.2)
    res = ps.run(p, save_atoms=False)
    assert res.config.counts(PLUS)[2] == 0


def test_step_requires_time_grid():
    with pytest.raises(ValueError):
        ps.SimParams(N=10, dt=0.3, T=0.2)
    with pytest.raises(ValueError, match="multiple"):
        ps.run(ps.SimParams(N=10, dt=3e-3, T=0.1))


def test_delta_schedules():
    assert ps.SimParams(N=1000).delta() == pytest.approx(0.4e-3)
    assert ps.SimParams(N=1000, dim=2).delta() == pytest.approx(0.4 / math.sqrt(1000))
    assert ps.SimParams(N=10, delta_schedule="counterexample").delta() \
        == pytest.approx(1e-3)
    assert ps.SimParams(N=10, delta_schedule=0.05).delta() == 0.05
