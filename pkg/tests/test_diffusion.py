"""Single-particle motion, local time, and the Feynman-Kac estimator."""

import math

import numpy as np
import pytest
from scipy.stats import kstest

from annidiff import kernels as kr
from annidiff.diffusion import (
    DriftSpec, ParticleRecord, PathBatch, default_u0, euler_step,
    feynman_kac_u, local_time_estimate,
)
from annidiff.geometry import BoxGeometry


def test_euler_step_zero_noise_identity():
    rec = ParticleRecord(np.array([0.4]), "plus")
    out = euler_step(rec, 1e-3, DriftSpec(), np.zeros(1))
    assert out.position[0] == pytest.approx(0.4)
    assert out.status == "active"


def test_euler_step_crossing_harvested():
    # position 0.95, proposal 1.02 crosses the absorbing face
    rec = ParticleRecord(np.array([0.95]), "plus")
    noise = np.array([0.07 / math.sqrt(1e-3)])
    out = euler_step(rec, 1e-3, DriftSpec(), noise)
    assert out.status == "harvested"
    assert out.position[0] == pytest.approx(1.0)


def test_euler_step_mirror_at_interface():
    rec = ParticleRecord(np.array([0.05]), "plus")
    noise = np.array([-0.08 / math.sqrt(1e-3)])
    out = euler_step(rec, 1e-3, DriftSpec(), noise)
    assert out.status == "active"
    assert out.position[0] == pytest.approx(0.03)


def test_euler_step_passes_through_inactive():
    rec = ParticleRecord(np.array([0.5]), "plus", status="harvested")
    out = euler_step(rec, 1e-3, DriftSpec(), np.array([1.0]))
    assert out is rec


def test_euler_step_deterministic():
    rec = ParticleRecord(np.array([0.31]), "minus")
    a = euler_step(rec, 1e-3, DriftSpec(b=0.2), np.array([0.7]), bridge_logu=-0.5)
    b = euler_step(rec, 1e-3, DriftSpec(b=0.2), np.array([0.7]), bridge_logu=-0.5)
    assert a.position[0] == b.position[0] and a.status == b.status


def test_euler_step_rejects_bad_dt():
    rec = ParticleRecord(np.array([0.5]), "plus")
    with pytest.raises(ValueError):
        euler_step(rec, -1e-3, DriftSpec(), np.zeros(1))


def test_local_time_zero_away_from_interface():
    path = np.full((100, 1), 0.8)
    assert local_time_estimate(path, 1e-4, 0.06) == 0.0


def test_local_time_refuses_thin_strip():
    path = np.zeros((10, 1))
    with pytest.raises(ValueError, match="eps"):
        local_time_estimate(path, 1e-3, 0.01)


def _simulate_paths(side, x0, t, dt, n, seed, harvest, store=False):
    geom = BoxGeometry(1, harvest_plus=harvest, harvest_minus=harvest)
    batch = PathBatch(side=side, geom=geom, drift=DriftSpec(), dt=dt,
                      rng=np.random.default_rng(seed))
    batch.start(np.atleast_1d(x0), n)
    steps = int(round(t / dt))
    hist = np.empty((steps + 1, n)) if store else None
    if store:
        hist[0] = batch.pos[:, 0]
    for k in range(steps):
        batch.step()
        if store:
            hist[k + 1] = batch.pos[:, 0]
    return batch, hist


def test_local_time_mean_matches_kernel_quadrature():
    # Revuz identity: E[L_t] = int_0^t p(s, x, 0) ds, Neumann kernel
    dt, eps, t, x0, n = 1e-4, 0.06, 0.4, 0.3, 3000
    batch, hist = _simulate_paths("plus", x0, t, dt, n, seed=2, harvest=False,
                                  store=True)
    occ = (hist[:-1] < eps).sum(axis=0) * dt / eps
    mean, se = occ.mean(), occ.std(ddof=1) / math.sqrt(n)
    ts = np.linspace(1e-6, t, 4001)
    vals = [kr.kernel1d(kr.NEUMANN, s, x0, 0.0) for s in ts]
    oracle = float(np.trapezoid(vals, ts))
    assert abs(mean - oracle) < 3 * se + 0.01 * oracle


def test_local_time_eps_stability():
    dt, t, x0, n = 1e-4, 0.5, 0.2, 2000
    _, hist = _simulate_paths("plus", x0, t, dt, n, seed=3, harvest=False,
                              store=True)
    l1 = (hist[:-1] < 0.06).sum(axis=0).mean() * dt / 0.06
    l2 = (hist[:-1] < 0.12).sum(axis=0).mean() * dt / 0.12
    assert abs(l1 - l2) / l1 < 0.10


def test_rbm_law_matches_neumann_kernel():
    # KS distance of X_t against the exact reflected density at t = 0.3
    t, dt, n, x0 = 0.3, 1e-3, 10000, 0.4
    batch, _ = _simulate_paths("plus", x0, t, dt, n, seed=4, harvest=False)
    xs = np.linspace(0, 1, 513)
    pdf = kr.kernel1d(kr.NEUMANN, t, np.full_like(xs, x0), xs)
    cdf_grid = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) / 2 * np.diff(xs))])
    cdf_grid /= cdf_grid[-1]
    stat = kstest(batch.pos[:, 0], lambda v: np.interp(v, xs, cdf_grid)).statistic
    assert stat < 0.02


def test_survival_matches_mixed_kernel():
    t, dt, n, x0 = 0.5, 1e-3, 20000, 0.4
    batch, _ = _simulate_paths("plus", x0, t, dt, n, seed=5, harvest=True)
    alive = batch.active().mean()
    se = math.sqrt(alive * (1 - alive) / n)
    ref = float(kr.SideKernel(1, True).survival(t, x0))
    assert abs(alive - ref) < 3 * se + 2e-3


def test_feynman_kac_lambda_zero_reduces_to_semigroup():
    ref = float(kr.SideKernel(1, True).semigroup_apply(
        0.5, default_u0("plus"), [0.25])[0])
    est, se = feynman_kac_u("plus", 0.5, 0.25, lambda t: 0.0, 0.0,
                            replicas=4000, dt=1.6e-5, eps=0.021, seed=6)
    assert abs(est - ref) < 3 * se + 2e-3


def test_feynman_kac_zero_initial_data():
    est, se = feynman_kac_u("plus", 0.3, 0.5, lambda t: 1.0, 1.0,
                            replicas=200, dt=1e-4, eps=0.055,
                            u0=lambda x: np.zeros_like(x), seed=7)
    assert est == 0.0 and se == 0.0


def test_feynman_kac_refusals():
    with pytest.raises(ValueError, match="replicas"):
        feynman_kac_u("plus", 0.2, 0.3, lambda t: 0.0, 1.0, 50, 1e-4, 0.06)
    with pytest.raises(ValueError, match="eps"):
        feynman_kac_u("plus", 0.2, 0.3, lambda t: 0.0, 1.0, 200, 1e-3, 0.02)


def test_drift_spec_density():
    d = DriftSpec(b=0.5, s=2.0)
    pts = np.array([[0.2], [0.8]])
    np.testing.assert_allclose(d.rho("plus", pts)[1] / d.rho("plus", pts)[0],
                               np.exp(2 * 0.5 * 0.6 / 2.0), rtol=1e-12)
    with pytest.raises(ValueError):
        DriftSpec(s=-1.0)
