"""Pair engine: potential values, binned intensity, event sampling."""

import math

import numpy as np
import pytest
from scipy.stats import chisquare, kstest

from annidiff import annihilation as ann
from annidiff.diffusion import ParticleRecord
from annidiff.geometry import BoxGeometry, MINUS, PLUS
from annidiff.particles import Configuration


def make_config(dim, pos_p, pos_m, N=None):
    pos_p = np.atleast_2d(np.asarray(pos_p, float))
    pos_m = np.atleast_2d(np.asarray(pos_m, float))
    geom = BoxGeometry(dim)
    return Configuration(geom, N or pos_p.shape[0], pos_p.copy(), pos_m.copy())


def test_potential_value_examples():
    spec = ann.PotentialSpec.make(1, 1.0, 0.1, 1)
    # inside-tube rate is 1/nu = 4/(pi delta^2)
    assert spec.rate == pytest.approx(4 / (np.pi * 0.01), rel=1e-12)
    assert spec.rate == pytest.approx(127.3240, abs=5e-5)
    assert ann.potential_value(spec, 0.25) == 0.0
    d2 = 0.01 ** 2 + 0.01 ** 2
    assert ann.potential_value(spec, d2) == pytest.approx(spec.rate)


def test_potential_eval_respects_status():
    spec = ann.PotentialSpec.make(1, 1.0, 0.1, 1)
    x = ParticleRecord(np.array([0.01]), PLUS)
    y = ParticleRecord(np.array([-0.01]), MINUS)
    assert ann.potential_eval(spec, x, y) == pytest.approx(spec.rate)
    y_dead = ParticleRecord(np.array([-0.01]), MINUS, status="harvested")
    assert ann.potential_eval(spec, x, y_dead) == 0.0


def test_total_intensity_single_pair():
    spec = ann.PotentialSpec.make(1, 1.0, 0.1, 1)
    config = make_config(1, [[0.01]], [[0.01]], N=1)  # internal frame
    val = ann.total_intensity(spec, config)
    assert val == pytest.approx(63.6620, abs=3e-5)


def test_no_particles_near_interface_zero():
    spec = ann.PotentialSpec.make(1, 1.0, 0.01, 4)
    config = make_config(1, [[0.5], [0.9]], [[0.4], [0.8]])
    assert ann.total_intensity(spec, config) == 0.0


@pytest.mark.parametrize("dim", [1, 2])
def test_binned_equals_brute_force(dim):
    rng = np.random.default_rng(dim)
    for trial in range(10):
        m = 200
        pos_p = rng.random((m, dim)) * np.array([1.0] * (dim - 1) + [0.05])
        pos_m = rng.random((m, dim)) * np.array([1.0] * (dim - 1) + [0.05])
        config = make_config(dim, pos_p, pos_m)
        spec = ann.PotentialSpec.make(dim, 1.3, 0.02, m)
        config.status_plus[rng.random(m) < 0.2] = 1
        config.status_minus[rng.random(m) < 0.2] = 2
        fast = ann.total_intensity(spec, config)
        slow = ann.brute_force_intensity(spec, config)
        assert fast == slow  # exact equality, not approximate


def test_intensity_invariant_under_relabeling():
    rng = np.random.default_rng(9)
    m = 100
    pos_p = rng.random((m, 1)) * 0.03
    pos_m = rng.random((m, 1)) * 0.03
    spec = ann.PotentialSpec.make(1, 1.0, 0.02, m)
    a = ann.total_intensity(spec, make_config(1, pos_p, pos_m))
    perm = rng.permutation(m)
    b = ann.total_intensity(spec, make_config(1, pos_p[perm], pos_m[perm]))
    assert a == b


def test_stale_bins_detected():
    config = make_config(1, [[0.005]], [[0.005]])
    spec = ann.PotentialSpec.make(1, 1.0, 0.1, 1)
    bins = ann.InterfaceBins.build(config, spec.delta)
    config.generation += 1
    with pytest.raises(RuntimeError, match="stale"):
        ann.total_intensity(spec, config, bins)


def test_select_pair_weighted_chi2():
    rng = np.random.default_rng(21)
    weights = np.array([3.0, 1.0])
    counts = np.zeros(2)
    n = 10000
    for _ in range(n):
        counts[ann.select_pair(weights, rng.random())] += 1
    stat, p = chisquare(counts, f_exp=np.array([0.75, 0.25]) * n)
    assert p > 0.01


def test_sample_event_lambda_zero_never_fires():
    config = make_config(1, [[0.001]], [[0.001]])
    spec = ann.PotentialSpec.make(1, 0.0, 0.1, 1)
    rng = np.random.default_rng(0)
    assert ann.sample_event(spec, config, 1.0, rng) is None


def test_sample_event_marks_pair_and_respects_tube():
    config = make_config(1, [[0.001], [0.9]], [[0.001], [0.8]])
    spec = ann.PotentialSpec.make(1, 5.0, 0.1, 2)
    rng = np.random.default_rng(1)
    ev = None
    while ev is None:
        ev = ann.sample_event(spec, config, 0.5, rng)
        if ev is None:
            config.status_plus[:] = 0
            config.status_minus[:] = 0
    assert (ev.i, ev.j) == (0, 0)
    assert config.status_plus[0] == 2 and config.status_minus[0] == 2
    assert config.partner_plus[0] == 0


def test_event_gaps_exponential():
    """Constant intensity: inter-event gaps over many windows are Exp(A)."""
    spec = ann.PotentialSpec.make(1, 1.0, 0.1, 50)
    config = make_config(1, [[0.01]], [[0.015]], N=50)
    a = ann.total_intensity(spec, config)
    rng = np.random.default_rng(3)
    dt = 0.7 / a       # windows comparable to the mean gap
    gaps = []
    carry = 0.0
    t_off = 0.0
    while len(gaps) < 10000:
        ev = ann.sample_event(spec, config, dt, rng, t_offset=t_off)
        if ev is None:
            carry += dt - t_off
            t_off = 0.0
            continue
        gaps.append(carry + ev.t_offset - t_off)
        carry = 0.0
        t_off = ev.t_offset
        config.status_plus[:] = 0   # reset so the clock keeps running
        config.status_minus[:] = 0
        config.t_event_plus[:] = np.nan
        config.t_event_minus[:] = np.nan
    stat = kstest(np.array(gaps), "expon", args=(0, 1 / a)).statistic
    assert stat < 0.02


def test_pair_conservation_on_events():
    rng = np.random.default_rng(8)
    m = 40
    config = make_config(1, rng.random((m, 1)) * 0.01, rng.random((m, 1)) * 0.01)
    spec = ann.PotentialSpec.make(1, 50.0, 0.1, m)
    n_events = 0
    for _ in range(200):
        ev = ann.sample_event(spec, config, 1e-3, rng)
        if ev is not None:
            n_events += 1
    assert (config.status_plus == 2).sum() == n_events
    assert (config.status_minus == 2).sum() == n_events
