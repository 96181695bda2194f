"""Geometry: reflection, pair-to-interface distance, tube volumes."""

import numpy as np
import pytest

from annidiff.geometry import (
    BoxGeometry, TubeSpec, ball_volume, minkowski_pair_integral,
    pair_interface_dist2, tube_constant, tube_volume_oracle,
)


def test_ball_volumes():
    np.testing.assert_allclose(ball_volume(2), np.pi, rtol=1e-14)
    np.testing.assert_allclose(ball_volume(3), 4 * np.pi / 3, rtol=1e-14)
    np.testing.assert_allclose(ball_volume(4), np.pi ** 2 / 2, rtol=1e-14)
    with pytest.raises(ValueError):
        ball_volume(5)


def test_reflect_examples():
    g = BoxGeometry(1)
    assert g.reflect_into(np.array([-0.1]), "plus")[0] == pytest.approx(0.1)
    assert g.reflect_into(np.array([1.3]), "plus")[0] == pytest.approx(0.7)
    assert g.reflect_into(np.array([0.5]), "plus")[0] == 0.5
    # minus side folds into [-1, 0]
    assert g.reflect_into(np.array([-1.3]), "minus")[0] == pytest.approx(-0.7)
    assert g.reflect_into(np.array([0.2]), "minus")[0] == pytest.approx(-0.2)


def test_reflect_idempotent_and_contained():
    g = BoxGeometry(2)
    rng = np.random.default_rng(0)
    props = rng.normal(scale=3.0, size=(500, 2))
    folded = g.reflect_into(props, "plus")
    assert g.contains("plus", folded).all()
    np.testing.assert_array_equal(g.reflect_into(folded, "plus"), folded)
    folded_m = g.reflect_into(props, "minus")
    assert g.contains("minus", folded_m).all()


def test_pair_dist_examples():
    assert pair_interface_dist2(np.array([0.3]), np.array([-0.4])) == pytest.approx(0.25)
    assert pair_interface_dist2(np.array([0.5, 0.1]), np.array([0.5, -0.1])) \
        == pytest.approx(0.02)
    assert pair_interface_dist2(np.array([0.0, 0.1]), np.array([0.2, -0.1])) \
        == pytest.approx(0.04)


def test_pair_dist_zero_iff_both_on_interface():
    z = np.array([0.3, 0.0])
    assert pair_interface_dist2(z, z) < 1e-12
    assert pair_interface_dist2(np.array([0.3, 0.01]), np.array([0.3, 0.0])) > 0


def test_pair_dist_tangential_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = rng.random(2)
        y = rng.random(2) * np.array([1.0, -1.0])
        swapped_x = np.array([y[0], x[1]])
        swapped_y = np.array([x[0], y[1]])
        np.testing.assert_allclose(
            pair_interface_dist2(x, y),
            pair_interface_dist2(swapped_x, swapped_y), rtol=1e-12)


def test_tube_constant_d1_quarter_disk():
    assert tube_constant(1) == pytest.approx(np.pi / 4, rel=1e-14)


def test_tube_volume_d1_exact_quarter_disk():
    vol = tube_volume_oracle(1, 0.1)
    assert vol == pytest.approx(np.pi * 0.01 / 4, rel=1e-3)


def test_tube_volume_scaling_stable():
    # |I^delta| / delta^(d+1) stabilizes as delta -> 0
    for dim in (1, 2):
        r1 = tube_volume_oracle(dim, 0.04) / 0.04 ** (dim + 1)
        r2 = tube_volume_oracle(dim, 0.02) / 0.02 ** (dim + 1)
        assert abs(r1 / r2 - 1.0) < 0.10
        # and the limit constant is the analytic one
        assert r2 == pytest.approx(tube_constant(dim), rel=0.05)


def test_resolution_refusal():
    with pytest.raises(ValueError, match="resolution too coarse"):
        tube_volume_oracle(1, 0.1, resolution=16)


def test_minkowski_f1_d1_exact():
    val = minkowski_pair_integral(1, 0.05, lambda x, y: np.ones(len(x)))
    assert val == pytest.approx(1.0, abs=1e-3)


def test_minkowski_d2_examples():
    one = minkowski_pair_integral(2, 0.02, lambda x, y: np.ones(len(x)))
    assert one == pytest.approx(1.0, abs=0.05)
    first = minkowski_pair_integral(2, 0.02, lambda x, y: x[:, 0])
    assert first == pytest.approx(0.5, abs=0.05)


def test_minkowski_monotone_improvement_smooth_f():
    # convergence to the surface integral improves over delta 0.08 -> 0.02
    def f(x, y):
        return np.cos(np.pi * x[:, 0]) ** 2

    target = 0.5  # int_0^1 cos^2(pi z) dz
    errs = [abs(minkowski_pair_integral(2, d, f) - target)
            for d in (0.08, 0.04, 0.02)]
    assert errs[2] < errs[0]


def test_tube_spec_invariants():
    spec = TubeSpec(1, 0.1)
    assert spec.nu == pytest.approx(np.pi * 0.01 / 4)
    with pytest.raises(ValueError):
        TubeSpec(1, 0.6)
    with pytest.raises(ValueError):
        TubeSpec(1, -0.1)


def test_internal_physical_roundtrip():
    g = BoxGeometry(2)
    rng = np.random.default_rng(3)
    pts = rng.random((50, 2)) * np.array([1.0, -1.0])
    internal = g.to_internal("minus", pts)
    assert (internal[:, -1] >= 0).all()
    np.testing.assert_array_equal(g.to_physical("minus", internal), pts)
