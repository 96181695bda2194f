"""Weak metric, test bases and density pairings."""

import numpy as np
import pytest
from scipy.integrate import quad

from annidiff.geometry import BoxGeometry
from annidiff.measure import (
    GridDensityMeasure, PointMeasure, TestBasis, density_to_measure,
    rho_distance,
)


@pytest.fixture(scope="module")
def basis():
    return TestBasis(BoxGeometry(1), 16)


def _pair(atoms_p, atoms_m=None):
    pm = PointMeasure(np.zeros((0, 1)), 1.0) if atoms_m is None else \
        PointMeasure(np.asarray(atoms_m, float).reshape(-1, 1), 1.0 / max(len(atoms_m), 1))
    return (PointMeasure(np.asarray(atoms_p, float).reshape(-1, 1),
                         1.0 / max(len(atoms_p), 1)), pm)


def test_rho_zero_on_equal(basis):
    mu = _pair([0.2, 0.7], [-0.5])
    assert rho_distance(mu, mu, basis).value == 0.0


def test_rho_point_mass_oracle(basis):
    mu = _pair([0.2])
    nu = _pair([0.4])
    direct = sum(
        2.0 ** -(n + 1) * abs(float(f(np.array([[0.2]]))[0]) - float(f(np.array([[0.4]]))[0]))
        for n, f in enumerate(basis.plus)
    )
    assert rho_distance(mu, nu, basis).value == pytest.approx(direct, abs=1e-12)


def test_rho_pseudometric_properties(basis):
    rng = np.random.default_rng(5)
    for _ in range(60):
        trip = [
            _pair(rng.random(rng.integers(1, 6)),
                  -rng.random(rng.integers(1, 6)))
            for _ in range(3)
        ]
        d01 = rho_distance(trip[0], trip[1], basis).value
        d10 = rho_distance(trip[1], trip[0], basis).value
        d02 = rho_distance(trip[0], trip[2], basis).value
        d12 = rho_distance(trip[1], trip[2], basis).value
        assert d01 == pytest.approx(d10, abs=1e-12)
        assert d02 <= d01 + d12 + 1e-12


def test_rho_refuses_supercritical_mass(basis):
    heavy = (PointMeasure(np.full((12, 1), 0.5), 0.2),
             PointMeasure(np.zeros((0, 1)), 1.0))
    light = _pair([0.1])
    with pytest.raises(ValueError, match="mass"):
        rho_distance(heavy, light, basis)


def test_truncation_honesty():
    geom = BoxGeometry(1)
    small = TestBasis(geom, 8)
    big = TestBasis(geom, 16)
    mu = _pair([0.21, 0.84], [-0.33])
    nu = _pair([0.55], [-0.92, -0.04])
    r_small = rho_distance(mu, nu, small)
    r_big = rho_distance(mu, nu, big)
    assert abs(r_big.value - r_small.value) <= r_small.tail_bound + 1e-15


def test_basis_bounds_and_face_zero():
    for geom in (BoxGeometry(1), BoxGeometry(2)):
        basis = TestBasis(geom, 12)
        rng = np.random.default_rng(0)
        pts = rng.random((200, geom.dim))
        face = pts.copy()
        face[:, -1] = 1.0
        for f in basis.plus:
            assert np.max(np.abs(f(pts))) <= 1.0 + 1e-12
            assert np.max(np.abs(f(face))) < 1e-12
        mus = [f.mu for f in basis.plus]
        assert mus == sorted(mus)


def test_density_orthonormality():
    geom = BoxGeometry(1)
    g = np.linspace(0, 1, 4001)
    omega0 = np.pi / 2
    phi1 = np.sqrt(2) * np.cos(omega0 * g)
    dm = GridDensityMeasure("plus", geom, phi1)
    val = dm.pair(lambda pts: np.sqrt(2) * np.cos(omega0 * pts[:, 0]))
    assert val == pytest.approx(1.0, abs=1e-10)


def test_density_neumann_orthogonal_to_constants():
    geom = BoxGeometry(1)
    g = np.linspace(0, 1, 4001)
    dm = GridDensityMeasure("plus", geom, np.ones_like(g))
    val = dm.pair(lambda pts: np.sqrt(2) * np.cos(np.pi * pts[:, 0]))
    assert val == pytest.approx(0.0, abs=1e-10)


def test_density_pairing_against_quadrature_oracle():
    # <2(1-x), sqrt(2) cos(pi x / 2)> by adaptive quadrature
    oracle, _ = quad(lambda x: 2 * (1 - x) * np.sqrt(2) * np.cos(np.pi * x / 2), 0, 1,
                     epsabs=1e-13)
    geom = BoxGeometry(1)
    g = np.linspace(0, 1, 8001)
    dm = density_to_measure("plus", geom, 2 * (1 - g))
    val = dm.pair(lambda pts: np.sqrt(2) * np.cos(np.pi * pts[:, 0] / 2))
    assert val == pytest.approx(oracle, abs=1e-8)


def test_density_refuses_negative():
    geom = BoxGeometry(1)
    g = np.linspace(0, 1, 101)
    with pytest.raises(ValueError, match="negative"):
        GridDensityMeasure("plus", geom, np.sin(4 * np.pi * g))


def test_empirical_rate_toward_density(basis):
    # rho(empirical, density) ~ m^(-1/2): log-log slope in [-0.65, -0.35]
    geom = BoxGeometry(1)
    g = np.linspace(0, 1, 2001)
    dens_pair = (GridDensityMeasure("plus", geom, 2 * (1 - g)),
                 GridDensityMeasure("minus", geom, 2 * (1 - g)))
    rng = np.random.default_rng(11)
    sizes = [100, 1000, 10000]
    dists = []
    for m in sizes:
        reps = []
        for _ in range(6):
            xs = 1 - np.sqrt(1 - rng.random(m))
            ys = -(1 - np.sqrt(1 - rng.random(m)))
            emp = (PointMeasure(xs[:, None], 1.0 / m),
                   PointMeasure(ys[:, None], 1.0 / m))
            reps.append(rho_distance(emp, dens_pair, basis).value)
        dists.append(np.mean(reps))
    slope = np.polyfit(np.log(sizes), np.log(dists), 1)[0]
    assert -0.65 <= slope <= -0.35
