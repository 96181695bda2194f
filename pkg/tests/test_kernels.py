"""Spectral kernels against the method-of-images oracle and exact identities."""

import numpy as np
import pytest

from annidiff.kernels import (
    MIXED, NEUMANN, Eigenbasis1D, SideKernel, image_kernel1d, kernel1d,
    required_modes,
)


@pytest.mark.parametrize("bc", [NEUMANN, MIXED])
@pytest.mark.parametrize("t", [0.05, 0.1, 0.2])
def test_spectral_matches_image_oracle(bc, t):
    rng = np.random.default_rng(0)
    x = rng.random(20)
    y = rng.random(20)
    spectral = kernel1d(bc, t, x, y)
    image = image_kernel1d(bc, t, x, y)
    np.testing.assert_allclose(spectral, image, atol=1e-8)


def test_long_time_neumann_uniform():
    val = kernel1d(NEUMANN, 50.0, 0.3, 0.8)
    assert val == pytest.approx(1.0, abs=1e-12)


def test_dirichlet_face_zero():
    for t in (0.1, 0.5, 2.0):
        assert abs(kernel1d(MIXED, t, 0.4, 1.0)) < 1e-12


def test_symmetry():
    rng = np.random.default_rng(1)
    x = rng.random(50)
    y = rng.random(50)
    for bc in (NEUMANN, MIXED):
        a = kernel1d(bc, 0.15, x, y)
        b = kernel1d(bc, 0.15, y, x)
        assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("s,t", [(0.1, 0.1), (0.1, 0.2), (0.2, 0.2)])
def test_chapman_kolmogorov(s, t):
    nodes, wts = np.polynomial.legendre.leggauss(220)
    nodes = (nodes + 1) / 2
    wts = wts / 2
    for bc in (NEUMANN, MIXED):
        inner = kernel1d(bc, s, np.full_like(nodes, 0.3), nodes) * \
            kernel1d(bc, t, nodes, np.full_like(nodes, 0.7))
        lhs = float(wts @ inner)
        rhs = kernel1d(bc, s + t, 0.3, 0.7)
        assert lhs == pytest.approx(rhs, abs=1e-6)


def test_truncation_refusal_names_required_K():
    need = required_modes(0.01)
    with pytest.raises(ValueError, match=f"need K >= {need}"):
        kernel1d(NEUMANN, 0.01, 0.5, 0.5, K=4)


def test_semigroup_identity_and_conservation():
    sk = SideKernel(1, harvest=False)
    s = np.linspace(0, 1, 11)
    f = lambda x: np.sin(3 * x) + 2
    np.testing.assert_array_equal(sk.semigroup_apply(0.0, f, s), f(s))
    ones = sk.semigroup_apply(0.7, lambda x: np.ones_like(x), s)
    np.testing.assert_allclose(ones, 1.0, atol=1e-12)


def test_semigroup_mixed_value_at_interface():
    # P_t 1 at s=0 equals the alternating eigenmode sum
    sk = SideKernel(1, harvest=True)
    val = sk.semigroup_apply(0.5, lambda x: np.ones_like(x), [0.0])[0]
    k = np.arange(400)
    omega = (k + 0.5) * np.pi
    ref = float(np.sum(2 * (-1.0) ** k / omega * np.exp(-(omega ** 2) * 0.25)))
    assert val == pytest.approx(ref, abs=1e-12)


def test_eigen_relation():
    sk = SideKernel(1, harvest=True)
    basis = Eigenbasis1D(MIXED, 8)
    s = np.linspace(0, 1, 33)
    for k in (0, 2, 5):
        f = lambda x, k=k: basis.amp[k] * np.cos(basis.omega[k] * x)
        out = sk.semigroup_apply(0.2, f, s)
        ref = np.exp(-basis.mu[k] * 0.2) * f(s)
        assert np.max(np.abs(out - ref)) < 1e-10


def test_sub_markov_monotone():
    sk = SideKernel(1, harvest=True)
    surv = [sk.survival(t, 0.4) for t in (0.1, 0.2, 0.4, 0.8)]
    assert all(s1 > s2 for s1, s2 in zip(surv, surv[1:]))
    assert all(0 < s <= 1 for s in surv)
    sk0 = SideKernel(1, harvest=False)
    for t in (0.1, 0.5):
        assert sk0.survival(t, 0.4) == pytest.approx(1.0, abs=1e-12)


def test_orthonormality_by_quadrature():
    nodes, wts = np.polynomial.legendre.leggauss(400)
    nodes = (nodes + 1) / 2
    wts = wts / 2
    for bc in (NEUMANN, MIXED):
        basis = Eigenbasis1D(bc, 6)
        mat = basis.eval_matrix(nodes)
        gram = (mat * wts) @ mat.T
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-10)


def test_surface_kernel_matches_point_evaluation():
    sk = SideKernel(1, harvest=True)
    assert sk.surface_kernel(0.2, np.array([[0.3]])) == pytest.approx(
        kernel1d(MIXED, 0.2, 0.3, 0.0), abs=1e-12)
    # image-method oracle at the interface
    assert sk.surface_kernel(0.2, np.array([[0.3]])) == pytest.approx(
        float(image_kernel1d(MIXED, 0.2, 0.3, 0.0)), abs=1e-8)


def test_surface_kernel_tangential_symmetry_d2():
    sk = SideKernel(2, harvest=True)
    a = sk.kernel_eval(0.3, np.array([[0.2, 0.4]]), np.array([[0.7, 0.0]]))
    b = sk.kernel_eval(0.3, np.array([[0.7, 0.4]]), np.array([[0.2, 0.0]]))
    assert a == pytest.approx(b, rel=1e-12)


def test_long_time_mixed_all_harvested():
    sk = SideKernel(1, harvest=True)
    assert sk.surface_kernel(40.0, np.array([[0.3]])) == pytest.approx(0.0, abs=1e-12)
