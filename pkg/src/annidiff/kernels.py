"""Exact transition kernels for reflected Brownian motion on [0,1] boxes.

One-dimensional eigenbases for the half generator (1/2) d^2/ds^2 with either
reflecting ends (``neumann_both``) or reflecting at 0 / absorbing at 1
(``neumann0_dirichlet1``), plus their tensor products.  These provide:

* pointwise kernel evaluation (spectral series, image-method for small times
  and as an independent oracle),
* semigroup application to smooth functions,
* closed-form tail sums used by the mild PDE solver,
* the interface kernel p(t, x, z) with z on the interface.

Everything here is for unit diffusion coefficient and no drift; drifted
evolution is handled by the finite-difference solver.  Coordinates are the
internal normal-distance frame: the interface sits at s = 0, the harvest face
at s = 1.
"""

from __future__ import annotations

import math

import numpy as np

NEUMANN = "neumann_both"
MIXED = "neumann0_dirichlet1"

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def required_modes(t: float, tol: float = 1e-12) -> int:
    """Smallest truncation K with spectral tail below tol at time t.

    Tail terms are bounded by 2 exp(-mu_k t) with mu_k >= k^2 pi^2 / 2 for both
    boundary conditions, so K = ceil(sqrt(2 log(2/tol) / t) / pi) suffices.
    """
    if t <= 0:
        raise ValueError("required_modes needs t > 0")
    return int(math.ceil(math.sqrt(2.0 * math.log(2.0 / tol) / t) / math.pi)) + 2


class Eigenbasis1D:
    """L2-orthonormal cosine eigenbasis on [0,1] for one boundary condition.

    ``neumann_both``: phi_0 = 1, phi_k = sqrt(2) cos(k pi s), mu_k = k^2 pi^2/2.
    ``neumann0_dirichlet1``: phi_k = sqrt(2) cos(omega_k s) with
    omega_k = (k + 1/2) pi, mu_k = omega_k^2 / 2.
    """

    def __init__(self, bc: str, K: int):
        if bc not in (NEUMANN, MIXED):
            raise ValueError(f"unknown boundary condition {bc!r}")
        if K < 1:
            raise ValueError("need at least one mode")
        self.bc = bc
        self.K = K
        k = np.arange(K)
        if bc == NEUMANN:
            self.omega = k * math.pi
            self.amp = np.where(k == 0, 1.0, math.sqrt(2.0))
        else:
            self.omega = (k + 0.5) * math.pi
            self.amp = np.full(K, math.sqrt(2.0))
        self.mu = 0.5 * self.omega ** 2

    def eval_matrix(self, s) -> np.ndarray:
        """Matrix phi_k(s_j), shape (K, len(s))."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return self.amp[:, None] * np.cos(self.omega[:, None] * s[None, :])

    def project(self, f, panels: int | None = None) -> np.ndarray:
        """Coefficients <f, phi_k> by composite Gauss-Legendre quadrature.

        ``f`` is a callable on [0,1].  Panel count defaults to enough to
        resolve the highest mode (about 3 panels per wavelength).
        """
        if panels is None:
            panels = max(16, int(0.75 * self.K) + 1)
        edges = np.linspace(0.0, 1.0, panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1] - edges[0])
        nodes = (mid[:, None] + half * _GL_NODES[None, :]).ravel()
        weights = np.tile(half * _GL_WEIGHTS, panels)
        vals = np.asarray(f(nodes), dtype=float)
        return self.eval_matrix(nodes) @ (weights * vals)

    def mode_integrals(self) -> np.ndarray:
        """Exact integrals of phi_k over [0,1] (the coefficients of f == 1)."""
        k = np.arange(self.K)
        if self.bc == NEUMANN:
            out = np.zeros(self.K)
            out[0] = 1.0
            return out
        return math.sqrt(2.0) * (-1.0) ** k / self.omega

    def green_at_zero(self, s) -> np.ndarray:
        """Closed form of sum_k phi_k(s) phi_k(0) / mu_k (zero mode excluded).

        Green function of -(1/2) d^2/ds^2 with these boundary conditions and a
        unit source at the interface end; used for spectral-tail corrections.
        """
        s = np.asarray(s, dtype=float)
        if self.bc == MIXED:
            return 2.0 * (1.0 - s)
        return 2.0 / 3.0 - 2.0 * s + s ** 2

    def green2_at_zero(self, s) -> np.ndarray:
        """Closed form of sum_k phi_k(s) phi_k(0) / mu_k^2 (zero mode excluded)."""
        s = np.asarray(s, dtype=float)
        if self.bc == MIXED:
            return (2.0 / 3.0) * s ** 3 - 2.0 * s ** 2 + 4.0 / 3.0
        return 8.0 * (1.0 / 90.0 - s ** 2 / 12.0 + s ** 3 / 12.0 - s ** 4 / 48.0)


def _gauss_images(t: float, u: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """sum over n of phi_t(u + shift_n), phi_t the N(0, t) density."""
    z = u[..., None] + shifts
    return np.exp(-z ** 2 / (2.0 * t)).sum(axis=-1) / math.sqrt(2.0 * math.pi * t)


def image_kernel1d(bc: str, t: float, x, y) -> np.ndarray | float:
    """Method-of-images evaluation of the 1-d kernel; oracle for the series.

    Neumann on both ends: images at y - x + 2n and y + x + 2n.  Mixed
    (reflecting 0, absorbing 1): even extension to [-1,1] of the Dirichlet
    kernel there, period-4 images with alternating sign.
    """
    if t <= 0:
        raise ValueError("image_kernel1d needs t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nmax = int(math.ceil((8.0 * math.sqrt(t) + 2.0) / 2.0)) + 1
    if bc == NEUMANN:
        n = 2.0 * np.arange(-nmax, nmax + 1)
        out = _gauss_images(t, y - x, n) + _gauss_images(t, y + x, n)
    elif bc == MIXED:
        n = 4.0 * np.arange(-nmax, nmax + 1)

        def dirichlet_sym(a, b):
            return _gauss_images(t, b - a, n) - _gauss_images(t, b + a + 2.0, n)

        out = dirichlet_sym(x, y) + dirichlet_sym(x, -y)
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    return out if out.ndim else float(out)


def kernel1d(bc: str, t: float, x, y, K: int | None = None,
             tol: float = 1e-12) -> np.ndarray | float:
    """1-d transition density p(t, x, y) w.r.t. Lebesgue measure.

    Spectral sum with truncation chosen from the tail bound; switches to the
    image representation for t < 1e-3 where the series is slow.  An explicit
    ``K`` that cannot meet ``tol`` is refused with the required value.
    """
    if t <= 0:
        raise ValueError("kernel1d needs t > 0")
    need = required_modes(t, tol)
    if K is not None and K < need:
        raise ValueError(
            f"truncation K={K} too small for t={t}: tail bound exceeds "
            f"{tol}; need K >= {need}"
        )
    if t < 1e-3 and K is None:
        return image_kernel1d(bc, t, x, y)
    basis = Eigenbasis1D(bc, K if K is not None else need)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scalar = x.ndim == 0 and y.ndim == 0
    px = basis.eval_matrix(x)
    py = basis.eval_matrix(y)
    decay = np.exp(-basis.mu * t)
    out = np.einsum("k,ki,ki->i", decay, px, py) if px.shape == py.shape else (
        (decay[:, None] * px).T @ py
    )
    return float(out[0]) if scalar else out


class SideKernel:
    """Product kernel for one side of the system.

    Tangential axes always reflect (Neumann); the normal axis is mixed when
    the harvest face is active, Neumann otherwise.  Symmetric and sub-Markov,
    with equality iff there is no absorbing factor.  Immutable; evaluation is
    pure.  Coordinates are the internal frame.
    """

    def __init__(self, dim: int, harvest: bool):
        self.dim = dim
        self.harvest = harvest
        self.bcs = [NEUMANN] * (dim - 1) + [MIXED if harvest else NEUMANN]

    def kernel_eval(self, t: float, x, y, tol: float = 1e-12) -> np.ndarray | float:
        """p(t, x, y) for points in the closed internal box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.ones(max(x.shape[0], y.shape[0]))
        for ax, bc in enumerate(self.bcs):
            out = out * kernel1d(bc, t, x[:, ax], y[:, ax], tol=tol)
        return float(out[0]) if out.size == 1 else out

    def surface_kernel(self, t: float, x, z_tangential=None) -> np.ndarray | float:
        """Kernel against an interface point: normal coordinate of y pinned to 0.

        For d = 1 this is the point evaluation p(t, x, 0); for d >= 2 pass the
        tangential coordinates of z.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            z = np.zeros((1, 1))
        else:
            zt = np.atleast_2d(np.asarray(z_tangential, dtype=float))
            z = np.concatenate([zt, np.zeros((zt.shape[0], 1))], axis=1)
        return self.kernel_eval(t, x, z)

    def semigroup_apply(self, t: float, f, s_out, K: int | None = None):
        """(P_t f)(s_out) for a callable f on the internal box (d = 1 only here).

        t = 0 returns f sampled at s_out.  Nonnegative f maps to nonnegative
        values up to spectral-truncation ripple; sup-norm contraction.
        """
        if self.dim != 1:
            raise NotImplementedError("semigroup_apply is 1-d; tensor use via pde")
        if t < 0:
            raise ValueError("semigroup_apply needs t >= 0")
        s_out = np.atleast_1d(np.asarray(s_out, dtype=float))
        if t == 0.0:
            return np.asarray(f(s_out), dtype=float)
        Kt = K if K is not None else max(required_modes(t), 64)
        if K is not None and K < required_modes(t):
            raise ValueError(
                f"truncation K={K} too small for t={t}; need K >= {required_modes(t)}"
            )
        basis = Eigenbasis1D(self.bcs[0], Kt)
        coeff = basis.project(f)
        return (np.exp(-basis.mu * t) * coeff) @ basis.eval_matrix(s_out)

    def survival(self, t: float, x, K: int | None = None) -> np.ndarray | float:
        """Probability that a particle started at x is not yet harvested at t."""
        if self.dim != 1:
            raise NotImplementedError
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if t == 0.0:
            out = np.ones_like(x)
            return float(out[0]) if out.size == 1 else out
        basis = Eigenbasis1D(self.bcs[0], K if K is not None else max(required_modes(t), 64))
        weights = basis.mode_integrals() * np.exp(-basis.mu * t)
        out = weights @ basis.eval_matrix(x)
        return float(out[0]) if out.size == 1 else out
