"""Deterministic solvers for the coupled limit system.

The limit of the particle system is the pair (u_+, u_-) solving, per side,

    du/dt = (1/2) s Lap u + b . grad u        in the box,
    u = 0                                     on the harvest face,
    s * du/dn_inward = lam * u_+ u_-          on the interface,
    du/dn = 0                                 on the remaining faces,

equivalently the mild (Duhamel) integral equation

    u_+(t) = P_t u0_+ - (1/2) int_0^t int_I p(t-r, ., z) lam u_+(r,z) u_-(r,z)
             dsigma(z) dr

and symmetrically for u_-.  The 1/2 in front of the interface integral pairs
with the 1/2 in the generator; by Green's identity the instantaneous mass
drain per side through the interface is (lam/2) int_I u_+ u_- dsigma, and that
is the quantity the particle system's annihilation count converges to.

Two independent solvers are provided:

* ``solve_mild``: spectral Duhamel time stepping (driftless, the reference).
  Coefficients evolve exactly per mode; the interface source is resolved by
  within-step Picard iteration on the interface trace, with piecewise-linear
  product integration in time.  In d=1 the spectral tails beyond the tracked
  modes are summed in closed form, so the solver is limited only by the time
  step.
* ``solve_fd``: explicit method-of-lines finite differences with ghost-point
  boundary fluxes; supports constant drift.

Everything runs in the internal frame (interface at s=0, harvest face at
s=1 on both sides); ``BoxGeometry.to_physical`` maps back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxGeometry, MINUS, PLUS
from .kernels import MIXED, NEUMANN, Eigenbasis1D


class NumericalRefusal(RuntimeError):
    """Raised when a solver cannot meet its accuracy contract as configured."""


@dataclass
class SolverParams:
    """Resolution knobs for both solvers."""

    n_grid: int = 200            # spatial grid intervals for saved fields
    dt: float = 1.0 / 512.0      # mild solver time step
    fd_h: float = 1.0 / 200.0    # FD oracle spatial step
    fd_dt: float | None = None   # FD time step; default 0.9 * CFL
    save_every: float = 0.05     # field save stride (time units)
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    n_modes_tan: int = 48        # d=2: tangential modes = tangential grid cells
    n_modes_norm: int = 512      # d=2: tracked normal modes

    def __post_init__(self):
        if self.dt <= 0 or self.fd_h <= 0:
            raise ValueError("dt and fd_h must be positive")


@dataclass
class CoupledSolution:
    """Space-time solution of the coupled system on one save grid.

    ``times`` are the save instants (always including 0 and T); ``u_plus`` /
    ``u_minus`` hold the fields at those instants on the internal grid(s).
    Traces and the running annihilated-mass integral are kept at every solver
    step for accurate time quadrature.
    """

    dim: int
    lam: float
    T: float
    method: str
    times: np.ndarray                 # (S,)
    s_grid: np.ndarray                # (n+1,) for d=1; normal grid for d=2
    u_plus: np.ndarray                # (S, n+1) or (S, n_tan+1, n_norm+1)
    u_minus: np.ndarray
    trace_times: np.ndarray           # (M+1,) every solver step
    trace_plus: np.ndarray            # (M+1,) or (M+1, n_tan+1)
    trace_minus: np.ndarray
    annihilated: np.ndarray           # (M+1,) running (lam/2) int int u+ u-
    mass_plus: np.ndarray             # (S,)
    mass_minus: np.ndarray
    tan_grid: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def save_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 + 1e-6 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a save time (nearest {self.times[i]})")
        return i

    def field_at(self, t: float, side: str) -> np.ndarray:
        i = self.save_index(t)
        return self.u_plus[i] if side == PLUS else self.u_minus[i]

    def mass_at(self, t: float, side: str) -> float:
        i = self.save_index(t)
        return float((self.mass_plus if side == PLUS else self.mass_minus)[i])

    def trace_at(self, t: float, side: str):
        tr = self.trace_plus if side == PLUS else self.trace_minus
        return np.interp(t, self.trace_times, tr) if tr.ndim == 1 else tr[
            int(round(t / (self.trace_times[1] - self.trace_times[0])))
        ]

    def annihilated_at(self, t: float) -> float:
        return float(np.interp(t, self.trace_times, self.annihilated))


def annihilated_mass(sol: CoupledSolution, T: float | None = None) -> float:
    """Mass lost per side to interface annihilation by time T.

    This is the interface drain of the mild equation,
    (lam/2) int_0^T int_I u_+ u_- dsigma dt, the same quantity the particle
    system's (annihilation count)/N estimates.  Symmetric between sides.
    """
    return sol.annihilated_at(sol.T if T is None else T)


def harvested_mass(sol: CoupledSolution, side: str, T: float | None = None) -> float:
    """Mass absorbed at the harvest face of ``side`` by time T.

    Computed as initial mass - current mass - annihilated mass; with unit
    initial mass this is the asymptotic harvested-charge formula.  Lies in
    [0, 1].
    """
    t = sol.T if T is None else T
    m0 = sol.mass_at(0.0, side)
    return m0 - sol.mass_at(t, side) - annihilated_mass(sol, t)


def _snap_time_grid(T: float, dt: float, save_every: float):
    """Adjust dt so that save instants land exactly on the step grid.

    Returns (dt, M, save_idx) with M*dt = T and saves at multiples of
    T / n_saves closest to the requested stride.
    """
    n_saves = max(1, int(round(T / min(save_every, T))))
    per = max(1, int(round((T / n_saves) / dt)))
    dt = T / (n_saves * per)
    M = n_saves * per
    return dt, M, np.arange(0, M + 1, per)


# ---------------------------------------------------------------------------
# Spectral Duhamel (mild) solver
# ---------------------------------------------------------------------------


def _step_weights(mu: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact mode integrals of the within-step linear source.

    Ia(mu) = int_0^dt exp(-mu s)(1 - s/dt) ds  (weight of the new endpoint),
    Ib(mu) = int_0^dt exp(-mu s)(s/dt) ds      (weight of the old endpoint).
    """
    out_a = np.empty_like(mu)
    out_b = np.empty_like(mu)
    pos = mu > 0
    m = mu[pos]
    em = np.exp(-m * dt)
    one_minus = -np.expm1(-m * dt)
    ib = (one_minus - m * dt * em) / (m ** 2 * dt)
    out_b[pos] = ib
    out_a[pos] = one_minus / m - ib
    out_a[~pos] = dt / 2.0
    out_b[~pos] = dt / 2.0
    return out_a, out_b


class _MildSide1D:
    """One side's spectral state: tracked modes plus closed-form tails.

    Tracked modes cover everything that survives one time step
    (exp(-mu dt) >= 1e-18); contributions of higher modes decay within a
    single step, so only the current step's source injection lives there and
    is summed in closed form via the basis Green functions.
    """

    def __init__(self, bc: str, dt: float, u0, s_grid: np.ndarray):
        k_alive = int(math.ceil(math.sqrt(2.0 * 41.5 / dt) / math.pi)) + 1
        self.K = k_alive + 32
        self.basis = Eigenbasis1D(bc, self.K)
        self.dt = dt
        self.c = self.basis.project(u0, panels=max(64, self.K))
        self.phi0 = self.basis.eval_matrix(np.zeros(1))[:, 0]
        self.decay = np.exp(-self.basis.mu * dt)
        self.Ia, self.Ib = _step_weights(self.basis.mu, dt)
        self.grid = s_grid
        self.phi_grid = self.basis.eval_matrix(s_grid)
        self.nu_modes = self.basis.mode_integrals()
        # closed-form tails over modes k >= K: sums of phi_k(x) phi_k(0) / mu_k^p
        mu = self.basis.mu
        live = mu > 0
        part1_0 = float(np.sum(self.phi0[live] ** 2 / mu[live]))
        part2_0 = float(np.sum(self.phi0[live] ** 2 / mu[live] ** 2))
        self.tail1_0 = float(self.basis.green_at_zero(np.zeros(1))[0]) - part1_0
        self.tail2_0 = float(self.basis.green2_at_zero(np.zeros(1))[0]) - part2_0
        pg1 = (self.phi_grid[live] * self.phi0[live, None] / mu[live, None]).sum(axis=0)
        pg2 = (self.phi_grid[live] * self.phi0[live, None] / mu[live, None] ** 2).sum(axis=0)
        self.tail1_grid = self.basis.green_at_zero(s_grid) - pg1
        self.tail2_grid = self.basis.green2_at_zero(s_grid) - pg2
        if bc == MIXED:
            pm1 = float(np.sum(self.phi0[live] * self.nu_modes[live] / mu[live]))
            pm2 = float(np.sum(self.phi0[live] * self.nu_modes[live] / mu[live] ** 2))
            self.tail1_mass = 1.0 - pm1
            self.tail2_mass = 5.0 / 6.0 - pm2
        else:
            self.tail1_mass = 0.0
            self.tail2_mass = 0.0
        # last step's source endpoints, for tail evaluation
        self.w_old = 0.0
        self.w_new = 0.0

    # tail weights: for k >= K, exp(-mu dt) ~ 0 so Ia -> 1/mu - 1/(mu^2 dt)
    # and Ib -> 1/(mu^2 dt); only the current step's injection survives.
    def _tail(self, t1, t2) -> tuple[float, float]:
        wa = t1 - t2 / self.dt
        wb = t2 / self.dt
        return wa, wb

    def begin_step(self, w_old: float):
        self.w_old = w_old
        self.w_old_part_trace = w_old * (
            float((self.Ib * self.phi0) @ self.phi0)
            + self._tail(self.tail1_0, self.tail2_0)[1]
        )

    def trace_gain(self) -> float:
        """Coefficient of w_new in the interface trace (Picard slope)."""
        return 0.5 * (
            float((self.Ia * self.phi0) @ self.phi0)
            + self._tail(self.tail1_0, self.tail2_0)[0]
        )

    def commit(self, w_new: float):
        self.w_new = w_new
        self.c = self.decay * self.c - 0.5 * self.phi0 * (
            w_new * self.Ia + self.w_old * self.Ib
        )

    def trace(self) -> float:
        wa, wb = self._tail(self.tail1_0, self.tail2_0)
        return float(self.c @ self.phi0) - 0.5 * (self.w_new * wa + self.w_old * wb)

    def field(self) -> np.ndarray:
        wa1, wb1 = self._tail(self.tail1_grid, self.tail2_grid)
        return self.c @ self.phi_grid - 0.5 * (self.w_new * wa1 + self.w_old * wb1)

    def mass(self) -> float:
        wa, wb = self._tail(self.tail1_mass, self.tail2_mass)
        return float(self.c @ self.nu_modes) - 0.5 * (self.w_new * wa + self.w_old * wb)


def _initial_trace(u0_int) -> float:
    return float(np.asarray(u0_int(np.zeros(1)), dtype=float)[0])


def solve_mild(u0_plus, u0_minus, lam: float, T: float,
               params: SolverParams | None = None,
               geom: BoxGeometry | None = None,
               drift_plus=None, drift_minus=None) -> CoupledSolution:
    """Solve the coupled mild integral equation by spectral Duhamel stepping.

    ``u0_plus`` / ``u0_minus`` are callables in physical coordinates,
    continuous, nonnegative, vanishing on the active harvest face.  The
    spectral path requires no drift; with drift the call delegates to
    ``solve_fd``.  Refuses (``NumericalRefusal``) when the within-step Picard
    iteration is not contracting for the given dt and lam.
    """
    params = params or SolverParams()
    geom = geom or BoxGeometry(1)
    if _has_drift(drift_plus) or _has_drift(drift_minus):
        return solve_fd(u0_plus, u0_minus, lam, T, params, geom,
                        drift_plus, drift_minus)
    if geom.dim == 1:
        return _solve_mild_1d(u0_plus, u0_minus, lam, T, params, geom)
    if geom.dim == 2:
        return _solve_mild_2d(u0_plus, u0_minus, lam, T, params, geom)
    raise NotImplementedError("mild solver supports d = 1 and 2")


def _has_drift(drift) -> bool:
    return drift is not None and np.any(np.asarray(getattr(drift, "b", drift)) != 0)


def _internal_u0(u0, side: str, geom: BoxGeometry):
    """Wrap a physical-coordinate callable into the internal frame."""

    if geom.dim == 1:
        def wrapped(s):
            s = np.asarray(s, dtype=float)
            x = s if side == PLUS else -s
            return np.asarray(u0(x), dtype=float)
    else:
        def wrapped(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            return np.asarray(u0(geom.to_physical(side, pts)), dtype=float)
    return wrapped


def _solve_mild_1d(u0_plus, u0_minus, lam, T, params, geom) -> CoupledSolution:
    dt, M, save_idx = _snap_time_grid(T, params.dt, params.save_every)
    s_grid = np.linspace(0.0, 1.0, params.n_grid + 1)
    u0p = _internal_u0(u0_plus, PLUS, geom)
    u0m = _internal_u0(u0_minus, MINUS, geom)
    sp = _MildSide1D(MIXED if geom.harvest_plus else NEUMANN, dt, u0p, s_grid)
    sm = _MildSide1D(MIXED if geom.harvest_minus else NEUMANN, dt, u0m, s_grid)

    n_save = len(save_idx)
    u_plus = np.empty((n_save, len(s_grid)))
    u_minus = np.empty((n_save, len(s_grid)))
    mass_p = np.empty(n_save)
    mass_m = np.empty(n_save)
    traces_p = np.empty(M + 1)
    traces_m = np.empty(M + 1)
    ann = np.zeros(M + 1)

    a = _initial_trace(u0p)
    b = _initial_trace(u0m)
    traces_p[0], traces_m[0] = a, b
    u_plus[0] = u0p(s_grid)
    u_minus[0] = u0m(s_grid)
    mass_p[0] = np.trapezoid(u_plus[0], s_grid)
    mass_m[0] = np.trapezoid(u_minus[0], s_grid)
    save_pos = 1

    for n in range(M):
        w_old = lam * a * b
        sp.begin_step(w_old)
        sm.begin_step(w_old)
        # base trace value excluding the new-endpoint source
        base_p = float((sp.decay * sp.c) @ sp.phi0) - 0.5 * sp.w_old_part_trace
        base_m = float((sm.decay * sm.c) @ sm.phi0) - 0.5 * sm.w_old_part_trace
        gain_p = sp.trace_gain()
        gain_m = sm.trace_gain()
        contraction = lam * (gain_p + gain_m) * (abs(a) + abs(b) + 1.0)
        if contraction >= 1.0:
            raise NumericalRefusal(
                f"Picard not contracting at dt={dt:g}, lam={lam:g}; "
                f"retry with dt <= {dt / 4:g}"
            )
        an, bn = a, b
        for _ in range(params.picard_max_iter):
            w = lam * an * bn
            an1 = base_p - gain_p * w
            bn1 = base_m - gain_m * w
            if abs(an1 - an) + abs(bn1 - bn) < params.picard_tol:
                an, bn = an1, bn1
                break
            an, bn = an1, bn1
        else:
            raise NumericalRefusal(
                f"Picard failed to converge in {params.picard_max_iter} "
                f"iterations at step {n}; retry with dt <= {dt / 4:g}"
            )
        w_new = lam * an * bn
        sp.commit(w_new)
        sm.commit(w_new)
        a_prev_b_prev = a * b
        a, b = sp.trace(), sm.trace()
        traces_p[n + 1], traces_m[n + 1] = a, b
        ann[n + 1] = ann[n] + 0.5 * lam * 0.5 * dt * (a_prev_b_prev + a * b)
        if save_pos < n_save and n + 1 == save_idx[save_pos]:
            u_plus[save_pos] = sp.field()
            u_minus[save_pos] = sm.field()
            mass_p[save_pos] = sp.mass()
            mass_m[save_pos] = sm.mass()
            save_pos += 1

    mass_p[0] = float(sp.nu_modes @ sp.basis.project(u0p, panels=max(64, sp.K)))
    mass_m[0] = float(sm.nu_modes @ sm.basis.project(u0m, panels=max(64, sm.K)))
    times = save_idx * dt
    return CoupledSolution(
        dim=1, lam=lam, T=T, method="mild", times=times, s_grid=s_grid,
        u_plus=u_plus, u_minus=u_minus,
        trace_times=np.arange(M + 1) * dt,
        trace_plus=traces_p, trace_minus=traces_m, annihilated=ann,
        mass_plus=mass_p, mass_minus=mass_m,
        meta={"dt": dt, "modes": sp.K},
    )


class _MildSide2D:
    """Tensor-mode state for one side in d = 2 (tangential x normal)."""

    def __init__(self, bc_norm: str, dt: float, u0_int, tan_grid, norm_grid,
                 n_modes_tan: int, n_modes_norm: int):
        self.tan = Eigenbasis1D(NEUMANN, n_modes_tan)
        self.norm = Eigenbasis1D(bc_norm, n_modes_norm)
        self.dt = dt
        mu = self.tan.mu[:, None] + self.norm.mu[None, :]
        self.decay = np.exp(-mu * dt)
        self.Ia, self.Ib = _step_weights(mu.ravel(), dt)
        self.Ia = self.Ia.reshape(mu.shape)
        self.Ib = self.Ib.reshape(mu.shape)
        self.phi0n = self.norm.eval_matrix(np.zeros(1))[:, 0]
        self.phi_tan = self.tan.eval_matrix(tan_grid)      # (Kt, nt)
        self.phi_norm = self.norm.eval_matrix(norm_grid)   # (Kn, nn)
        self.tan_grid = tan_grid
        self.trap_w = np.full(len(tan_grid), tan_grid[1] - tan_grid[0])
        self.trap_w[[0, -1]] *= 0.5
        # separable Gauss-Legendre projection of the initial data
        nodes_t, w_t = _panel_nodes(max(48, n_modes_tan))
        nodes_n, w_n = _panel_nodes(max(64, min(n_modes_norm, 512)))
        ptn = self.tan.eval_matrix(nodes_t) * w_t
        pnn = self.norm.eval_matrix(nodes_n) * w_n
        X, Y = np.meshgrid(nodes_t, nodes_n, indexing="ij")
        vals = u0_int(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
        self.c = ptn @ vals @ pnn.T
        self.w_old = np.zeros(n_modes_tan)
        self.w_new = np.zeros(n_modes_tan)
        self.nu_t = self.tan.mode_integrals()
        self.nu_n = self.norm.mode_integrals()

    def source_coeffs(self, w_grid: np.ndarray) -> np.ndarray:
        """Tangential mode coefficients of the interface source (trapezoid)."""
        return self.phi_tan @ (self.trap_w * w_grid)

    def begin_step(self, w_old_grid: np.ndarray):
        self.w_old = self.source_coeffs(w_old_grid)

    def trace_parts(self):
        base = ((self.decay * self.c) @ self.phi0n) @ self.phi_tan
        old = 0.5 * (((self.Ib * self.phi0n[None, :]) @ self.phi0n)
                     * self.w_old) @ self.phi_tan
        gain_diag = 0.5 * ((self.Ia * self.phi0n[None, :]) @ self.phi0n)
        return base - old, gain_diag

    def commit(self, w_new_grid: np.ndarray):
        self.w_new = self.source_coeffs(w_new_grid)
        self.c = self.decay * self.c - 0.5 * self.phi0n[None, :] * (
            self.w_new[:, None] * self.Ia + self.w_old[:, None] * self.Ib
        )

    def trace(self) -> np.ndarray:
        return (self.c @ self.phi0n) @ self.phi_tan

    def field(self) -> np.ndarray:
        return self.phi_tan.T @ self.c @ self.phi_norm

    def mass(self) -> float:
        return float(self.nu_t @ self.c @ self.nu_n)


def _panel_nodes(n_modes: int):
    panels = max(16, int(0.75 * n_modes) + 1)
    gl_x, gl_w = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1] - edges[0])
    nodes = (mid[:, None] + half * gl_x[None, :]).ravel()
    weights = np.tile(half * gl_w, panels)
    return nodes, weights


def _solve_mild_2d(u0_plus, u0_minus, lam, T, params, geom) -> CoupledSolution:
    dt, M, save_idx = _snap_time_grid(T, params.dt, params.save_every)
    nt = params.n_modes_tan
    tan_grid = np.linspace(0.0, 1.0, nt + 1)
    norm_grid = np.linspace(0.0, 1.0, params.n_grid + 1)
    u0p = _internal_u0(u0_plus, PLUS, geom)
    u0m = _internal_u0(u0_minus, MINUS, geom)
    sp = _MildSide2D(MIXED if geom.harvest_plus else NEUMANN, dt, u0p,
                     tan_grid, norm_grid, nt, params.n_modes_norm)
    sm = _MildSide2D(MIXED if geom.harvest_minus else NEUMANN, dt, u0m,
                     tan_grid, norm_grid, nt, params.n_modes_norm)

    n_save = len(save_idx)
    shape = (len(tan_grid), len(norm_grid))
    u_plus = np.empty((n_save,) + shape)
    u_minus = np.empty((n_save,) + shape)
    mass_p = np.empty(n_save)
    mass_m = np.empty(n_save)
    traces_p = np.empty((M + 1, len(tan_grid)))
    traces_m = np.empty((M + 1, len(tan_grid)))
    ann = np.zeros(M + 1)
    trap = sp.trap_w

    iface = np.column_stack([tan_grid, np.zeros_like(tan_grid)])
    a = u0p(iface)
    b = u0m(iface)
    traces_p[0], traces_m[0] = a, b
    X, Y = np.meshgrid(tan_grid, norm_grid, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    u_plus[0] = u0p(pts).reshape(shape)
    u_minus[0] = u0m(pts).reshape(shape)
    mass_p[0] = float(sp.nu_t @ sp.c @ sp.nu_n)
    mass_m[0] = float(sm.nu_t @ sm.c @ sm.nu_n)
    save_pos = 1

    for n in range(M):
        w_old = lam * a * b
        sp.begin_step(w_old)
        sm.begin_step(w_old)
        base_p, gain_p = sp.trace_parts()
        base_m, gain_m = sm.trace_parts()
        an, bn = a.copy(), b.copy()
        for _ in range(params.picard_max_iter):
            w = lam * an * bn
            wc_p = sp.source_coeffs(w)
            wc_m = sm.source_coeffs(w)
            an1 = base_p - (gain_p * wc_p) @ sp.phi_tan
            bn1 = base_m - (gain_m * wc_m) @ sm.phi_tan
            delta = np.max(np.abs(an1 - an)) + np.max(np.abs(bn1 - bn))
            an, bn = an1, bn1
            if delta < params.picard_tol:
                break
        else:
            raise NumericalRefusal(
                f"Picard failed to converge at step {n}; retry with smaller dt"
            )
        w_new = lam * an * bn
        sp.commit(w_new)
        sm.commit(w_new)
        prod_old = float(trap @ (a * b))
        a, b = sp.trace(), sm.trace()
        prod_new = float(trap @ (a * b))
        traces_p[n + 1], traces_m[n + 1] = a, b
        ann[n + 1] = ann[n] + 0.25 * lam * dt * (prod_old + prod_new)
        if save_pos < n_save and n + 1 == save_idx[save_pos]:
            u_plus[save_pos] = sp.field()
            u_minus[save_pos] = sm.field()
            mass_p[save_pos] = sp.mass()
            mass_m[save_pos] = sm.mass()
            save_pos += 1

    times = save_idx * dt
    return CoupledSolution(
        dim=2, lam=lam, T=T, method="mild", times=times, s_grid=norm_grid,
        u_plus=u_plus, u_minus=u_minus,
        trace_times=np.arange(M + 1) * dt,
        trace_plus=traces_p, trace_minus=traces_m, annihilated=ann,
        mass_plus=mass_p, mass_minus=mass_m, tan_grid=tan_grid,
        meta={"dt": dt},
    )


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def _drift_internal(drift, side: str, dim: int) -> np.ndarray:
    if drift is None:
        return np.zeros(dim)
    b = np.asarray(getattr(drift, "b", drift), dtype=float) * np.ones(dim)
    if side == MINUS:
        b = b.copy()
        b[-1] = -b[-1]
    return b


def solve_fd(u0_plus, u0_minus, lam: float, T: float,
             params: SolverParams | None = None,
             geom: BoxGeometry | None = None,
             drift_plus=None, drift_minus=None,
             s_diff: float = 1.0) -> CoupledSolution:
    """Explicit method-of-lines solver; the in-repo oracle for ``solve_mild``.

    Ghost points realize the boundary conditions: zero value on the active
    harvest face, inward-derivative flux lam*u+*u-/s on the interface, zero
    flux elsewhere.  Refuses when the CFL condition dt <= h^2/(2 d s) fails,
    or when the solution undershoots below -1e-9 (a resolution failure;
    values are never clipped).
    """
    params = params or SolverParams()
    geom = geom or BoxGeometry(1)
    h = params.fd_h
    n = int(round(1.0 / h))
    h = 1.0 / n
    cfl = h * h / (2.0 * geom.dim * s_diff)
    dt0 = params.fd_dt if params.fd_dt is not None else 0.9 * cfl
    if dt0 > cfl * (1 + 1e-12):
        raise NumericalRefusal(
            f"CFL violation: dt={dt0:g} > h^2/(2 d s)={cfl:g}; decrease fd_dt"
        )
    dt, M, save_idx = _snap_time_grid(T, dt0, params.save_every)
    while dt > cfl * (1 + 1e-12):
        n_saves = len(save_idx) - 1
        per = M // max(1, n_saves) + 1
        M = per * max(1, n_saves)
        dt = T / M
        save_idx = np.arange(0, M + 1, per)
    if geom.dim == 1:
        return _solve_fd_1d(u0_plus, u0_minus, lam, T, params, geom, n, dt,
                            save_idx, drift_plus, drift_minus, s_diff)
    if geom.dim == 2:
        return _solve_fd_2d(u0_plus, u0_minus, lam, T, params, geom, n, dt,
                            save_idx, drift_plus, drift_minus, s_diff)
    raise NotImplementedError("FD solver supports d = 1 and 2")


def _check_nonneg(u: np.ndarray, step: int):
    m = float(u.min())
    if m < -1e-9:
        raise NumericalRefusal(
            f"negative undershoot {m:g} at step {step}: resolution failure"
        )


def _solve_fd_1d(u0_plus, u0_minus, lam, T, params, geom, n, dt,
                 save_idx, drift_plus, drift_minus, s_diff) -> CoupledSolution:
    h = 1.0 / n
    s_grid = np.linspace(0.0, 1.0, n + 1)
    u0p = _internal_u0(u0_plus, PLUS, geom)
    u0m = _internal_u0(u0_minus, MINUS, geom)
    up = np.asarray(u0p(s_grid), dtype=float).copy()
    um = np.asarray(u0m(s_grid), dtype=float).copy()
    bp = _drift_internal(drift_plus, PLUS, 1)[0]
    bm = _drift_internal(drift_minus, MINUS, 1)[0]
    M = int(save_idx[-1])
    n_save = len(save_idx)
    u_plus = np.empty((n_save, n + 1))
    u_minus = np.empty((n_save, n + 1))
    mass_p = np.empty(n_save)
    mass_m = np.empty(n_save)
    traces_p = np.empty(M + 1)
    traces_m = np.empty(M + 1)
    ann = np.zeros(M + 1)
    rho_p = np.exp(2.0 * bp * s_grid / s_diff)
    rho_m = np.exp(2.0 * bm * s_grid / s_diff)

    def mass(u, rho):
        return float(np.trapezoid(u * rho, s_grid))

    def step(u, b, harvest, w_iface):
        ghost_lo = u[1] - 2.0 * h * (w_iface / s_diff)
        ghost_hi = u[-2] if not harvest else None
        lap = np.empty_like(u)
        lap[1:-1] = u[2:] - 2.0 * u[1:-1] + u[:-2]
        lap[0] = u[1] - 2.0 * u[0] + ghost_lo
        grad = np.empty_like(u)
        grad[1:-1] = u[2:] - u[:-2]
        grad[0] = u[1] - ghost_lo
        if harvest:
            lap[-1] = 0.0
            grad[-1] = 0.0
        else:
            lap[-1] = ghost_hi - 2.0 * u[-1] + u[-2]
            grad[-1] = ghost_hi - u[-2]
        un = u + dt * (0.5 * s_diff * lap / h ** 2 + b * grad / (2.0 * h))
        if harvest:
            un[-1] = 0.0
        return un

    u_plus[0], u_minus[0] = up, um
    mass_p[0], mass_m[0] = mass(up, rho_p), mass(um, rho_m)
    traces_p[0], traces_m[0] = up[0], um[0]
    save_pos = 1
    for k in range(M):
        w = lam * up[0] * um[0]
        prod_old = up[0] * um[0]
        up_n = step(up, bp, geom.harvest_plus, w)
        um_n = step(um, bm, geom.harvest_minus, w)
        up, um = up_n, um_n
        if k % 256 == 0:
            _check_nonneg(up, k)
            _check_nonneg(um, k)
        traces_p[k + 1], traces_m[k + 1] = up[0], um[0]
        ann[k + 1] = ann[k] + 0.25 * lam * dt * (prod_old + up[0] * um[0])
        if save_pos < n_save and k + 1 == save_idx[save_pos]:
            u_plus[save_pos], u_minus[save_pos] = up, um
            mass_p[save_pos], mass_m[save_pos] = mass(up, rho_p), mass(um, rho_m)
            save_pos += 1
    _check_nonneg(up, M)
    _check_nonneg(um, M)

    return CoupledSolution(
        dim=1, lam=lam, T=T, method="fd", times=save_idx * dt, s_grid=s_grid,
        u_plus=u_plus, u_minus=u_minus,
        trace_times=np.arange(M + 1) * dt,
        trace_plus=traces_p, trace_minus=traces_m, annihilated=ann,
        mass_plus=mass_p, mass_minus=mass_m,
        meta={"h": h, "dt": dt},
    )


def _solve_fd_2d(u0_plus, u0_minus, lam, T, params, geom, n, dt,
                 save_idx, drift_plus, drift_minus, s_diff) -> CoupledSolution:
    h = 1.0 / n
    g1 = np.linspace(0.0, 1.0, n + 1)
    u0p = _internal_u0(u0_plus, PLUS, geom)
    u0m = _internal_u0(u0_minus, MINUS, geom)
    X, Y = np.meshgrid(g1, g1, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    up = np.asarray(u0p(pts), dtype=float).reshape(X.shape).copy()
    um = np.asarray(u0m(pts), dtype=float).reshape(X.shape).copy()
    bp = _drift_internal(drift_plus, PLUS, 2)
    bm = _drift_internal(drift_minus, MINUS, 2)
    M = int(save_idx[-1])
    n_save = len(save_idx)
    u_plus = np.empty((n_save, n + 1, n + 1))
    u_minus = np.empty((n_save, n + 1, n + 1))
    mass_p = np.empty(n_save)
    mass_m = np.empty(n_save)
    traces_p = np.empty((M + 1, n + 1))
    traces_m = np.empty((M + 1, n + 1))
    ann = np.zeros(M + 1)
    trap = np.full(n + 1, h)
    trap[[0, -1]] *= 0.5

    def mass2(u):
        return float(trap @ u @ trap)

    def pad_axis(u, axis, lo_ghost, harvest):
        """Return (lower ghost line, upper ghost line) views for one axis."""
        if axis == 0:
            inner_lo, inner_hi = u[1], u[-2]
        else:
            inner_lo, inner_hi = u[:, 1], u[:, -2]
        lo = inner_lo - lo_ghost
        hi = None if harvest else inner_hi
        return lo, hi

    def step(u, b, harvest, w_iface):
        un = u.copy()
        # tangential axis 0: reflecting both ends
        lap = np.empty_like(u)
        lap[1:-1, :] = u[2:, :] - 2 * u[1:-1, :] + u[:-2, :]
        lap[0, :] = 2 * (u[1, :] - u[0, :])
        lap[-1, :] = 2 * (u[-2, :] - u[-1, :])
        grad0 = np.zeros_like(u)
        grad0[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * h)
        # normal axis 1: interface flux at index 0, harvest/reflect at -1
        lapn = np.empty_like(u)
        lapn[:, 1:-1] = u[:, 2:] - 2 * u[:, 1:-1] + u[:, :-2]
        ghost = u[:, 1] - 2.0 * h * (w_iface / s_diff)
        lapn[:, 0] = u[:, 1] - 2 * u[:, 0] + ghost
        gradn = np.zeros_like(u)
        gradn[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * h)
        gradn[:, 0] = (u[:, 1] - ghost) / (2 * h)
        if harvest:
            lapn[:, -1] = 0.0
        else:
            lapn[:, -1] = 2 * (u[:, -2] - u[:, -1])
        un += dt * (0.5 * s_diff * (lap + lapn) / h ** 2
                    + b[0] * grad0 + b[1] * gradn)
        if harvest:
            un[:, -1] = 0.0
        return un

    u_plus[0], u_minus[0] = up, um
    mass_p[0], mass_m[0] = mass2(up), mass2(um)
    traces_p[0], traces_m[0] = up[:, 0], um[:, 0]
    save_pos = 1
    for k in range(M):
        w = lam * up[:, 0] * um[:, 0]
        prod_old = float(trap @ (up[:, 0] * um[:, 0]))
        up_n = step(up, bp, geom.harvest_plus, w)
        um_n = step(um, bm, geom.harvest_minus, w)
        up, um = up_n, um_n
        if k % 512 == 0:
            _check_nonneg(up, k)
            _check_nonneg(um, k)
        traces_p[k + 1], traces_m[k + 1] = up[:, 0], um[:, 0]
        prod_new = float(trap @ (up[:, 0] * um[:, 0]))
        ann[k + 1] = ann[k] + 0.25 * lam * dt * (prod_old + prod_new)
        if save_pos < n_save and k + 1 == save_idx[save_pos]:
            u_plus[save_pos], u_minus[save_pos] = up, um
            mass_p[save_pos], mass_m[save_pos] = mass2(up), mass2(um)
            save_pos += 1
    _check_nonneg(up, M)
    _check_nonneg(um, M)

    return CoupledSolution(
        dim=2, lam=lam, T=T, method="fd", times=save_idx * dt, s_grid=g1,
        u_plus=u_plus, u_minus=u_minus,
        trace_times=np.arange(M + 1) * dt,
        trace_plus=traces_p, trace_minus=traces_m, annihilated=ann,
        mass_plus=mass_p, mass_minus=mass_m, tan_grid=g1,
        meta={"h": h, "dt": dt},
    )


def solution_to_csv(sol: CoupledSolution, path):
    """Serialize saved fields: columns t, x(, x2), u_plus, u_minus.

    The x column is the internal normal coordinate (distance from the
    interface); physical minus-side coordinates are its negation.  Rows are
    time-major, deterministic order, 17 significant digits.
    """
    with open(path, "w") as fh:
        if sol.dim == 1:
            fh.write("t,x,u_plus,u_minus\n")
            for i, t in enumerate(sol.times):
                for j, x in enumerate(sol.s_grid):
                    fh.write(f"{t:.17g},{x:.17g},{sol.u_plus[i, j]:.17g},"
                             f"{sol.u_minus[i, j]:.17g}\n")
        else:
            fh.write("t,x,x2,u_plus,u_minus\n")
            for i, t in enumerate(sol.times):
                for a, xt in enumerate(sol.tan_grid):
                    for j, x in enumerate(sol.s_grid):
                        fh.write(
                            f"{t:.17g},{xt:.17g},{x:.17g},"
                            f"{sol.u_plus[i, a, j]:.17g},"
                            f"{sol.u_minus[i, a, j]:.17g}\n"
                        )
