"""Path-level simulation of one reflected diffusion with harvest absorption.

Motion is Euler-Maruyama with exact mirror folding into the box (for zero
drift this reproduces the reflected transition law exactly at the sample
times).  Crossing the harvest face absorbs; when the proposal does not cross,
an optional Brownian-bridge correction kills with probability
exp(-2 (face - s0)(face - s1) / (s dt)), halving the boundary bias.

Also provides the occupation-strip estimator of the interface boundary local
time and the Feynman-Kac evaluation of the limit PDE's probabilistic
representation.  The local-time estimator (1/eps) * occupation time of the
strip {dist(x, I) < eps} is normalized so its mean is int_0^t p(s, x, 0) ds
(surface measure sigma as Revuz measure).  The Feynman-Kac exponent pairs the
annihilation weight with *half* that additive functional: the mild equation
carries the factor 1/2 from the half-Laplacian generator, which corresponds
to the Skorokhod-normalized local time (Revuz measure sigma/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .geometry import BoxGeometry, MINUS, PLUS


@dataclass(frozen=True)
class DriftSpec:
    """Constant drift b (physical frame) and scalar diffusion coefficient s.

    The generator is (1/2) s Lap + b . grad, the gradient drift of the density
    rho(x) = exp(2 b . x / s).
    """

    b: tuple[float, ...] | float = 0.0
    s: float = 1.0

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("diffusion coefficient s must be positive")
        if not np.all(np.isfinite(np.atleast_1d(self.b))):
            raise ValueError("drift must be finite")

    def b_vec(self, dim: int) -> np.ndarray:
        return np.asarray(self.b, dtype=float) * np.ones(dim)

    def b_internal(self, side: str, dim: int) -> np.ndarray:
        b = self.b_vec(dim).copy()
        if side == MINUS:
            b[-1] = -b[-1]
        return b

    def rho(self, side: str, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        b = self.b_vec(pts.shape[-1])
        return np.exp(2.0 * pts @ b / self.s)


ACTIVE, HARVESTED, ANNIHILATED = 0, 1, 2
_STATUS_NAMES = {ACTIVE: "active", HARVESTED: "harvested", ANNIHILATED: "annihilated"}


@dataclass
class ParticleRecord:
    """One labeled particle: physical position, status, and event bookkeeping."""

    position: np.ndarray
    side: str
    id: int = 0
    status: str = "active"
    t_event: float | None = None
    partner: int | None = None

    def is_active(self) -> bool:
        return self.status == "active"


def euler_step(rec: ParticleRecord, dt: float, drift: DriftSpec,
               noise: np.ndarray, geom: BoxGeometry | None = None,
               bridge_logu: float | None = None) -> ParticleRecord:
    """One Euler step of a single record; non-active records pass through.

    Deterministic given (rec, dt, drift, noise, bridge_logu); the bridge
    correction applies only when a log-uniform draw is supplied.  Delegates to
    the same backend kernel as the vectorized engine.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not rec.is_active():
        return rec
    geom = geom or BoxGeometry(len(np.atleast_1d(rec.position)))
    pos = geom.to_internal(rec.side, np.atleast_1d(rec.position))[None, :].copy()
    status = np.zeros(1, dtype=np.int8)
    noise = np.atleast_1d(np.asarray(noise, dtype=float))[None, :]
    logu = np.full(1, -np.inf if bridge_logu is None else bridge_logu)
    backend.step_side(
        pos, status, drift.b_internal(rec.side, pos.shape[1]) * dt,
        float(np.sqrt(drift.s * dt)), noise, logu,
        geom.harvest_on(rec.side), bridge_logu is not None,
        1.0 / (drift.s * dt),
    )
    new = ParticleRecord(
        position=geom.to_physical(rec.side, pos[0]), side=rec.side, id=rec.id,
        status=_STATUS_NAMES[int(status[0])], t_event=rec.t_event,
        partner=rec.partner,
    )
    return new


def local_time_estimate(path: np.ndarray, dt: float, eps: float,
                        s_diff: float = 1.0) -> float:
    """Occupation-strip estimate of the interface local time along a path.

    ``path`` holds positions at consecutive step times (any frame; the
    distance to the interface is |last coordinate|).  The strip width must
    resolve the step scale: eps > 5 sqrt(s dt).
    """
    if eps <= 5.0 * np.sqrt(s_diff * dt):
        raise ValueError(
            f"strip width eps={eps} too small for step scale sqrt(s dt)="
            f"{np.sqrt(s_diff * dt):g}; need eps > 5 sqrt(s dt)"
        )
    path = np.atleast_2d(np.asarray(path, dtype=float))
    dist = np.abs(path[:-1, -1])
    return float(np.count_nonzero(dist < eps)) * dt / eps


@dataclass
class PathBatch:
    """Vectorized ensemble of independent single-particle paths (one side)."""

    side: str
    geom: BoxGeometry
    drift: DriftSpec
    dt: float
    bridge: bool = True
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    pos: np.ndarray | None = None          # internal frame, (n, d)
    status: np.ndarray | None = None

    def start(self, x0_physical: np.ndarray, n: int):
        x0 = self.geom.to_internal(self.side, np.atleast_1d(np.asarray(x0_physical, float)))
        self.pos = np.tile(x0, (n, 1))
        self.status = np.zeros(n, dtype=np.int8)
        self._b_dt = self.drift.b_internal(self.side, self.pos.shape[1]) * self.dt
        self._sq = float(np.sqrt(self.drift.s * self.dt))
        self._inv = 1.0 / (self.drift.s * self.dt)

    def step(self):
        n = self.pos.shape[0]
        noise = self.rng.standard_normal(self.pos.shape)
        logu = np.log(self.rng.random(n))
        backend.step_side(self.pos, self.status, self._b_dt, self._sq, noise,
                          logu, self.geom.harvest_on(self.side), self.bridge,
                          self._inv)

    def active(self) -> np.ndarray:
        return self.status == ACTIVE


def feynman_kac_u(side: str, t: float, x, u_other_trace, lam: float,
                  replicas: int, dt: float, eps: float,
                  geom: BoxGeometry | None = None,
                  drift: DriftSpec | None = None,
                  u0=None, seed: int = 0,
                  bridge: bool = True) -> tuple[float, float]:
    """Monte Carlo estimate of u_side(t, x) via the killed-path representation

        u(t, x) = E[ u0(X_t) exp( - (1/2) int_0^t (lam u_other)(t - s, X_s) dL_s ) ],

    with X the reflected diffusion absorbed on the harvest face, L the
    occupation-strip local-time estimator, and the 1/2 matching the mild
    equation's interface factor.  Returns (estimate, stderr).

    ``u_other_trace`` is the opposite side's interface trace: a callable of
    time, or a CoupledSolution (its trace is used).  ``u0`` defaults to the
    canonical initial profile of ``side``.
    """
    geom = geom or BoxGeometry(1)
    drift = drift or DriftSpec()
    if replicas < 100:
        raise ValueError("need at least 100 replicas for a meaningful stderr")
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    if eps <= 5.0 * np.sqrt(drift.s * dt):
        raise ValueError("eps too small relative to dt (need eps > 5 sqrt(s dt))")
    if u0 is None:
        u0 = default_u0(side)
    trace = _as_trace_fn(u_other_trace, side)
    rng = np.random.default_rng(seed)
    batch = PathBatch(side=side, geom=geom, drift=drift, dt=dt, bridge=bridge,
                      rng=rng)
    batch.start(np.atleast_1d(x), replicas)
    exponent = np.zeros(replicas)
    for k in range(n_steps):
        w = lam * float(trace(t - k * dt))
        if w != 0.0:
            in_strip = batch.active() & (batch.pos[:, -1] < eps)
            exponent[in_strip] += 0.5 * w * dt / eps
        batch.step()
    alive = batch.active()
    vals = np.zeros(replicas)
    if alive.any():
        phys = geom.to_physical(side, batch.pos[alive])
        u0v = np.asarray(u0(phys if geom.dim > 1 else phys[:, 0]), dtype=float)
        vals[alive] = u0v * np.exp(-exponent[alive])
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(replicas))
    return est, stderr


def _as_trace_fn(u_other, side: str):
    if callable(u_other):
        return u_other
    other = MINUS if side == PLUS else PLUS
    times = u_other.trace_times
    tr = u_other.trace_minus if other == MINUS else u_other.trace_plus
    return lambda tau: np.interp(tau, times, tr)


def default_u0(side: str, dim: int = 1):
    """Canonical initial profiles: 2(1-x_d) on the plus side, 2(1+y_d) minus.

    Unit mass, vanishing on the harvest face, linear in the normal coordinate
    and flat tangentially.
    """
    if side == PLUS:
        def f(x):
            x = np.asarray(x, dtype=float)
            return 2.0 * (1.0 - (x[..., -1] if x.ndim > 1 else x))
    else:
        def f(y):
            y = np.asarray(y, dtype=float)
            return 2.0 * (1.0 + (y[..., -1] if y.ndim > 1 else y))
    return f
