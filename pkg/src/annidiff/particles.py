"""The interacting configuration process and its empirical measures.

``run`` evolves m labeled particles per side: independent reflected
diffusions with harvest absorption, plus annihilation events labeling one
(+,-) pair at a time at the pair-potential clock rate.  Labeled (annihilated)
records are retained and keep diffusing on their original noise (the paper's
labeling coupling); they are excluded from intensities, measures and masses,
and freeze silently if they reach the harvest face.  A run with lam = 0 on
the same seed therefore follows identical particle paths and dominates the
annihilating run pathwise.

Time stepping: the coarse step is ``dt``.  Particles within
kappa*sqrt(s*dt) of the interface are advanced by the refinement cascade
(windows dt -> dt/4 -> ... -> dt/4^levels), and the annihilation clock runs
at the bottom windows where the per-pair hazard lam*w/(2*N*nu) is at most
``lump_target``; everyone else takes one harvest-aware Euler step.  Mirror
folding makes the motion law exact at every scale, so the refinement only
sharpens the clock.  The refinement depth uses max(lam, 1), keeping motion
randomness identical across lam values on one seed.

Randomness discipline (the documented mixing function): replica r of a run
with seed S uses two independent Philox streams,

    motion stream: SFC64(SeedSequence([S, 2r])),
    events stream: SFC64(SeedSequence([S, 2r + 1])).

Per coarse step the motion stream supplies, in order: far-set noise and
bridge log-uniforms (plus side then minus), then one bulk buffer consumed by
the cascade.  The buffer is sized adaptively with a deterministic policy
(retry with doubled size on exhaustion, events-stream state restored), so
runs are bit-reproducible for a given (params, seed, replica) and independent
of worker scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import annihilation as ann
from . import backend
from .diffusion import DriftSpec
from .geometry import BoxGeometry, MINUS, PLUS
from .measure import PointMeasure


@dataclass(frozen=True)
class SimParams:
    """Scaling and discretization parameters of one particle run."""

    N: int
    m: int | None = None               # initial count per side; default N
    lam: float = 1.0
    delta_schedule: str | float = "standard"
    schedule_c: float = 0.4            # standard schedule delta = c N^(-1/d)
    dt: float = 1e-3
    T: float = 0.5
    dim: int = 1
    harvest_plus: bool = True
    harvest_minus: bool = True
    drift_plus: DriftSpec = field(default_factory=DriftSpec)
    drift_minus: DriftSpec = field(default_factory=DriftSpec)
    seed: int = 0
    replicas: int = 1
    bridge: bool = True
    save_stride: int = 20
    kappa: float = 5.0                 # refinement safety radius, in step sigmas
    lump_target: float = 0.005         # max per-pair hazard per bottom window

    def __post_init__(self):
        if (self.m or self.N) < 1 or self.T <= 0 or self.dt <= 0 or self.dt > self.T:
            raise ValueError("need m >= 1 and 0 < dt <= T")
        smax = max(self.drift_plus.s, self.drift_minus.s)
        if self.kappa * math.sqrt(smax * self.dt) > 0.5:
            raise ValueError(
                "dt too large: the near-interface band kappa*sqrt(s*dt) "
                "reaches the harvest face"
            )

    @property
    def m_eff(self) -> int:
        return self.N if self.m is None else self.m

    def delta(self) -> float:
        if self.delta_schedule == "standard":
            return self.schedule_c * self.N ** (-1.0 / self.dim)
        if self.delta_schedule == "counterexample":
            return float(self.N) ** -(2.0 / self.dim + 1.0)
        return float(self.delta_schedule)

    def geometry(self) -> BoxGeometry:
        return BoxGeometry(self.dim, self.harvest_plus, self.harvest_minus)

    def potential(self) -> ann.PotentialSpec:
        return ann.PotentialSpec.make(self.dim, self.lam, self.delta(), self.N)

    def levels(self) -> int:
        """Refinement depth: per-pair hazard per bottom window <= lump_target.

        Uses max(lam, 1) so that lam = 0 runs share the motion schedule of
        the default lam = 1 run (pathwise coupling).
        """
        spec = ann.PotentialSpec.make(self.dim, max(self.lam, 1.0),
                                      self.delta(), self.N)
        lump = spec.rate * self.dt / (2.0 * self.N)
        if lump <= self.lump_target:
            return 0
        return int(math.ceil(math.log(lump / self.lump_target, 4.0)))


def motion_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.SFC64(np.random.SeedSequence(entropy=[seed, 2 * replica]))
    )


def event_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.SFC64(np.random.SeedSequence(entropy=[seed, 2 * replica + 1]))
    )


class Configuration:
    """Positions and statuses of all labeled particles (internal frame).

    ``status_*`` is the physics status (0 active, 1 harvested, 2 annihilated);
    ``move_*`` is the motion status (0 moving, 1 stopped at the harvest face).
    Annihilated particles keep moving until they reach the face.
    """

    def __init__(self, geom: BoxGeometry, N: int, pos_plus: np.ndarray,
                 pos_minus: np.ndarray):
        m = pos_plus.shape[0]
        if pos_minus.shape[0] != m:
            raise ValueError("equal initial counts required on both sides")
        self.geom = geom
        self.N = N
        self.m = m
        self.pos_plus = np.ascontiguousarray(pos_plus, dtype=np.float64)
        self.pos_minus = np.ascontiguousarray(pos_minus, dtype=np.float64)
        self.status_plus = np.zeros(m, dtype=np.int8)
        self.status_minus = np.zeros(m, dtype=np.int8)
        self.move_plus = np.zeros(m, dtype=np.int8)
        self.move_minus = np.zeros(m, dtype=np.int8)
        self.t_event_plus = np.full(m, np.nan)
        self.t_event_minus = np.full(m, np.nan)
        self.partner_plus = np.full(m, -1, dtype=np.int64)
        self.partner_minus = np.full(m, -1, dtype=np.int64)
        self.sim_time = 0.0
        self.generation = 0

    def positions(self, side: str) -> np.ndarray:
        return self.pos_plus if side == PLUS else self.pos_minus

    def statuses(self, side: str) -> np.ndarray:
        return self.status_plus if side == PLUS else self.status_minus

    def counts(self, side: str) -> tuple[int, int, int]:
        st = self.statuses(side)
        return (int((st == 0).sum()), int((st == 1).sum()), int((st == 2).sum()))

    def mass(self, side: str) -> float:
        return self.counts(side)[0] / self.N

    def mark_annihilated(self, i: int, j: int, t: float):
        if self.status_plus[i] != 0 or self.status_minus[j] != 0:
            raise RuntimeError("annihilation of a non-active pair")
        self.status_plus[i] = 2
        self.status_minus[j] = 2
        self.t_event_plus[i] = t
        self.t_event_minus[j] = t
        self.partner_plus[i] = j
        self.partner_minus[j] = i

    def check_invariants(self):
        for side in (PLUS, MINUS):
            a, h, k = self.counts(side)
            assert a + h + k == self.m, "count accounting broken"
        assert (self.status_plus == 2).sum() == (self.status_minus == 2).sum(), \
            "annihilated counts differ between sides"
        assert self.pos_plus.min() >= 0.0 and self.pos_plus.max() <= 1.0
        assert self.pos_minus.min() >= 0.0 and self.pos_minus.max() <= 1.0
        for tv in (self.t_event_plus, self.t_event_minus):
            ev = tv[~np.isnan(tv)]
            assert np.all(ev <= self.sim_time + 1e-12)


class EmpiricalMeasure(PointMeasure):
    """Weight-1/N point measure on the live particles of one side."""

    def __init__(self, side: str, atoms: np.ndarray, N: int):
        super().__init__(atoms, 1.0 / N)
        self.side = side


def empirical_measure(config: Configuration, side: str) -> EmpiricalMeasure:
    act = config.statuses(side) == 0
    phys = config.geom.to_physical(side, config.positions(side)[act])
    return EmpiricalMeasure(side, phys, config.N)


def pair_against(phi, measure: PointMeasure) -> float:
    """<phi, mu> = (1/N) sum of phi over atom positions."""
    return measure.pair(phi)


def _inverse_cdf_sampler_1d(u0, side: str, geom: BoxGeometry):
    s = np.linspace(0.0, 1.0, 8193)
    phys = s if side == PLUS else -s
    dens = np.asarray(u0(phys), dtype=float)
    if dens.min() < -1e-12:
        raise ValueError("initial density must be nonnegative")
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(s))])
    mass = cdf[-1]
    if abs(mass - 1.0) > 1e-4:
        raise ValueError(f"initial density has mass {mass:.6f}, not 1")
    cdf /= mass

    def sample(rng, n):
        return np.interp(rng.random(n), cdf, s)[:, None]

    return sample


def _rejection_sampler(u0, side: str, geom: BoxGeometry):
    d = geom.dim
    grids = np.meshgrid(*([np.linspace(0, 1, 65)] * d), indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    vals = np.asarray(u0(geom.to_physical(side, pts)), dtype=float)
    if vals.min() < -1e-12:
        raise ValueError("initial density must be nonnegative")
    mass = vals.mean()
    if abs(mass - 1.0) > 5e-2:
        raise ValueError(f"initial density has mass about {mass:.3f}, not 1")
    bound = vals.max() * 1.1

    def sample(rng, n):
        out = np.empty((n, d))
        filled = 0
        while filled < n:
            cand = rng.random((2 * (n - filled) + 16, d))
            acc = rng.random(cand.shape[0]) * bound < np.asarray(
                u0(geom.to_physical(side, cand)), dtype=float
            )
            take = cand[acc][: n - filled]
            out[filled : filled + take.shape[0]] = take
            filled += take.shape[0]
        return out

    return sample


def init(params: SimParams, u0_plus, u0_minus,
         rng: np.random.Generator) -> Configuration:
    """Sample m i.i.d. initial positions per side from the unit-mass densities.

    d=1 uses numerical inverse-CDF sampling; d>=2 rejection sampling.  Refuses
    densities of non-unit mass.  Positions are stored in the internal frame.
    """
    geom = params.geometry()
    make = _inverse_cdf_sampler_1d if geom.dim == 1 else _rejection_sampler
    sp = make(u0_plus, PLUS, geom)
    sm = make(u0_minus, MINUS, geom)
    m = params.m_eff
    return Configuration(geom, params.N, sp(rng, m), sm(rng, m))


@dataclass
class StepReport:
    """Events of one coarse step plus exact pair-functional time integrals."""

    events: list                     # (t_abs, i, j) annihilations
    harvested: list                  # (side, id, t_abs)
    j_increment: float
    segments: list | None            # (duration, ii, jj) when requested


class _EngineScratch:
    """Per-run engine state: event storage and the adaptive noise buffer.

    Event rows are (t, i, j, x_i..., y_j...) with the pair's internal
    positions at the kill time (inside the tube by construction).
    """

    def __init__(self, m: int, dim: int):
        self.events = np.zeros((m, 3 + 2 * dim))
        self.n_events = np.zeros(1, dtype=np.int64)
        self.j_acc = np.zeros(1)
        self.buf_size = 1 << 13


def step(config: Configuration, params: SimParams, spec: ann.PotentialSpec,
         rng_motion: np.random.Generator, rng_events: np.random.Generator,
         scratch: _EngineScratch | None = None,
         collect_segments: bool = False) -> StepReport:
    """Advance one coarse time step: staged motion, then interface events.

    Far-from-interface particles take one harvest-aware Euler step; the
    near set runs through the refinement cascade where the annihilation clock
    fires with the exact thinning semantics.  Returns the step's events and
    the exact time integral segments of the in-tube pair sets if requested.
    """
    geom = config.geom
    if scratch is None:
        scratch = _EngineScratch(config.m, geom.dim)
    dt = params.dt
    d = geom.dim
    levels = params.levels()
    near_ids = {}
    harvested = []
    for side, drift in ((PLUS, params.drift_plus), (MINUS, params.drift_minus)):
        pos = config.positions(side)
        move = config.move_plus if side == PLUS else config.move_minus
        moving = np.flatnonzero(move == 0)
        r_top = params.kappa * math.sqrt(drift.s * dt)
        near_mask = pos[moving, -1] < r_top
        near_ids[side] = moving[near_mask]
        far = moving[~near_mask]
        noise = rng_motion.standard_normal((len(far), d))
        logu = np.log(rng_motion.random(len(far))) if geom.harvest_on(side) \
            else np.full(len(far), -np.inf)
        sub_pos = np.ascontiguousarray(pos[far])
        sub_status = np.zeros(len(far), dtype=np.int8)
        backend.step_side(sub_pos, sub_status, drift.b_internal(side, d) * dt,
                          float(math.sqrt(drift.s * dt)), noise, logu,
                          geom.harvest_on(side), params.bridge,
                          1.0 / (drift.s * dt))
        pos[far] = sub_pos
        stopped = far[sub_status == 1]
        move[stopped] = 1
        phys = config.statuses(side)
        t_ev = config.sim_time + dt
        for i in stopped:
            if phys[i] == 0:
                phys[i] = 1
                if side == PLUS:
                    config.t_event_plus[i] = t_ev
                else:
                    config.t_event_minus[i] = t_ev
                harvested.append((side, int(i), t_ev))

    ev_start = int(scratch.n_events[0])
    j_start = float(scratch.j_acc[0])
    seg_log = [] if collect_segments else None
    if len(near_ids[PLUS]) or len(near_ids[MINUS]):
        snap = (config.pos_plus.copy(), config.pos_minus.copy(),
                config.status_plus.copy(), config.status_minus.copy(),
                rng_events.bit_generator.state, float(scratch.j_acc[0]),
                int(scratch.n_events[0]))
        while True:
            buf = rng_motion.standard_normal(scratch.buf_size)
            nptr = np.zeros(1, dtype=np.int64)
            rc = backend.cascade(
                config.pos_plus, config.pos_minus,
                config.status_plus, config.status_minus,
                near_ids[PLUS], near_ids[MINUS],
                dt, levels, config.sim_time,
                params.kappa, spec.delta, spec.rate, 1.0 / (2.0 * spec.N),
                spec.rate / (spec.N * spec.N), spec.lam > 0.0,
                params.drift_plus.b_internal(PLUS, d),
                params.drift_minus.b_internal(MINUS, d),
                params.drift_plus.s, params.drift_minus.s,
                buf, nptr, rng_events,
                scratch.events, scratch.n_events, scratch.j_acc,
                seg_log,
            )
            if rc == 0:
                scratch.buf_size = max(4096, int(int(nptr[0]) * 1.25) + 512)
                break
            (config.pos_plus[...], config.pos_minus[...],
             config.status_plus[...], config.status_minus[...]) = snap[:4]
            rng_events.bit_generator.state = snap[4]
            scratch.j_acc[0] = snap[5]
            scratch.n_events[0] = snap[6]
            if seg_log is not None:
                seg_log.clear()
            scratch.buf_size *= 2

    events = []
    for k in range(ev_start, int(scratch.n_events[0])):
        row = scratch.events[k]
        t_ev, i, j = float(row[0]), int(row[1]), int(row[2])
        config.t_event_plus[i] = t_ev
        config.t_event_minus[j] = t_ev
        config.partner_plus[i] = j
        config.partner_minus[j] = i
        events.append((t_ev, i, j, row[3:3 + d].copy(), row[3 + d:3 + 2 * d].copy()))
    config.generation += 1
    config.sim_time += dt
    return StepReport(events=events, harvested=harvested,
                      j_increment=float(scratch.j_acc[0]) - j_start,
                      segments=seg_log)


@dataclass
class Trajectory:
    """Saved state of one replica: masses, atoms and J_N at the save times."""

    times: list = field(default_factory=list)
    mass_plus: list = field(default_factory=list)
    mass_minus: list = field(default_factory=list)
    atoms_plus: list = field(default_factory=list)
    atoms_minus: list = field(default_factory=list)
    j_n: list = field(default_factory=list)


@dataclass
class RunResult:
    trajectory: Trajectory
    events: list                       # ndjson-ready dicts, time ordered
    j_n_final: float
    config: Configuration
    observed: list | None = None
    step_data: list | None = None      # per-step observer payloads


def run(params: SimParams, u0_plus=None, u0_minus=None, replica: int = 0,
        observer=None, step_observer=None,
        save_atoms: bool = True) -> RunResult:
    """Simulate one replica of the configuration process.

    Deterministic given (params, seed, replica).  ``observer(config)`` is
    invoked after initialization and after every step; ``step_observer``
    additionally receives each StepReport (with segment logs) for exact
    pair-functional integration.
    """
    from .diffusion import default_u0

    u0_plus = u0_plus or default_u0(PLUS, params.dim)
    u0_minus = u0_minus or default_u0(MINUS, params.dim)
    rng_m = motion_rng(params.seed, replica)
    rng_e = event_rng(params.seed, replica)
    config = init(params, u0_plus, u0_minus, rng_m)
    spec = params.potential()
    n_steps = int(round(params.T / params.dt))
    if abs(n_steps * params.dt - params.T) > 1e-9:
        raise ValueError("T must be an integer multiple of dt")
    scratch = _EngineScratch(config.m, params.dim)
    collect = step_observer is not None

    traj = Trajectory()
    events_out = []
    j_n = 0.0
    observed = []
    step_data = []

    def save():
        traj.times.append(config.sim_time)
        traj.mass_plus.append(config.mass(PLUS))
        traj.mass_minus.append(config.mass(MINUS))
        traj.j_n.append(j_n)
        if save_atoms:
            traj.atoms_plus.append(empirical_measure(config, PLUS).atoms)
            traj.atoms_minus.append(empirical_measure(config, MINUS).atoms)

    if observer is not None:
        observed.append(observer(config))
    save()
    for k in range(n_steps):
        rep = step(config, params, spec, rng_m, rng_e, scratch, collect)
        j_n += rep.j_increment
        for side, i, t_ev in rep.harvested:
            pos = config.geom.to_physical(side, config.positions(side)[i])
            events_out.append(
                {"t": t_ev, "kind": "harvest", "side": side, "id": i,
                 "position": np.atleast_1d(pos).tolist()}
            )
        for t_ev, i, j, xi, yj in rep.events:
            events_out.append(
                {"t": t_ev, "kind": "annihilation", "i": i, "j": j,
                 "x_plus": np.atleast_1d(config.geom.to_physical(
                     PLUS, xi)).tolist(),
                 "y_minus": np.atleast_1d(config.geom.to_physical(
                     MINUS, yj)).tolist()}
            )
        if observer is not None:
            observed.append(observer(config))
        if step_observer is not None:
            step_data.append(step_observer(config, rep))
        if (k + 1) % params.save_stride == 0 or k + 1 == n_steps:
            save()
    events_out.sort(key=lambda e: e["t"])
    return RunResult(trajectory=traj, events=events_out, j_n_final=j_n,
                     config=config,
                     observed=observed if observer is not None else None,
                     step_data=step_data if step_observer is not None else None)
