"""Pair-interaction engine for the two species near the interface.

A (+,-) pair interacts iff its joint squared distance to the interface is
below delta^2; the per-pair rate is then lam / nu(delta) with nu the exact
tube-volume normalizer, so the pair sum of the potential against two
empirical measures converges to lam * int_I u_+ u_- dsigma with constant
exactly 1.  Absorbed or annihilated particles contribute rate 0.

The total event intensity over active particle sets P, M is

    A = (1 / 2N) * sum_{i in P} sum_{j in M} potential(x_i, y_j),

computed through a spatial bin index that enumerates a superset of the
interacting pairs and re-tests exact membership, so the binned value equals
the brute-force double sum exactly.  Events within a step are sampled by
sequential thinning: exponential gaps against the current intensity, the
intensity recomputed after every annihilation.

All positions here are in the internal frame (last axis = distance from the
interface); tangential coordinates are shared between the sides, so the pair
distance is s_x^2 + s_y^2 + sum (x_i - y_i)^2 / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import TubeSpec


@dataclass(frozen=True)
class PotentialSpec:
    """Annihilation potential: rate lam, tube radius delta, normalizer nu.

    ``N`` is the scaling parameter in the 1/(2N) intensity normalization; it
    may differ from the particle count m.
    """

    lam: float
    delta: float
    nu: float
    N: int

    @classmethod
    def make(cls, dim: int, lam: float, delta: float, N: int) -> "PotentialSpec":
        return cls(lam=lam, delta=delta, nu=TubeSpec(dim, delta).nu, N=N)

    @property
    def rate(self) -> float:
        """Per-pair intensity inside the tube, lam / nu."""
        return self.lam / self.nu


def potential_value(spec: PotentialSpec, dist2) -> np.ndarray | float:
    """lam/nu on the tube, 0 outside (sharp indicator potential)."""
    return np.where(np.asarray(dist2) < spec.delta ** 2, spec.rate, 0.0)


def potential_eval(spec: PotentialSpec, x_rec, y_rec) -> float:
    """Pair rate of two particle records; 0 unless both are active.

    Absorbed and annihilated particles never contribute to the labeling rate.
    """
    from .geometry import pair_interface_dist2

    if x_rec.status != "active" or y_rec.status != "active":
        return 0.0
    d2 = pair_interface_dist2(np.atleast_1d(x_rec.position),
                              np.atleast_1d(y_rec.position))
    return float(potential_value(spec, d2))


def pair_dist2_internal(pos_p: np.ndarray, pos_m: np.ndarray) -> np.ndarray:
    """Squared joint interface distance for all (row of pos_p) x (row of pos_m)."""
    sp = pos_p[:, -1][:, None]
    sm = pos_m[:, -1][None, :]
    d2 = sp ** 2 + sm ** 2
    if pos_p.shape[1] > 1:
        diff = pos_p[:, None, :-1] - pos_m[None, :, :-1]
        d2 = d2 + 0.5 * np.sum(diff ** 2, axis=-1)
    return d2


@dataclass
class InterfaceBins:
    """Near-interface candidate index, valid for one configuration generation.

    Particles within delta of the interface are binned by tangential cell of
    side sqrt(2)*delta, the largest tangential offset an interacting pair can
    have; scanning the 3^(d-1) neighborhood of a cell therefore enumerates a
    superset of the interacting pairs.  Exact membership is re-tested
    downstream.
    """

    delta: float
    generation: int
    ids_plus: np.ndarray
    ids_minus: np.ndarray
    cells_minus: dict = field(default_factory=dict)
    dim: int = 1

    @classmethod
    def build(cls, config, delta: float) -> "InterfaceBins":
        near_p = np.flatnonzero((config.status_plus == 0)
                                & (config.pos_plus[:, -1] < delta))
        near_m = np.flatnonzero((config.status_minus == 0)
                                & (config.pos_minus[:, -1] < delta))
        bins = cls(delta=delta, generation=config.generation,
                   ids_plus=near_p, ids_minus=near_m,
                   dim=config.pos_plus.shape[1])
        if bins.dim > 1 and len(near_m):
            cell_side = math.sqrt(2.0) * delta
            cells = np.floor(config.pos_minus[near_m, :-1] / cell_side).astype(np.int64)
            for row, j in zip(map(tuple, cells), near_m):
                bins.cells_minus.setdefault(row, []).append(int(j))
        return bins

    def candidate_pairs(self, config) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays (i, j) of candidate pairs (superset of the tube)."""
        if len(self.ids_plus) == 0 or len(self.ids_minus) == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        if self.dim == 1:
            ii, jj = np.meshgrid(self.ids_plus, self.ids_minus, indexing="ij")
            return ii.ravel(), jj.ravel()
        out_i, out_j = [], []
        tang = config.pos_plus[:, :-1]
        cell_side = math.sqrt(2.0) * self.delta
        for i in self.ids_plus:
            cell = tuple(np.floor(tang[i] / cell_side).astype(np.int64))
            for off in _neighbor_offsets(self.dim - 1):
                key = tuple(c + o for c, o in zip(cell, off))
                for j in self.cells_minus.get(key, ()):
                    out_i.append(int(i))
                    out_j.append(int(j))
        return np.asarray(out_i, np.int64), np.asarray(out_j, np.int64)


def _neighbor_offsets(k: int):
    if k == 1:
        return [(-1,), (0,), (1,)]
    return [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]


def tube_pairs(spec: PotentialSpec, config,
               bins: InterfaceBins | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact list of interacting pairs (i, j), via the bin index.

    Raises if the bins are stale (generation mismatch).
    """
    if bins is None:
        bins = InterfaceBins.build(config, spec.delta)
    if bins.generation != config.generation:
        raise RuntimeError(
            f"stale bins: built at generation {bins.generation}, "
            f"configuration is at {config.generation}"
        )
    ii, jj = bins.candidate_pairs(config)
    if len(ii) == 0:
        return ii, jj
    d2 = (config.pos_plus[ii, -1] ** 2 + config.pos_minus[jj, -1] ** 2)
    if bins.dim > 1:
        diff = config.pos_plus[ii, :-1] - config.pos_minus[jj, :-1]
        d2 = d2 + 0.5 * np.sum(diff ** 2, axis=-1)
    keep = d2 < spec.delta ** 2
    return ii[keep], jj[keep]


def total_intensity(spec: PotentialSpec, config,
                    bins: InterfaceBins | None = None) -> float:
    """A = (1/2N) sum_ij potential(x_i, y_j) over active pairs."""
    ii, _ = tube_pairs(spec, config, bins)
    return len(ii) * spec.rate / (2.0 * spec.N)


def brute_force_intensity(spec: PotentialSpec, config) -> float:
    """O(m^2) reference double sum; must equal ``total_intensity`` exactly."""
    act_p = np.flatnonzero(config.status_plus == 0)
    act_m = np.flatnonzero(config.status_minus == 0)
    if len(act_p) == 0 or len(act_m) == 0:
        return 0.0
    d2 = pair_dist2_internal(config.pos_plus[act_p], config.pos_minus[act_m])
    count = int(np.count_nonzero(d2 < spec.delta ** 2))
    return count * spec.rate / (2.0 * spec.N)


def select_pair(weights: np.ndarray, u: float) -> int:
    """Index drawn from the normalized weights at uniform coordinate u.

    The event-time clock already conditioned on an event; the labeled pair is
    chosen with probability weight / sum(weights).
    """
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        raise ValueError("select_pair needs a positive total weight")
    cdf = np.cumsum(w)
    return int(np.searchsorted(cdf, u * cdf[-1], side="right").clip(0, len(w) - 1))


@dataclass(frozen=True)
class AnnihilationEvent:
    t_offset: float
    i: int
    j: int


def sample_event(spec: PotentialSpec, config, dt: float,
                 rng: np.random.Generator,
                 t_offset: float = 0.0) -> AnnihilationEvent | None:
    """Draw the next annihilation within the remaining step window, if any.

    Positions are frozen; the clock runs at the current total intensity.  On
    an event the chosen pair is marked annihilated in the configuration
    (statuses, partner ids, event time); the caller re-invokes to continue the
    sequential thinning with the updated intensity.
    """
    bins = InterfaceBins.build(config, spec.delta)
    ii, jj = tube_pairs(spec, config, bins)
    a = len(ii) * spec.rate / (2.0 * spec.N)
    if a <= 0.0:
        return None
    # single-uniform exponential gap, matching the engine's events-stream use
    gap = -math.log1p(-rng.random()) / a
    if t_offset + gap > dt:
        return None
    t_event = t_offset + gap
    pick = select_pair(np.full(len(ii), spec.rate), rng.random())
    i, j = int(ii[pick]), int(jj[pick])
    config.mark_annihilated(i, j, config.sim_time + t_event)
    return AnnihilationEvent(t_offset=t_event, i=i, j=j)
