"""Computable weak topology on pairs of sub-probability measures.

A fixed countable family of test functions {f_n} on the plus side and {g_n}
on the minus side, each bounded by 1 and vanishing on the active harvest
face, turns weak convergence into the summable metric

    rho(mu, nu) = sum_n 2^-n ( |<f_n, mu_+ - nu_+>| + |<g_n, mu_- - nu_->| ),

truncated at n_max with an explicit tail bound.  The default family consists
of the product eigenfunctions of the reflecting/absorbing generator scaled to
unit sup norm, enumerated by increasing eigenvalue; the same functions serve
as martingale test functions since they satisfy A phi = -mu phi exactly.

Measures enter through a tiny duck-typed interface: ``mass`` attribute and
``pair(f)`` returning the integral of f.  ``PointMeasure`` wraps weighted
atoms (empirical measures), ``GridDensityMeasure`` wraps a density sampled on
a uniform grid (trapezoid pairing).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoxGeometry, MINUS, PLUS


class PointMeasure:
    """Finite weighted point measure; atoms in physical coordinates."""

    def __init__(self, atoms: np.ndarray, weight: float):
        self.atoms = np.atleast_2d(np.asarray(atoms, dtype=float)) if np.size(atoms) \
            else np.zeros((0, 1))
        self.weight = weight
        self.mass = self.atoms.shape[0] * weight

    def pair(self, f) -> float:
        """<f, mu> = weight * sum of f over atoms."""
        if self.atoms.shape[0] == 0:
            return 0.0
        return self.weight * float(np.sum(np.asarray(f(self.atoms), dtype=float)))


class GridDensityMeasure:
    """Measure u(x) rho(x) dx on a uniform grid over one side's box (d=1 or 2).

    ``values`` are samples of u on the internal grid; pairings use composite
    trapezoid.  Refuses densities that dip below -1e-9.
    """

    def __init__(self, side: str, geom: BoxGeometry, values: np.ndarray,
                 rho: np.ndarray | None = None):
        values = np.asarray(values, dtype=float)
        if float(values.min()) < -1e-9:
            raise ValueError(f"density has negative values ({values.min():g})")
        self.side = side
        self.geom = geom
        self.values = values
        if geom.dim == 1:
            n = values.shape[0] - 1
            s = np.linspace(0.0, 1.0, n + 1)
            self.points = geom.to_physical(side, s[:, None])
            w = np.full(n + 1, 1.0 / n)
            w[[0, -1]] *= 0.5
            self.trap = w
        elif geom.dim == 2:
            nt, nn = values.shape[0] - 1, values.shape[1] - 1
            gt = np.linspace(0.0, 1.0, nt + 1)
            gn = np.linspace(0.0, 1.0, nn + 1)
            X, Y = np.meshgrid(gt, gn, indexing="ij")
            self.points = geom.to_physical(
                side, np.column_stack([X.ravel(), Y.ravel()])
            )
            wt = np.full(nt + 1, 1.0 / nt)
            wt[[0, -1]] *= 0.5
            wn = np.full(nn + 1, 1.0 / nn)
            wn[[0, -1]] *= 0.5
            self.trap = np.outer(wt, wn).ravel()
        else:
            raise NotImplementedError("grid measures support d = 1 and 2")
        dens = values.ravel()
        if rho is not None:
            dens = dens * np.asarray(rho, dtype=float).ravel()
        self._weighted = self.trap * dens
        self.mass = float(self._weighted.sum())

    def pair(self, f) -> float:
        vals = np.asarray(f(self.points), dtype=float)
        return float(self._weighted @ vals)


def density_to_measure(side: str, geom: BoxGeometry, u_grid: np.ndarray,
                       rho: np.ndarray | None = None) -> GridDensityMeasure:
    """Wrap a nonnegative grid density u (times drift weight rho) as a measure."""
    return GridDensityMeasure(side, geom, u_grid, rho)


@dataclass(frozen=True)
class BasisFunction:
    """One sup-normalized product eigenfunction and its generator data."""

    side: str
    mu: float                       # A phi = -mu phi
    omegas: tuple[float, ...]       # per-axis frequencies
    geom: BoxGeometry

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        q = self.geom.to_internal(self.side, np.atleast_2d(np.asarray(pts, float)))
        out = np.ones(q.shape[0])
        for ax, w in enumerate(self.omegas):
            out = out * np.cos(w * q[:, ax])
        return out

    def grad_sq(self, pts: np.ndarray) -> np.ndarray:
        """|grad phi|^2 at pts, used in the martingale bracket."""
        q = self.geom.to_internal(self.side, np.atleast_2d(np.asarray(pts, float)))
        cos = [np.cos(w * q[:, ax]) for ax, w in enumerate(self.omegas)]
        sin = [np.sin(w * q[:, ax]) for ax, w in enumerate(self.omegas)]
        total = np.zeros(q.shape[0])
        for ax, w in enumerate(self.omegas):
            part = np.ones(q.shape[0]) * (w * sin[ax]) ** 2
            for other in range(len(self.omegas)):
                if other != ax:
                    part = part * cos[other] ** 2
            total += part
        return total


def _axis_frequencies(bc_mixed: bool, k: int) -> float:
    return (k + 0.5) * math.pi if bc_mixed else k * math.pi


def _enumerate_modes(geom: BoxGeometry, side: str, n_max: int) -> list[BasisFunction]:
    """Product modes in increasing eigenvalue order (lexicographic ties)."""
    d = geom.dim
    mixed = geom.harvest_on(side)
    heap = []
    start = (0,) * d
    heap.append((_mode_mu(start, mixed), start))
    seen = {start}
    out = []
    while heap and len(out) < n_max:
        mu, idx = heapq.heappop(heap)
        omegas = tuple(
            _axis_frequencies(mixed and ax == d - 1, k) for ax, k in enumerate(idx)
        )
        out.append(BasisFunction(side=side, mu=mu, omegas=omegas, geom=geom))
        for ax in range(d):
            nxt = tuple(k + (1 if a == ax else 0) for a, k in enumerate(idx))
            if nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, (_mode_mu(nxt, mixed), nxt))
    return out


def _mode_mu(idx: tuple[int, ...], mixed: bool) -> float:
    d = len(idx)
    mu = 0.0
    for ax, k in enumerate(idx):
        w = _axis_frequencies(mixed and ax == d - 1, k)
        mu += 0.5 * w * w
    return mu


class TestBasis:
    """The metric's test family: n_max functions per side, sup norm <= 1."""

    def __init__(self, geom: BoxGeometry | None = None, n_max: int = 16):
        self.geom = geom or BoxGeometry(1)
        self.n_max = n_max
        self.plus = _enumerate_modes(self.geom, PLUS, n_max)
        self.minus = _enumerate_modes(self.geom, MINUS, n_max)

    def functions(self, side: str) -> list[BasisFunction]:
        return self.plus if side == PLUS else self.minus


@dataclass(frozen=True)
class RhoResult:
    """Truncated metric value plus a bound on the discarded tail."""

    value: float
    tail_bound: float

    def __float__(self):
        return self.value


def rho_distance(mu_pair, nu_pair, basis: TestBasis | None = None) -> RhoResult:
    """The weak metric between two measure pairs (plus, minus components).

    Each argument is a (plus_measure, minus_measure) tuple of objects with
    ``mass`` and ``pair``.  Components must have mass <= 1 (members of the
    sub-probability space); larger masses are refused.
    """
    basis = basis or TestBasis()
    total_mass = 0.0
    for pair in (mu_pair, nu_pair):
        for comp in pair:
            if comp.mass > 1.0 + 1e-9:
                raise ValueError(f"measure mass {comp.mass} exceeds 1")
            total_mass += comp.mass
    value = 0.0
    for n, (f, g) in enumerate(zip(basis.plus, basis.minus), start=1):
        dp = mu_pair[0].pair(f) - nu_pair[0].pair(f)
        dm = mu_pair[1].pair(g) - nu_pair[1].pair(g)
        value += 2.0 ** (-n) * (abs(dp) + abs(dm))
    return RhoResult(value=value, tail_bound=2.0 ** (-basis.n_max) * total_mass)
