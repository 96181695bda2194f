"""Reference implementation of the near-interface time-refinement cascade.

A window W is either taken as one Euler step (mirror fold; the cascade only
ever sees particles far from the harvest face) or split into four windows
W/4; particles within kappa*sqrt(s*W/4) of the interface descend into the
sub-windows, everyone else steps once per sub-window.  Mirror-folded
Brownian increments are law-exact at every scale, so the refinement changes
only the clock resolution.

At the bottom window (depth ``levels``) the annihilation clock runs with the
exact thinning semantics: exponential gap -log1p(-U)/A against the current
intensity A = n_pairs * rate / (2N), selection uniform over the in-tube
pairs, intensity recomputed after each kill; events only ever pair particles
inside the tube at the (sub-stepped) sample time.

Branch pruning (descend only when both sides have near members) depends on
positions and motion state alone, never on particle labels, so runs with
different lam on one seed consume identical motion randomness.  The compiled
twin in ``_cascade`` must reproduce this module bit for bit: identical
expression grouping, stable [near..., far...] partition order (adopting the
child's final permutation), identical buffer and events-stream consumption
(one uniform per gap, one per selection).
"""

from __future__ import annotations

import math

import numpy as np


class NoiseExhausted(Exception):
    """Motion buffer ran out mid-cascade; the driver retries with a larger one."""


class _State:
    __slots__ = (
        "pos_p", "pos_m", "phys_p", "phys_m", "levels", "kappa", "delta",
        "rate", "inv2N", "j_scale", "lam_on", "bp", "bm", "sp", "sm",
        "noise", "nptr", "rng_e", "events", "n_events", "j_acc", "seg_log", "d",
    )


def cascade(pos_p, pos_m, phys_p, phys_m, ids_p, ids_m, W, levels, t0,
            kappa, delta, rate, inv2N, j_scale, lam_on,
            bp, bm, sp, sm, noise, nptr, rng_e, events, n_events, j_acc,
            seg_log=None) -> int:
    """Advance the near sets through one coarse window.

    Returns 0 on success, 1 if the noise buffer was exhausted (state is then
    partially advanced and must be rolled back by the caller).
    """
    st = _State()
    st.pos_p, st.pos_m = pos_p, pos_m
    st.phys_p, st.phys_m = phys_p, phys_m
    st.levels = levels
    st.kappa, st.delta = kappa, delta
    st.rate, st.inv2N, st.j_scale = rate, inv2N, j_scale
    st.lam_on = lam_on
    st.bp, st.bm, st.sp, st.sm = bp, bm, sp, sm
    st.noise, st.nptr = noise, nptr
    st.rng_e = rng_e
    st.events, st.n_events = events, n_events
    st.j_acc = j_acc
    st.seg_log = seg_log
    st.d = pos_p.shape[1]
    try:
        _advance(st, np.asarray(ids_p, np.int64), np.asarray(ids_m, np.int64),
                 W, 0, t0)
    except NoiseExhausted:
        return 1
    return 0


def _move(st: _State, ids, side_plus: bool, C: float):
    n = len(ids)
    if n == 0:
        return
    need = n * st.d
    if st.nptr[0] + need > st.noise.shape[0]:
        raise NoiseExhausted
    z = st.noise[st.nptr[0]: st.nptr[0] + need].reshape(n, st.d)
    st.nptr[0] += need
    pos = st.pos_p if side_plus else st.pos_m
    b = st.bp if side_plus else st.bm
    s = st.sp if side_plus else st.sm
    sq = math.sqrt(s * C)
    prop = (pos[ids] + b * C) + sq * z
    r = np.abs(np.fmod(prop, 2.0))
    pos[ids] = np.where(r > 1.0, 2.0 - r, r)


def _advance(st: _State, ids_p, ids_m, W: float, level: int, t0: float):
    """Returns the member arrays in their final order, mirroring the
    compiled twin's in-place [near..., far...] workspace layout."""
    if level == st.levels:
        _move(st, ids_p, True, W)
        _move(st, ids_m, False, W)
        if st.lam_on:
            _clock(st, ids_p, ids_m, W, t0)
        return ids_p, ids_m
    C = W / 4.0
    rp = st.kappa * math.sqrt(st.sp * C)
    rm = st.kappa * math.sqrt(st.sm * C)
    for k in range(4):
        # stable partition; both implementations keep [near..., far...] order
        maskp = st.pos_p[ids_p, -1] < rp
        maskm = st.pos_m[ids_m, -1] < rm
        near_p, far_p = ids_p[maskp], ids_p[~maskp]
        near_m, far_m = ids_m[maskm], ids_m[~maskm]
        _move(st, far_p, True, C)
        _move(st, far_m, False, C)
        if len(near_p) and len(near_m):
            near_p, near_m = _advance(st, near_p, near_m, C, level + 1,
                                      t0 + k * C)
        else:
            _move(st, near_p, True, C)
            _move(st, near_m, False, C)
        ids_p = np.concatenate([near_p, far_p])
        ids_m = np.concatenate([near_m, far_m])
    return ids_p, ids_m


def _clock(st: _State, ids_p, ids_m, w: float, t0: float):
    delta2 = st.delta * st.delta
    ap = [int(i) for i in ids_p
          if st.phys_p[i] == 0 and st.pos_p[i, -1] < st.delta]
    if not ap:
        return
    am = [int(j) for j in ids_m
          if st.phys_m[j] == 0 and st.pos_m[j, -1] < st.delta]
    if not am:
        return
    pairs = []
    for i in ap:
        si = st.pos_p[i, -1]
        for j in am:
            sj = st.pos_m[j, -1]
            d2 = si * si + sj * sj
            for ax in range(st.d - 1):
                diff = st.pos_p[i, ax] - st.pos_m[j, ax]
                d2 += 0.5 * (diff * diff)
            if d2 < delta2:
                pairs.append((i, j))
    t_rel = 0.0
    while pairs:
        a = len(pairs) * st.rate * st.inv2N
        u = st.rng_e.random()
        tau = -math.log1p(-u) / a
        remaining = w - t_rel
        seg = tau if tau < remaining else remaining
        st.j_acc[0] += st.j_scale * len(pairs) * seg
        if st.seg_log is not None:
            ii = np.array([p[0] for p in pairs], np.int64)
            jj = np.array([p[1] for p in pairs], np.int64)
            st.seg_log.append((seg, st.pos_p[ii].copy(), st.pos_m[jj].copy()))
        if tau >= remaining:
            break
        v = st.rng_e.random()
        k = int(v * len(pairs))
        if k >= len(pairs):
            k = len(pairs) - 1
        i, j = pairs[k]
        st.phys_p[i] = 2
        st.phys_m[j] = 2
        ne = st.n_events[0]
        st.events[ne, 0] = t0 + t_rel + tau
        st.events[ne, 1] = i
        st.events[ne, 2] = j
        for ax in range(st.d):
            st.events[ne, 3 + ax] = st.pos_p[i, ax]
            st.events[ne, 3 + st.d + ax] = st.pos_m[j, ax]
        st.n_events[0] = ne + 1
        t_rel += tau
        pairs = [(a_, b_) for (a_, b_) in pairs if a_ != i and b_ != j]
