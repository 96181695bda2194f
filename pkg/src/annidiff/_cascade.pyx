# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of the near-interface time-refinement cascade.

Bit-identical to ``_cascade_py`` by construction: the same IEEE expression
grouping in the motion step, the same stable [near..., far...] partition
order (children permute the parent's workspace slice in place), the same
single-uniform exponential gaps (log1p), and the same noise-buffer and
events-stream consumption.  See that module for the algorithm description.
"""

from libc.math cimport fabs, fmod, log1p, sqrt

import numpy as np


cdef class _CascadeState:
    cdef double[:, ::1] pos_p, pos_m
    cdef signed char[::1] phys_p, phys_m
    cdef long long[::1] scratch
    cdef int levels, d
    cdef double kappa, delta, rate, inv2N, j_scale
    cdef bint lam_on, log_segments
    cdef double[::1] bp, bm
    cdef double sp, sm
    cdef double[::1] noise
    cdef long long nptr, nmax
    cdef object rng_random
    cdef double[:, ::1] events
    cdef long long n_events, ev_cap
    cdef double j_acc
    cdef object seg_log
    cdef long long[::1] pair_i, pair_j
    cdef int exhausted


cdef inline double _fold(double p):
    cdef double r = fabs(fmod(p, 2.0))
    if r > 1.0:
        r = 2.0 - r
    return r


cdef int _move(_CascadeState st, long long[::1] ids, Py_ssize_t lo,
               Py_ssize_t hi, bint side_plus, double C):
    """Immediate synchronized step of duration C (bottom windows)."""
    cdef Py_ssize_t n = hi - lo
    if n == 0:
        return 0
    cdef Py_ssize_t need = n * st.d
    if st.nptr + need > st.nmax:
        st.exhausted = 1
        return 1
    cdef double[:, ::1] pos = st.pos_p if side_plus else st.pos_m
    cdef double[::1] b = st.bp if side_plus else st.bm
    cdef double s = st.sp if side_plus else st.sm
    cdef double sq = sqrt(s * C)
    cdef Py_ssize_t k, ax, i
    cdef long long ptr = st.nptr
    for k in range(n):
        i = <Py_ssize_t> ids[lo + k]
        for ax in range(st.d):
            pos[i, ax] = _fold(
                (pos[i, ax] + b[ax] * C) + sq * st.noise[ptr + k * st.d + ax]
            )
    st.nptr = ptr + need
    return 0


cdef Py_ssize_t _partition(_CascadeState st, long long[::1] ids, Py_ssize_t lo,
                           Py_ssize_t hi, bint side_plus, double r):
    """Stable in-place partition of [lo,hi) into [near..., far...); returns mid."""
    cdef double[:, ::1] pos = st.pos_p if side_plus else st.pos_m
    cdef Py_ssize_t k, nn = 0, nf = 0
    cdef long long i
    for k in range(lo, hi):
        i = ids[k]
        if pos[i, st.d - 1] < r:
            st.scratch[nn] = i
            nn += 1
    for k in range(lo, hi):
        i = ids[k]
        if pos[i, st.d - 1] >= r:
            st.scratch[nn + nf] = i
            nf += 1
    for k in range(hi - lo):
        ids[lo + k] = st.scratch[k]
    return lo + nn


cdef void _grow_pairs(_CascadeState st):
    old_i = np.asarray(st.pair_i).copy()
    old_j = np.asarray(st.pair_j).copy()
    cap = old_i.shape[0] * 2
    new_i = np.empty(cap, dtype=np.int64)
    new_j = np.empty(cap, dtype=np.int64)
    new_i[: old_i.shape[0]] = old_i
    new_j[: old_j.shape[0]] = old_j
    st.pair_i = new_i
    st.pair_j = new_j


cdef void _clock(_CascadeState st, long long[::1] ids_p, Py_ssize_t lop,
                 Py_ssize_t hip, long long[::1] ids_m, Py_ssize_t lom,
                 Py_ssize_t him, double w, double t0):
    cdef double delta2 = st.delta * st.delta
    cdef Py_ssize_t k, q, ax, npair = 0
    cdef long long i, j
    cdef double d2, diff, si, sj
    # enumerate in-tube pairs, i-major in workspace order
    for k in range(lop, hip):
        i = ids_p[k]
        if st.phys_p[i] != 0 or st.pos_p[i, st.d - 1] >= st.delta:
            continue
        si = st.pos_p[i, st.d - 1]
        for q in range(lom, him):
            j = ids_m[q]
            if st.phys_m[j] != 0 or st.pos_m[j, st.d - 1] >= st.delta:
                continue
            sj = st.pos_m[j, st.d - 1]
            d2 = si * si + sj * sj
            for ax in range(st.d - 1):
                diff = st.pos_p[i, ax] - st.pos_m[j, ax]
                d2 += 0.5 * (diff * diff)
            if d2 < delta2:
                if npair >= st.pair_i.shape[0]:
                    _grow_pairs(st)
                st.pair_i[npair] = i
                st.pair_j[npair] = j
                npair += 1
    if npair == 0:
        return
    cdef double t_rel = 0.0, a, u, tau, remaining, seg, v
    cdef Py_ssize_t pick, w_idx
    while npair > 0:
        a = npair * st.rate * st.inv2N
        u = <double> st.rng_random()
        tau = -log1p(-u) / a
        remaining = w - t_rel
        seg = tau if tau < remaining else remaining
        st.j_acc += st.j_scale * npair * seg
        if st.log_segments:
            ii = np.asarray(st.pair_i[:npair])
            jj = np.asarray(st.pair_j[:npair])
            st.seg_log.append(
                (seg, np.asarray(st.pos_p)[ii].copy(),
                 np.asarray(st.pos_m)[jj].copy())
            )
        if tau >= remaining:
            break
        v = <double> st.rng_random()
        pick = <Py_ssize_t> (v * npair)
        if pick >= npair:
            pick = npair - 1
        i = st.pair_i[pick]
        j = st.pair_j[pick]
        st.phys_p[i] = 2
        st.phys_m[j] = 2
        if st.n_events < st.ev_cap:
            st.events[st.n_events, 0] = t0 + t_rel + tau
            st.events[st.n_events, 1] = <double> i
            st.events[st.n_events, 2] = <double> j
            for ax in range(st.d):
                st.events[st.n_events, 3 + ax] = st.pos_p[i, ax]
                st.events[st.n_events, 3 + st.d + ax] = st.pos_m[j, ax]
            st.n_events += 1
        t_rel += tau
        w_idx = 0
        for k in range(npair):
            if st.pair_i[k] != i and st.pair_j[k] != j:
                st.pair_i[w_idx] = st.pair_i[k]
                st.pair_j[w_idx] = st.pair_j[k]
                w_idx += 1
        npair = w_idx


cdef int _advance(_CascadeState st, long long[::1] ids_p, Py_ssize_t lop,
                  Py_ssize_t hip, long long[::1] ids_m, Py_ssize_t lom,
                  Py_ssize_t him, double W, int level, double t0):
    if level == st.levels:
        if _move(st, ids_p, lop, hip, 1, W):
            return 1
        if _move(st, ids_m, lom, him, 0, W):
            return 1
        if st.lam_on:
            _clock(st, ids_p, lop, hip, ids_m, lom, him, W, t0)
        return 0
    cdef double C = W / 4.0
    cdef double rp = st.kappa * sqrt(st.sp * C)
    cdef double rm = st.kappa * sqrt(st.sm * C)
    cdef Py_ssize_t midp, midm
    cdef int k
    for k in range(4):
        midp = _partition(st, ids_p, lop, hip, 1, rp)
        midm = _partition(st, ids_m, lom, him, 0, rm)
        if _move(st, ids_p, midp, hip, 1, C):
            return 1
        if _move(st, ids_m, midm, him, 0, C):
            return 1
        if midp > lop and midm > lom:
            if _advance(st, ids_p, lop, midp, ids_m, lom, midm, C,
                        level + 1, t0 + k * C):
                return 1
        else:
            if _move(st, ids_p, lop, midp, 1, C):
                return 1
            if _move(st, ids_m, lom, midm, 0, C):
                return 1
    return 0


def cascade(pos_p, pos_m, phys_p, phys_m, ids_p, ids_m,
            double W, int levels, double t0, double kappa, double delta,
            double rate, double inv2N, double j_scale, bint lam_on, bp, bm,
            double sp, double sm, noise, nptr, rng_e, events, n_events,
            j_acc, seg_log=None):
    """Entry point mirroring ``_cascade_py.cascade``; returns 0 or 1."""
    cdef _CascadeState st = _CascadeState()
    st.pos_p = pos_p
    st.pos_m = pos_m
    st.phys_p = phys_p
    st.phys_m = phys_m
    # private copies: the cascade permutes its workspaces in place, and the
    # driver may re-invoke on the same id arrays after a buffer retry
    work_p = np.array(ids_p, dtype=np.int64, copy=True)
    work_m = np.array(ids_m, dtype=np.int64, copy=True)
    cdef long long[::1] wp = work_p
    cdef long long[::1] wm = work_m
    st.scratch = np.empty(max(len(work_p), len(work_m), 1), dtype=np.int64)
    st.levels = levels
    st.d = pos_p.shape[1]
    st.kappa = kappa
    st.delta = delta
    st.rate = rate
    st.inv2N = inv2N
    st.j_scale = j_scale
    st.lam_on = lam_on
    st.bp = np.ascontiguousarray(bp, dtype=np.float64)
    st.bm = np.ascontiguousarray(bm, dtype=np.float64)
    st.sp = sp
    st.sm = sm
    st.noise = noise
    st.nptr = nptr[0]
    st.nmax = noise.shape[0]
    st.rng_random = rng_e.random
    st.events = events
    st.n_events = n_events[0]
    st.ev_cap = events.shape[0]
    st.j_acc = j_acc[0]
    st.seg_log = seg_log
    st.log_segments = seg_log is not None
    cap = max(256, len(work_p) * 4)
    st.pair_i = np.empty(cap, dtype=np.int64)
    st.pair_j = np.empty(cap, dtype=np.int64)
    st.exhausted = 0
    cdef int rc = _advance(st, wp, 0, len(work_p), wm, 0, len(work_m),
                           W, 0, t0)
    nptr[0] = st.nptr
    n_events[0] = st.n_events
    j_acc[0] = st.j_acc
    return 1 if (rc or st.exhausted) else 0
