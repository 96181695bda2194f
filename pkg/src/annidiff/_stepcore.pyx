# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loop for the particle motion step.

Must stay bit-identical to the pure-numpy twin in ``_steppy``: only IEEE
arithmetic on caller-supplied arrays (noise and log-uniform draws are
precomputed by the driver), no library transcendentals.
"""

from libc.math cimport fabs, fmod


def step_side(double[:, ::1] pos, signed char[::1] status,
              double[::1] drift_dt, double sq,
              double[:, ::1] noise, double[::1] logu,
              bint harvest_on, bint bridge_on, double inv_sdt):
    """Advance active particles one Euler step in the internal frame.

    Mirror-folds proposals into [0,1] per axis; on the normal (last) axis,
    crossing the harvest face or failing the Brownian-bridge test absorbs the
    particle (status 1, normal coordinate pinned to the face).
    """
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t d = pos.shape[1]
    cdef Py_ssize_t i, ax
    cdef double p, r, s0, pn, thresh
    cdef bint harvested
    for i in range(n):
        if status[i] != 0:
            continue
        harvested = 0
        if harvest_on:
            s0 = pos[i, d - 1]
            pn = (pos[i, d - 1] + drift_dt[d - 1]) + sq * noise[i, d - 1]
            if pn >= 1.0:
                harvested = 1
            elif bridge_on:
                thresh = (-2.0 * (1.0 - s0)) * (1.0 - pn) * inv_sdt
                if logu[i] < thresh:
                    harvested = 1
        for ax in range(d):
            p = (pos[i, ax] + drift_dt[ax]) + sq * noise[i, ax]
            r = fabs(fmod(p, 2.0))
            if r > 1.0:
                r = 2.0 - r
            pos[i, ax] = r
        if harvested:
            pos[i, d - 1] = 1.0
            status[i] = 1
