"""Pure-numpy twin of the compiled motion step.

Bit-identical to ``_stepcore.step_side`` by construction: the same IEEE
operations in the same grouping, with all randomness precomputed by the
driver.  Selected at import time by ``backend`` when the extension is
unavailable (or forced via ANNIDIFF_FORCE_FALLBACK=1).
"""

from __future__ import annotations

import numpy as np


def step_side(pos, status, drift_dt, sq, noise, logu,
              harvest_on, bridge_on, inv_sdt):
    """Advance active particles one Euler step in the internal frame."""
    active = status == 0
    if not active.any():
        return
    prop = (pos + drift_dt) + sq * noise
    harvested = np.zeros(pos.shape[0], dtype=bool)
    if harvest_on:
        s0 = pos[:, -1]
        pn = prop[:, -1]
        crossed = pn >= 1.0
        if bridge_on:
            thresh = (-2.0 * (1.0 - s0)) * (1.0 - pn) * inv_sdt
            harvested = active & (crossed | (~crossed & (logu < thresh)))
        else:
            harvested = active & crossed
    r = np.abs(np.fmod(prop, 2.0))
    folded = np.where(r > 1.0, 2.0 - r, r)
    pos[active] = folded[active]
    if harvest_on:
        pos[harvested, -1] = 1.0
        status[harvested] = 1
