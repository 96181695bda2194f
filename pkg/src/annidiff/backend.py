"""Select the particle-engine backends at import time.

Two hot kernels have compiled (Cython) implementations with pure-numpy twins
of identical semantics:

* ``step_side``: one harvest-aware Euler step for a particle block,
* ``cascade``: the near-interface time-refinement cascade with the
  annihilation clock.

The twins are written for bit-identical output (same IEEE expression
grouping, same RNG consumption), so which backend runs is a pure speed
choice.  Set ``ANNIDIFF_FORCE_FALLBACK=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _steppy, _cascade_py

if os.environ.get("ANNIDIFF_FORCE_FALLBACK", "") == "1":
    _step_impl = _steppy
    _cascade_impl = _cascade_py
    BACKEND = "python"
else:
    try:
        from . import _stepcore as _step_impl  # type: ignore[no-redef]
        from . import _cascade as _cascade_impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _step_impl = _steppy
        _cascade_impl = _cascade_py
        BACKEND = "python"

step_side = _step_impl.step_side
cascade = _cascade_impl.cascade


def backend_name() -> str:
    return BACKEND
