"""Numerical backend selection.

The compiled extension is preferred when importable; the numpy fallback
implements the same contract.  Set LFKINETIC_PURE_PYTHON=1 to force the
fallback (used by the benchmark and by parity debugging).
"""

from __future__ import annotations

import os

if os.environ.get("LFKINETIC_PURE_PYTHON"):
    from . import _core_np as core
else:
    try:
        from . import _core as core  # type: ignore[no-redef]
    except ImportError:
        from . import _core_np as core  # type: ignore[no-redef]

BACKEND: str = core.BACKEND_NAME

__all__ = ["core", "BACKEND"]
