"""Hot numeric kernels behind a swappable backend.

Two implementations with identical signatures: a compiled Cython
extension (``_ops``) and a pure-numpy fallback (``pyops``). The backend
is picked at import time, defaulting to the compiled one when available;
set KBGEN_KERNELS=python|native to force a choice, or call
``set_backend`` at runtime (used by the benchmark). Matrix products are
delegated to BLAS through numpy in both backends; only the fused
elementwise/rowwise kernels differ.
"""

import os

from . import pyops

_BACKENDS = {"python": pyops}
try:
    from . import _ops  # compiled extension

    _BACKENDS["native"] = _ops
except ImportError:  # pragma: no cover - source tree without built extension
    _ops = None

impl = pyops
_active = "python"


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return _active


def set_backend(name):
    global impl, _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    impl = _BACKENDS[name]
    _active = name


_requested = os.environ.get("KBGEN_KERNELS", "auto")
if _requested == "auto":
    set_backend("native" if "native" in _BACKENDS else "python")
elif _requested in ("python", "native"):
    set_backend(_requested)
else:
    raise ValueError(f"KBGEN_KERNELS must be auto, python, or native (got {_requested!r})")
