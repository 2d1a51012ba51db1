"""Kernel backend selection.

The compiled extension is used when importable; set ``CYCLICBP_BACKEND=python``
to force the numpy fallback. ``BACKEND`` names the active choice and
``get_backend(name)`` returns either module explicitly (for tests and the
benchmark).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    if name is None:
        return _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}") from None


_requested = os.environ.get("CYCLICBP_BACKEND", "").strip().lower()
if _requested:
    _active = get_backend(_requested)
    BACKEND = _requested
elif _ckernels is not None:
    _active, BACKEND = _ckernels, "cython"
else:
    _active, BACKEND = _pykernels, "python"

bp_weights = _active.bp_weights
queue_sum_weights = _active.queue_sum_weights
softmax_alloc = _active.softmax_alloc
argmax_alloc = _active.argmax_alloc
proportional_alloc = _active.proportional_alloc
service_means = _active.service_means
fluid_transfer = _active.fluid_transfer
