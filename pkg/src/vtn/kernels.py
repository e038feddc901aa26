"""Band attention kernel dispatch.

The compiled core (``vtn._band``) is used when it was built; otherwise the
numpy fallback is used. Set ``VTN_KERNELS=python`` to force the fallback.
"""

import os

import numpy as np

from . import _band_py

BACKEND = "python"
_impl = _band_py

if os.environ.get("VTN_KERNELS", "").lower() != "python":
    try:
        from . import _band as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "compiled"


def _prep(*arrays):
    dtype = arrays[0].dtype
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


def _index(index):
    return np.ascontiguousarray(index, dtype=np.int64)


def band_qk(q, k, index):
    q, k = _prep(q, k)
    return _impl.band_qk(q, k, _index(index))


def band_qk_backward(ds, q, k, index):
    ds, q, k = _prep(ds, q, k)
    return _impl.band_qk_backward(ds, q, k, _index(index))


def band_pv(p, v, index):
    p, v = _prep(p, v)
    return _impl.band_pv(p, v, _index(index))


def band_pv_backward(dout, p, v, index):
    dout, p, v = _prep(dout, p, v)
    return _impl.band_pv_backward(dout, p, v, _index(index))


def implementations():
    """Available backends by name, for benchmarks and cross-checks."""
    found = {"python": _band_py}
    try:
        from . import _band
        found["compiled"] = _band
    except ImportError:
        pass
    return found
