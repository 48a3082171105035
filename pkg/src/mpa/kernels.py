"""Hot-loop kernels, compiled when available.

The Cython extension ``mpa._ckernels`` is used if it imports; otherwise the
pure-Python ``mpa._pykernels`` versions are used. Set ``MPA_KERNELS=python``
to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MPA_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def edit_distance(a, b, backend=None):
    impl = _select(backend)
    if impl is _pykernels:
        return int(impl.edit_distance(a, b))
    return int(impl.edit_distance(np.ascontiguousarray(a, dtype=np.int64),
                                  np.ascontiguousarray(b, dtype=np.int64)))


def polyphase_resample(x, h, up, down, n_out, delay, backend=None):
    impl = _select(backend)
    return impl.polyphase_resample(np.ascontiguousarray(x, dtype=np.float64),
                                   np.ascontiguousarray(h, dtype=np.float64),
                                   int(up), int(down), int(n_out), int(delay))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not built")
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")
