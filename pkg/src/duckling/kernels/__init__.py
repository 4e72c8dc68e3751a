"""Numeric kernel backend selection.

The compiled Cython extension is used when it has been built; otherwise the
NumPy implementations in :mod:`duckling.kernels.pure` take over. Set
``DUCKLING_BACKEND=python`` to force the fallback, or
``DUCKLING_BACKEND=cython`` to require the extension (raising if missing).
Both backends implement the same contracts; ``benchmarks/bench_kernels.py``
compares their speed.
"""

import os

from duckling.kernels import pure

_requested = os.environ.get("DUCKLING_BACKEND", "auto").strip().lower()

if _requested in ("auto", "cython", "c", "compiled"):
    try:
        from duckling.kernels import _fast as _impl

        BACKEND = "cython"
    except ImportError:
        if _requested != "auto":
            raise ImportError(
                "DUCKLING_BACKEND=%s but the compiled extension is not built; "
                "reinstall without DUCKLING_SKIP_EXT or use DUCKLING_BACKEND=python" % _requested
            )
        _impl = pure
        BACKEND = "python"
elif _requested in ("python", "pure", "numpy"):
    _impl = pure
    BACKEND = "python"
else:
    raise ValueError("unrecognized DUCKLING_BACKEND value: %r" % _requested)

cosine_distance_matrix = _impl.cosine_distance_matrix
mean_offdiagonal = _impl.mean_offdiagonal
gated_forward = _impl.gated_forward
gated_backward = _impl.gated_backward

__all__ = [
    "BACKEND",
    "cosine_distance_matrix",
    "mean_offdiagonal",
    "gated_forward",
    "gated_backward",
    "pure",
]
