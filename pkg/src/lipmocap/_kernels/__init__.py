"""Hot kernels: farthest point sampling, nearest neighbours, ray casting, max-pool scatter.

The compiled ``_core`` extension is used when it was built; otherwise the
numpy implementations in ``_fallback`` are selected. Set ``LIPMOCAP_PURE_PYTHON=1``
to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if os.environ.get("LIPMOCAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

fps_indices = _impl.fps_indices
nearest_sq_dist = _impl.nearest_sq_dist
ray_cast = _impl.ray_cast
maxpool_scatter = _impl.maxpool_scatter

__all__ = ["BACKEND", "fps_indices", "nearest_sq_dist", "ray_cast", "maxpool_scatter"]
