"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``LABELPROP_KERNELS=python`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(name: str):
    if name == "auto":
        name = "compiled" if _compiled is not None else "python"
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available()}") from None


_requested = os.environ.get("LABELPROP_KERNELS", "auto")
_active = get(_requested if _requested in _BACKENDS or _requested == "auto" else "auto")
BACKEND = "compiled" if _active is _compiled else "python"


def use(name: str) -> None:
    """Switch the process-wide backend (used by benchmarks and tests)."""
    global _active, BACKEND
    _active = get(name)
    BACKEND = "compiled" if _active is _compiled else "python"


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def radius_query(sorted_points, sorted_lin, kmin, dims, vs, queries, radius, backend=None):
    mod = get(backend) if backend else _active
    return mod.radius_query(_f64(sorted_points), _i64(sorted_lin), _i64(kmin), _i64(dims),
                            float(vs), _f64(queries), float(radius))


def propagate(sorted_points, sorted_lin, kmin, dims, vs, sorted_labels, sorted_conf,
              queries, d_prop, cutoff, num_labels, num_dynamic, backend=None):
    mod = get(backend) if backend else _active
    return mod.propagate(_f64(sorted_points), _i64(sorted_lin), _i64(kmin), _i64(dims), float(vs),
                         np.ascontiguousarray(sorted_labels, dtype=np.int32), _f64(sorted_conf),
                         _f64(queries), float(d_prop), float(cutoff), int(num_labels), int(num_dynamic))
