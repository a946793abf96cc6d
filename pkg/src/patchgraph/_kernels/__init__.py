"""Numeric kernel backend selection.

The hot inner kernels (dense matmul, row softmax, ReLU, percentile
selection, erasure masking) exist twice: a Cython extension
(``_core``) and a NumPy fallback (``_numpy``). The compiled backend is
preferred when importable; set ``PATCHGRAPH_KERNELS=numpy`` or
``=compiled`` to force one. ``benchmarks/bench_kernels.py`` compares
the two.

Results are bitwise reproducible within a backend. Across backends the
matmul kernels may differ in the last ulps (different summation order),
so determinism guarantees hold per backend.
"""

import os
import warnings

_requested = os.environ.get("PATCHGRAPH_KERNELS", "auto").lower()

if _requested not in ("auto", "compiled", "numpy"):
    raise ValueError(
        f"PATCHGRAPH_KERNELS must be 'auto', 'compiled' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import _numpy as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
        warnings.warn(
            "patchgraph compiled kernels unavailable, using NumPy fallback",
            RuntimeWarning,
            stacklevel=2,
        )
        from . import _numpy as _impl  # type: ignore[no-redef]

matmul = _impl.matmul
matmul_nt = _impl.matmul_nt
matmul_tn = _impl.matmul_tn
relu_fwd = _impl.relu_fwd
relu_bwd = _impl.relu_bwd
softmax_rows_fwd = _impl.softmax_rows_fwd
softmax_rows_bwd = _impl.softmax_rows_bwd
kth_smallest = _impl.kth_smallest
erase_fwd = _impl.erase_fwd
erase_bwd = _impl.erase_bwd


def active_backend() -> str:
    """Name of the kernel backend in use: 'compiled' or 'numpy'."""
    return _impl.BACKEND_NAME
