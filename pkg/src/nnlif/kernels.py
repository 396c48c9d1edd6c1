"""Backend selection for the hot loops.

The compiled extension is used when importable; set ``NNLIF_BACKEND=python``
to force the numpy implementation.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("NNLIF_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

bernoulli = _impl.bernoulli
sg_coeffs = _impl.sg_coeffs
run_fixed_drift = _impl.run_fixed_drift
run_nonlinear = _impl.run_nonlinear
laplace_cells = _impl.laplace_cells


def get_backend(name: str):
    """Return the module implementing backend ``name`` ('cython' or 'python')."""
    if name == "python":
        return _kernels_py
    from . import _kernels

    return _kernels
