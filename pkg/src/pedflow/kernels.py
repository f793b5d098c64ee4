"""Kernel backend selection.

The hot inner loops (LSTM gate math, occupancy binning, pairwise
avoidance) exist twice: a compiled Cython extension (pedflow._kernels)
and a pure numpy fallback (pedflow._kernels_py) with identical
contracts. The compiled one is used when importable; set
PEDFLOW_KERNELS=py or =c to force a choice. Within one backend results
are bit-reproducible; across backends they agree to ~1e-12 (libm vs
numpy vectorized transcendentals may differ in the last ulp).
"""

from __future__ import annotations

import os

from . import _kernels_py


def _load(choice: str):
    if choice == "py":
        return _kernels_py
    if choice == "c":
        from . import _kernels  # raises ImportError if not built
        return _kernels
    if choice == "auto":
        try:
            from . import _kernels
            return _kernels
        except ImportError:
            return _kernels_py
    raise RuntimeError(f"PEDFLOW_KERNELS must be auto, py or c, not {choice!r}")


def get_backend(name: str):
    """Explicit backend lookup, used by parity tests and benchmarks."""
    return _load(name)


def available_backends() -> list:
    names = ["py"]
    try:
        _load("c")
        names.insert(0, "c")
    except ImportError:
        pass
    return names


_impl = _load(os.environ.get("PEDFLOW_KERNELS", "auto"))

BACKEND = _impl.BACKEND
sigmoid = _impl.sigmoid
lstm_gates_forward = _impl.lstm_gates_forward
lstm_gates_backward = _impl.lstm_gates_backward
occupancy_counts = _impl.occupancy_counts
occupancy_counts_all = _impl.occupancy_counts_all
avoidance_terms = _impl.avoidance_terms
