"""CSR segment reductions used by graph propagation and scoring.

Two interchangeable backends:

* ``numba`` -- jit-compiled loops, parallel over destination rows. Default
  whenever numba imports.
* ``numpy`` -- pure-numpy fallback built on ``np.add.at``.

Select explicitly with the environment variable ``GBREC_BACKEND=numba|numpy``
(read once at import time). Both backends accumulate in float64 and round to
the input dtype once at the end, so results agree across backends to the last
bit in the common case.

Per-row reductions iterate neighbors in CSR order regardless of thread count,
so numba parallelism does not change results. ``scatter_add_rows`` is the one
inherently sequential kernel (duplicate destinations) and is never threaded.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only where numba is absent
    HAVE_NUMBA = False


def _select_backend() -> str:
    choice = os.environ.get("GBREC_BACKEND", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"GBREC_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError("GBREC_BACKEND=numba but numba is not importable")
    if not choice:
        return "numba" if HAVE_NUMBA else "numpy"
    return choice


_BACKEND = _select_backend()


def backend_name() -> str:
    return _BACKEND


def set_num_threads(n: int) -> None:
    """Cap the numba thread pool; no-op on the numpy backend."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if HAVE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# numpy implementations


def _segment_sum_np(indptr, indices, src):
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, src.shape[1]), dtype=np.float64)
    rows = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(indptr))
    np.add.at(out, rows, src[indices])
    return out


def _scatter_add_rows_np(out, idx, rows):
    np.add.at(out, idx, rows)


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _segment_sum_nb(indptr, indices, src, out):
        # each destination row is owned by exactly one iteration: deterministic
        for r in prange(indptr.shape[0] - 1):
            for j in range(indptr[r], indptr[r + 1]):
                s = indices[j]
                for c in range(src.shape[1]):
                    out[r, c] += src[s, c]

    @njit(cache=True)
    def _scatter_add_rows_nb(out, idx, rows):
        for i in range(idx.shape[0]):
            r = idx[i]
            for c in range(rows.shape[1]):
                out[r, c] += rows[i, c]


# ---------------------------------------------------------------------------
# public API


def segment_sum(indptr: np.ndarray, indices: np.ndarray, src: np.ndarray) -> np.ndarray:
    """Per-row neighbor sum: ``out[r] = sum(src[indices[indptr[r]:indptr[r+1]]])``.

    Rows with no neighbors come back as zero vectors. Returns ``src``'s dtype.
    """
    src = np.ascontiguousarray(src)
    if _BACKEND == "numba":
        out = np.zeros((indptr.shape[0] - 1, src.shape[1]), dtype=np.float64)
        _segment_sum_nb(indptr, indices, src, out)
    else:
        out = _segment_sum_np(indptr, indices, src)
    return out.astype(src.dtype, copy=False)


def segment_mean(indptr: np.ndarray, indices: np.ndarray, src: np.ndarray) -> np.ndarray:
    """Per-row neighbor mean; empty rows yield the zero vector."""
    src = np.ascontiguousarray(src)
    if _BACKEND == "numba":
        sums = np.zeros((indptr.shape[0] - 1, src.shape[1]), dtype=np.float64)
        _segment_sum_nb(indptr, indices, src, sums)
    else:
        sums = _segment_sum_np(indptr, indices, src)
    counts = np.diff(indptr)
    inv = np.zeros(counts.shape[0], dtype=np.float64)
    nz = counts > 0
    inv[nz] = 1.0 / counts[nz]
    return (sums * inv[:, None]).astype(src.dtype, copy=False)


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    """In-place ``out[idx[i]] += rows[i]`` with duplicate idx handled by accumulation."""
    if idx.shape[0] == 0:
        return
    rows = np.ascontiguousarray(rows.astype(out.dtype, copy=False))
    idx = np.ascontiguousarray(idx)
    if _BACKEND == "numba":
        _scatter_add_rows_nb(out, idx, rows)
    else:
        _scatter_add_rows_np(out, idx, rows)


def inverse_counts(indptr: np.ndarray) -> np.ndarray:
    """1/degree per CSR row as float64, 0.0 for empty rows."""
    counts = np.diff(indptr)
    inv = np.zeros(counts.shape[0], dtype=np.float64)
    nz = counts > 0
    inv[nz] = 1.0 / counts[nz]
    return inv


# registry used by the benchmark and the backend-equivalence tests
IMPLS = {"numpy": {"segment_sum": _segment_sum_np, "scatter_add_rows": _scatter_add_rows_np}}
if HAVE_NUMBA:
    IMPLS["numba"] = {"segment_sum": _segment_sum_nb, "scatter_add_rows": _scatter_add_rows_nb}
