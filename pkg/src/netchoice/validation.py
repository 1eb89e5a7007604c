"""Input validation helpers shared by the estimators and the core modules."""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


def as_matrix(x, name="array", allow_empty_cols=False):
    """Coerce to a C-contiguous float64 2-D array and check finiteness.

    1-D input is treated as a single column.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[1] == 0 and not allow_empty_cols:
        raise ShapeError(f"{name} has no columns")
    if arr.size and not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def as_attribute_tensor(x, name="x"):
    """Coerce attribute input to (n, k) for binary or (n, J, k) for
    multinomial data, float64 and finite."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        pass
    elif arr.ndim == 3:
        if arr.shape[1] < 2:
            raise ShapeError(
                f"{name} is 3-D so its second axis must index >= 2 "
                f"alternatives, got shape {arr.shape}"
            )
    else:
        raise ShapeError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def as_choices(y, n_alternatives, name="y"):
    """Coerce choices to a 1-D int array with values in [0, n_alternatives)."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.equal(np.mod(arr, 1), 0).all():
        raise ShapeError(f"{name} must contain integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n_alternatives):
        bad = int(np.argmax((arr < 0) | (arr >= n_alternatives)))
        raise ShapeError(
            f"{name}[{bad}] = {arr[bad]} outside [0, {n_alternatives})"
        )
    return arr


def check_rows(n, *named_arrays):
    """Check that every (name, array) pair has n rows."""
    for name, arr in named_arrays:
        if arr is not None and arr.shape[0] != n:
            raise ShapeError(
                f"{name} has {arr.shape[0]} rows, expected {n}"
            )


def check_graph(graph, n):
    if graph is None:
        raise ShapeError("this model requires an adjacency graph")
    if graph.n != n:
        raise ShapeError(
            f"graph has {graph.n} nodes but the data has {n} rows"
        )
