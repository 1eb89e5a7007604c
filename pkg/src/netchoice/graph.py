"""Adjacency graphs over decision makers.

Construction (k-nearest-neighbour), normalization (row-stochastic or
symmetric), spectral radius by power iteration, the affine equilibrium
u = rho*W*u + z that the spatial processes and the network models share,
and the plain-text edge-list format used by the CLI.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import (ConvergenceError, DataError, NumericError,
                     ParameterError, ShapeError)


class AdjacencyGraph:
    """Weighted directed graph on n nodes, stored as CSR.

    Weights are nonnegative and finite; ``normalization`` records which
    rescaling produced the matrix ("none", "row", or "symmetric").
    """

    def __init__(self, matrix, normalization="none"):
        mat = sparse.csr_array(matrix, dtype=np.float64)
        if mat.shape[0] != mat.shape[1]:
            raise ShapeError(f"adjacency matrix must be square, got {mat.shape}")
        if mat.nnz:
            data = mat.data
            if not np.isfinite(data).all():
                raise DataError("edge weights must be finite")
            if (data < 0).any():
                raise DataError("edge weights must be nonnegative")
        self.matrix = mat
        self.normalization = normalization
        self._matrix_t = None

    @classmethod
    def from_edges(cls, n, edges, normalization="none"):
        """Build from an iterable of (src, dst, weight) triples."""
        n = int(n)
        if n < 1:
            raise ParameterError(f"graph needs at least one node, got n={n}")
        rows, cols, vals = [], [], []
        for src, dst, weight in edges:
            src = int(src)
            dst = int(dst)
            if not (0 <= src < n and 0 <= dst < n):
                raise DataError(
                    f"edge ({src}, {dst}) outside node range [0, {n})"
                )
            rows.append(src)
            cols.append(dst)
            vals.append(float(weight))
        mat = sparse.csr_array(
            (vals, (rows, cols)), shape=(n, n), dtype=np.float64
        )
        mat.sum_duplicates()
        return cls(mat, normalization=normalization)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def matrix_t(self):
        if self._matrix_t is None:
            self._matrix_t = sparse.csr_array(self.matrix.T)
        return self._matrix_t

    def edges(self):
        """Edge triples sorted by (src, dst)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [
            (int(coo.row[i]), int(coo.col[i]), float(coo.data[i]))
            for i in order
        ]

    def to_dense(self):
        return self.matrix.toarray()

    def __repr__(self):
        return (f"AdjacencyGraph(n={self.n}, nnz={self.matrix.nnz}, "
                f"normalization={self.normalization!r})")


def build_knn_graph(coords, k, symmetrize=False, include_self=False):
    """Directed k-nearest-neighbour graph under Euclidean distance.

    Each node points at its k nearest other nodes with weight 1. Requires
    0 <= k < n. ``symmetrize`` takes the union with the reversed edges;
    ``include_self`` adds unit self-loops on top of the k neighbours.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2:
        raise ShapeError(f"coords must be 2-D, got shape {coords.shape}")
    if coords.size and not np.isfinite(coords).all():
        raise DataError("coords contain non-finite values")
    n = coords.shape[0]
    if n < 1:
        raise ParameterError("need at least one point")
    k = int(k)
    if k < 0 or k >= n:
        raise ParameterError(f"k must satisfy 0 <= k < n, got k={k}, n={n}")

    edges = []
    if k > 0:
        tree = cKDTree(coords)
        _, idx = tree.query(coords, k=k + 1)
        idx = np.atleast_2d(idx)
        for i in range(n):
            row = [int(j) for j in idx[i] if int(j) != i]
            row = row[:k]
            for j in row:
                edges.append((i, j, 1.0))
    if include_self:
        edges.extend((i, i, 1.0) for i in range(n))
    g = AdjacencyGraph.from_edges(n, edges)
    if symmetrize:
        mat = g.matrix.maximum(sparse.csr_array(g.matrix.T))
        g = AdjacencyGraph(mat)
    return g


def normalize(g, mode="row"):
    """Rescale adjacency weights.

    "row" gives D^-1 W (rows sum to one, isolated rows stay zero);
    "symmetric" gives D^-1/2 W D^-1/2 and requires a symmetric edge set.
    """
    mat = g.matrix
    if mat.nnz and (mat.data < 0).any():
        raise DataError("edge weights must be nonnegative")
    if mode == "row":
        deg = np.asarray(mat.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        scaled = sparse.diags_array(inv) @ mat
        return AdjacencyGraph(scaled, normalization="row")
    if mode == "symmetric":
        asym = (mat - sparse.csr_array(mat.T))
        if asym.nnz and np.abs(asym.data).max() > 0:
            raise ParameterError(
                "symmetric normalization requires a symmetric edge set"
            )
        deg = np.asarray(mat.sum(axis=1)).ravel()
        inv_sqrt = np.divide(
            1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0
        )
        d = sparse.diags_array(inv_sqrt)
        return AdjacencyGraph(d @ mat @ d, normalization="symmetric")
    raise ParameterError(f"unknown normalization mode {mode!r}")


def spectral_radius(g, tol=1e-10, max_iter=10000, seed=0):
    """Dominant |eigenvalue| of the adjacency operator via power iteration.

    Runs on the shifted operator W + I (the Perron root of a nonnegative
    matrix shifts by exactly +1, and the shift removes the periodicity that
    stalls plain power iteration on e.g. permutation matrices), then removes
    the shift. Convergence is declared on the eigen-residual.

    Matrices whose rows all sum to one common value s (e.g. row-normalized
    graphs) short-circuit: for a nonnegative matrix, W 1 = s 1 makes s the
    Perron root, so the radius is exactly s without iterating. This also
    covers row-stochastic graphs with many connected components, where the
    dominant eigenvalue is degenerate and power iteration stalls.
    """
    mat = g.matrix
    n = mat.shape[0]
    row_sums = np.asarray(mat.sum(axis=1)).ravel()
    if n and row_sums.size and np.all(
            np.abs(row_sums - row_sums[0]) <= 1e-12 * max(1.0, abs(row_sums[0]))):
        return float(abs(row_sums[0]))
    shift = 1.0
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    v = rng.standard_normal(n)
    norm = np.linalg.norm(v)
    if norm == 0:
        v = np.zeros(n)
        v[0] = 1.0
    else:
        v = v / norm
    lam = shift
    for _ in range(int(max_iter)):
        w = mat @ v + shift * v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v_next = w / lam
        resid = float(np.max(np.abs(mat @ v_next + shift * v_next
                                    - lam * v_next)))
        v = v_next
        if resid <= tol * max(1.0, lam):
            return max(lam - shift, 0.0)
    raise NumericError(
        f"power iteration did not converge in {max_iter} iterations; "
        f"last estimate {max(lam - shift, 0.0)!r}"
    )


def affine_fixed_point(g, rho, z, tol=1e-10, max_iter=10000):
    """Solve u = rho*W*u + z by fixed-point iteration.

    Returns u with residual max-norm ||u - (rho*W*u + z)||_inf <= tol.
    The caller guarantees |rho| * spectral_radius(W) < 1; ten consecutive
    iterations of residual growth raise ConvergenceError.
    """
    mat = g.matrix
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size != g.n:
        raise ShapeError(f"z has {z.size} entries, graph has {g.n} nodes")
    if z.size and not np.isfinite(z).all():
        raise NumericError("z contains non-finite values")
    rho = float(rho)
    u = z.copy()
    prev_resid = np.inf
    growth = 0
    for _ in range(int(max_iter)):
        nxt = rho * (mat @ u) + z
        resid = float(np.max(np.abs(nxt - u))) if z.size else 0.0
        if resid <= tol:
            return nxt
        if not np.isfinite(resid):
            raise ConvergenceError(
                "affine fixed point diverged to non-finite values"
            )
        # a convergent iteration contracts the residual geometrically, so a
        # sustained residual increase means |rho|*radius(W) >= 1
        if resid > prev_resid:
            growth += 1
            if growth >= 10:
                raise ConvergenceError(
                    "affine fixed point diverging: the step residual grew "
                    "over 10 consecutive iterations "
                    "(is |rho|*radius(W) < 1?)"
                )
        else:
            growth = 0
        prev_resid = resid
        u = nxt
    raise ConvergenceError(
        f"affine fixed point did not reach tol={tol} in {max_iter} iterations"
    )


# ---------------------------------------------------------------------------
# edge-list text format: one "src,dst,weight" triple per line, zero-based
# indices; an optional header line is detected by a non-numeric first token.


def _is_number(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def read_edge_list(path, n=None):
    """Load an AdjacencyGraph from an edge-list text file.

    ``n`` fixes the node count; when omitted it is inferred as
    max(index) + 1.
    """
    edges = []
    max_idx = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts and not _is_number(parts[0]):
                continue  # header
            if len(parts) != 3:
                raise DataError(
                    f"{path}:{lineno}: expected 'src,dst,weight', got {line!r}"
                )
            try:
                src = int(parts[0])
                dst = int(parts[1])
                weight = float(parts[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            edges.append((src, dst, weight))
            max_idx = max(max_idx, src, dst)
    if n is None:
        if max_idx < 0:
            raise DataError(f"{path}: empty edge list and no node count given")
        n = max_idx + 1
    return AdjacencyGraph.from_edges(n, edges)


def write_edge_list(g, path, header=True):
    """Write the graph as edge-list text (sorted by (src, dst))."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write("src,dst,weight\n")
        for src, dst, weight in g.edges():
            fh.write(f"{src},{dst},{weight!r}\n")
    return path
