"""kNN similarity graphs over frames and pixel patches, and their
normalized Laplacians."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class GraphConfig:
    k: int = 10
    patch: int = 8
    sigma_mode: str = "auto"
    sigma_value: float = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.patch < 1:
            raise ValueError("patch size must be >= 1")
        if self.sigma_mode not in ("auto", "fixed"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.sigma_mode == "fixed" and not (self.sigma_value and self.sigma_value > 0):
            raise ValueError("fixed sigma_mode needs a positive sigma_value")


@dataclass(frozen=True)
class KnnGraph:
    """Undirected weighted graph; ``adjacency`` is a symmetric CSR matrix
    with an empty diagonal."""

    adjacency: sparse.csr_matrix
    sigma: float

    @property
    def n_vertices(self):
        return self.adjacency.shape[0]

    def edges(self):
        coo = self.adjacency.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def degree(self):
        return np.asarray(self.adjacency.sum(axis=1)).ravel()


def knn(features, k, block=1024):
    """Exact k nearest neighbours of each row of ``features``.

    Returns ``(index, dist)`` arrays of shape ``(n, k)``. Self matches are
    excluded and ties go to the lower index.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    k = min(k, n - 1)
    sq = np.einsum("ij,ij->i", features, features)
    index = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * features[start:stop] @ features.T
        np.maximum(d2, 0.0, out=d2)
        rows = np.arange(stop - start)
        d2[rows, rows + start] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        index[start:stop] = order
        dist[start:stop] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return index, dist


def _build(index, dist, cfg):
    n = index.shape[0]
    if cfg.sigma_mode == "fixed":
        sigma = float(cfg.sigma_value)
    else:
        sigma = float(dist.mean()) if dist.size else 0.0
    sigma = max(sigma, SIGMA_FLOOR)
    weights = np.exp(-(dist ** 2) / (2.0 * sigma ** 2))
    # keep every retained edge strictly positive
    np.maximum(weights, np.finfo(float).tiny, out=weights)
    rows = np.repeat(np.arange(n), index.shape[1])
    a = sparse.csr_matrix((weights.ravel(), (rows, index.ravel())), shape=(n, n))
    a = a.maximum(a.T).tocsr()
    a.sort_indices()
    return KnnGraph(a, sigma)


def temporal_graph(x3, cfg):
    """kNN graph over the columns (frames) of a mode-3 unfolding."""
    x3 = np.asarray(x3, dtype=float)
    if x3.ndim != 2 or x3.shape[1] < 2:
        raise ValueError("temporal graph needs a matrix with at least 2 columns")
    index, dist = knn(x3.T, cfg.k)
    return _build(index, dist, cfg)


def patch_features(image, a):
    """One row per pixel: the ``a x a`` patch around it, replicate-padded.

    Pixels are ordered column-major (row index fastest), matching the
    vectorization used by the mode-3 unfolding.
    """
    image = np.asarray(image, dtype=float)
    before = (a - 1) // 2
    after = a // 2
    padded = np.pad(image, ((before, after), (before, after)), mode="edge")
    windows = sliding_window_view(padded, (a, a))
    w, h = image.shape
    return windows.transpose(1, 0, 2, 3).reshape(w * h, a * a)


def spatial_graph(image, cfg):
    """Pixel graph of one frame linking pixels with similar patches."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("spatial graph expects a 2-D frame")
    if cfg.patch > min(image.shape):
        raise ValueError(f"patch size {cfg.patch} exceeds frame size {image.shape}")
    if image.size < 2:
        raise ValueError("frame needs at least two pixels")
    index, dist = knn(patch_features(image, cfg.patch), cfg.k)
    return _build(index, dist, cfg)


def laplacian(g):
    """Normalized Laplacian ``I - D^-1/2 A D^-1/2`` as a CSR matrix.

    Isolated vertices get an all-zero row and column.
    """
    a = g.adjacency if isinstance(g, KnnGraph) else sparse.csr_matrix(g)
    d = np.asarray(a.sum(axis=1)).ravel()
    connected = d > 0
    inv_sqrt = np.zeros_like(d)
    inv_sqrt[connected] = 1.0 / np.sqrt(d[connected])
    dm = sparse.diags(inv_sqrt)
    lap = sparse.diags(connected.astype(float)) - dm @ a @ dm
    lap = sparse.csr_matrix(lap)
    # exact symmetry regardless of rounding in the products above
    lap = ((lap + lap.T) * 0.5).tocsr()
    lap.sort_indices()
    return lap


def trace_quad(f, lap, side="left"):
    """``Tr(F^T L F)`` (side="left") or ``Tr(F L F^T)`` (side="right").

    For the normalized Laplacian this equals
    ``1/2 sum_pq a(p,q) ||f_p/sqrt(d_p) - f_q/sqrt(d_q)||^2`` over the rows
    (left) or columns (right) of ``F``; for ``D - A`` the degree scaling
    drops out.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None] if side == "left" else f[None, :]
    n = lap.shape[0]
    if side == "left":
        if f.shape[0] != n:
            raise ValueError(f"F has {f.shape[0]} rows, Laplacian is {n}x{n}")
        val = float(np.sum(f * (lap @ f)))
    elif side == "right":
        if f.shape[1] != n:
            raise ValueError(f"F has {f.shape[1]} columns, Laplacian is {n}x{n}")
        val = float(np.sum(f.T * (lap @ f.T)))
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return max(val, 0.0)


def write_matrix_market(path, lap, comment=""):
    from scipy.io import mmwrite

    mmwrite(path, sparse.coo_matrix(lap), comment=comment, symmetry="general")
