"""Batch ADMM solver for graph-regularized tensor RPCA.

Solves::

    min ||B||_TNN + lam ||F||_1 + g1 sum_j h_j^T Ls_j h_j + g2 Tr(T3 Lt T3^T)
    s.t. X = B + F,  H = F,  T = F

where ``h_j`` is frame ``j`` of ``H`` vectorized and ``T3`` the mode-3
unfolding of ``T``. Setting ``g1 = g2 = 0`` gives plain TRPCA.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from .graph import GraphConfig, laplacian, spatial_graph, temporal_graph
from .tensor import fold, soft, tsvt, unfold

_logger = logging.getLogger(__name__)


@dataclass
class BatchConfig:
    lam: float = None
    gamma1: float = 0.9
    gamma2: float = 1.5
    mu0: float = 0.01
    mu_max: float = 10.0
    rho: float = 1.2
    zeta: float = 1e-3
    max_iters: int = 500

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError("mu0 must be positive")
        if not self.mu_max >= self.mu0:
            raise ValueError("mu_max must be >= mu0")
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be nonnegative")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def lam_for(self, shape):
        if self.lam is not None:
            return self.lam
        w, h, n = shape
        return 1.0 / math.sqrt(max(w, h) * n)


@dataclass
class Graphs:
    """Laplacians used by the solver.

    ``spatial`` holds one ``wh x wh`` Laplacian per frame, or a single one
    shared by all frames.
    """

    temporal: sparse.csr_matrix = None
    spatial: list = None

    def spatial_for(self, j):
        if not self.spatial:
            return None
        return self.spatial[0] if len(self.spatial) == 1 else self.spatial[j]


def build_graphs(x, cfg=None, gcfg=None, shared_spatial=False):
    """Build the temporal Laplacian and the per-frame spatial Laplacians
    that ``cfg`` actually needs."""
    cfg = cfg or BatchConfig()
    gcfg = gcfg or GraphConfig()
    x = np.asarray(x, dtype=float)
    graphs = Graphs()
    if cfg.gamma2 > 0 and x.shape[2] >= 2:
        graphs.temporal = laplacian(temporal_graph(unfold(x, 3), gcfg))
    if cfg.gamma1 > 0:
        if shared_spatial:
            frames = [np.median(x, axis=2)]
        else:
            frames = [x[:, :, j] for j in range(x.shape[2])]
        graphs.spatial = [laplacian(spatial_graph(fr, gcfg)) for fr in frames]
    return graphs


@dataclass
class AdmmState:
    B: np.ndarray
    F: np.ndarray
    H: np.ndarray
    T: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    Y3: np.ndarray
    mu: float
    iter: int = 0
    residuals: list = field(default_factory=list)

    @classmethod
    def zeros(cls, shape, mu):
        z = lambda: np.zeros(shape)  # noqa: E731
        return cls(z(), z(), z(), z(), z(), z(), z(), mu)


@dataclass
class Decomposition:
    B: np.ndarray
    F: np.ndarray
    iters: int
    converged: bool
    final_residuals: tuple = None
    history: list = field(default_factory=list)


class _SystemCache:
    """Factorizations of ``2 g L + mu I`` keyed by (which, mu)."""

    def __init__(self):
        self._store = {}

    def get(self, key, mu, build):
        hit = self._store.get(key)
        if hit is not None and hit[0] == mu:
            return hit[1]
        fact = build()
        self._store[key] = (mu, fact)
        return fact


def update_B(state, x):
    z = x - state.F + state.Y1 / state.mu
    return tsvt(z, 1.0 / state.mu)


def update_T(state, cfg, lt, cache=None):
    """Temporal subproblem, solved on the mode-3 unfolding as
    ``T3 (2 g2 Lt + mu I) = mu F3 - Y3_3``."""
    mu = state.mu
    rhs = mu * unfold(state.F, 3) - unfold(state.Y3, 3)
    if cfg.gamma2 == 0 or lt is None or lt.nnz == 0:
        t3 = rhs / mu
    else:
        n = rhs.shape[1]
        if lt.shape != (n, n):
            raise ValueError(f"temporal Laplacian is {lt.shape}, expected {(n, n)}")

        def build():
            dense = lt.toarray()
            system = cfg.gamma2 * (dense + dense.T) + mu * np.eye(n)
            try:
                return scipy.linalg.cho_factor(system)
            except np.linalg.LinAlgError as exc:
                raise ArithmeticError("temporal system is not positive definite") from exc

        fact = cache.get("T", mu, build) if cache else build()
        # system is symmetric, so right division is a left solve on the transpose
        t3 = scipy.linalg.cho_solve(fact, rhs.T).T
    return fold(t3, 3, state.F.shape)


def update_H(state, cfg, graphs, cache=None):
    """Spatial subproblem, one sparse SPD solve per frame:
    ``(2 g1 Ls_j + mu I) h_j = mu f_j - y_j``."""
    mu = state.mu
    w, h, n = state.F.shape
    rhs = mu * unfold(state.F, 3) - unfold(state.Y2, 3)
    if cfg.gamma1 == 0 or graphs is None or not graphs.spatial:
        return fold(rhs / mu, 3, (w, h, n))
    out = np.empty_like(rhs)
    eye = sparse.identity(w * h, format="csc")
    shared = len(graphs.spatial) == 1
    for j in range(n):
        ls = graphs.spatial_for(j)
        if ls.shape != (w * h, w * h):
            raise ValueError(f"spatial Laplacian is {ls.shape}, expected {(w * h, w * h)}")

        def build(ls=ls):
            return splu((2.0 * cfg.gamma1 * ls + mu * eye).tocsc())

        key = ("H", 0 if shared else j)
        fact = cache.get(key, mu, build) if cache else build()
        out[:, j] = fact.solve(rhs[:, j])
    return fold(out, 3, (w, h, n))


def update_F(state, x, lam):
    """Prox of the l1 term against the average of the three targets.

    The F-terms of the augmented Lagrangian are
    ``lam|F| + mu/2 (|F-A1|^2 + |F-A2|^2 + |F-A3|^2)``, i.e.
    ``lam|F| + 3mu/2 |F - mean(A)|^2``, hence threshold ``lam / (3 mu)``.
    """
    mu = state.mu
    m = ((x - state.B + state.Y1 / mu) + (state.H + state.Y2 / mu) + (state.T + state.Y3 / mu)) / 3.0
    return soft(m, lam / (3.0 * mu))


def update_duals(state, x, cfg):
    mu = state.mu
    state.Y1 = state.Y1 + mu * (x - state.B - state.F)
    state.Y2 = state.Y2 + mu * (state.H - state.F)
    state.Y3 = state.Y3 + mu * (state.T - state.F)
    state.mu = min(cfg.rho * mu, cfg.mu_max)
    return state


def residuals(x, b_prev, f_prev, state):
    """Residual Frobenius norms, each divided by ``||X||_F``."""
    scale = max(float(np.linalg.norm(x)), np.finfo(float).tiny)
    sq = lambda a: float(np.linalg.norm(a)) / scale  # noqa: E731
    return (
        sq(x - state.B - state.F),
        sq(b_prev - state.B),
        sq(f_prev - state.F),
        sq(state.F - state.H),
        sq(state.F - state.T),
    )


def check_convergence(res, cfg):
    return all(r <= cfg.zeta for r in res)


def solve_batch(x, cfg=None, graphs=None, gcfg=None, trace=None, shared_spatial=False):
    """Run the ADMM iterations until every residual drops below ``zeta``.

    ``graphs`` is built from ``x`` when omitted. ``trace`` is an optional
    callable receiving ``(iteration, mu, residuals)`` after each step.
    """
    cfg = cfg or BatchConfig()
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input tensor has non-finite entries")
    if x.shape[2] == 1 and cfg.gamma2 > 0:
        warnings.warn("single frame: temporal regularization disabled", stacklevel=2)
        cfg = BatchConfig(**{**cfg.__dict__, "gamma2": 0.0})
    if graphs is None:
        graphs = build_graphs(x, cfg, gcfg, shared_spatial=shared_spatial)
    lam = cfg.lam_for(x.shape)
    state = AdmmState.zeros(x.shape, cfg.mu0)
    cache = _SystemCache()
    converged = False
    res = None
    for it in range(1, cfg.max_iters + 1):
        b_prev, f_prev = state.B, state.F
        state.B = update_B(state, x)
        state.T = update_T(state, cfg, graphs.temporal, cache)
        state.H = update_H(state, cfg, graphs, cache)
        state.F = update_F(state, x, lam)
        mu_used = state.mu
        update_duals(state, x, cfg)
        state.iter = it
        res = residuals(x, b_prev, f_prev, state)
        state.residuals.append(res)
        if trace is not None:
            trace(it, mu_used, res)
        if check_convergence(res, cfg):
            converged = True
            break
    _logger.debug("batch solve: %d iterations, converged=%s", state.iter, converged)
    return Decomposition(state.B, state.F, state.iter, converged, res, state.residuals)
