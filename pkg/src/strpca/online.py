"""Online (column-streaming) solver.

Each mode-m unfolding of the video is streamed column by column. A column
``x`` is split as ``x = U v + f`` with a small basis ``U`` (p x r) that is
refined after every column, while ``f`` is pulled toward its spatially
smoothed copy ``h`` and its temporally smoothed copy ``t``. The three
per-mode results are folded back and averaged.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .graph import GraphConfig, laplacian, spatial_graph, temporal_graph
from .tensor import fold, soft, unfold

_logger = logging.getLogger(__name__)


@dataclass
class OnlineConfig:
    r: int = 10
    eta: float = 0.01
    lam: float = None
    lam2: float = 0.5
    gamma1: float = 0.9
    gamma2: float = 1.5
    omega: float = 1e-6
    window: int = 10
    basis_update: str = "closed_form"
    max_inner: int = 100
    modes: tuple = (1, 2, 3)
    graph_init: bool = False
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("rank r must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.basis_update not in ("closed_form", "sgd"):
            raise ValueError(f"unknown basis_update {self.basis_update!r}")
        if self.gamma1 < 0 or self.gamma2 < 0 or self.lam2 < 0:
            raise ValueError("gamma1, gamma2 and lam2 must be nonnegative")
        if not self.modes or any(m not in (1, 2, 3) for m in self.modes):
            raise ValueError(f"modes must be drawn from (1, 2, 3), got {self.modes}")

    def lam_for(self, shape):
        if self.lam is not None:
            return self.lam
        w, h, n = shape
        return 1.0 / math.sqrt(max(w, h) * n)


@dataclass
class ColumnResult:
    v: np.ndarray
    f: np.ndarray
    h: np.ndarray
    t: np.ndarray
    b: np.ndarray
    inner_iters: int = 0
    converged: bool = False


class TemporalWindow:
    """The most recent columns of one stream, used for the temporal term.

    Holds at most ``size - 1`` earlier ``(x, t)`` pairs so that, with the
    incoming column, the window graph has ``size`` vertices.
    """

    def __init__(self, size, gcfg=None):
        self.gcfg = gcfg or GraphConfig()
        self.xs = deque(maxlen=size - 1)
        self.ts = deque(maxlen=size - 1)
        self.coupling = np.zeros(0)
        self.diag = 0.0

    def couple(self, x):
        """Normalized edge weights between ``x`` and each stored column,
        and the Laplacian diagonal entry of ``x``."""
        if not self.xs:
            self.coupling, self.diag = np.zeros(0), 0.0
            return self
        cols = np.column_stack(list(self.xs) + [x])
        lap = laplacian(temporal_graph(cols, self.gcfg)).toarray()
        self.coupling = -lap[-1, :-1]
        self.diag = lap[-1, -1]
        return self

    def push(self, x, t):
        self.xs.append(np.array(x, dtype=float))
        self.ts.append(np.array(t, dtype=float))


@dataclass
class OnlineState:
    """Per-mode solver state; every array is sized by p, r or the window,
    never by the stream length."""

    U: np.ndarray
    Theta: np.ndarray
    theta: np.ndarray
    window: TemporalWindow
    i: int = 0


def init_basis(cols, lt_block=None, ls=None, rng=None, window=10, gcfg=None, lam=0.0):
    """Initial basis from the first ``r`` columns (``p x r``).

    With graphs, the block is multiplied by the spatial Laplacian on the
    left and the ``r x r`` temporal block on the right. Near-zero columns are
    replaced by random unit vectors. The accumulators are seeded so that
    ``U = Theta (theta + lam I)^-1`` already holds.
    """
    cols = np.array(cols, dtype=float)
    if cols.ndim != 2 or cols.shape[1] < 1:
        raise ValueError("need a p x r block of columns")
    u = cols
    if ls is not None:
        u = ls @ u
    if lt_block is not None:
        lt_block = np.asarray(lt_block, dtype=float)
        if lt_block.shape != (u.shape[1], u.shape[1]):
            raise ValueError(f"temporal block must be {u.shape[1]}x{u.shape[1]}")
        u = u @ lt_block
    u = np.asarray(u)
    norms = np.linalg.norm(u, axis=0)
    dead = norms < 1e-12
    if np.any(dead):
        rng = rng if rng is not None else np.random.default_rng(0)
        fill = rng.standard_normal((u.shape[0], int(dead.sum())))
        u[:, dead] = fill / np.linalg.norm(fill, axis=0)
    r = u.shape[1]
    # the initial basis acts as r pseudo-observations with unit coefficients
    return OnlineState(U=u, Theta=(1.0 + lam) * u, theta=np.eye(r), window=TemporalWindow(window, gcfg))


def warm_start_block(cols):
    """Low-rank part of the buffered warm-up columns.

    A plain robust PCA of the ``p x r`` block (the batch solver on a
    one-frame tensor, where the t-SVT is ordinary SVT) keeps foreground in
    the first columns out of the initial basis.
    """
    from .batch import BatchConfig, solve_batch

    res = solve_batch(cols[:, :, None], BatchConfig(gamma1=0.0, gamma2=0.0, zeta=1e-6, mu_max=1e6))
    return res.B[:, :, 0]


def update_v(U, x, f, cfg):
    """``argmin_v ||x - U v - f||^2 + lam2 ||v||^2`` (lam2 = 1/2 in the
    column objective)."""
    r = U.shape[1]
    gram = U.T @ U + cfg.lam2 * np.eye(r)
    return np.linalg.solve(gram, U.T @ (x - f))


def update_h(f, ls, cfg, factor=None):
    """Solve ``(I + gamma1 Ls) h = f``; ``factor`` may carry a prebuilt
    factorization of that matrix."""
    if cfg.gamma1 == 0 or ls is None:
        return np.array(f, dtype=float)
    if factor is None:
        factor = spatial_factor(ls, cfg.gamma1)
    return factor.solve(np.asarray(f, dtype=float))


def spatial_factor(ls, gamma1):
    p = ls.shape[0]
    return splu((sparse.identity(p, format="csc") + gamma1 * sparse.csc_matrix(ls)).tocsc())


def update_t(f, window, cfg):
    """Stationary point in the newest column of
    ``gamma2 Tr(T L T^T) + ||t - f||^2`` with earlier columns held fixed."""
    f = np.asarray(f, dtype=float)
    if cfg.gamma2 == 0 or window is None or not window.ts or window.coupling.size == 0:
        return f.copy()
    pull = np.zeros_like(f)
    for a, tj in zip(window.coupling, window.ts):
        pull += a * tj
    return (f + cfg.gamma2 * pull) / (1.0 + cfg.gamma2 * window.diag)


def update_f(x, U, v, h, t, lam):
    """``argmin_f ||x - U v - f||^2 + ||h - f||^2 + ||t - f||^2 + lam |f|_1``,
    i.e. soft thresholding of the mean target at ``lam / 6``."""
    q = ((x - U @ v) + h + t) / 3.0
    return soft(q, lam / 6.0)


def update_basis(state, resid, v, cfg, lam):
    if cfg.basis_update == "closed_form":
        state.Theta = state.Theta + np.outer(resid, v)
        state.theta = state.theta + np.outer(v, v)
        r = state.theta.shape[0]
        # U = Theta (theta + lam I)^-1, via a solve on the symmetric system
        state.U = np.linalg.solve(state.theta + lam * np.eye(r), state.Theta.T).T
    else:
        grad = np.outer(state.U @ v, v) - np.outer(resid, v) + lam * state.U
        state.U = state.U - cfg.eta * grad
    return state


def process_column(state, x, cfg, lam, ls=None):
    """Run the alternating v/h/t/f updates on one column until the changes
    in ``f`` and ``v`` fall below ``omega`` (scaled by ``p``), then refine
    the basis."""
    x = np.asarray(x, dtype=float)
    p = x.shape[0]
    factor = spatial_factor(ls, cfg.gamma1) if (ls is not None and cfg.gamma1 > 0) else None
    if cfg.gamma2 > 0:
        state.window.couple(x)
    f = np.zeros(p)
    v = np.zeros(state.U.shape[1])
    h = t = f
    converged = False
    it = 0
    for it in range(1, cfg.max_inner + 1):
        v_new = update_v(state.U, x, f, cfg)
        h = update_h(f, ls, cfg, factor)
        t = update_t(f, state.window, cfg)
        f_new = update_f(x, state.U, v_new, h, t, lam)
        delta = max(np.linalg.norm(f_new - f), np.linalg.norm(v_new - v)) / p
        f, v = f_new, v_new
        if delta < cfg.omega:
            converged = True
            break
    b = state.U @ v
    update_basis(state, x - f, v, cfg, lam)
    state.window.push(x, t)
    state.i += 1
    return ColumnResult(v, f, h, t, b, it, converged)


class ModeStream:
    """Streaming solver for the columns of one unfolding."""

    def __init__(self, p, cfg, lam, mode=3, frame_shape=None, gcfg=None):
        self.p = p
        self.cfg = cfg
        self.lam = lam
        self.mode = mode
        self.frame_shape = frame_shape
        self.gcfg = gcfg or GraphConfig()
        self.state = None
        self._pending = []
        self._rng = np.random.default_rng(cfg.seed)

    def _spatial(self, x):
        if self.mode != 3 or self.cfg.gamma1 == 0 or self.frame_shape is None:
            return None
        return laplacian(spatial_graph(x.reshape(self.frame_shape, order="F"), self.gcfg))

    def _start(self):
        cols = np.column_stack(self._pending)
        if self.cfg.warm_start:
            cols = warm_start_block(cols)
        lt_block = ls = None
        if self.cfg.graph_init:
            if self.cfg.gamma2 > 0:
                lt_block = laplacian(temporal_graph(cols, self.gcfg)).toarray()
            ls = self._spatial(cols[:, -1])
        self.state = init_basis(cols, lt_block, ls, self._rng, self.cfg.window, self.gcfg, self.lam)

    def push(self, x):
        """Feed one column. Returns the results of every column that became
        ready: nothing while the first ``r`` columns are buffered for the
        basis initialization, then those ``r`` at once, then one per call."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise ValueError(f"column has shape {x.shape}, expected {(self.p,)}")
        if self.state is None:
            self._pending.append(x)
            if len(self._pending) < self.cfg.r:
                return []
            self._start()
            ready, self._pending = self._pending, []
        else:
            ready = [x]
        return [process_column(self.state, c, self.cfg, self.lam, self._spatial(c)) for c in ready]


def solve_mode(x, mode, cfg, lam, gcfg=None):
    """Stream every column of ``unfold(x, mode)``; returns ``(B_m, F_m)``
    already folded back to tensors."""
    xm = unfold(x, mode)
    p, q = xm.shape
    if q <= cfg.r:
        raise ValueError(f"mode {mode} has {q} columns; need more than r={cfg.r}")
    stream = ModeStream(p, cfg, lam, mode, frame_shape=x.shape[:2], gcfg=gcfg)
    bm = np.empty_like(xm)
    fm = np.empty_like(xm)
    j = 0
    for i in range(q):
        for res in stream.push(xm[:, i]):
            bm[:, j] = res.b
            fm[:, j] = res.f
            j += 1
    return fold(bm, mode, x.shape), fold(fm, mode, x.shape)


@dataclass
class OnlineDecomposition:
    B: np.ndarray
    F: np.ndarray
    per_mode: dict = field(default_factory=dict)


def solve_online(x, cfg=None, gcfg=None):
    """Online decomposition averaged over the configured modes."""
    cfg = cfg or OnlineConfig()
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input tensor has non-finite entries")
    lam = cfg.lam_for(x.shape)
    per_mode = {m: solve_mode(x, m, cfg, lam, gcfg) for m in sorted(cfg.modes)}
    b = sum(bm for bm, _ in per_mode.values()) / len(per_mode)
    f = sum(fm for _, fm in per_mode.values()) / len(per_mode)
    return OnlineDecomposition(b, f, per_mode)
