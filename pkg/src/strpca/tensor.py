"""Dense third-order tensor algebra under the t-product.

Tensors are plain ``numpy`` arrays of shape ``(w, h, n)``: ``w`` and ``h``
index pixels, ``n`` indexes frames. The transform along the third mode is the
unnormalized forward DFT (``numpy.fft.fft``) with a ``1/n`` inverse.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

_logger = logging.getLogger(__name__)

_DUMP_MAGIC = b"T3"


class TSvdError(ArithmeticError):
    """Raised when the SVD of a frequency slice fails to converge."""

    def __init__(self, slice_index, cause=None):
        super().__init__(f"SVD did not converge on frequency slice {slice_index}")
        self.slice_index = slice_index
        self.cause = cause


def as_tensor(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"expected a non-empty 3-way array, got shape {x.shape}")
    return x


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def unfold(t, mode):
    """Mode-``mode`` matricization.

    Columns index the chosen mode; rows run over the two remaining modes in
    their natural order, the earlier one varying fastest. Mode 3 therefore
    yields a ``wh x n`` matrix whose column ``k`` is frame ``k`` vectorized
    column by column; mode 1 is ``hn x w`` and mode 2 is ``wn x h``.
    """
    _check_mode(mode)
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-way array, got shape {t.shape}")
    moved = np.moveaxis(t, mode - 1, -1)
    return moved.reshape(-1, t.shape[mode - 1], order="F")


def fold(m, mode, dims):
    """Inverse of :func:`unfold`."""
    _check_mode(mode)
    m = np.asarray(m)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive ints, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != mode - 1]
    expected = (rest[0] * rest[1], dims[mode - 1])
    if m.shape != expected:
        raise ValueError(
            f"matrix of shape {m.shape} cannot fold to {dims} along mode {mode}; "
            f"expected {expected}"
        )
    moved = m.reshape(rest[0], rest[1], dims[mode - 1], order="F")
    return np.moveaxis(moved, -1, mode - 1)


def dft3(t):
    return np.fft.fft(np.asarray(t), axis=2)


def idft3(c):
    """Inverse DFT along mode 3, keeping the real part."""
    out = np.fft.ifft(c, axis=2)
    if __debug__ and out.size:
        scale = max(np.linalg.norm(out), 1.0)
        assert np.abs(out.imag).max() < 1e-8 * scale, "non-negligible imaginary residue"
    return np.ascontiguousarray(out.real)


def _half(n):
    # frequencies 0..n//2 determine the rest for real input
    return n // 2 + 1


def _mirror(cbar):
    n = cbar.shape[2]
    for k in range(_half(n), n):
        cbar[:, :, k] = np.conj(cbar[:, :, n - k])
    return cbar


def tprod(a, b):
    """t-product of ``a`` (n1 x n2 x n3) with ``b`` (n2 x c x n3)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError("tprod expects two 3-way arrays")
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"cannot t-multiply shapes {a.shape} and {b.shape}")
    abar = dft3(a)
    bbar = dft3(b)
    n3 = a.shape[2]
    cbar = np.empty((a.shape[0], b.shape[1], n3), dtype=complex)
    for k in range(_half(n3)):
        cbar[:, :, k] = abar[:, :, k] @ bbar[:, :, k]
    return idft3(_mirror(cbar))


def ttranspose(t):
    """Tensor (conjugate) transpose: transpose each frontal slice and
    reverse the order of slices 2..n."""
    t = np.asarray(t)
    out = np.transpose(t, (1, 0, 2)).copy()
    out[:, :, 1:] = out[:, :, 1:][:, :, ::-1]
    return out


def identity_tensor(size, n):
    e = np.zeros((size, size, n))
    e[:, :, 0] = np.eye(size)
    return e


def f_diagonal(s, shape):
    """Build the f-diagonal tensor of ``shape`` whose frontal slice ``k``
    carries the vector ``s[:, k]`` on its diagonal."""
    out = np.zeros(shape, dtype=np.asarray(s).dtype)
    r = s.shape[0]
    idx = np.arange(r)
    out[idx, idx, :] = s
    return out


@dataclass(frozen=True)
class TSvdFactors:
    """Economy t-SVD held in the Fourier domain.

    ``U`` is ``w x r x n`` and ``V`` is ``h x r x n`` (complex), ``S`` is an
    ``r x n`` table of singular values per frequency slice, nonincreasing down
    each column, with ``r = min(w, h)``.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def spatial(self):
        """Return real ``(U, S, V)`` tensors with ``X = U * S * V^T``."""
        n = self.S.shape[1]
        r = self.S.shape[0]
        sbar = f_diagonal(self.S.astype(complex), (r, r, n))
        return idft3(self.U), idft3(sbar), idft3(self.V)

    def reconstruct(self):
        n = self.S.shape[1]
        out = np.empty((self.U.shape[0], self.V.shape[0], n), dtype=complex)
        for k in range(n):
            out[:, :, k] = (self.U[:, :, k] * self.S[:, k]) @ self.V[:, :, k].conj().T
        return idft3(out)


def _slice_svd(m, k):
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise TSvdError(k, exc) from exc


def tsvd(t):
    """Economy t-SVD of a real tensor.

    Only the first ``n // 2 + 1`` frequency slices are decomposed; the others
    are their complex conjugates.
    """
    t = as_tensor(t)
    w, h, n = t.shape
    r = min(w, h)
    xbar = dft3(t)
    U = np.empty((w, r, n), dtype=complex)
    V = np.empty((h, r, n), dtype=complex)
    S = np.empty((r, n))
    for k in range(_half(n)):
        sl = xbar[:, :, k]
        if k == 0 or 2 * k == n:
            sl = sl.real
        u, s, vh = _slice_svd(sl, k)
        U[:, :, k] = u
        S[:, k] = s
        V[:, :, k] = vh.conj().T
    for k in range(_half(n), n):
        U[:, :, k] = np.conj(U[:, :, n - k])
        V[:, :, k] = np.conj(V[:, :, n - k])
        S[:, k] = S[:, n - k]
    return TSvdFactors(U, S, V)


def tnn(t):
    """Tensor nuclear norm: mean of the nuclear norms of the DFT-domain
    frontal slices."""
    t = as_tensor(t)
    n = t.shape[2]
    xbar = dft3(t)
    total = 0.0
    for k in range(n):
        total += np.linalg.svd(xbar[:, :, k], compute_uv=False).sum()
    return total / n


def tsvt(z, tau):
    """Tensor singular value thresholding.

    Shrinks every DFT-domain singular value of ``z`` by ``tau``. This is the
    proximal map of ``tau * tnn``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = as_tensor(z)
    w, h, n = z.shape
    zbar = dft3(z)
    out = np.zeros((w, h, n), dtype=complex)
    for k in range(_half(n)):
        sl = zbar[:, :, k]
        if k == 0 or 2 * k == n:
            sl = sl.real
        u, s, vh = _slice_svd(sl, k)
        keep = int(np.count_nonzero(s > tau))
        if keep:
            out[:, :, k] = (u[:, :keep] * (s[:keep] - tau)) @ vh[:keep]
    return idft3(_mirror(out))


def soft(z, tau):
    """Elementwise soft thresholding ``sign(z) * max(|z| - tau, 0)``."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def write_tensor(path, t):
    """Write ``t`` as ``b"T3"`` + little-endian u32 (w, h, n) + f64 entries
    in row-major order."""
    t = as_tensor(t)
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<3I", *t.shape))
        fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes(order="C"))


def read_tensor(path):
    with open(path, "rb") as fh:
        head = fh.read(14)
        if len(head) != 14 or head[:2] != _DUMP_MAGIC:
            raise ValueError(f"{path}: not a tensor dump")
        dims = struct.unpack("<3I", head[2:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != dims[0] * dims[1] * dims[2]:
        raise ValueError(f"{path}: truncated payload")
    return data.reshape(dims).astype(float)
