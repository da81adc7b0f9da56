"""Binary foreground masks from the sparse component, and scoring against
ground truth."""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from skimage.filters import threshold_otsu


def binarize(f, method="otsu", theta=None):
    """Foreground mask ``|F| > threshold``.

    ``method="otsu"`` picks the threshold from a 256-bin histogram of ``|F|``
    pooled over the whole sequence; ``method="fixed"`` uses
    ``theta * max|F|``.
    """
    mag = np.abs(np.asarray(f, dtype=float))
    if not np.all(np.isfinite(mag)):
        raise ValueError("F has non-finite entries")
    peak = mag.max() if mag.size else 0.0
    if peak == 0.0:
        return np.zeros(mag.shape, dtype=bool)
    if method == "otsu":
        if np.all(mag == mag.flat[0]):
            return np.ones(mag.shape, dtype=bool)
        thr = threshold_otsu(mag, nbins=256)
    elif method == "fixed":
        if theta is None or theta < 0:
            raise ValueError("fixed thresholding needs theta >= 0")
        thr = theta * peak
    else:
        raise ValueError(f"unknown binarization method {method!r}")
    return mag > thr


def _prf(tp, fp, fn):
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class FrameScore:
    frame: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_measure: float


@dataclass
class EvalReport:
    """Micro-averaged counts and scores plus the per-frame breakdown.

    A frame (or the whole sequence) with neither predicted nor true
    foreground scores 1 on every measure.
    """

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_measure: float
    macro_f_measure: float
    frames: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["frame", "tp", "fp", "fn", "precision", "recall", "f_measure"])
        for fs in self.frames:
            wr.writerow([fs.frame, fs.tp, fs.fp, fs.fn, f"{fs.precision:.6f}", f"{fs.recall:.6f}", f"{fs.f_measure:.6f}"])
        wr.writerow(["all", self.tp, self.fp, self.fn, f"{self.precision:.6f}", f"{self.recall:.6f}", f"{self.f_measure:.6f}"])
        return buf.getvalue()


def score(pred, gt, roi=None, frames=None):
    """Compare predicted masks with ground truth.

    ``pred`` and ``gt`` are ``w x h x n`` boolean arrays. When ground truth
    only covers some frames, pass ``gt`` with those frames only and
    ``frames`` giving their indices into ``pred``. ``roi`` (``w x h``)
    restricts counting to its nonzero pixels.
    """
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.ndim == 2:
        pred = pred[:, :, None]
    if gt.ndim == 2:
        gt = gt[:, :, None]
    if frames is None:
        if pred.shape != gt.shape:
            raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
        frames = np.arange(gt.shape[2])
    else:
        frames = np.asarray(frames, dtype=int)
        if pred.shape[:2] != gt.shape[:2] or len(frames) != gt.shape[2]:
            raise ValueError("ground truth does not match prediction dims or frame list")
        if frames.size and (frames.min() < 0 or frames.max() >= pred.shape[2]):
            raise ValueError("frame index out of range")
    if roi is not None:
        roi = np.asarray(roi).astype(bool)
        if roi.shape != pred.shape[:2]:
            raise ValueError(f"ROI shape {roi.shape} does not match frames {pred.shape[:2]}")
    per_frame = []
    tot = np.zeros(3, dtype=np.int64)
    for g_idx, k in enumerate(frames):
        p = pred[:, :, k]
        g = gt[:, :, g_idx]
        if roi is not None:
            p = p & roi
            g = g & roi
        tp = int(np.count_nonzero(p & g))
        fp = int(np.count_nonzero(p & ~g))
        fn = int(np.count_nonzero(~p & g))
        tot += (tp, fp, fn)
        per_frame.append(FrameScore(int(k), tp, fp, fn, *_prf(tp, fp, fn)))
    tp, fp, fn = (int(v) for v in tot)
    macro = float(np.mean([fs.f_measure for fs in per_frame])) if per_frame else 1.0
    return EvalReport(tp, fp, fn, *_prf(tp, fp, fn), macro, per_frame)
