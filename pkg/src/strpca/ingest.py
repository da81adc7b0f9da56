"""Frame sequences from disk and synthetic sequences with exact ground
truth."""

import glob
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

IMAGE_EXTS = (".png", ".pgm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class SequenceSpec:
    frames_dir: str
    gt_dir: str = None
    roi_path: str = None
    resize: tuple = None
    gray: bool = True
    frame_glob: str = "*"

    @classmethod
    def detect(cls, root, **kw):
        """CDnet-style layout (``input/``, ``groundtruth/``, ``ROI.bmp``)
        when present, otherwise ``root`` itself is the frame directory."""
        inp = os.path.join(root, "input")
        if os.path.isdir(inp):
            gt = os.path.join(root, "groundtruth")
            roi = os.path.join(root, "ROI.bmp")
            kw.setdefault("gt_dir", gt if os.path.isdir(gt) else None)
            kw.setdefault("roi_path", roi if os.path.isfile(roi) else None)
            return cls(inp, **kw)
        return cls(root, **kw)


def list_frames(directory, pattern="*"):
    files = [
        p
        for p in glob.glob(os.path.join(directory, pattern))
        if os.path.isfile(p) and p.lower().endswith(IMAGE_EXTS)
    ]
    return sorted(files)


def read_image(path, gray=True, resize=None):
    """Read one image as floats in [0, 1]; ``resize`` is ``(w, h)`` in
    tensor order (rows, columns)."""
    try:
        with Image.open(path) as im:
            im.load()
            if resize is not None:
                # PIL sizes are (columns, rows); BOX is area averaging
                im = im.resize((int(resize[1]), int(resize[0])), Image.BOX)
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=float) / 65535.0
            else:
                arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im, dtype=float) / 255.0
    except OSError as exc:
        raise OSError(f"cannot read frame {path}: {exc}") from exc
    if arr.ndim == 3 and gray:
        arr = arr[..., :3] @ LUMA
    return arr


def _stack(paths, gray, resize):
    frames = []
    for p in paths:
        fr = read_image(p, gray=gray, resize=resize)
        if frames and fr.shape != frames[0].shape:
            raise ValueError(f"{p}: frame shape {fr.shape} differs from {frames[0].shape}")
        frames.append(fr)
    return np.stack(frames, axis=2)


def load_sequence(spec):
    """Load frames (and optional ground truth and ROI).

    Returns ``(X, gt, roi)``. ``gt`` is ``None`` or a ``(masks, frame_idx)``
    pair, where ``frame_idx`` maps each ground-truth frame onto the input
    sequence by file stem (or by position when stems do not match).
    """
    paths = list_frames(spec.frames_dir, spec.frame_glob)
    if len(paths) < 2:
        raise ValueError(f"{spec.frames_dir}: need at least two frames, found {len(paths)}")
    x = _stack(paths, spec.gray, spec.resize)
    np.clip(x, 0.0, 1.0, out=x)
    gt = None
    if spec.gt_dir:
        gpaths = list_frames(spec.gt_dir)
        if gpaths:
            masks = _stack(gpaths, True, spec.resize) >= 128 / 255.0
            if masks.shape[:2] != x.shape[:2]:
                raise ValueError("ground truth and frames differ in size")
            gt = (masks, _match_frames(paths, gpaths))
    roi = None
    if spec.roi_path:
        roi = read_image(spec.roi_path, True, spec.resize) >= 128 / 255.0
        if roi.shape != x.shape[:2]:
            raise ValueError("ROI and frames differ in size")
    return x, gt, roi


def _digits(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    d = "".join(c for c in stem if c.isdigit())
    return int(d) if d else None


def _match_frames(paths, gpaths):
    keys = [_digits(p) for p in paths]
    gkeys = [_digits(p) for p in gpaths]
    if None not in keys and None not in gkeys and len(set(keys)) == len(keys):
        where = {k: i for i, k in enumerate(keys)}
        if all(g in where for g in gkeys):
            return np.array([where[g] for g in gkeys])
    if len(gpaths) > len(paths):
        raise ValueError("more ground-truth frames than input frames")
    return np.arange(len(gpaths))


def write_frames(directory, x, prefix="in", names=None):
    """Write each frontal slice as an 8-bit grayscale PNG."""
    os.makedirs(directory, exist_ok=True)
    x = np.asarray(x)
    out = []
    for k in range(x.shape[2]):
        name = names[k] if names else f"{prefix}{k + 1:06d}.png"
        path = os.path.join(directory, name)
        arr = np.clip(np.rint(np.asarray(x[:, :, k], dtype=float) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)
        out.append(path)
    return out


def write_masks(directory, masks, names=None, prefix="bin"):
    return write_frames(directory, np.asarray(masks, dtype=float), prefix=prefix, names=names)


# -- synthetic sequences -----------------------------------------------------


@dataclass
class SynthObject:
    size: int = 4
    velocity: tuple = (1.0, 1.0)
    intensity: float = 0.95
    start: tuple = (0.0, 0.0)
    shape: str = "square"


@dataclass
class SynthSpec:
    dims: tuple = (16, 16, 20)
    background: str = "static"
    sigma_b: float = 0.05
    objects: list = field(default_factory=list)
    impulse_fraction: float = 0.0
    impulse_amplitude: float = 0.25
    seed: int = 0


BACKGROUNDS = ("static", "rank1_drift", "dynamic_noise", "illumination_ramp")


def _reflect(pos, lo, hi):
    span = hi - lo
    if span <= 0:
        return lo
    p = (pos - lo) % (2 * span)
    return lo + (p if p <= span else 2 * span - p)


def _object_mask(obj, w, h, k):
    m = np.zeros((w, h), dtype=bool)
    s = obj.size
    r = int(round(_reflect(obj.start[0] + obj.velocity[0] * k, 0, w - s)))
    c = int(round(_reflect(obj.start[1] + obj.velocity[1] * k, 0, h - s)))
    if obj.shape == "square":
        m[r : r + s, c : c + s] = True
    elif obj.shape == "disk":
        rr, cc = np.ogrid[:s, :s]
        ctr = (s - 1) / 2.0
        m[r : r + s, c : c + s] = (rr - ctr) ** 2 + (cc - ctr) ** 2 <= (s / 2.0) ** 2
    else:
        raise ValueError(f"unknown object shape {obj.shape!r}")
    return m


def synth(spec):
    """Synthetic sequence ``(X, gt)``.

    The background image is a rank-1 outer product with values in
    [0.25, 0.75]. Objects paint over it; impulses perturb random pixels by
    +/- ``impulse_amplitude``. ``gt`` marks painted object pixels and
    impulses, i.e. the support of everything that is not background.
    """
    w, h, n = (int(d) for d in spec.dims)
    if min(w, h, n) < 1:
        raise ValueError(f"invalid dims {spec.dims}")
    if spec.background not in BACKGROUNDS:
        raise ValueError(f"unknown background {spec.background!r}")
    for obj in spec.objects:
        if obj.size < 1 or obj.size > min(w, h):
            raise ValueError(f"object of size {obj.size} does not fit a {w}x{h} frame")
    rng = np.random.default_rng(spec.seed)
    rows = 0.5 + 0.5 * np.sin(np.linspace(0.0, np.pi, w))
    cols = 0.6 + 0.4 * np.cos(np.linspace(0.0, 1.5 * np.pi, h)) ** 2
    base = np.outer(rows, cols)
    base = 0.25 + 0.5 * (base - base.min()) / max(np.ptp(base), 1e-12)
    x = np.repeat(base[:, :, None], n, axis=2)
    t = np.arange(n)
    if spec.background == "rank1_drift":
        x = x * (1.0 + 0.1 * np.sin(2 * np.pi * t / max(n, 2)))[None, None, :]
    elif spec.background == "illumination_ramp":
        x = x * np.linspace(0.9, 1.1, n)[None, None, :]
    elif spec.background == "dynamic_noise":
        x = x + rng.normal(0.0, spec.sigma_b, size=x.shape)
    gt = np.zeros((w, h, n), dtype=bool)
    for k in range(n):
        for obj in spec.objects:
            m = _object_mask(obj, w, h, k)
            x[:, :, k][m] = obj.intensity
            gt[:, :, k] |= m
    if spec.impulse_fraction > 0:
        hit = rng.random(x.shape) < spec.impulse_fraction
        sign = np.where(rng.random(x.shape) < 0.5, -1.0, 1.0)
        cand = x + sign * spec.impulse_amplitude
        # flip the sign where the perturbed value would leave [0, 1]
        flip = (cand < 0.0) | (cand > 1.0)
        cand = np.where(flip, x - sign * spec.impulse_amplitude, cand)
        x = np.where(hit, cand, x)
        gt |= hit
    return x, gt


PRESETS = {
    "moving-square": lambda seed=0: SynthSpec(
        dims=(32, 32, 30),
        objects=[SynthObject(size=6, velocity=(1.0, 0.7), intensity=0.95, start=(2.0, 3.0))],
        seed=seed,
    ),
    "static-impulse": lambda seed=0: SynthSpec(dims=(16, 16, 20), impulse_fraction=0.05, seed=seed),
    "dynamic-square": lambda seed=0: SynthSpec(
        dims=(32, 32, 30),
        background="dynamic_noise",
        sigma_b=0.05,
        objects=[SynthObject(size=6, velocity=(1.0, 0.7), intensity=0.95, start=(2.0, 3.0))],
        seed=seed,
    ),
}


def preset(name, seed=0):
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_masks(directory, resize=None):
    """Binary masks (``>= 128``) from a directory, with their paths."""
    paths = list_frames(directory)
    if not paths:
        raise ValueError(f"{directory}: no mask images found")
    return _stack(paths, True, resize) >= 128 / 255.0, paths


def match_frames(paths, gpaths):
    """Index of each ground-truth file within ``paths``: by the digits in
    the file stem when those are unique, otherwise by position."""
    return _match_frames(paths, gpaths)


def mask_names(paths, prefix="bin"):
    """Output mask file names derived from the source frame names."""
    names = []
    for k, p in enumerate(paths):
        d = _digits(p)
        names.append(f"{prefix}{d:06d}.png" if d is not None else f"{prefix}{k + 1:06d}.png")
    if len(set(names)) != len(names):
        names = [f"{prefix}{k + 1:06d}.png" for k in range(len(paths))]
    return names
