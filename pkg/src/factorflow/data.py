"""Synthetic two-factor corpus, PGM/label I/O, pairing, and dequantization.

Images mimic an axial anatomy stack: a dark background, a centered bright
ellipse whose radii grow from small at slice parameter t=0 through maximal
at t=0.5 and back down at t=1, and (for anomalous images) a bright Gaussian
blob at a random location inside the ellipse.  The ellipse aspect ratio
ry/rx increases linearly with t, which makes t identifiable from pixels even
though the area is symmetric around t=0.5.  Simple threshold/moment
statistics (the oracle functions below) recover both factors, so the factors
are learnable in principle.

File formats (all dependency-free and bit-exact):
  * images: binary PGM (P5), 8-bit, one image per file;
  * labels: ``labels.csv`` with header ``filename,anomaly,slice_index``;
  * ``corpus_meta``: ``key = value`` lines echoing generation parameters.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import precision
from .errors import ConfigError, DataError
from .rng import Rng

# 8-bit intensity levels of the generator
BG_LEVEL = 16
BODY_LEVEL = 128
BLOB_AMP_MIN = 110.0
BLOB_AMP_SPREAD = 30.0

# ellipse geometry, as fractions of the half-size
RX_MIN_FRAC = 0.30
RX_MAX_FRAC = 0.82
ASPECT_LO = 0.55
ASPECT_SPAN = 0.40
BLOB_CENTER_FRAC = 0.55  # blob center is uniform inside the 0.55-scaled ellipse
BLOB_SIGMA_FRAC = (0.14, 0.20)  # of image size; broad enough to register coarsely

# oracle thresholds (8-bit domain)
SUPPORT_THRESHOLD = (BG_LEVEL + BODY_LEVEL) // 2
BLOB_THRESHOLD = BODY_LEVEL + 40

LABELS_HEADER = "filename,anomaly,slice_index"


@dataclass
class Corpus:
    """Images plus per-image generative-factor labels."""

    images: np.ndarray  # uint8 [N, 1, S, S]
    anomaly: np.ndarray  # uint8/bool [N]
    slice_index: np.ndarray  # float [N] in [0, 1]
    filenames: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    @property
    def size(self) -> int:
        return int(self.images.shape[-1])


def ellipse_radii(t: float, size: int) -> tuple[float, float]:
    """Column and row radii of the body ellipse at slice parameter t."""
    half = size / 2.0
    rx = (RX_MIN_FRAC + (RX_MAX_FRAC - RX_MIN_FRAC) * np.sin(np.pi * t)) * half
    ry = (ASPECT_LO + ASPECT_SPAN * t) * rx
    return float(rx), float(ry)


def render_image(t: float, anomaly: int, size: int, rng: Rng) -> np.ndarray:
    """One 8-bit image [1, S, S]; consumes a fixed number of rng draws."""
    rx, ry = ellipse_radii(t, size)
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.sqrt(((xx - c) / rx) ** 2 + ((yy - c) / ry) ** 2)
    alpha = np.clip((1.0 - d) * min(rx, ry), 0.0, 1.0)  # ~1px anti-aliased edge
    img = BG_LEVEL + (BODY_LEVEL - BG_LEVEL) * alpha
    # fixed draw count regardless of the anomaly bit keeps streams aligned
    u = rng.uniform((5,))
    if anomaly:
        r = np.sqrt(u[0]) * BLOB_CENTER_FRAC
        theta = 2.0 * np.pi * u[1]
        bx = c + r * np.cos(theta) * rx
        by = c + r * np.sin(theta) * ry
        sigma = (BLOB_SIGMA_FRAC[0]
                 + (BLOB_SIGMA_FRAC[1] - BLOB_SIGMA_FRAC[0]) * u[2]) * size
        amp = BLOB_AMP_MIN + BLOB_AMP_SPREAD * u[3]
        blob = amp * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2.0 * sigma ** 2))
        img = img + blob * alpha  # blob lives strictly inside the ellipse support
    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return out[None]


def generate_corpus(rng: Rng, count: int, size: int) -> Corpus:
    """Deterministic corpus: per-image streams derived from the given rng."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if size < 8 or size % 2:
        raise ConfigError(f"size must be an even integer >= 8, got {size}")
    images = np.empty((count, 1, size, size), dtype=np.uint8)
    anomaly = np.empty(count, dtype=np.uint8)
    slice_index = np.empty(count, dtype=np.float64)
    for i in range(count):
        r = rng.spawn(i)
        t = float(r.uniform(()))
        a = int(r.uniform(()) < 0.5)
        images[i] = render_image(t, a, size, r)
        anomaly[i] = a
        slice_index[i] = t
    filenames = [f"img_{i:05d}.pgm" for i in range(count)]
    meta = {"count": count, "size": size, "seed": rng.seed,
            "format_version": 1}
    return Corpus(images, anomaly, slice_index, filenames, meta)


# -- pixel-statistics oracles --------------------------------------------------

def _flat2d(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[0]
    return arr


def detect_blob(img) -> int:
    """1 if any pixel exceeds the blob threshold (8-bit domain)."""
    return int(np.any(_flat2d(img) >= BLOB_THRESHOLD))


def _body_moments(img):
    arr = _flat2d(img).astype(np.float64)
    w = np.clip(np.minimum(arr, BODY_LEVEL) - BG_LEVEL, 0.0, None)
    total = w.sum()
    if total <= 0:
        return None
    yy, xx = np.mgrid[0:arr.shape[0], 0:arr.shape[1]].astype(np.float64)
    mx = (w * xx).sum() / total
    my = (w * yy).sum() / total
    sx = np.sqrt((w * (xx - mx) ** 2).sum() / total)
    sy = np.sqrt((w * (yy - my) ** 2).sum() / total)
    return sx, sy


def estimate_slice_index(img) -> float:
    """Invert the aspect-ratio encoding; clipped to [0, 1]."""
    mom = _body_moments(img)
    if mom is None or mom[0] <= 0:
        return 0.5
    aspect = mom[1] / mom[0]
    return float(np.clip((aspect - ASPECT_LO) / ASPECT_SPAN, 0.0, 1.0))


def estimate_ellipse_area(img) -> float:
    """Area of the body ellipse from clipped-intensity moments (pixels^2)."""
    mom = _body_moments(img)
    if mom is None:
        return 0.0
    sx, sy = mom
    return float(np.pi * (2.0 * sx) * (2.0 * sy))


def model_to_uint8(x) -> np.ndarray:
    """Map model-domain values in [-0.5, 0.5] back to the 8-bit domain."""
    arr = np.asarray(x, dtype=np.float64)
    return np.clip(np.rint((arr + 0.5) * 256.0 - 0.5), 0, 255).astype(np.uint8)


# -- dequantization ---------------------------------------------------------------

def quantize_levels(images: np.ndarray, n_bits: int) -> np.ndarray:
    """8-bit images -> integer levels in [0, 2^n_bits)."""
    if not 1 <= n_bits <= 8:
        raise ConfigError(f"n_bits must be in [1, 8], got {n_bits}")
    return np.asarray(images, dtype=np.uint8) >> (8 - n_bits)


def dequantize(images, n_bits: int, rng: Rng) -> np.ndarray:
    """Add uniform noise of one bin width, scale to [-0.5, 0.5)."""
    q = quantize_levels(images, n_bits).astype(np.float64)
    u = rng.uniform(q.shape).astype(np.float64)
    out = (q + u) / float(2 ** n_bits) - 0.5
    return out.astype(precision.dtype())


def dequantize_center(images, n_bits: int) -> np.ndarray:
    """Deterministic variant: place each pixel at its bin center."""
    q = quantize_levels(images, n_bits).astype(np.float64)
    out = (q + 0.5) / float(2 ** n_bits) - 0.5
    return out.astype(precision.dtype())


# -- pairing ------------------------------------------------------------------------

@dataclass
class PairBatch:
    """A batch of image pairs; pair i shares the factor named by factor_index[i]."""

    images_a: np.ndarray  # uint8 [B, 1, S, S]
    images_b: np.ndarray
    factor_index: np.ndarray  # int [B]
    index_a: np.ndarray = None
    index_b: np.ndarray = None


def slice_bin(t, n_bins: int):
    return np.minimum((np.asarray(t, dtype=np.float64) * n_bins).astype(np.int64),
                      n_bins - 1)


def sample_pairs(rng: Rng, corpus: Corpus, batch_size: int, factor_mix=(0.5, 0.5),
                 n_bins: int = 10, factor_index: int | None = None,
                 per_pair: bool = False) -> PairBatch:
    """Draw pairs sharing a semantic factor.

    factor 0 = anomaly (exact bit match), factor 1 = slice_index (same one of
    ``n_bins`` equal-width bins).  The residual factor is never shared.  By
    default one factor is drawn per batch from ``factor_mix``; ``per_pair``
    draws one per pair instead.
    """
    n = len(corpus)
    if n < 2:
        raise DataError(f"corpus must contain at least 2 images, got {n}")
    mix = np.asarray(factor_mix, dtype=np.float64)
    if mix.ndim != 1 or len(mix) != 2 or mix.sum() <= 0 or np.any(mix < 0):
        raise ConfigError(f"factor_mix must be two non-negative weights, got {factor_mix}")
    mix = mix / mix.sum()

    bins = slice_bin(corpus.slice_index, n_bins)
    strata = {
        0: {int(v): np.flatnonzero(corpus.anomaly == v) for v in (0, 1)},
        1: {int(b): np.flatnonzero(bins == b) for b in np.unique(bins)},
    }

    if factor_index is not None:
        fs = np.full(batch_size, int(factor_index), dtype=np.int64)
    elif per_pair:
        fs = (rng.uniform((batch_size,)) >= mix[0]).astype(np.int64)
    else:
        fs = np.full(batch_size, int(rng.uniform(()) >= mix[0]), dtype=np.int64)

    idx_a = np.empty(batch_size, dtype=np.int64)
    idx_b = np.empty(batch_size, dtype=np.int64)
    for i in range(batch_size):
        f = int(fs[i])
        a = int(rng.integers(0, n, ()))
        key = int(corpus.anomaly[a]) if f == 0 else int(bins[a])
        group = strata[f][key]
        if len(group) < 2:
            name = "anomaly" if f == 0 else "slice_index"
            raise DataError(f"empty stratum: {name}={key} has {len(group)} image(s), "
                            "need at least 2 to form a pair")
        b = a
        while b == a:
            b = int(group[int(rng.integers(0, len(group), ()))])
        idx_a[i] = a
        idx_b[i] = b
    return PairBatch(images_a=corpus.images[idx_a], images_b=corpus.images[idx_b],
                     factor_index=fs, index_a=idx_a, index_b=idx_b)


# -- PGM and corpus I/O ----------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    arr = _flat2d(img)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise DataError(f"write_pgm expects an 8-bit [H, W] image, got "
                        f"{arr.dtype} {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc

    pos = 0

    def token():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos:pos + 1]
            if ch == b"#":
                nl = raw.find(b"\n", pos)
                pos = len(raw) if nl < 0 else nl + 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"truncated PGM header in {path}")
        return raw[start:pos]

    if token() != b"P5":
        raise DataError(f"{path} is not a binary PGM (P5) file")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise DataError(f"malformed PGM header in {path}") from exc
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM (maxval 255) is supported, got {maxval}")
    pos += 1  # the single whitespace after maxval
    data = raw[pos:pos + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def save_corpus(corpus: Corpus, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    names = corpus.filenames or [f"img_{i:05d}.pgm" for i in range(len(corpus))]
    with open(os.path.join(directory, "labels.csv"), "w") as fh:
        fh.write(LABELS_HEADER + "\n")
        for name, a, t in zip(names, corpus.anomaly, corpus.slice_index):
            fh.write(f"{name},{int(a)},{float(t)!r}\n")
    for name, img in zip(names, corpus.images):
        write_pgm(os.path.join(directory, name), img)
    with open(os.path.join(directory, "corpus_meta"), "w") as fh:
        for key in sorted(corpus.meta):
            fh.write(f"{key} = {corpus.meta[key]}\n")


def load_corpus(directory) -> Corpus:
    labels_path = os.path.join(directory, "labels.csv")
    if not os.path.isfile(labels_path):
        raise DataError(f"missing labels file {labels_path}")
    with open(labels_path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != LABELS_HEADER:
        raise DataError(f"{labels_path}: first line must be '{LABELS_HEADER}'")

    filenames, anomalies, slices, images = [], [], [], []
    size = None
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 3:
            raise DataError(f"{labels_path}: malformed row {ln!r}")
        name, a_str, t_str = cells
        try:
            a, t = int(a_str), float(t_str)
        except ValueError as exc:
            raise DataError(f"{labels_path}: bad label values in row {ln!r}") from exc
        img = read_pgm(os.path.join(directory, name))
        h, w = img.shape
        if h != w:
            raise DataError(f"{name}: image must be square, got {h}x{w}")
        if h % 2:
            raise DataError(f"{name}: image side must be even, got {h}")
        if size is None:
            size = h
        elif h != size:
            raise DataError(f"{name}: size {h} differs from corpus size {size}")
        filenames.append(name)
        anomalies.append(a)
        slices.append(t)
        images.append(img[None])

    if not filenames:
        raise DataError(f"{labels_path}: no data rows")
    listed = set(filenames)
    for entry in sorted(os.listdir(directory)):
        if entry.endswith(".pgm") and entry not in listed:
            raise DataError(f"missing label row for image file {entry}")
    meta = {}
    meta_path = os.path.join(directory, "corpus_meta")
    if os.path.isfile(meta_path):
        with open(meta_path) as fh:
            for ln in fh:
                if "=" in ln:
                    key, val = ln.split("=", 1)
                    meta[key.strip()] = val.strip()
    return Corpus(np.stack(images), np.asarray(anomalies, dtype=np.uint8),
                  np.asarray(slices, dtype=np.float64), filenames, meta)


def subset(corpus: Corpus, indices) -> Corpus:
    indices = np.asarray(indices, dtype=np.int64)
    names = [corpus.filenames[i] for i in indices] if corpus.filenames else []
    return Corpus(corpus.images[indices], corpus.anomaly[indices],
                  corpus.slice_index[indices], names, dict(corpus.meta))
