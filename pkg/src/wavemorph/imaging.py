"""Image ingestion, color conversion, resizing, augmentation, manifest
parsing, and the synthetic desk-scale corpus generator.

Images are plain float64 numpy arrays with values in [0, 1]: shape (H, W)
for grayscale, (H, W, 3) for RGB.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError, ManifestError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601

_SUPPORTED_SUFFIXES = {".png", ".pgm", ".ppm"}


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM/PPM into a float array scaled to [0, 1]."""
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise ImageError(f"unsupported format: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "RGBA", "P"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64)
    except FileNotFoundError:
        raise ImageError(f"unreadable file: {path}")
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"unreadable file: {path} ({exc})")
    if arr.size == 0 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ImageError(f"zero-dimension image: {path}")
    return arr / 255.0


def save_image(path, img: np.ndarray) -> None:
    """Write a [0, 1] float image as an 8-bit PNG/PGM/PPM by extension."""
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise ImageError(f"unsupported format: {path}")
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    q = np.rint(arr * 255.0).astype(np.uint8)
    if q.ndim == 2:
        Image.fromarray(q, mode="L").save(path)
    elif q.ndim == 3 and q.shape[2] == 3:
        Image.fromarray(q, mode="RGB").save(path)
    else:
        raise ImageError(f"cannot save array of shape {img.shape}")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma for RGB input; grayscale passes through."""
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]
    raise ImageError(f"expected 1 or 3 channels, got shape {img.shape}")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a single-channel image."""
    if out_h < 1 or out_w < 1:
        raise ImageError("zero target dimension")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def _coords(n_in, n_out):
        if n_out == 1:
            return np.zeros(1)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ry = _coords(h, out_h)
    rx = _coords(w, out_w)
    y0 = np.minimum(ry.astype(np.int64), h - 2) if h > 1 else np.zeros(out_h, np.int64)
    x0 = np.minimum(rx.astype(np.int64), w - 2) if w > 1 else np.zeros(out_w, np.int64)
    fy = (ry - y0)[:, None]
    fx = (rx - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a * (1 - fx) + b * fx
    bot = c * (1 - fx) + d * fx
    return top * (1 - fy) + bot * fy


def hflip(img: np.ndarray) -> np.ndarray:
    """Reverse column order; an involution."""
    return np.ascontiguousarray(img[:, ::-1])


# ---------------------------------------------------------------------------
# Manifests

VALID_LABELS = ("bona_fide", "morph")
MANIFEST_HEADER = ["path", "subject_id", "label", "contributors"]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: str
    label: str
    contributors: tuple[str, ...] = field(default_factory=tuple)
    split_hint: str | None = None

    def __post_init__(self):
        if self.label not in VALID_LABELS:
            raise ManifestError(f"invalid label {self.label!r}")
        if self.label == "morph" and len(self.contributors) != 2:
            raise ManifestError(
                f"morph entry {self.path!r} needs exactly 2 contributors, "
                f"got {len(self.contributors)}"
            )
        if self.label == "bona_fide" and self.contributors:
            raise ManifestError(f"bona fide entry {self.path!r} must have no contributors")


def parse_manifest(path) -> list[ManifestEntry]:
    """Read a manifest CSV; rows validated, order preserved.

    Columns: path,subject_id,label,contributors (contributors ';'-separated,
    optional fifth column split_hint). Image paths are interpreted relative
    to the manifest's directory when not absolute.
    """
    path = Path(path)
    entries = []
    with open(path, newline="") as f:
        reader = csv.reader(row for row in f if not row.startswith("#"))
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:4]] != MANIFEST_HEADER:
            raise ManifestError(f"{path}: bad or missing header, expected {MANIFEST_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 4:
                raise ManifestError(f"{path}:{lineno}: expected >=4 columns, got {len(row)}")
            contributors = tuple(c for c in row[3].split(";") if c)
            hint = row[4].strip() if len(row) > 4 and row[4].strip() else None
            if hint is not None and hint not in ("train", "test"):
                raise ManifestError(f"{path}:{lineno}: invalid split_hint {hint!r}")
            try:
                entries.append(
                    ManifestEntry(row[0], row[1], row[2], contributors, hint)
                )
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}")
    return entries


def serialize_manifest(entries, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER + ["split_hint"])
        for e in entries:
            writer.writerow(
                [e.path, e.subject_id, e.label, ";".join(e.contributors), e.split_hint or ""]
            )


def resolve_entry_path(manifest_path, entry: ManifestEntry) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# ---------------------------------------------------------------------------
# Synthetic corpus


def _smooth3(img: np.ndarray) -> np.ndarray:
    """3x3 box smoothing with edge replication."""
    p = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for dr in range(3):
        for dc in range(3):
            out += p[dr : dr + img.shape[0], dc : dc + img.shape[1]]
    return out / 9.0


def _bandpass_noise(rng, h, w, fine, coarse):
    """Subject texture: white noise smoothed at two scales, differenced."""
    n = rng.standard_normal((h, w))
    a = n.copy()
    for _ in range(fine):
        a = _smooth3(a)
    b = a.copy()
    for _ in range(coarse):
        b = _smooth3(b)
    t = a - b
    sd = t.std()
    return t / sd if sd > 0 else t


def synth_dataset(seed, n_subjects, imgs_per_subject, out_dir, size=160):
    """Generate a deterministic synthetic morph corpus and its manifest.

    Bona fide images are a smooth low-frequency "face" plus a subject-
    specific band-limited texture plus per-image noise. Morphs average two
    distinct subjects' images 0.5/0.5 and apply mild 3x3 smoothing,
    mimicking the ghosting of warp/alpha-blend morphing. Returns the
    manifest path.
    """
    if n_subjects < 4:
        raise ManifestError("synth_dataset needs n_subjects >= 4")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageError(f"unwritable output directory {out_dir}: {exc}")

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    entries = []
    subject_imgs: dict[str, list[np.ndarray]] = {}

    for s in range(n_subjects):
        sid = f"S{s:03d}"
        amps = rng.uniform(0.04, 0.10, size=3)
        freqs = rng.uniform(0.8, 2.5, size=(3, 2))
        phases = rng.uniform(0, 2 * np.pi, size=3)
        cy, cx = rng.uniform(0.35, 0.65, size=2)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / 0.12))
        base = 0.45 + 0.22 * blob
        for m in range(3):
            base = base + amps[m] * np.cos(
                2 * np.pi * (freqs[m, 0] * xx + freqs[m, 1] * yy) + phases[m]
            )
        texture = 0.085 * _bandpass_noise(rng, size, size, fine=1, coarse=3)
        imgs = []
        for j in range(imgs_per_subject):
            # per-capture illumination drift: low-frequency, present in
            # bona fide and (averaged) morph images alike
            ill_amp = rng.uniform(0.03, 0.08)
            ill_freq = rng.uniform(0.4, 1.2, size=2)
            ill_phase = rng.uniform(0, 2 * np.pi)
            illum = ill_amp * np.cos(
                2 * np.pi * (ill_freq[0] * xx + ill_freq[1] * yy) + ill_phase
            )
            noise = 0.02 * rng.standard_normal((size, size))
            img = np.clip(base + texture + illum + noise, 0.0, 1.0)
            name = f"bf_{sid}_{j:02d}.pgm"
            save_image(out_dir / name, img)
            # quantized pixels are what downstream consumers see
            imgs.append(np.rint(np.clip(img, 0, 1) * 255) / 255.0)
            entries.append(ManifestEntry(name, sid, "bona_fide"))
        subject_imgs[sid] = imgs

    midx = 0
    for shift in (1, 2):
        for s in range(n_subjects):
            a = f"S{s:03d}"
            b = f"S{(s + shift) % n_subjects:03d}"
            if a == b:
                continue
            ia = subject_imgs[a][midx % imgs_per_subject]
            ib = subject_imgs[b][(midx + 1) % imgs_per_subject]
            # ghosting: the second contributor is blended in with a one
            # pixel misalignment, which attenuates fine detail far more
            # than coarse structure; a dash of fresh noise restores the
            # acquisition noise floor lost to the averaging
            morph = (
                0.5 * ia
                + 0.5 * np.roll(ib, (1, 1), axis=(0, 1))
                + 0.0141 * rng.standard_normal((size, size))
            )
            name = f"mo_{midx:03d}.pgm"
            save_image(out_dir / name, np.clip(morph, 0.0, 1.0))
            entries.append(ManifestEntry(name, f"M{midx:03d}", "morph", (a, b)))
            midx += 1

    manifest_path = out_dir / "manifest.csv"
    serialize_manifest(entries, manifest_path)
    return manifest_path
