"""Undecimated (a trous) 2D wavelet analysis and synthesis.

Single-level separable filtering with periodic boundary extension and
filters dilated by 2^(level-1), the 3-level 48-band tree that drops only
the level-1 LL band, inverse reconstruction, and the LL-removed baseline
image.

Band naming follows the 3-label underscore convention, e.g. ``LH_HL_HH``:
the first label is the level-1 filter pair, the last the level-3 pair.
Within a label the first letter is the row-direction (axis 0) filter and
the second the column-direction (axis 1) filter.

Normalization: analysis filters are orthonormal; the synthesis pass uses
circular correlation with the same taps and carries a 1/2 factor per level
per axis, which makes the redundant transform perfectly invertible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging
from .errors import WaveletError
from .kernels import filter_periodic

_SQ2 = math.sqrt(2.0)

# Orthonormal analysis low-pass taps per family.
_FAMILY_LOW = {
    "haar": np.array([1.0, 1.0]) / _SQ2,
    "db2": np.array([1 + math.sqrt(3.0), 3 + math.sqrt(3.0), 3 - math.sqrt(3.0), 1 - math.sqrt(3.0)])
    / (4 * _SQ2),
    "db4": np.array(
        [
            0.23037781330885523,
            0.7148465705525415,
            0.6308807679295904,
            -0.02798376941698385,
            -0.18703481171888114,
            0.030841381835986965,
            0.032883011666982945,
            -0.010597401784997278,
        ]
    ),
}

LABELS = ("LL", "LH", "HL", "HH")
DETAIL_LABELS = ("LH", "HL", "HH")


@dataclass(frozen=True)
class FilterBank:
    """Analysis/synthesis tap pairs for one wavelet family.

    Synthesis applies the synth taps by circular correlation, so for the
    orthonormal families the synth taps equal the analysis taps.
    """

    family: str
    low: np.ndarray
    high: np.ndarray
    synth_low: np.ndarray
    synth_high: np.ndarray


def filter_bank(family: str) -> FilterBank:
    if family not in _FAMILY_LOW:
        raise WaveletError(f"unknown wavelet family {family!r}; choose from {sorted(_FAMILY_LOW)}")
    low = _FAMILY_LOW[family]
    n = len(low)
    # quadrature mirror: g[k] = (-1)^k h[n-1-k]
    high = np.array([(-1.0) ** k * low[n - 1 - k] for k in range(n)])
    return FilterBank(family, low, high, low.copy(), high.copy())


def subband_paths() -> list[str]:
    """The 48 leaf band ids of the tree, in deterministic order."""
    paths = []
    for l1 in DETAIL_LABELS:
        for l2 in LABELS:
            for l3 in LABELS:
                paths.append(f"{l1}_{l2}_{l3}")
    return paths


def high_pass_label_count(path: str) -> int:
    """Number of labels in a band path that involve a high-pass filter."""
    return sum(1 for lab in path.split("_") if lab != "LL")


def _analyze_axis(x, taps, dilation, axis):
    return filter_periodic(x, taps, dilation, axis, adjoint=False)


def _synth_axis(x, taps, dilation, axis):
    return filter_periodic(x, taps, dilation, axis, adjoint=True)


def swt_level(x, fb: FilterBank, level: int):
    """One undecimated decomposition level: returns (LL, LH, HL, HH).

    Filters are dilated by 2^(level-1); outputs keep the input shape.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise WaveletError("empty or non-2D grid")
    if level < 1:
        raise WaveletError("level must be >= 1")
    d = 1 << (level - 1)
    lo = _analyze_axis(x, fb.low, d, 0)
    hi = _analyze_axis(x, fb.high, d, 0)
    ll = _analyze_axis(lo, fb.low, d, 1)
    lh = _analyze_axis(lo, fb.high, d, 1)
    hl = _analyze_axis(hi, fb.low, d, 1)
    hh = _analyze_axis(hi, fb.high, d, 1)
    return ll, lh, hl, hh


def _inverse_level(children: dict[str, np.ndarray], fb: FilterBank, level: int):
    d = 1 << (level - 1)
    rows = {}
    for r in ("L", "H"):
        taps_c = {"L": fb.synth_low, "H": fb.synth_high}
        acc = None
        for c in ("L", "H"):
            band = children[r + c]
            part = _synth_axis(band, taps_c[c], d, 1)
            acc = part if acc is None else acc + part
        rows[r] = 0.5 * acc
    out = _synth_axis(rows["L"], fb.synth_low, d, 0) + _synth_axis(rows["H"], fb.synth_high, d, 0)
    return 0.5 * out


def decompose_48(img, fb: FilterBank) -> dict[str, np.ndarray]:
    """The 48-band tree: level 1 drops LL; every survivor is split into all
    four children at levels 2 and 3. Keys are 3-label path strings."""
    _, lh, hl, hh = swt_level(img, fb, 1)
    level1 = {"LH": lh, "HL": hl, "HH": hh}
    bands = {}
    for l1, g1 in level1.items():
        c2 = dict(zip(LABELS, swt_level(g1, fb, 2)))
        for l2, g2 in c2.items():
            c3 = dict(zip(LABELS, swt_level(g2, fb, 3)))
            for l3, g3 in c3.items():
                bands[f"{l1}_{l2}_{l3}"] = g3
    return bands


def decompose_rgb(img, fb: FilterBank) -> dict[str, np.ndarray]:
    """Per-channel decomposition of an (H, W, 3) image: 144 bands keyed
    ``R_...``/``G_...``/``B_...``."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise WaveletError("decompose_rgb expects an (H, W, 3) image")
    out = {}
    for ci, cname in enumerate("RGB"):
        for path, grid in decompose_48(img[:, :, ci], fb).items():
            out[f"{cname}_{path}"] = grid
    return out


def full_pyramid(x, fb: FilterBank, levels: int = 3) -> dict[str, np.ndarray]:
    """Complete uniform decomposition to ``levels`` (all 4^levels leaves),
    including every LL branch; used for inversion tests and baselines."""
    x = np.asarray(x, dtype=np.float64)
    nodes = {"": x}
    for level in range(1, levels + 1):
        nxt = {}
        for path, grid in nodes.items():
            for lab, child in zip(LABELS, swt_level(grid, fb, level)):
                nxt[f"{path}_{lab}".lstrip("_")] = child
        nodes = nxt
    return nodes


def swt_inverse(bands: dict[str, np.ndarray], fb: FilterBank, levels: int = 3) -> np.ndarray:
    """Invert a complete uniform pyramid produced by :func:`full_pyramid`."""
    expected = 4**levels
    if len(bands) != expected:
        missing = _first_missing(bands, levels)
        raise WaveletError(f"missing band: expected {expected} leaves" + (f" (e.g. {missing})" if missing else ""))
    shapes = {b.shape for b in bands.values()}
    if len(shapes) != 1:
        raise WaveletError(f"dimension mismatch across bands: {sorted(shapes)}")

    nodes = dict(bands)
    for level in range(levels, 0, -1):
        parents: dict[str, dict[str, np.ndarray]] = {}
        for path, grid in nodes.items():
            parent, _, lab = path.rpartition("_")
            parents.setdefault(parent, {})[lab] = grid
        nxt = {}
        for parent, children in parents.items():
            if set(children) != set(LABELS):
                raise WaveletError(f"missing band under node {parent!r}")
            nxt[parent] = _inverse_level(children, fb, level)
        nodes = nxt
    return nodes[""]


def _first_missing(bands, levels):
    want = [""]
    for _ in range(levels):
        want = [f"{p}_{lab}".lstrip("_") for p in want for lab in LABELS]
    for p in want:
        if p not in bands:
            return p
    return None


def ll_removed_image(img, fb: FilterBank) -> np.ndarray:
    """One forward level, LL zeroed, inverse: the mid/high-frequency
    residual. For (H, W, 3) input the removal is applied per channel."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return np.stack([ll_removed_image(img[:, :, c], fb) for c in range(img.shape[2])], axis=-1)
    ll, lh, hl, hh = swt_level(img, fb, 1)
    children = {"LL": np.zeros_like(ll), "LH": lh, "HL": hl, "HH": hh}
    return _inverse_level(children, fb, 1)


def ll_only_image(img, fb: FilterBank) -> np.ndarray:
    """The complementary low-pass reconstruction: img = ll_only + ll_removed."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return np.stack([ll_only_image(img[:, :, c], fb) for c in range(img.shape[2])], axis=-1)
    ll, lh, hl, hh = swt_level(img, fb, 1)
    z = np.zeros_like(ll)
    children = {"LL": ll, "LH": z, "HL": z, "HH": z}
    return _inverse_level(children, fb, 1)


def dump_bands(bands: dict[str, np.ndarray], out_dir, run_config=None) -> Path:
    """Write one affine-normalized PGM per band plus a JSON sidecar with
    per-band min/max. Returns the sidecar path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {}
    for path in sorted(bands):
        grid = bands[path]
        lo, hi = float(grid.min()), float(grid.max())
        scale = (grid - lo) / (hi - lo) if hi > lo else np.zeros_like(grid)
        imaging.save_image(out_dir / f"{path}.pgm", scale)
        meta[path] = {"min": lo, "max": hi}
    sidecar = out_dir / "bands.json"
    payload = {"bands": meta}
    if run_config is not None:
        payload["run_config"] = run_config
    with open(sidecar, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return sidecar
