"""Per-band entropy statistics, Gaussian fits, KL divergence, and top-K
band selection.

For each dataset and each of the 48 bands, the Shannon entropies of the
bona fide and morph populations are fit with Gaussians; the closed-form
KL divergence between the two fits scores how discriminative the band is.
Per-dataset scores are mean-centered, averaged across datasets, and the
K highest bands form the selection mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError

SIGMA_FLOOR = 1e-8
DEFAULT_BINS = 256
DEFAULT_K = 22


def band_entropy(band: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Shannon entropy (bits) of an equal-width histogram over the band's
    [min, max] range; a constant band has zero entropy."""
    if bins < 2:
        raise MetricError("bins must be >= 2")
    band = np.asarray(band, dtype=np.float64)
    if band.size == 0:
        raise MetricError("empty grid")
    lo, hi = float(band.min()), float(band.max())
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(band, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / band.size
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float


def fit_gaussian(samples) -> GaussianFit:
    """Maximum-likelihood Gaussian: sample mean and population standard
    deviation, sigma floored at 1e-8."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise MetricError("fit_gaussian needs at least 2 samples")
    return GaussianFit(float(x.mean()), max(float(x.std()), SIGMA_FLOOR))


def gaussian_kld(p: GaussianFit, q: GaussianFit, symmetric: bool = False) -> float:
    """Closed-form KL(p || q) between Gaussians, in nats; symmetrized
    variant averages both directions."""

    def _kl(a, b):
        return (
            np.log(b.sigma / a.sigma)
            + (a.sigma**2 + (a.mu - b.mu) ** 2) / (2.0 * b.sigma**2)
            - 0.5
        )

    if symmetric:
        return float(0.5 * (_kl(p, q) + _kl(q, p)))
    return float(_kl(p, q))


@dataclass(frozen=True)
class BandScore:
    bona_fide: GaussianFit
    morph: GaussianFit
    kld: float


def dataset_band_scores(
    entropies: dict[str, dict[str, list[float]]],
    direction: str = "bf_vs_morph",
    symmetric: bool = False,
) -> dict[str, BandScore]:
    """Fit per-class Gaussians and score every band of one dataset.

    ``entropies`` maps band id -> {"bona_fide": [...], "morph": [...]}.
    ``direction`` chooses the KL argument order; ignored when symmetric.
    """
    if direction not in ("bf_vs_morph", "morph_vs_bf"):
        raise MetricError(f"invalid KLD direction {direction!r}")
    out = {}
    for band, groups in entropies.items():
        fb = fit_gaussian(groups["bona_fide"])
        fm = fit_gaussian(groups["morph"])
        if direction == "bf_vs_morph":
            kld = gaussian_kld(fb, fm, symmetric=symmetric)
        else:
            kld = gaussian_kld(fm, fb, symmetric=symmetric)
        out[band] = BandScore(fb, fm, kld)
    return out


def normalize_and_average(per_dataset: list[np.ndarray]) -> np.ndarray:
    """Mean-center each dataset's score vector, then average element-wise."""
    if not per_dataset:
        raise MetricError("need at least one dataset vector")
    n = len(per_dataset[0])
    mats = []
    for v in per_dataset:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (n,):
            raise MetricError(f"length mismatch: {v.shape} vs ({n},)")
        mats.append(v - v.mean())
    return np.mean(mats, axis=0)


def select_top_k(avg: dict[str, float], k: int) -> list[str]:
    """The K band ids with the highest averaged score, descending; ties
    broken by lexicographic band id."""
    if not 1 <= k <= len(avg):
        raise MetricError(f"k={k} out of range 1..{len(avg)}")
    ranked = sorted(avg.items(), key=lambda kv: (-kv[1], kv[0]))
    return [band for band, _ in ranked[:k]]
