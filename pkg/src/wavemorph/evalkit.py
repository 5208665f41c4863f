"""Detection metrics: APCER/BPCER, D-EER, fixed-operating-point rates,
and DET curve artifacts (CSV + SVG).

Decision rule: a pair whose embedding distance is strictly below the
threshold is accepted as bona fide. APCER(t) is the fraction of imposter
distances below t (attacks accepted); BPCER(t) is the fraction of genuine
distances at or above t (bona fides rejected). All metrics are empirical
step functions evaluated at midpoints of the pooled sorted scores plus
boundary thresholds, so they depend on score ranks only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import embednet
from .errors import MetricError


@dataclass(frozen=True)
class ScoreSet:
    genuine: np.ndarray
    imposter: np.ndarray

    def __post_init__(self):
        for name in ("genuine", "imposter"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise MetricError(f"{name} scores must be a non-empty 1D array")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise MetricError(f"{name} scores must be finite and >= 0")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    apcer: float
    bpcer: float
    limited: bool = field(default=False, compare=False)


def apcer_bpcer(scores: ScoreSet, tau: float) -> OperatingPoint:
    if not np.isfinite(tau):
        raise MetricError("threshold must be finite")
    apcer = float(np.mean(scores.imposter < tau))
    bpcer = float(np.mean(scores.genuine >= tau))
    return OperatingPoint(float(tau), apcer, bpcer)


def candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    """Midpoints between consecutive distinct pooled scores, plus one
    threshold below and one above all scores."""
    pooled = np.unique(np.concatenate([scores.genuine, scores.imposter]))
    mids = (pooled[:-1] + pooled[1:]) / 2.0 if pooled.size > 1 else np.empty(0)
    lo = pooled[0] - 1.0
    hi = pooled[-1] + 1.0
    return np.concatenate([[lo], mids, [hi]])


def d_eer(scores: ScoreSet) -> tuple[float, float]:
    """Detection equal error rate: (APCER+BPCER)/2 at the threshold
    minimizing |APCER-BPCER|, lowest such threshold on ties."""
    best = None
    for tau in candidate_thresholds(scores):
        op = apcer_bpcer(scores, tau)
        gap = abs(op.apcer - op.bpcer)
        if best is None or gap < best[0] - 1e-15:
            best = (gap, (op.apcer + op.bpcer) / 2.0, float(tau))
    return best[1], best[2]


def rate_at(scores: ScoreSet, fix: str, level: float) -> OperatingPoint:
    """Operating point with the fixed rate held at or below ``level``,
    minimizing the complementary rate.

    When the fixed rate exceeds the level at every threshold the
    complementary rate is reported as 1 with ``limited=True``.
    """
    if fix not in ("apcer", "bpcer"):
        raise MetricError(f"fix must be 'apcer' or 'bpcer', got {fix!r}")
    if not 0.0 < level < 1.0:
        raise MetricError("level must be in (0, 1)")
    feasible = []
    for tau in candidate_thresholds(scores):
        op = apcer_bpcer(scores, tau)
        if getattr(op, fix) <= level:
            feasible.append(op)
    if not feasible:
        tau = float(candidate_thresholds(scores)[0])
        if fix == "apcer":
            return OperatingPoint(tau, 0.0, 1.0, limited=True)
        return OperatingPoint(tau, 1.0, 0.0, limited=True)
    other = "bpcer" if fix == "apcer" else "apcer"
    # among minimal complementary rates keep the threshold farthest from
    # the constraint boundary (largest tau when apcer is fixed, smallest
    # when bpcer is fixed)
    best_rate = min(getattr(op, other) for op in feasible)
    ties = [op for op in feasible if getattr(op, other) == best_rate]
    chosen = max(ties, key=lambda op: op.threshold) if fix == "apcer" else min(
        ties, key=lambda op: op.threshold
    )
    return chosen


def det_curve(scores: ScoreSet) -> list[OperatingPoint]:
    """One operating point per candidate threshold, ordered by threshold;
    APCER is non-decreasing and BPCER non-increasing along the curve."""
    return [apcer_bpcer(scores, t) for t in candidate_thresholds(scores)]


# ---------------------------------------------------------------------------
# Scoring


def score_pairs(net, pairs, cache, batch_size: int = 64) -> ScoreSet:
    """Embed every pair and route its L2 distance to the genuine or
    imposter bucket by ground truth."""
    if cache.channels != net.config.in_channels:
        raise MetricError(
            f"checkpoint expects {net.config.in_channels} channels, "
            f"cache provides {cache.channels}"
        )
    genuine, imposter, rows = [], [], []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        x1 = np.stack([cache.stack(p.ref) for p in chunk])
        x2 = np.stack([cache.stack(p.probe) for p in chunk])
        d = embednet.batch_pair_distances(
            embednet.forward_batch(net, x1), embednet.forward_batch(net, x2)
        )
        for p, dist in zip(chunk, d):
            rows.append((p.pair_id, float(dist), p.y))
            (imposter if p.y else genuine).append(float(dist))
    return ScoreSet(np.array(genuine), np.array(imposter)), rows


def score_pairs_only(net, pairs, cache, batch_size: int = 64) -> ScoreSet:
    return score_pairs(net, pairs, cache, batch_size)[0]


# ---------------------------------------------------------------------------
# Artifacts


def write_det_csv(curve, path, run_config=None):
    with open(path, "w", newline="") as f:
        if run_config is not None:
            f.write(f"# run_config: {json.dumps(run_config, sort_keys=True)}\n")
        f.write("threshold,apcer,bpcer\n")
        for op in curve:
            f.write(f"{op.threshold:.12g},{op.apcer:.12g},{op.bpcer:.12g}\n")


def read_det_csv(path):
    curve = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("threshold"):
                continue
            t, a, b = line.split(",")
            curve.append(OperatingPoint(float(t), float(a), float(b)))
    return curve


_SVG_FLOOR = 1e-4  # log-axis clamp


def write_det_svg(curve, path, run_config=None, size: int = 480):
    """Minimal deterministic DET plot: log-log axes clamped at 1e-4."""
    margin = 60
    span = size - 2 * margin
    lo = np.log10(_SVG_FLOOR)

    def sx(apcer):
        v = np.log10(max(apcer, _SVG_FLOOR))
        return margin + span * (v - lo) / (-lo)

    def sy(bpcer):
        v = np.log10(max(bpcer, _SVG_FLOOR))
        return size - margin - span * (v - lo) / (-lo)

    pts = " ".join(f"{sx(op.apcer):.2f},{sy(op.bpcer):.2f}" for op in curve)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
    ]
    if run_config is not None:
        lines.append(f"<!-- run_config: {json.dumps(run_config, sort_keys=True)} -->")
    lines += [
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        'fill="white" stroke="black"/>',
    ]
    for e in range(0, 5):
        frac = e / 4.0
        x = margin + span * frac
        y = size - margin - span * frac
        lab = f"1e-{4 - e}" if e < 4 else "1"
        lines.append(
            f'<text x="{x:.0f}" y="{size - margin + 18}" font-size="11" '
            f'text-anchor="middle">{lab}</text>'
        )
        lines.append(
            f'<text x="{margin - 8}" y="{y:.0f}" font-size="11" '
            f'text-anchor="end">{lab}</text>'
        )
    lines += [
        f'<text x="{size / 2:.0f}" y="{size - 15}" font-size="13" '
        'text-anchor="middle">APCER</text>',
        f'<text x="15" y="{size / 2:.0f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 15 {size / 2:.0f})">BPCER</text>',
        f'<polyline points="{pts}" fill="none" stroke="crimson" stroke-width="1.5"/>',
        "</svg>",
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def metrics_summary(scores: ScoreSet) -> dict:
    eer, tau = d_eer(scores)
    out = {"d_eer": eer, "eer_threshold": tau}
    for level in (0.05, 0.10):
        op = rate_at(scores, "bpcer", level)
        out[f"apcer_at_bpcer{int(level * 100)}"] = op.apcer
        op = rate_at(scores, "apcer", level)
        out[f"bpcer_at_apcer{int(level * 100)}"] = op.bpcer
    out["n_genuine"] = int(scores.genuine.size)
    out["n_imposter"] = int(scores.imposter.size)
    return out
