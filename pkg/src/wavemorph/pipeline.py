"""Dataset splitting, pair construction, class-balanced batching, the
decomposition cache, and the Siamese training loop with plateau-driven
learning-rate decay and early stopping.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import embednet, imaging, wavelet
from .errors import WavemorphError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Subject-disjoint splitting


@dataclass(frozen=True)
class SplitPlan:
    train_subjects: tuple[str, ...]
    val_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]
    excluded_morphs: tuple[str, ...]

    def to_dict(self):
        return {
            "train_subjects": list(self.train_subjects),
            "val_subjects": list(self.val_subjects),
            "test_subjects": list(self.test_subjects),
            "excluded_morphs": list(self.excluded_morphs),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["train_subjects"]),
            tuple(d["val_subjects"]),
            tuple(d["test_subjects"]),
            tuple(d.get("excluded_morphs", [])),
        )


def _hash_order(subjects, seed):
    def key(sid):
        return (hashlib.sha256(f"{seed}:{sid}".encode()).hexdigest(), sid)

    return sorted(subjects, key=key)


def make_split(entries, fraction: float = 0.5, seed: int = 0,
               val_fraction: float = 0.15) -> SplitPlan:
    """Assign bona fide subjects to train/test by seeded hash order and
    earmark a validation slice of the test subjects.

    Morphs whose contributors span train and test are excluded outright;
    subject disjointness across train/test is absolute.
    """
    subjects = sorted({e.subject_id for e in entries if e.label == "bona_fide"})
    if len(subjects) < 2:
        raise WavemorphError("need at least 2 subjects to split")
    order = _hash_order(subjects, seed)
    n_train = min(max(int(round(fraction * len(subjects))), 1), len(subjects) - 1)
    train = set(order[:n_train])
    test_all = order[n_train:]
    n_val = max(1, math.ceil(val_fraction * len(test_all)))
    n_val = min(n_val, max(len(test_all) - 1, 1))
    val = tuple(test_all[:n_val])
    test = tuple(test_all[n_val:])

    excluded = []
    for e in entries:
        if e.label != "morph":
            continue
        in_train = sum(1 for c in e.contributors if c in train)
        if in_train not in (0, 2):
            excluded.append(e.path)
    if excluded:
        log.info("excluded %d morphs with contributors in both splits", len(excluded))
    return SplitPlan(tuple(sorted(train)), val, test, tuple(excluded))


# ---------------------------------------------------------------------------
# Pair construction


@dataclass(frozen=True)
class PairSample:
    ref: imaging.ManifestEntry
    probe: imaging.ManifestEntry
    y: int  # 0 genuine, 1 imposter

    @property
    def pair_id(self) -> str:
        return f"{self.ref.path}|{self.probe.path}"


def build_pairs(entries, plan: SplitPlan) -> dict[str, list[PairSample]]:
    """Genuine pairs are within-subject bona fide combinations; each morph
    pairs with its contributors' bona fide images.

    Within the test half, morphs touching a validation subject feed the
    validation set (via their validation contributors only) and are kept
    out of the final evaluation pairs.
    """
    train = set(plan.train_subjects)
    val = set(plan.val_subjects)
    test = set(plan.test_subjects)
    excluded = set(plan.excluded_morphs)

    by_subject: dict[str, list[imaging.ManifestEntry]] = {}
    for e in entries:
        if e.label == "bona_fide":
            by_subject.setdefault(e.subject_id, []).append(e)

    def bucket_of(sid):
        if sid in train:
            return "train"
        if sid in val:
            return "val"
        if sid in test:
            return "test"
        return None

    pairs = {"train": [], "val": [], "test": []}
    for sid in sorted(by_subject):
        bucket = bucket_of(sid)
        if bucket is None:
            continue
        imgs = sorted(by_subject[sid], key=lambda e: e.path)
        if len(imgs) < 2:
            log.warning("subject %s has <2 bona fide images; no genuine pairs", sid)
            continue
        for a, b in combinations(imgs, 2):
            pairs[bucket].append(PairSample(a, b, 0))

    for e in entries:
        if e.label != "morph" or e.path in excluded:
            continue
        in_train = all(c in train for c in e.contributors)
        touches_val = any(c in val for c in e.contributors)
        if in_train:
            bucket, contribs = "train", e.contributors
        elif touches_val:
            bucket, contribs = "val", tuple(c for c in e.contributors if c in val)
        else:
            bucket, contribs = "test", e.contributors
        for c in sorted(set(contribs)):
            for ref in sorted(by_subject.get(c, []), key=lambda x: x.path):
                pairs[bucket].append(PairSample(ref, e, 1))
    return pairs


# ---------------------------------------------------------------------------
# Decomposition cache


class BandCache:
    """Masked sub-band stacks, cached on disk keyed by content hash.

    Preprocessing order: (gray mode) luma conversion, then resize, then the
    optional horizontal flip, then decomposition; flips happen in the image
    domain because the sub-band filters are orientation-sensitive. Stacks
    are stored float32 on disk and returned float64.
    """

    def __init__(self, manifest_path, family: str, mask, mode: str = "gray",
                 size: int = 160, cache_dir=None):
        if mode not in ("gray", "rgb"):
            raise WavemorphError(f"invalid mode {mode!r}")
        if not mask:
            raise WavemorphError("empty selection mask")
        self.manifest_path = Path(manifest_path)
        self.family = family
        self.fb = wavelet.filter_bank(family)
        self.mask = list(mask)
        self.mode = mode
        self.size = size
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, np.ndarray] = {}

    @property
    def channels(self) -> int:
        return len(self.mask) * (3 if self.mode == "rgb" else 1)

    def _key(self, entry, flip):
        path = imaging.resolve_entry_path(self.manifest_path, entry)
        h = hashlib.sha256()
        h.update(path.read_bytes())
        h.update(
            f"|{self.family}|{self.mode}|{self.size}|{int(flip)}|{','.join(self.mask)}".encode()
        )
        return h.hexdigest()[:32]

    def _compute(self, entry, flip):
        path = imaging.resolve_entry_path(self.manifest_path, entry)
        img = imaging.load_image(path)
        if self.mode == "gray":
            g = imaging.to_grayscale(img)
            g = imaging.resize_bilinear(g, self.size, self.size)
            if flip:
                g = imaging.hflip(g)
            bands = wavelet.decompose_48(g, self.fb)
            stack = np.stack([bands[b] for b in self.mask])
        else:
            if img.ndim == 2:
                img = np.stack([img] * 3, axis=-1)
            chans = [imaging.resize_bilinear(img[:, :, c], self.size, self.size) for c in range(3)]
            if flip:
                chans = [imaging.hflip(c) for c in chans]
            planes = []
            for ch in chans:
                bands = wavelet.decompose_48(ch, self.fb)
                planes.extend(bands[b] for b in self.mask)
            stack = np.stack(planes)
        return stack

    def stack(self, entry, flip: bool = False) -> np.ndarray:
        key = self._key(entry, flip)
        if self.cache_dir is not None:
            f = self.cache_dir / f"{key}.npy"
            if f.exists():
                return np.load(f).astype(np.float64)
            stack = self._compute(entry, flip)
            np.save(f, stack.astype(np.float32))
            return stack.astype(np.float32).astype(np.float64)
        if key not in self._mem:
            self._mem[key] = self._compute(entry, flip).astype(np.float32)
        return self._mem[key].astype(np.float64)


# ---------------------------------------------------------------------------
# Balanced batching


def balanced_batches(pairs, batch_size: int, rng: np.random.Generator,
                     augment: bool = False):
    """One epoch of exactly class-balanced batches of PairSamples.

    Each batch holds batch_size/2 genuine and batch_size/2 imposter pairs;
    the minority class is resampled with reshuffling. Yields lists of
    (pair, flip) with the same flip applied to both members of a pair.
    """
    genuine = [p for p in pairs if p.y == 0]
    imposter = [p for p in pairs if p.y == 1]
    if not genuine or not imposter:
        raise WavemorphError("balanced_batches requires both classes non-empty")
    if batch_size % 2:
        raise WavemorphError("batch_size must be even")
    half = batch_size // 2
    n_batches = math.ceil(max(len(genuine), len(imposter)) / half)

    def stream(items, total):
        out = []
        while len(out) < total:
            order = rng.permutation(len(items))
            out.extend(items[i] for i in order)
        return out[:total]

    gs = stream(genuine, n_batches * half)
    ims = stream(imposter, n_batches * half)
    batches = []
    for i in range(n_batches):
        chunk = gs[i * half : (i + 1) * half] + ims[i * half : (i + 1) * half]
        flips = rng.integers(0, 2, size=len(chunk)) if augment else np.zeros(len(chunk), int)
        batches.append([(p, bool(fl)) for p, fl in zip(chunk, flips)])
    return batches


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr0: float = 1e-4
    lr_min: float = 1e-7
    plateau_patience: int = 10
    stop_patience: int = 35
    max_epochs: int = 150
    margin: float = 1.0
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if not self.lr_min < self.lr0:
            raise WavemorphError("lr_min must be < lr0")
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise WavemorphError("patience values must be >= 1")


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    is_best: bool


@dataclass
class TrainResult:
    log: list[EpochLog] = field(default_factory=list)
    best_val: float = math.inf
    stop_reason: str = ""


def _batch_tensors(batch, cache: BandCache):
    x1 = np.stack([cache.stack(p.ref, fl) for p, fl in batch])
    x2 = np.stack([cache.stack(p.probe, fl) for p, fl in batch])
    y = np.array([p.y for p, _ in batch], dtype=np.float64)
    return x1, x2, y


def _mean_pair_loss(net, pairs, cache, batch_size, margin):
    losses = []
    for i in range(0, len(pairs), batch_size):
        chunk = [(p, False) for p in pairs[i : i + batch_size]]
        x1, x2, y = _batch_tensors(chunk, cache)
        d = embednet.batch_pair_distances(
            embednet.forward_batch(net, x1), embednet.forward_batch(net, x2)
        )
        losses.extend(embednet.contrastive_loss(d, y, margin))
    return float(np.mean(losses))


def train(net: embednet.EmbedNet, pairs: dict[str, list[PairSample]],
          cache: BandCache, config: TrainConfig) -> TrainResult:
    """Train with the plateau schedule: track the best validation loss,
    reload best weights and divide the learning rate by 10 on plateau,
    stop once a further division would undershoot lr_min, on prolonged
    stagnation, or at max_epochs. Leaves the best weights in ``net``.
    """
    if not pairs.get("train") or not pairs.get("val"):
        raise WavemorphError("train and validation pair sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    state = embednet.adam_init(net)
    lr = config.lr0
    result = TrainResult()
    best_params = copy.deepcopy(net.params)
    since_improve = 0
    since_plateau = 0

    for epoch in range(1, config.max_epochs + 1):
        batch_losses = []
        for batch in balanced_batches(pairs["train"], config.batch_size, rng, config.augment):
            x1, x2, y = _batch_tensors(batch, cache)
            e1, c1 = embednet.forward_batch(net, x1, want_cache=True)
            e2, c2 = embednet.forward_batch(net, x2, want_cache=True)
            d = embednet.batch_pair_distances(e1, e2)
            loss = embednet.contrastive_loss(d, y, config.margin)
            batch_losses.append(float(loss.mean()))
            dgrad = embednet.contrastive_loss_dgrad(d, y, config.margin) / len(batch)
            de1, de2 = embednet.pair_embedding_grads(e1, e2, d, dgrad)
            g1 = embednet.backward_batch(net, c1, de1)
            g2 = embednet.backward_batch(net, c2, de2)
            grads = {k: g1[k] + g2[k] for k in g1}
            embednet.adam_step(net, grads, state, lr)

        train_loss = float(np.mean(batch_losses))
        val_loss = _mean_pair_loss(net, pairs["val"], cache, config.batch_size, config.margin)
        is_best = val_loss < result.best_val
        if is_best:
            result.best_val = val_loss
            best_params = copy.deepcopy(net.params)
            since_improve = 0
            since_plateau = 0
        else:
            since_improve += 1
            since_plateau += 1
        result.log.append(EpochLog(epoch, lr, train_loss, val_loss, is_best))

        if since_improve >= config.stop_patience:
            result.stop_reason = "early_stop"
            break
        if since_plateau >= config.plateau_patience:
            net.params = copy.deepcopy(best_params)
            state = embednet.adam_init(net)
            if lr / 10.0 < config.lr_min * (1 - 1e-12):
                result.stop_reason = "lr_exhausted"
                break
            lr /= 10.0
            since_plateau = 0
    else:
        result.stop_reason = "max_epochs"

    net.params = best_params
    return result
