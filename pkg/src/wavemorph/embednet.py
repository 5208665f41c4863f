"""Small convolutional Siamese embedding network with hand-derived
backpropagation, the pairwise contrastive loss, Adam, and checkpoint
serialization.

Architecture: conv -> ReLU -> 2x2 max-pool blocks, global average pool,
and a dense projection to the embedding. All math is float64 numpy; the
convolution/pool inner loops live in :mod:`wavemorph.kernels`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, WavemorphError
from .kernels import (
    conv2d_backward_input,
    conv2d_backward_weights,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
)

DEFAULT_BLOCKS = ((16, 3, 4), (32, 3, 2), (64, 3, 1))  # (filters, kernel, stride)


@dataclass(frozen=True)
class EmbedNetConfig:
    in_channels: int
    blocks: tuple[tuple[int, int, int], ...] = DEFAULT_BLOCKS
    embedding_dim: int = 128
    seed: int = 0
    l2_normalize: bool = False

    def __post_init__(self):
        if self.in_channels < 1:
            raise WavemorphError("in_channels must be >= 1")
        if self.embedding_dim < 2:
            raise WavemorphError("embedding_dim must be >= 2")

    def to_dict(self):
        return {
            "in_channels": self.in_channels,
            "blocks": [list(b) for b in self.blocks],
            "embedding_dim": self.embedding_dim,
            "seed": self.seed,
            "l2_normalize": self.l2_normalize,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            in_channels=int(d["in_channels"]),
            blocks=tuple(tuple(int(v) for v in b) for b in d["blocks"]),
            embedding_dim=int(d["embedding_dim"]),
            seed=int(d["seed"]),
            l2_normalize=bool(d.get("l2_normalize", False)),
        )


@dataclass
class EmbedNet:
    config: EmbedNetConfig
    params: dict[str, np.ndarray]

    def param_names(self):
        return list(self.params)


def param_order(config: EmbedNetConfig) -> list[str]:
    names = []
    for i in range(len(config.blocks)):
        names += [f"conv{i}_w", f"conv{i}_b"]
    names += ["dense_w", "dense_b"]
    return names


def init_net(config: EmbedNetConfig) -> EmbedNet:
    """He-uniform initialization, fully determined by config.seed."""
    rng = np.random.default_rng(config.seed)
    params = {}
    cin = config.in_channels
    for i, (filters, kernel, _stride) in enumerate(config.blocks):
        fan_in = cin * kernel * kernel
        limit = np.sqrt(6.0 / fan_in)
        params[f"conv{i}_w"] = rng.uniform(-limit, limit, size=(filters, cin, kernel, kernel))
        params[f"conv{i}_b"] = np.zeros(filters)
        cin = filters
    limit = np.sqrt(6.0 / cin)
    params["dense_w"] = rng.uniform(-limit, limit, size=(cin, config.embedding_dim))
    params["dense_b"] = np.zeros(config.embedding_dim)
    return EmbedNet(config, params)


def forward_batch(net: EmbedNet, x: np.ndarray, want_cache: bool = False):
    """Embed a batch of shape (B, C, H, W); returns (B, embedding_dim)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != net.config.in_channels:
        raise WavemorphError(
            f"input shape {x.shape} incompatible with in_channels={net.config.in_channels}"
        )
    cache = {"block_in": [], "pre_relu": [], "pool_idx": [], "relu_out_shape": []}
    for i, (_filters, kernel, stride) in enumerate(net.config.blocks):
        if x.shape[2] < kernel or x.shape[3] < kernel:
            raise WavemorphError(f"input too small for block {i} (shape {x.shape})")
        cache["block_in"].append(x)
        z = conv2d_forward(x, net.params[f"conv{i}_w"], net.params[f"conv{i}_b"], stride)
        cache["pre_relu"].append(z)
        a = np.maximum(z, 0.0)
        cache["relu_out_shape"].append(a.shape)
        x, idx = maxpool2_forward(a)
        cache["pool_idx"].append(idx)
    cache["gap_in_shape"] = x.shape
    feat = x.mean(axis=(2, 3))
    cache["feat"] = feat
    emb = feat @ net.params["dense_w"] + net.params["dense_b"]
    if net.config.l2_normalize:
        norm = np.linalg.norm(emb, axis=1, keepdims=True)
        cache["raw_emb"] = emb
        cache["emb_norm"] = norm
        emb = emb / np.maximum(norm, 1e-12)
    return (emb, cache) if want_cache else emb


def backward_batch(net: EmbedNet, cache: dict, demb: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of sum_i <demb_i, emb_i> w.r.t. every parameter."""
    grads = {}
    if net.config.l2_normalize:
        e, norm = cache["raw_emb"], np.maximum(cache["emb_norm"], 1e-12)
        ehat = e / norm
        demb = (demb - ehat * (ehat * demb).sum(axis=1, keepdims=True)) / norm
    feat = cache["feat"]
    grads["dense_w"] = feat.T @ demb
    grads["dense_b"] = demb.sum(axis=0)
    dfeat = demb @ net.params["dense_w"].T
    bsz, c, h, w = cache["gap_in_shape"]
    dx = np.broadcast_to(dfeat[:, :, None, None] / (h * w), (bsz, c, h, w)).copy()
    for i in reversed(range(len(net.config.blocks))):
        _filters, kernel, stride = net.config.blocks[i]
        ash = cache["relu_out_shape"][i]
        da = maxpool2_backward(dx, cache["pool_idx"][i], ash[2], ash[3])
        dz = da * (cache["pre_relu"][i] > 0.0)
        xin = cache["block_in"][i]
        gw, gb = conv2d_backward_weights(xin, dz, stride, kernel)
        grads[f"conv{i}_w"] = gw
        grads[f"conv{i}_b"] = gb
        if i > 0:
            dx = conv2d_backward_input(dz, net.params[f"conv{i}_w"], stride, xin.shape[2], xin.shape[3])
    return grads


# ---------------------------------------------------------------------------
# Pair distance and contrastive loss


def pair_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """L2 distance between two embedding vectors."""
    e1, e2 = np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise WavemorphError(f"dimension mismatch: {e1.shape} vs {e2.shape}")
    return float(np.linalg.norm(e1 - e2))


def batch_pair_distances(emb1: np.ndarray, emb2: np.ndarray) -> np.ndarray:
    return np.linalg.norm(emb1 - emb2, axis=1)


def contrastive_loss(dist, y, margin: float = 1.0):
    """(1-y)*D^2 + y*max(0, m-D)^2 with y=0 genuine, y=1 imposter."""
    dist = np.asarray(dist, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    hinge = np.maximum(0.0, margin - dist)
    return (1.0 - y) * dist**2 + y * hinge**2


def contrastive_loss_dgrad(dist, y, margin: float = 1.0):
    """dL/dD; subgradient 0 at the D=m hinge kink."""
    dist = np.asarray(dist, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    hinge = np.maximum(0.0, margin - dist)
    return (1.0 - y) * 2.0 * dist - y * 2.0 * hinge


def pair_embedding_grads(emb1, emb2, dist, dloss_ddist):
    """Backprop mean-free chain D -> (e1, e2); subgradient 0 at D=0."""
    diff = emb1 - emb2
    safe = np.where(dist > 0.0, dist, 1.0)
    scale = np.where(dist > 0.0, dloss_ddist / safe, 0.0)[:, None]
    de1 = scale * diff
    return de1, -de1


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(net: EmbedNet) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(p) for k, p in net.params.items()},
        v={k: np.zeros_like(p) for k, p in net.params.items()},
    )


def adam_step(net: EmbedNet, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    state.step += 1
    t = state.step
    for name, p in net.params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        mhat = state.m[name] / (1 - beta1**t)
        vhat = state.v[name] / (1 - beta2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# Checkpoints

_MAGIC = b"WMCK"
_VERSION = 1


def save_checkpoint(net: EmbedNet, state: AdamState | None, path, *,
                    selection_mask, family, mode, run_config=None):
    """Versioned binary container: JSON header + little-endian float64
    parameter and moment payloads. Round-trips bit-exactly."""
    names = param_order(net.config)
    header = {
        "version": _VERSION,
        "config": net.config.to_dict(),
        "selection_mask": list(selection_mask),
        "family": family,
        "mode": mode,
        "params": [[n, list(net.params[n].shape)] for n in names],
        "adam_step": None if state is None else state.step,
    }
    if run_config is not None:
        header["run_config"] = run_config
    hjson = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(hjson)))
        f.write(hjson)
        for n in names:
            f.write(np.ascontiguousarray(net.params[n], dtype="<f8").tobytes())
        if state is not None:
            for moments in (state.m, state.v):
                for n in names:
                    f.write(np.ascontiguousarray(moments[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (net, adam_state_or_None, header)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(blob) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})")
    for key in ("config", "selection_mask", "family", "params"):
        if key not in header:
            raise CheckpointError(f"{path}: header missing {key!r}")
    config = EmbedNetConfig.from_dict(header["config"])
    offset = 12 + hlen
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated parameter payload at {name}")
        params[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    net = EmbedNet(config, params)
    state = None
    if header.get("adam_step") is not None:
        state = AdamState(step=int(header["adam_step"]))
        for moments in ("m", "v"):
            d = {}
            for name, shape in header["params"]:
                n = int(np.prod(shape)) if shape else 1
                end = offset + 8 * n
                if end > len(blob):
                    raise CheckpointError(f"{path}: truncated {moments} payload at {name}")
                d[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
                offset = end
            setattr(state, moments, d)
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return net, state, header
