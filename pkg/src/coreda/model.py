"""Shared clip encoder plus absolute and relative score heads.

The encoder embeds every frame of a clip (raw pixels, optionally with the
first-order temporal difference to the previous frame), then averages the
per-frame embeddings, giving one ``d``-vector per clip.  Both heads pool
over clips first; the relative head sees the concatenation of two pooled
vectors and predicts ``score_i - score_j``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numkernel import (
    AdamState,
    ContractError,
    DimensionError,
    Tensor,
    concat_vec,
    gap_temporal,
    matmul,
    parameter,
)

CHECKPOINT_MAGIC = b"CRDACKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or of an unsupported version."""


class ConfigConflictError(ValueError):
    """A checkpoint does not match the configuration it is loaded against."""


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    hidden: int = 64
    use_temporal_diff: bool = True
    # input geometry
    c: int = 1
    h: int = 16
    w: int = 16
    l: int = 4

    def __post_init__(self):
        if self.d < 1 or self.hidden < 1:
            raise ContractError(f"d and hidden must be >= 1, got d={self.d}, hidden={self.hidden}")
        if self.use_temporal_diff and self.l < 2:
            raise ContractError("temporal differences need clips of at least 2 frames")

    @property
    def frame_size(self) -> int:
        return self.c * self.h * self.w

    @property
    def in_dim(self) -> int:
        return self.frame_size * (2 if self.use_temporal_diff else 1)

    @property
    def head_widths(self) -> tuple[int, int]:
        return self.d, max(1, self.d // 2)


FULL_ENCODER = EncoderConfig(d=256, hidden=512, l=12)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class Model:
    ENCODER = ("enc.w1", "enc.b1", "enc.w2", "enc.b2")
    ABS_HEAD = ("abs.w1", "abs.b1", "abs.w2", "abs.b2", "abs.w3", "abs.b3")
    REL_HEAD = ("rel.w1", "rel.b1", "rel.w2", "rel.b2", "rel.w3", "rel.b3")

    def __init__(self, cfg: EncoderConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        expected = set(self.ENCODER + self.ABS_HEAD + self.REL_HEAD)
        if set(params) != expected:
            raise ContractError(f"parameter set mismatch: {sorted(set(params) ^ expected)}")

    @property
    def names(self) -> tuple[str, ...]:
        return self.ENCODER + self.ABS_HEAD + self.REL_HEAD

    def group(self, names) -> list[Tensor]:
        return [self.params[n] for n in names]

    def parameters(self) -> list[Tensor]:
        return self.group(self.names)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "Model":
        return Model(self.cfg, {k: parameter(v.data.copy(), name=k) for k, v in self.params.items()})


def init_params(cfg: EncoderConfig, seed: int) -> Model:
    """Xavier-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    d1, d2 = cfg.head_widths
    shapes = {
        "enc.w1": (cfg.in_dim, cfg.hidden),
        "enc.w2": (cfg.hidden, cfg.d),
        "abs.w1": (cfg.d, d1),
        "abs.w2": (d1, d2),
        "abs.w3": (d2, 1),
        "rel.w1": (2 * cfg.d, d1),
        "rel.w2": (d1, d2),
        "rel.w3": (d2, 1),
    }
    params: dict[str, Tensor] = {}
    for name in Model.ENCODER + Model.ABS_HEAD + Model.REL_HEAD:
        if name in shapes:
            params[name] = parameter(_xavier(rng, *shapes[name]), name=name)
        else:
            w = shapes[name.replace(".b", ".w")]
            params[name] = parameter(np.zeros(w[1]), name=name)
    return Model(cfg, params)


# -- forward -------------------------------------------------------------------------


def frame_inputs(clips: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Per-frame encoder inputs ``(N, K, T, in_dim)`` from clips ``(N, K*l, c, h, w)``."""
    clips = np.asarray(clips, dtype=np.float64)
    if clips.ndim != 5 or clips.shape[2:] != (cfg.c, cfg.h, cfg.w):
        raise DimensionError(
            f"clips must be (N, K*l, {cfg.c}, {cfg.h}, {cfg.w}), got {clips.shape}"
        )
    n, frames = clips.shape[:2]
    if frames == 0 or frames % cfg.l:
        raise DimensionError(f"frame count {frames} is not a positive multiple of l={cfg.l}")
    k = frames // cfg.l
    x = clips.reshape(n, k, cfg.l, cfg.frame_size)
    if cfg.use_temporal_diff:
        return np.concatenate([x[:, :, 1:], x[:, :, 1:] - x[:, :, :-1]], axis=-1)
    return x


def encode_batch(clips: np.ndarray, m: Model) -> Tensor:
    """Encode a batch of videos: ``(N, K*l, c, h, w) -> (N, K, d)``."""
    x = frame_inputs(clips, m.cfg)
    n, k, t, f = x.shape
    p = m.params
    hid = (matmul(Tensor(x.reshape(n * k * t, f)), p["enc.w1"]) + p["enc.b1"]).leaky_relu()
    emb = matmul(hid, p["enc.w2"]) + p["enc.b2"]
    return emb.reshape(n, k, t, m.cfg.d).mean(axis=2)


def encode(clips: np.ndarray, m: Model) -> Tensor:
    """Encode one video's clips: ``(K*l, c, h, w) -> (K, d)``."""
    clips = np.asarray(clips)
    if clips.ndim != 4:
        raise DimensionError(f"encode expects (K*l, c, h, w), got {clips.shape}")
    out = encode_batch(clips[None], m)
    return out.reshape(out.shape[1:])


def _mlp3(x: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    lead = x.shape[:-1]
    h = x.reshape(-1, x.shape[-1])
    h = (matmul(h, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"]).leaky_relu()
    h = (matmul(h, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"]).leaky_relu()
    out = matmul(h, p[f"{prefix}.w3"]) + p[f"{prefix}.b3"]
    return out.reshape(lead)


def _check_width(feats: Tensor, width: int, what: str) -> None:
    if feats.data.ndim < 1 or feats.shape[-1] != width:
        raise DimensionError(f"{what}: expected feature width {width}, got shape {feats.shape}")


def abs_from_pooled(pooled: Tensor, m: Model) -> Tensor:
    _check_width(pooled, m.cfg.d, "absolute head")
    return _mlp3(pooled, m.params, "abs")


def rel_from_pooled(pooled_i: Tensor, pooled_j: Tensor, m: Model) -> Tensor:
    _check_width(pooled_i, m.cfg.d, "relative head")
    _check_width(pooled_j, m.cfg.d, "relative head")
    return _mlp3(concat_vec(pooled_i, pooled_j), m.params, "rel")


def predict_abs(feats: Tensor, m: Model) -> Tensor:
    """Absolute score from clip features ``(..., K, d)``; one scalar per video."""
    _check_width(feats, m.cfg.d, "predict_abs")
    return abs_from_pooled(gap_temporal(feats), m)


def predict_rel(feats_i: Tensor, feats_j: Tensor, m: Model) -> Tensor:
    """Predicted score difference ``y_i - y_j``; no symmetry is imposed."""
    _check_width(feats_i, m.cfg.d, "predict_rel")
    _check_width(feats_j, m.cfg.d, "predict_rel")
    return rel_from_pooled(gap_temporal(feats_i), gap_temporal(feats_j), m)


def reconstruct(delta, anchor):
    """Absolute score from a relative prediction and an anchor score."""
    return delta + anchor


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(
    m: Model,
    path: str | Path,
    optimizer: AdamState | None = None,
    epoch: int = 0,
    extra: dict | None = None,
) -> Path:
    """Binary layout: magic, u32 version, u64 header length, JSON header, f64 LE payload."""
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = [(n, m.params[n].data) for n in m.names]
    opt_header = None
    if optimizer is not None:
        for i, (mm, vv) in enumerate(zip(optimizer.first_moment, optimizer.second_moment)):
            arrays.append((f"adam.m.{i}", mm))
            arrays.append((f"adam.v.{i}", vv))
        opt_header = {
            "step_count": optimizer.step_count,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "n": len(optimizer.first_moment),
        }
    index = []
    offset = 0
    for name, arr in arrays:
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(m.cfg),
        "epoch": epoch,
        "optimizer": opt_header,
        "extra": extra or {},
        "tensors": index,
        "payload_bytes": offset,
    }
    hb = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hb)))
        fh.write(hb)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


@dataclass
class Checkpoint:
    model: Model
    optimizer: AdamState | None
    epoch: int
    extra: dict


def read_checkpoint(path: str | Path, expected: EncoderConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 12
    if len(raw) < head or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[len(CHECKPOINT_MAGIC) : head])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[head : head + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = raw[head + hlen :]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {header['payload_bytes']}")
    cfg = EncoderConfig(**header["config"])
    if expected is not None and cfg != expected:
        diff = {k: (v, getattr(expected, k)) for k, v in asdict(cfg).items() if getattr(expected, k) != v}
        raise ConfigConflictError(f"{path}: checkpoint config conflicts with expected (found, expected): {diff}")
    tensors = {}
    for rec in header["tensors"]:
        n = int(np.prod(rec["shape"])) if rec["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=rec["offset"])
        tensors[rec["name"]] = arr.reshape(rec["shape"]).astype(np.float64)
    model = Model(cfg, {n: parameter(tensors[n], name=n) for n in Model.ENCODER + Model.ABS_HEAD + Model.REL_HEAD})
    opt = None
    oh = header["optimizer"]
    if oh is not None:
        opt = AdamState(
            [tensors[f"adam.m.{i}"] for i in range(oh["n"])],
            [tensors[f"adam.v.{i}"] for i in range(oh["n"])],
            step_count=oh["step_count"],
            beta1=oh["beta1"],
            beta2=oh["beta2"],
            epsilon=oh["epsilon"],
        )
    return Checkpoint(model, opt, header["epoch"], header["extra"])


def load_checkpoint(path: str | Path, expected: EncoderConfig | None = None) -> Model:
    return read_checkpoint(path, expected).model
