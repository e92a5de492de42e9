"""Triplet sampling and the optimisation loops (adaptation, Source-Only, few-shot)."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .losses import (
    LossWeights,
    StepLosses,
    loss_cons_source,
    loss_cons_target,
    loss_sup_abs,
    loss_sup_rel,
    total_loss,
)
from .model import (
    EncoderConfig,
    Model,
    abs_from_pooled,
    encode_batch,
    init_params,
    read_checkpoint,
    rel_from_pooled,
    save_checkpoint,
)
from .numkernel import Adam, ContractError, Tensor, gap_temporal, mse
from .sampling import ClipSpec, train_clip_sample
from .synthdata import VideoSample

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float, step: int):
        super().__init__(f"non-finite loss term {term!r} = {value} at step {step}")
        self.term = term


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 16
    lr_encoder: float = 1e-5
    lr_heads: float = 5e-5
    weights: LossWeights = LossWeights()
    clip_spec: ClipSpec = ClipSpec()
    seed: int = 0
    disable_sup_rel: bool = False
    disable_sup_abs: bool = False
    disable_cons_s: bool = False
    disable_cons_t: bool = False
    disable_stopgrad: bool = False
    also_supervise_source_abs: bool = False
    n_shots: int = 10

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2 (source and exemplar must differ)")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")

    @property
    def target_branch(self) -> bool:
        return not self.disable_cons_t and self.weights.gamma != 0


FULL_TRAIN = TrainConfig()
# Desk profile: the full-scale learning rates barely move a freshly initialised
# network in 900 steps.  Rates picked on held-out source videos only.
DESK_TRAIN = TrainConfig(
    epochs=60,
    batch_size=8,
    lr_encoder=5e-4,
    lr_heads=1e-2,
    clip_spec=ClipSpec(K=4, l=4),
)


@dataclass
class TripletBatch:
    source: np.ndarray  # (B, K*l, c, h, w)
    exemplar: np.ndarray
    target: np.ndarray
    y_s: np.ndarray
    y_e: np.ndarray
    source_ids: list[str]
    exemplar_ids: list[str]
    target_ids: list[str]


@dataclass
class TrainLog:
    seed: int
    config: dict
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    counters: dict = field(default_factory=lambda: {"target_forward": 0, "target_samples_drawn": 0})
    wall_clock: float = 0.0

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"kind": "header", "seed": self.seed, "config": self.config}) + "\n")
            for rec in self.epochs:
                fh.write(json.dumps({"kind": "epoch", **rec}) + "\n")
            fh.write(
                json.dumps({"kind": "footer", "counters": self.counters, "wall_clock": self.wall_clock}) + "\n"
            )


def sample_triplets(
    D_S: Sequence[VideoSample],
    D_T: Sequence[VideoSample],
    B: int,
    spec: ClipSpec,
    rng: np.random.Generator,
) -> TripletBatch:
    """B rows of (source, exemplar, target); source != exemplar in every row."""
    if len(D_S) < 2:
        raise ContractError(f"need at least 2 labeled source videos, got {len(D_S)}")
    if len(D_T) < 1:
        raise ContractError("need at least 1 target video")
    src, ex, tgt = [], [], []
    for _ in range(B):
        i, j = rng.choice(len(D_S), size=2, replace=False)
        src.append(D_S[i])
        ex.append(D_S[j])
        tgt.append(D_T[int(rng.integers(len(D_T)))])
    clips = lambda vs: np.stack([train_clip_sample(v, spec, rng) for v in vs])  # noqa: E731
    return TripletBatch(
        source=clips(src),
        exemplar=clips(ex),
        target=clips(tgt),
        y_s=np.array([v.label for v in src], dtype=np.float64),
        y_e=np.array([v.label for v in ex], dtype=np.float64),
        source_ids=[v.id for v in src],
        exemplar_ids=[v.id for v in ex],
        target_ids=[v.id for v in tgt],
    )


def step_losses(
    m: Model,
    batch: TripletBatch,
    cfg: TrainConfig,
    labeled: tuple[np.ndarray, np.ndarray] | None = None,
    counters: dict | None = None,
    pseudo_labels: np.ndarray | None = None,
) -> StepLosses:
    """Forward one triplet batch and assemble every enabled loss term.

    ``labeled`` is an optional (clips, labels) batch of labeled target
    videos for the few-shot variant.  ``pseudo_labels`` replaces the
    target absolute predictions in the self-training term by fixed values.
    """
    B = len(batch.y_s)
    use_target = cfg.target_branch
    videos = [batch.source, batch.exemplar]
    if use_target:
        videos.append(batch.target)
        if counters is not None:
            counters["target_forward"] += B
    pooled = gap_temporal(encode_batch(np.concatenate(videos), m))
    y_abs = abs_from_pooled(pooled, m)
    g_s, g_e = pooled[0:B], pooled[B : 2 * B]
    y_s_abs, y_e_abs = y_abs[0:B], y_abs[B : 2 * B]

    parts = StepLosses()
    need_rel = not (cfg.disable_sup_rel and cfg.disable_cons_s)
    if need_rel:
        d_se = rel_from_pooled(g_s, g_e, m)
        if not cfg.disable_sup_rel:
            parts.sup_rel = loss_sup_rel(d_se, batch.y_s, batch.y_e)
        if not cfg.disable_cons_s:
            parts.cons_s = loss_cons_source(d_se + y_e_abs, y_s_abs)
    if not cfg.disable_sup_abs:
        parts.sup_abs = loss_sup_abs(y_e_abs, batch.y_e)
        if cfg.also_supervise_source_abs:
            parts.sup_abs = parts.sup_abs + mse(y_s_abs, Tensor(batch.y_s))
    if use_target:
        g_t = pooled[2 * B : 3 * B]
        y_t_abs = y_abs[2 * B : 3 * B]
        d_te = rel_from_pooled(g_t, g_e, m)
        if pseudo_labels is not None:
            y_t_abs = Tensor(pseudo_labels)
        parts.cons_t = loss_cons_target(d_te + y_e_abs, y_t_abs, stopgrad=not cfg.disable_stopgrad)
    if labeled is not None:
        clips, labels = labeled
        y_l = abs_from_pooled(gap_temporal(encode_batch(clips, m)), m)
        parts.sup_target = mse(y_l, Tensor(labels))
    total_loss(parts, cfg.weights)
    return parts


def _check_finite(parts: StepLosses, step: int) -> dict[str, float]:
    vals = parts.values()
    for k, v in vals.items():
        if not math.isfinite(v):
            raise NonFiniteLossError(k, v, step)
    return vals


def make_optimizer(m: Model, cfg: TrainConfig) -> Adam:
    return Adam(
        {
            "encoder": (m.group(Model.ENCODER), cfg.lr_encoder),
            "heads": (m.group(Model.ABS_HEAD + Model.REL_HEAD), cfg.lr_heads),
        }
    )


def _encoder_config(D_S: Sequence[VideoSample], cfg: TrainConfig, enc: EncoderConfig | None) -> EncoderConfig:
    _, c, h, w = D_S[0].frames.shape
    if enc is None:
        return EncoderConfig(c=c, h=h, w=w, l=cfg.clip_spec.l)
    if (enc.c, enc.h, enc.w, enc.l) != (c, h, w, cfg.clip_spec.l):
        return replace(enc, c=c, h=h, w=w, l=cfg.clip_spec.l)
    return enc


def _config_echo(cfg: TrainConfig, enc: EncoderConfig) -> dict:
    return {"train": asdict(cfg), "encoder": asdict(enc)}


def _run_loop(
    mode: str,
    D_S: Sequence[VideoSample],
    D_T: Sequence[VideoSample],
    cfg: TrainConfig,
    enc: EncoderConfig | None,
    out_dir: str | Path | None,
    resume: str | Path | None,
    labeled_pool: list[VideoSample] | None = None,
    epoch_callback=None,
) -> tuple[Model, TrainLog]:
    if mode != "source-only" and len(D_T) < 1:
        raise ContractError("target dataset is empty")
    if len(D_S) < 2:
        raise ContractError("need at least 2 labeled source videos")
    if any(v.label is None for v in D_S):
        raise ContractError("every source video must be labeled")
    # the unsupervised path must never see target labels
    D_T = [v.unlabeled() for v in D_T]
    enc = _encoder_config(D_S, cfg, enc)
    rng = np.random.default_rng([cfg.seed, 1])
    semi_rng = np.random.default_rng([cfg.seed, 2])
    start_epoch = 0
    if resume is not None:
        ck = read_checkpoint(resume, expected=enc)
        m = ck.model
        opt = make_optimizer(m, cfg)
        opt.state = ck.optimizer
        rng.bit_generator.state = ck.extra["rng"]
        semi_rng.bit_generator.state = ck.extra["semi_rng"]
        start_epoch = ck.epoch
    else:
        m = init_params(enc, cfg.seed)
        opt = make_optimizer(m, cfg)

    tlog = TrainLog(seed=cfg.seed, config={"mode": mode, **_config_echo(cfg, enc)})
    B = cfg.batch_size
    n_steps = math.ceil((len(D_S) if mode == "source-only" else max(len(D_S), len(D_T))) / B)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    step = start_epoch * n_steps
    for epoch in range(start_epoch, cfg.epochs):
        sums: dict[str, float] = {}
        for _ in range(n_steps):
            opt.zero_grad()
            if mode == "source-only":
                idx = rng.choice(len(D_S), size=min(B, len(D_S)), replace=False)
                vs = [D_S[i] for i in idx]
                clips = np.stack([train_clip_sample(v, cfg.clip_spec, rng) for v in vs])
                y = abs_from_pooled(gap_temporal(encode_batch(clips, m)), m)
                parts = StepLosses(sup_abs=mse(y, Tensor([v.label for v in vs])))
                parts.total = parts.sup_abs
            else:
                batch = sample_triplets(D_S, D_T, B, cfg.clip_spec, rng)
                tlog.counters["target_samples_drawn"] += B
                labeled = None
                if labeled_pool:
                    pick = semi_rng.integers(len(labeled_pool), size=B)
                    lv = [labeled_pool[i] for i in pick]
                    labeled = (
                        np.stack([train_clip_sample(v, cfg.clip_spec, semi_rng) for v in lv]),
                        np.array([v.label for v in lv], dtype=np.float64),
                    )
                parts = step_losses(m, batch, cfg, labeled, tlog.counters)
            vals = _check_finite(parts, step)
            parts.total.backward()
            opt.step()
            tlog.steps.append(vals)
            for k, v in vals.items():
                sums[k] = sums.get(k, 0.0) + v
            step += 1
        rec = {"epoch": epoch, **{k: v / n_steps for k, v in sums.items()}}
        tlog.epochs.append(rec)
        log.debug("epoch %d total %.4f", epoch, rec["total"])
        if epoch_callback is not None:
            epoch_callback(epoch, m)
        if out is not None:
            save_checkpoint(
                m,
                out / "checkpoint.bin",
                opt.state,
                epoch=epoch + 1,
                extra={
                    "rng": rng.bit_generator.state,
                    "semi_rng": semi_rng.bit_generator.state,
                    "mode": mode,
                },
            )
    tlog.wall_clock = time.perf_counter() - t0
    if out is not None:
        tlog.write(out / "train_log.jsonl")
    return m, tlog


def train_coreda(
    D_S: Sequence[VideoSample],
    D_T: Sequence[VideoSample],
    cfg: TrainConfig,
    enc: EncoderConfig | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    epoch_callback=None,
) -> tuple[Model, TrainLog]:
    return _run_loop("coreda", D_S, D_T, cfg, enc, out_dir, resume, epoch_callback=epoch_callback)


def train_source_only(
    D_S: Sequence[VideoSample],
    cfg: TrainConfig,
    enc: EncoderConfig | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> tuple[Model, TrainLog]:
    """Encoder plus absolute head on source labels only; no target data is read."""
    return _run_loop("source-only", D_S, [], cfg, enc, out_dir, resume)


def train_semisupervised(
    D_S: Sequence[VideoSample],
    D_T: Sequence[VideoSample],
    target_labels: dict[str, float],
    cfg: TrainConfig,
    enc: EncoderConfig | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> tuple[Model, TrainLog]:
    """Adaptation plus an alpha-weighted L2 loss on a few labeled target videos."""
    if len(target_labels) != cfg.n_shots:
        raise ContractError(f"expected {cfg.n_shots} labeled target ids, got {len(target_labels)}")
    by_id = {v.id: v for v in D_T}
    missing = sorted(set(target_labels) - set(by_id))
    if missing:
        raise ContractError(f"labeled ids not in the target set: {missing}")
    pool = [VideoSample(by_id[i].frames, float(y), "target", i) for i, y in sorted(target_labels.items())]
    return _run_loop("semi-sup", D_S, D_T, cfg, enc, out_dir, resume, labeled_pool=pool)
