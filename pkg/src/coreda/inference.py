"""Target-domain testing with stratified exemplars and background mixing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import EvalReport
from .model import Model, encode_batch, abs_from_pooled, rel_from_pooled
from .numkernel import ContractError, DimensionError, gap_temporal, no_grad
from .sampling import test_clip_tile
from .synthdata import SKILL_MAX, SKILL_MIN, VideoSample


@dataclass(frozen=True)
class MixConfig:
    lam: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ContractError(f"mixing ratio must lie in [0, 1], got {self.lam}")


@dataclass
class ExemplarSet:
    samples: list[VideoSample]
    labels: np.ndarray
    backgrounds: list[np.ndarray]  # each (c, h, w)

    def __len__(self) -> int:
        return len(self.samples)


def extract_background(v: VideoSample | np.ndarray) -> np.ndarray:
    """Per-pixel temporal median; the lower-middle element for even frame counts."""
    frames = v.frames if isinstance(v, VideoSample) else np.asarray(v)
    L = frames.shape[0]
    if L < 1:
        raise ContractError("cannot extract a background from an empty video")
    return np.sort(frames, axis=0)[(L - 1) // 2]


def mix_background(frames: np.ndarray, bg: np.ndarray, lam: float) -> np.ndarray:
    """``(1 - lam) * frames + lam * bg`` with ``bg`` broadcast over time, clipped to [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"mixing ratio must lie in [0, 1], got {lam}")
    frames = np.asarray(frames, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    if frames.shape[1:] != bg.shape:
        raise DimensionError(f"background {bg.shape} does not match frame shape {frames.shape[1:]}")
    return np.clip((1.0 - lam) * frames + lam * bg[None], 0.0, 1.0)


def select_exemplars(D_S: Sequence[VideoSample], M: int, rng: np.random.Generator) -> ExemplarSet:
    """One exemplar per equal-width label bin over [6, 30].

    Empty bins are backfilled uniformly from the remaining pool, without
    replacement.  Exemplars come back in bin order.
    """
    if M < 1:
        raise ContractError("M must be >= 1")
    if len(D_S) < M:
        raise ContractError(f"need at least M={M} labeled source videos, got {len(D_S)}")
    labels = np.array([v.label for v in D_S], dtype=np.float64)
    if np.any(np.isnan(labels)):
        raise ContractError("exemplars must be labeled")
    width = (SKILL_MAX - SKILL_MIN) / M
    bins = np.clip(((labels - SKILL_MIN) / width).astype(int), 0, M - 1)
    chosen: list[int | None] = []
    for b in range(M):
        members = np.flatnonzero(bins == b)
        chosen.append(int(rng.choice(members)) if members.size else None)
    taken = {i for i in chosen if i is not None}
    for slot, idx in enumerate(chosen):
        if idx is None:
            pool = np.array([i for i in range(len(D_S)) if i not in taken])
            pick = int(rng.choice(pool))
            chosen[slot] = pick
            taken.add(pick)
    samples = [D_S[i] for i in chosen]
    return ExemplarSet(
        samples=samples,
        labels=np.array([v.label for v in samples], dtype=np.float64),
        backgrounds=[extract_background(v) for v in samples],
    )


@dataclass
class TargetPrediction:
    prediction: float
    per_exemplar: np.ndarray


class Predictor:
    """Frozen-model target prediction; exemplar features are computed once."""

    def __init__(self, m: Model, ex: ExemplarSet, mix: MixConfig = MixConfig(), l: int | None = None):
        self.m = m
        self.ex = ex
        self.mix = mix
        self.l = l if l is not None else m.cfg.l
        if self.l != m.cfg.l:
            raise ContractError(f"clip length {self.l} does not match the model's l={m.cfg.l}")
        with no_grad():
            self._ex_pooled = gap_temporal(
                encode_batch(np.stack([test_clip_tile(v, self.l) for v in ex.samples]), m)
            )

    def __call__(self, x_t: VideoSample) -> TargetPrediction:
        if x_t.frames.shape[1:] != (self.m.cfg.c, self.m.cfg.h, self.m.cfg.w):
            raise ContractError(f"video frame shape {x_t.frames.shape[1:]} does not match the model")
        tiles = test_clip_tile(x_t, self.l)
        mixed = np.stack([mix_background(tiles, bg, self.mix.lam) for bg in self.ex.backgrounds])
        with no_grad():
            g_t = gap_temporal(encode_batch(mixed, self.m))  # (M, d)
            deltas = rel_from_pooled(g_t, self._ex_pooled, self.m).data
        recon = deltas + self.ex.labels
        return TargetPrediction(float(np.mean(recon)), recon)


def predict_target(
    m: Model, x_t: VideoSample, ex: ExemplarSet, mix: MixConfig = MixConfig(), l: int | None = None
) -> float:
    return Predictor(m, ex, mix, l)(x_t).prediction


def predict_absolute(m: Model, x: VideoSample, l: int | None = None) -> float:
    """Direct absolute-head prediction (the Source-Only inference path)."""
    l = l if l is not None else m.cfg.l
    with no_grad():
        return abs_from_pooled(gap_temporal(encode_batch(test_clip_tile(x, l)[None], m)), m).item()


def evaluate(
    m: Model,
    videos: Sequence[VideoSample],
    labels: dict[str, float] | None,
    ex: ExemplarSet | None = None,
    mix: MixConfig = MixConfig(),
    exclude: set[str] = frozenset(),
) -> EvalReport:
    """Predict every video (relative path if ``ex`` is given, absolute head otherwise)."""
    predictor = Predictor(m, ex, mix) if ex is not None else None
    preds, ys, rows = [], [], []
    for v in videos:
        if v.id in exclude:
            continue
        y = labels.get(v.id) if labels is not None else v.label
        if predictor is not None:
            out = predictor(v)
            p, per = out.prediction, out.per_exemplar.tolist()
        else:
            p, per = predict_absolute(m, v), []
        rows.append({"id": v.id, "true_label": y, "prediction": p, "per_exemplar": per})
        preds.append(p)
        ys.append(y)
    if any(y is None for y in ys):
        raise ContractError("evaluation needs a label for every video")
    return EvalReport.from_predictions(preds, ys, rows)
