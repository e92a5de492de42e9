"""Clip sampling: stochastic segment clips for training, full tiling for testing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkernel import ContractError


@dataclass(frozen=True)
class ClipSpec:
    K: int = 12
    l: int = 12

    def __post_init__(self):
        if self.K < 1 or self.l < 1:
            raise ContractError(f"ClipSpec needs K >= 1 and l >= 1, got K={self.K}, l={self.l}")


DESK_CLIPS = ClipSpec(K=4, l=4)


def train_clip_indices(L: int, spec: ClipSpec, rng: np.random.Generator) -> np.ndarray:
    """Frame indices (K*l,) of one random clip per equal-length segment.

    The trailing ``L mod K`` frames are never used.
    """
    seg = L // spec.K
    if seg < spec.l:
        raise ContractError(
            f"cannot sample clips of l={spec.l} from K={spec.K} segments of a video with L={L} "
            f"frames (segment length {seg})"
        )
    starts = np.arange(spec.K) * seg + rng.integers(0, seg - spec.l + 1, size=spec.K)
    return (starts[:, None] + np.arange(spec.l)[None, :]).reshape(-1)


def train_clip_sample(v, spec: ClipSpec, rng: np.random.Generator) -> np.ndarray:
    return v.frames[train_clip_indices(v.frames.shape[0], spec, rng)]


def test_clip_indices(L: int, l: int) -> np.ndarray:
    """Consecutive non-overlapping clips covering every frame; a partial tail is back-aligned."""
    if l < 1 or L < l:
        raise ContractError(f"need 1 <= l <= L for test tiling, got L={L}, l={l}")
    n = math.ceil(L / l)
    starts = np.arange(n) * l
    starts[-1] = min(starts[-1], L - l)
    return (starts[:, None] + np.arange(l)[None, :]).reshape(-1)


def test_clip_tile(v, l: int) -> np.ndarray:
    return v.frames[test_clip_indices(v.frames.shape[0], l)]


# keep pytest from collecting these as tests when imported into test modules
test_clip_indices.__test__ = False  # type: ignore[attr-defined]
test_clip_tile.__test__ = False  # type: ignore[attr-defined]
