import numpy as np
import pytest

from coreda.numkernel import ContractError
from coreda.sampling import ClipSpec, test_clip_indices as tile_indices, test_clip_tile as tile, train_clip_indices, train_clip_sample
from coreda.synthdata import VideoSample


def ramp_video(L, c=1, h=2, w=2):
    """Each frame is filled with its own index so frames can be identified."""
    frames = np.broadcast_to(np.arange(L, dtype=np.float32)[:, None, None, None], (L, c, h, w)).copy()
    return VideoSample(frames, 10.0, "source", "ramp")


def test_worked_example():
    out = train_clip_sample(ramp_video(48), ClipSpec(K=4, l=3), np.random.default_rng(0))
    assert out.shape == (12, 1, 2, 2)
    first = out[:3, 0, 0, 0]
    assert np.all(first < 12)
    assert np.array_equal(np.diff(first), [1, 1])


def test_full_segment_is_deterministic():
    spec = ClipSpec(K=4, l=12)
    for seed in range(5):
        idx = train_clip_indices(48, spec, np.random.default_rng(seed))
        assert np.array_equal(idx, np.arange(48))


def test_every_admissible_start_is_hit():
    # L=24, K=2, l=2: segments [0,12) and [12,24); starts 0..10 and 12..22
    spec = ClipSpec(K=2, l=2)
    rng = np.random.default_rng(0)
    seen = [set(), set()]
    for _ in range(10_000):
        idx = train_clip_indices(24, spec, rng)
        seen[0].add(int(idx[0]))
        seen[1].add(int(idx[2]))
    assert seen[0] == set(range(0, 11))
    assert seen[1] == set(range(12, 23))


def test_remainder_frames_never_used():
    spec = ClipSpec(K=3, l=2)
    rng = np.random.default_rng(1)
    used = set()
    for _ in range(2000):
        used.update(train_clip_indices(20, spec, rng).tolist())
    assert used == set(range(18))  # 20 mod 3 = 2 trailing frames dropped


def test_index_audit_on_random_specs():
    rng = np.random.default_rng(2)
    for _ in range(300):
        K = int(rng.integers(1, 8))
        l = int(rng.integers(1, 6))
        L = int(K * l + rng.integers(0, 30))
        seg = L // K
        idx = train_clip_indices(L, ClipSpec(K, l), rng).reshape(K, l)
        for s in range(K):
            assert idx[s, 0] >= s * seg and idx[s, -1] < (s + 1) * seg
            assert np.array_equal(np.diff(idx[s]), np.ones(l - 1))


def test_too_short_names_everything():
    with pytest.raises(ContractError, match=r"l=5.*K=4.*L=16"):
        train_clip_indices(16, ClipSpec(K=4, l=5), np.random.default_rng(0))


def test_clip_spec_validation():
    with pytest.raises(ContractError):
        ClipSpec(K=0, l=3)
    with pytest.raises(ContractError):
        ClipSpec(K=2, l=0)


class TestTiling:
    def test_exact_multiple(self):
        assert np.array_equal(tile_indices(24, 12), np.arange(24))

    def test_back_aligned_tail(self):
        starts = tile_indices(30, 12).reshape(-1, 12)[:, 0]
        assert starts.tolist() == [0, 12, 18]

    @pytest.mark.parametrize("L,l", [(1, 1), (7, 3), (30, 12), (64, 4), (65, 4), (5, 5)])
    def test_coverage(self, L, l):
        idx = tile_indices(L, l)
        assert set(idx.tolist()) == set(range(L))
        assert len(idx) == -(-L // l) * l

    def test_frames_follow_indices(self):
        out = tile(ramp_video(10), 4)
        assert out[:, 0, 0, 0].tolist() == [0, 1, 2, 3, 4, 5, 6, 7, 6, 7, 8, 9]

    def test_too_short(self):
        with pytest.raises(ContractError):
            tile_indices(3, 4)
