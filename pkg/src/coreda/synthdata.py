"""Synthetic domain-shift benchmark for video score regression.

A Gaussian blob travels once around a circle over the clip.  Skill is
encoded purely as per-frame positional jitter of the blob; the two domains
differ only in background pattern, gain, offset and sensor noise, so the
skill signal itself is domain invariant.

Datasets persist as a JSON manifest plus one raw little-endian float32 blob.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .numkernel import ContractError

FORMAT_VERSION = "coreda-dataset/1"
SKILL_MIN = 6.0
SKILL_MAX = 30.0
SKILL_MID = 0.5 * (SKILL_MIN + SKILL_MAX)

Domain = Literal["source", "target"]
_DOMAIN_CODE = {"source": 0, "target": 1}


class FormatError(ValueError):
    """A dataset file is malformed, truncated or fails its checksum."""


class VersionError(FormatError):
    """The manifest's format version is not supported."""


class DegenerateVideoWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DomainConfig:
    background_kind: Literal["horizontal_grating", "checkerboard"] = "horizontal_grating"
    background_period: float = 8.0
    gain: float = 1.0
    offset: float = 0.0
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.background_kind not in ("horizontal_grating", "checkerboard"):
            raise ContractError(f"unknown background_kind {self.background_kind!r}")
        if self.gain <= 0:
            raise ContractError(f"gain must be > 0, got {self.gain}")
        if self.noise_sigma < 0:
            raise ContractError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.background_period <= 0:
            raise ContractError("background_period must be > 0")


SOURCE_DOMAIN = DomainConfig("horizontal_grating", 8.0, 1.0, 0.0, 0.01)
TARGET_DOMAIN = DomainConfig("checkerboard", 4.0, 1.3, 0.1, 0.03)


@dataclass(frozen=True)
class GenConfig:
    L: int = 64
    c: int = 1
    h: int = 16
    w: int = 16
    blob_sigma: float = 1.5
    blob_amplitude: float = 0.5
    jitter_max: float = 3.0
    seed: int = 0
    integer_labels: bool = False

    def __post_init__(self):
        if self.L < 2:
            raise ContractError(f"L must be >= 2, got {self.L}")
        if self.h < 8 or self.w < 8:
            raise ContractError(f"h and w must be >= 8, got {self.h}x{self.w}")
        if self.c < 1:
            raise ContractError("c must be >= 1")
        if not 0 <= self.jitter_max < min(self.h, self.w) / 4:
            raise ContractError(
                f"jitter_max must lie in [0, min(h, w)/4); got {self.jitter_max} for {self.h}x{self.w}"
            )

    @property
    def path_radius(self) -> float:
        return 0.2 * min(self.h, self.w)


@dataclass
class VideoSample:
    frames: np.ndarray  # (L, c, h, w) float32 in [0, 1]
    label: float | None
    domain: Domain
    id: str
    # Generator ground truth; never persisted.
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def unlabeled(self) -> "VideoSample":
        return VideoSample(self.frames, None, self.domain, self.id)


# -- generation ----------------------------------------------------------------------


def background(dom: DomainConfig, gen: GenConfig) -> np.ndarray:
    """Pre-gain background image of shape (h, w), values in [0.25, 0.75]."""
    yy, xx = np.mgrid[0 : gen.h, 0 : gen.w].astype(np.float64)
    p = dom.background_period
    if dom.background_kind == "horizontal_grating":
        return 0.5 + 0.25 * np.sin(2.0 * np.pi * yy / p)
    cell = p / 2.0
    parity = (np.floor(yy / cell) + np.floor(xx / cell)) % 2
    return np.where(parity == 0, 0.25, 0.75)


def jitter_amplitude(skill: float, jitter_max: float) -> float:
    return jitter_max * (SKILL_MAX - skill) / (SKILL_MAX - SKILL_MIN)


def smooth_path(L: int, gen: GenConfig, phase: float) -> np.ndarray:
    """Blob centres (L, 2) as (row, col) along one revolution."""
    t = np.arange(L, dtype=np.float64)
    ang = phase + 2.0 * np.pi * t / L
    r = gen.path_radius
    cy, cx = (gen.h - 1) / 2.0, (gen.w - 1) / 2.0
    return np.stack([cy + r * np.sin(ang), cx + r * np.cos(ang)], axis=1)


def blob_image(center: np.ndarray, gen: GenConfig) -> np.ndarray:
    yy, xx = np.mgrid[0 : gen.h, 0 : gen.w].astype(np.float64)
    d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
    return gen.blob_amplitude * np.exp(-d2 / (2.0 * gen.blob_sigma**2))


def gen_video(
    skill: float,
    dom: DomainConfig,
    gen: GenConfig,
    rng: np.random.Generator,
    domain: Domain = "source",
    id: str = "v0",
    labeled: bool = True,
) -> VideoSample:
    if not SKILL_MIN <= skill <= SKILL_MAX:
        raise ContractError(f"skill must lie in [{SKILL_MIN}, {SKILL_MAX}], got {skill}")
    sigma_j = jitter_amplitude(skill, gen.jitter_max)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    path = smooth_path(gen.L, gen, phase)
    jitter = rng.uniform(-sigma_j, sigma_j, size=(gen.L, 2)) if sigma_j > 0 else np.zeros((gen.L, 2))
    centers = path + jitter
    bg = background(dom, gen)
    frames = np.empty((gen.L, gen.c, gen.h, gen.w), dtype=np.float64)
    for t in range(gen.L):
        frames[t] = dom.gain * (bg + blob_image(centers[t], gen))
    frames += dom.offset
    if dom.noise_sigma > 0:
        frames += rng.normal(0.0, dom.noise_sigma, size=frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    return VideoSample(
        frames=frames.astype(np.float32),
        label=float(skill) if labeled else None,
        domain=domain,
        id=id,
        extras={"centers": centers, "path": path, "sigma_j": sigma_j, "skill": float(skill)},
    )


def _sample_rng(seed: int, domain: Domain, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _DOMAIN_CODE[domain], int(index)])


def generate(
    n: int,
    labeled: bool,
    dom: DomainConfig,
    gen: GenConfig,
    seed: int,
    domain: Domain = "source",
) -> list[VideoSample]:
    """In-memory dataset.  Ground-truth skill is kept in ``extras`` even when unlabeled."""
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    out = []
    for i in range(n):
        rng = _sample_rng(seed, domain, i)
        skill = float(rng.uniform(SKILL_MIN, SKILL_MAX))
        if gen.integer_labels:
            skill = float(np.round(skill))
        out.append(gen_video(skill, dom, gen, rng, domain=domain, id=f"{domain[0]}{i:05d}", labeled=labeled))
    return out


# -- persistence -------------------------------------------------------------------


def save_dataset(
    samples: list[VideoSample],
    path: str | Path,
    gen: GenConfig | None = None,
    dom: DomainConfig | None = None,
) -> Path:
    """Write ``<path>.json`` manifest and ``<path>.bin`` blob; returns the manifest path."""
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ContractError("sample ids must be unique")
    records = []
    offset = 0
    hasher = hashlib.sha256()
    with open(blob_path, "wb") as fh:
        for s in samples:
            raw = np.ascontiguousarray(s.frames, dtype="<f4").tobytes()
            fh.write(raw)
            hasher.update(raw)
            rec = {"id": s.id, "offset": offset, "nbytes": len(raw), "shape": list(s.frames.shape)}
            if s.label is not None:
                # unlabeled records carry no label field at all
                rec["label"] = s.label
            rec.update(domain=s.domain, crc32=zlib.crc32(raw))
            records.append(rec)
            offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "blob": blob_path.name,
        "blob_bytes": offset,
        "blob_sha256": hasher.hexdigest(),
        "gen_config": asdict(gen) if gen else None,
        "domain_config": asdict(dom) if dom else None,
        "records": records,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def _label_value(label):
    # labels survive a JSON round trip exactly (repr of float64 is shortest-exact)
    return None if label is None else float(label)


def load_dataset(path: str | Path) -> list[VideoSample]:
    path = Path(path)
    manifest_path = path if path.suffix == ".json" else path.with_suffix(".json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: manifest is not valid JSON ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{manifest_path}: unsupported format_version {version!r}")
    blob_path = manifest_path.with_name(manifest["blob"])
    raw = blob_path.read_bytes()
    if len(raw) != manifest["blob_bytes"]:
        raise FormatError(
            f"{blob_path}: expected {manifest['blob_bytes']} bytes, found {len(raw)} (truncated?)"
        )
    if hashlib.sha256(raw).hexdigest() != manifest["blob_sha256"]:
        raise FormatError(f"{blob_path}: checksum mismatch")
    out = []
    last = -1
    seen = set()
    for rec in manifest["records"]:
        off, nbytes = rec["offset"], rec["nbytes"]
        if off <= last or rec["id"] in seen:
            raise FormatError(f"{manifest_path}: offsets must increase and ids be unique")
        last = off
        seen.add(rec["id"])
        shape = tuple(rec["shape"])
        if nbytes != 4 * math.prod(shape) or off + nbytes > len(raw):
            raise FormatError(f"{manifest_path}: record {rec['id']} extent inconsistent with shape")
        chunk = raw[off : off + nbytes]
        if zlib.crc32(chunk) != rec["crc32"]:
            raise FormatError(f"{manifest_path}: record {rec['id']} checksum mismatch")
        frames = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)
        out.append(VideoSample(frames, _label_value(rec.get("label")), rec["domain"], rec["id"]))
    return out


def gen_dataset(
    n: int,
    labeled: bool,
    dom: DomainConfig,
    gen: GenConfig,
    seed: int,
    path: str | Path,
    domain: Domain = "source",
    sealed_labels_path: str | Path | None = None,
) -> Path:
    """Generate and persist a dataset.

    Unlabeled datasets omit labels from the manifest entirely; their true
    skills go to ``sealed_labels_path`` when one is given (for evaluation).
    """
    samples = generate(n, labeled, dom, gen, seed, domain=domain)
    manifest = save_dataset(samples, path, gen, dom)
    if not labeled and sealed_labels_path is not None:
        write_sealed_labels(samples, sealed_labels_path)
    return manifest


def write_sealed_labels(samples: list[VideoSample], path: str | Path) -> None:
    Path(path).write_text(json.dumps({s.id: s.extras["skill"] for s in samples}, indent=1))


def read_sealed_labels(path: str | Path) -> dict[str, float]:
    return {k: float(v) for k, v in json.loads(Path(path).read_text()).items()}


# -- oracle ---------------------------------------------------------------------------


def _circular_moving_average(x: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    idx = (np.arange(len(x))[:, None] + np.arange(-half, half + 1)[None, :]) % len(x)
    return x[idx].mean(axis=1)


def oracle_skill_estimate(v: VideoSample, jitter_max: float = 3.0, window: int = 5) -> float:
    """Estimate skill from centroid jitter alone, with no learned parameters.

    Foreground is the positive residual after removing the per-pixel temporal
    median.  The smooth path is a circular moving average of the per-frame
    centroids (the path closes after one revolution).  An all-zero video
    yields the range midpoint and a :class:`DegenerateVideoWarning`.
    """
    frames = np.asarray(v.frames, dtype=np.float64).mean(axis=1)  # (L, h, w)
    resid = np.clip(frames - np.median(frames, axis=0), 0.0, None)
    mass = resid.sum(axis=(1, 2))
    if not np.any(frames) or np.any(mass <= 0):
        warnings.warn(f"video {v.id}: no foreground signal; returning midpoint", DegenerateVideoWarning)
        return SKILL_MID
    h, w = frames.shape[1:]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = (resid * yy).sum(axis=(1, 2)) / mass
    cx = (resid * xx).sum(axis=(1, 2)) / mass
    cent = np.stack([cy, cx], axis=1)
    smooth = _circular_moving_average(cent, window)
    disp = np.linalg.norm(cent - smooth, axis=1).mean()
    est = SKILL_MAX - (SKILL_MAX - SKILL_MIN) * disp / jitter_max
    return float(np.clip(est, SKILL_MIN, SKILL_MAX))
