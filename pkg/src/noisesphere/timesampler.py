"""Frame-time sampling for video renders of the 4D field.

Two strategies are provided. The anchored scheme pins the first frame to
t=0 and jitters every later frame inside its own anchor interval
[i/V, (i+1)/V), which keeps the blend offsets used by the noise
interpolation well defined and guarantees the conditioning frame is
always rendered. The legacy scheme draws a start time from U[0, 1/V] and
the remaining frames uniformly from [start, 1]; it is kept as the
baseline it replaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MIN_STEP = 1e-6  # jitter applied to degenerate draws to keep times strictly increasing


@dataclass(frozen=True)
class SamplerConfig:
    frames: int = 16
    mode: str = "anchored"
    seed: int = 0

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("need at least 2 frames")
        if self.mode not in ("anchored", "legacy"):
            raise ValueError("mode must be 'anchored' or 'legacy'")


@dataclass(frozen=True)
class TimeVector:
    """Sampled frame times plus their offsets from preceding anchors.

    Anchors sit at i/V. offsets[i] = times[i] - anchor, always in
    [0, 1/V]; for the anchored sampler offsets equal the jitter draws
    exactly.
    """

    times: np.ndarray         # (V,) strictly increasing, in [0, 1]
    anchor_index: np.ndarray  # (V,) int
    offsets: np.ndarray       # (V,) float

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "anchor_index", np.asarray(self.anchor_index, dtype=np.int64))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64))
        v = len(self.times)
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("frame times must be strictly increasing")
        if self.times[0] < 0.0 or self.times[-1] > 1.0:
            raise ValueError("frame times must lie in [0, 1]")
        if np.any(self.offsets < 0.0) or np.any(self.offsets > 1.0 / v + 1e-12):
            raise ValueError("offsets must lie within one anchor interval")

    @property
    def frames(self) -> int:
        return len(self.times)

    @property
    def anchors(self) -> np.ndarray:
        return self.anchor_index / self.frames

    @classmethod
    def from_times(cls, times) -> "TimeVector":
        """Attach each time to its preceding anchor i/V."""
        times = np.asarray(times, dtype=np.float64)
        v = len(times)
        idx = np.minimum(np.floor(times * v).astype(np.int64), v - 1)
        return cls(times, idx, times - idx / v)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_times_anchored(config: SamplerConfig, draw: np.random.Generator) -> TimeVector:
    """t_0 = 0 exactly; t_i = i/V + jitter with jitter ~ U[0, 1/V)."""
    v = config.frames
    eps = draw.uniform(0.0, 1.0 / v, size=v)
    eps[0] = 0.0
    times = np.arange(v) / v + eps
    return TimeVector(times, np.arange(v), eps)


def sample_times_legacy(config: SamplerConfig, draw: np.random.Generator) -> TimeVector:
    """Start time ~ U[0, 1/V], then V-1 times i.i.d. uniform on [start, 1],
    sorted. Coincident draws are nudged apart by +1e-6 steps."""
    v = config.frames
    t0 = draw.uniform(0.0, 1.0 / v)
    rest = draw.uniform(t0, 1.0, size=v - 1)
    times = np.sort(np.concatenate(([t0], rest)))
    for i in range(1, v):
        if times[i] <= times[i - 1]:
            times[i] = times[i - 1] + _MIN_STEP
    if times[-1] > 1.0:  # nudges near the top overflowed; push back down
        times[-1] = 1.0
        for i in range(v - 2, -1, -1):
            times[i] = min(times[i], times[i + 1] - _MIN_STEP)
    return TimeVector.from_times(times)


def sample_times(config: SamplerConfig, draw: np.random.Generator | None = None) -> TimeVector:
    if draw is None:
        draw = make_rng(config.seed)
    if config.mode == "anchored":
        return sample_times_anchored(config, draw)
    return sample_times_legacy(config, draw)
