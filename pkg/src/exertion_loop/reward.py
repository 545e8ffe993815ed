"""Per-user exertion zones from pre-training and the assistance reward."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateProfileError
from .wheelchair_sim import MAX_SPEED

INTENTS = ("low", "moderate", "high")


class ZoneLabel(str, Enum):
    EXTREME_LOW = "extreme_low"
    TRANSITION_LOW = "transition_low"
    MODERATE = "moderate"
    TRANSITION_HIGH = "transition_high"
    EXTREME_HIGH = "extreme_high"


ZONES = tuple(ZoneLabel)


@dataclass(frozen=True)
class UserProfile:
    """Normalization statistics and zone thresholds for one user.

    Thresholds live in z-score space. For each signal family the ordering is
    ``lambda2 < lambda3 < lambda1``: lower edge of the moderate zone, upper edge
    of the moderate zone, upper edge of the transition zone.
    """

    hr_mean: float
    hr_std: float
    vel_mean: float
    vel_std: float
    hr_min: float
    hr_max: float
    lambda1_v: float
    lambda2_v: float
    lambda3_v: float
    lambda1_h: float
    lambda2_h: float
    lambda3_h: float
    vel_cv: float

    def __post_init__(self):
        if not (self.hr_std > 0 and self.vel_std > 0):
            raise DegenerateProfileError("profile standard deviations must be positive")
        if not (self.lambda2_v < self.lambda3_v < self.lambda1_v):
            raise DegenerateProfileError("velocity thresholds must satisfy lambda2 < lambda3 < lambda1")
        if not (self.lambda2_h < self.lambda3_h < self.lambda1_h):
            raise DegenerateProfileError("heart-rate thresholds must satisfy lambda2 < lambda3 < lambda1")

    @property
    def vel_thresholds(self) -> tuple[float, float, float]:
        return self.lambda2_v, self.lambda3_v, self.lambda1_v

    @property
    def hr_thresholds(self) -> tuple[float, float, float]:
        return self.lambda2_h, self.lambda3_h, self.lambda1_h

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "UserProfile":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**{k: float(data[k]) for k in names})

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "UserProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ProfileConfig:
    low_percentile: float = 10.0  # of the low-intent interval -> lambda2
    moderate_percentile: float = 90.0  # of the moderate interval -> lambda3
    high_percentile: float = 95.0  # of the high-intent interval -> lambda1
    min_separation: float = 0.1


def normalize(hr: float, vel: float, profile: UserProfile) -> tuple[float, float]:
    return (hr - profile.hr_mean) / profile.hr_std, (vel - profile.vel_mean) / profile.vel_std


def _ordered_thresholds(low: float, mid: float, high: float, delta: float) -> tuple[float, float, float]:
    # lambda2 must stay negative for the |value| - |lambda2| distance to make sense
    low = min(low, -delta)
    mid = max(mid, low + delta)
    high = max(high, mid + delta)
    return low, mid, high


def profile_from_intervals(hr: Mapping[str, Sequence[float]], vel: Mapping[str, Sequence[float]],
                           config: ProfileConfig = ProfileConfig()) -> UserProfile:
    """Build a profile from per-second heart rate / speed of the three intents."""
    missing = [k for k in INTENTS if k not in hr or k not in vel or len(hr[k]) == 0 or len(vel[k]) == 0]
    if missing:
        raise DegenerateProfileError(f"pre-training log lacks intervals: {missing}")
    hr_all = np.concatenate([np.asarray(hr[k], dtype=np.float64) for k in INTENTS])
    vel_all = np.concatenate([np.asarray(vel[k], dtype=np.float64) for k in INTENTS])
    hr_mean, hr_std = float(hr_all.mean()), float(hr_all.std())
    vel_mean, vel_std = float(vel_all.mean()), float(vel_all.std())
    if hr_std <= 1e-9:
        raise DegenerateProfileError("heart rate has zero variance over pre-training")
    if vel_std <= 1e-9:
        raise DegenerateProfileError("velocity has zero variance over pre-training")

    def lambdas(series, mean, std):
        low = (np.percentile(series["low"], config.low_percentile) - mean) / std
        mid = (np.percentile(series["moderate"], config.moderate_percentile) - mean) / std
        high = (np.percentile(series["high"], config.high_percentile) - mean) / std
        return _ordered_thresholds(float(low), float(mid), float(high), config.min_separation)

    l2v, l3v, l1v = lambdas(vel, vel_mean, vel_std)
    l2h, l3h, l1h = lambdas(hr, hr_mean, hr_std)
    return UserProfile(
        hr_mean=hr_mean, hr_std=hr_std, vel_mean=vel_mean, vel_std=vel_std,
        hr_min=float(hr_all.min()), hr_max=float(hr_all.max()),
        lambda1_v=l1v, lambda2_v=l2v, lambda3_v=l3v,
        lambda1_h=l1h, lambda2_h=l2h, lambda3_h=l3h,
        vel_cv=(MAX_SPEED - vel_mean) / vel_std,
    )


def compute_profile(pretrain_log, config: ProfileConfig = ProfileConfig()) -> UserProfile:
    """Profile from a pre-training log whose second records carry an ``interval`` intent."""
    hr: dict[str, list[float]] = {k: [] for k in INTENTS}
    vel: dict[str, list[float]] = {k: [] for k in INTENTS}
    for rec in pretrain_log.seconds:
        intent = rec.get("interval")
        if intent in hr:
            hr[intent].append(rec["hr"])
            vel[intent].append(rec["vel"])
    return profile_from_intervals(hr, vel, config)


def _distance(value: float, lam3: float, lam2: float) -> float:
    dist = max(0.0, value - lam3)
    if value < 0:
        dist = max(0.0, abs(value) - abs(lam2))
    return dist


def is_failure(hr_n: float, vel_n: float, profile: UserProfile) -> bool:
    # vel_cv marks the speed limiter; equality is read as "at or beyond"
    return (vel_n > profile.lambda1_v or vel_n >= profile.vel_cv
            or hr_n < profile.lambda2_h or hr_n > profile.lambda1_h)


def reward(hr_n: float, vel_n: float, action: int, profile: UserProfile) -> tuple[float, bool]:
    """Reward for one agent step, plus whether the episode failed."""
    vel_dist = _distance(vel_n, profile.lambda3_v, profile.lambda2_v)
    heart_dist = _distance(hr_n, profile.lambda3_h, profile.lambda2_h)

    r = -1.0 + 0.5 * math.exp(-3.0 * heart_dist) + 0.5 * math.exp(-2.0 * vel_dist)
    if is_failure(hr_n, vel_n, profile):
        return -1.2, True
    if profile.lambda2_h < hr_n <= profile.lambda3_h and vel_n > profile.lambda2_v:
        if action == 1 and vel_n > profile.lambda3_v:
            r = -1.0 + math.exp(-(1.8 * vel_dist + 2.5 * heart_dist))
        else:
            r = 0.6 * math.exp(-2.0 * heart_dist) + 0.6 * math.exp(-2.0 * vel_dist)
    elif profile.lambda3_h < hr_n < profile.lambda1_h and vel_n < profile.lambda3_v:
        r = -1.4 + 0.5 * math.exp(-3.0 * heart_dist) + 0.5 * math.exp(-2.0 * vel_dist)
    return r, False


def zone_of(value_n: float, thresholds: tuple[float, float, float]) -> ZoneLabel:
    """Zone of a normalized value given ``(lambda2, lambda3, lambda1)``."""
    lam2, lam3, lam1 = thresholds
    if not lam2 < lam3 < lam1:
        raise ValueError(f"thresholds must satisfy lambda2 < lambda3 < lambda1, got {thresholds}")
    if value_n <= -abs(lam1):
        return ZoneLabel.EXTREME_LOW
    if value_n <= lam2:
        return ZoneLabel.TRANSITION_LOW
    if value_n <= lam3:
        return ZoneLabel.MODERATE
    if value_n < lam1:
        return ZoneLabel.TRANSITION_HIGH
    return ZoneLabel.EXTREME_HIGH
