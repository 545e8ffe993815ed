"""Evaluation measures: contraction counts, KDE, zone occupancy and EMG mean frequency."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateDensityError, SilentSignalError
from .reward import ZONES, ZoneLabel, zone_of


@dataclass(frozen=True)
class SignalTrace:
    sample_rate: float
    samples: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        arr = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal contains non-finite samples")
        object.__setattr__(self, "samples", arr)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _samples(trace) -> np.ndarray:
    if isinstance(trace, SignalTrace):
        return trace.samples
    return np.asarray(trace, dtype=np.float64)


def rms(x) -> float:
    x = _samples(x)
    return float(np.sqrt(np.mean(x * x)))


def count_contractions(emg) -> int:
    """Number of maximal runs where |EMG| strictly exceeds the whole-trace RMS."""
    x = _samples(emg)
    if x.size == 0:
        raise ValueError("cannot count contractions on an empty trace")
    above = np.abs(x) > rms(x)
    # a run starts wherever `above` switches on
    return int(above[0]) + int(np.count_nonzero(above[1:] & ~above[:-1]))


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    return 1.06 * float(np.std(x, ddof=1)) * len(x) ** (-1 / 5)


class GaussianKDE:
    """Gaussian kernel density estimate; Silverman's rule when no bandwidth is given."""

    def __init__(self, samples, bandwidth: float | None = None):
        self.samples = np.asarray(samples, dtype=np.float64).ravel()
        if self.samples.size < 2:
            raise DegenerateDensityError("density estimation needs at least 2 samples")
        if bandwidth is None:
            if np.ptp(self.samples) == 0:
                raise DegenerateDensityError("samples have zero variance; bandwidth is undefined")
            bandwidth = silverman_bandwidth(self.samples)
        if bandwidth <= 0:
            raise DegenerateDensityError(f"bandwidth must be positive, got {bandwidth}")
        self.bandwidth = float(bandwidth)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        u = (x[..., None] - self.samples) / self.bandwidth
        dens = np.exp(-0.5 * u * u).sum(axis=-1) / (math.sqrt(2 * math.pi) * self.samples.size * self.bandwidth)
        return float(dens) if dens.ndim == 0 else dens


def kde_density(samples, bandwidth: float | str | None = "auto") -> GaussianKDE:
    if isinstance(bandwidth, str):
        if bandwidth not in ("auto", "silverman"):
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        bandwidth = None
    return GaussianKDE(samples, bandwidth)


def zone_occupancy(series_n: Iterable[float], thresholds: tuple[float, float, float]) -> dict[ZoneLabel, Fraction]:
    """Exact fraction of samples falling in each zone."""
    values = list(series_n)
    if not values:
        raise ValueError("zone occupancy of an empty series is undefined")
    counts = {z: 0 for z in ZONES}
    for v in values:
        counts[zone_of(v, thresholds)] += 1
    return {z: Fraction(c, len(values)) for z, c in counts.items()}


def mean_frequency(segment, fs: float) -> float:
    """Power-weighted mean frequency of the one-sided spectrum, DC excluded.

    Returns NaN when the segment has no power outside DC.
    """
    x = np.asarray(segment, dtype=np.float64)
    n = x.size
    psd = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    power = psd.copy()
    # one-sided: interior bins carry both +f and -f
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0
    p, f = power[1:], freqs[1:]
    total = p.sum()
    if total <= 1e-12 * max(psd[0], 1.0) or total == 0:
        return float("nan")
    return float((f * p).sum() / total)


@dataclass
class MnfTrend:
    segment_mnf: np.ndarray
    fit_slope: float
    fit_intercept: float
    normalized: np.ndarray
    degenerate: list[int] = field(default_factory=list)


def mnf_series(emg: SignalTrace, window: float = 10.0) -> MnfTrend:
    """Mean frequency per consecutive ``window``-second segment with a least-squares trend.

    Segments without any non-DC power are reported in ``degenerate`` and left
    out of the fit; if every segment is degenerate :class:`SilentSignalError` is raised.
    """
    fs = emg.sample_rate
    seg_len = window * fs
    n_seg_f = len(emg.samples) / seg_len
    if abs(seg_len - round(seg_len)) > 1e-9 or abs(n_seg_f - round(n_seg_f)) > 1e-9 or round(n_seg_f) == 0:
        raise ValueError(f"trace of {emg.duration:g}s is not a whole number of {window:g}s segments")
    seg_len = int(round(seg_len))
    segments = emg.samples.reshape(-1, seg_len)
    mnf = np.array([mean_frequency(s, fs) for s in segments])
    ok = np.isfinite(mnf)
    degenerate = [int(i) for i in np.flatnonzero(~ok)]
    if not ok.any():
        raise SilentSignalError("no segment carries non-DC power; mean frequency is undefined")
    idx = np.arange(len(mnf), dtype=np.float64)
    if ok.sum() >= 2:
        slope, intercept = np.polyfit(idx[ok], mnf[ok], 1)
    else:
        slope, intercept = 0.0, float(mnf[ok][0])
    first = mnf[ok][0]
    return MnfTrend(segment_mnf=mnf, fit_slope=float(slope), fit_intercept=float(intercept),
                    normalized=100.0 * mnf / first, degenerate=degenerate)


def linear_slope(values: Sequence[float]) -> float:
    y = np.asarray(values, dtype=np.float64)
    return float(np.polyfit(np.arange(len(y), dtype=np.float64), y, 1)[0])


def moving_average(x, fs: float, window_s: float = 5.0) -> np.ndarray:
    """Rectified moving average for display (trailing edge is shorter, never padded)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    w = max(1, int(round(window_s * fs)))
    c = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - w, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def contraction_rate_scatter(pairs) -> list[dict]:
    """Contractions per minute against mean heart rate for assisted/manual test pairs.

    ``pairs`` yields ``(user, assisted_log, manual_log)``; each log must provide
    an ``emg`` trace and per-second ``hr`` records.
    """
    rows = []
    for user, assisted, manual in pairs:
        durations = {assisted.traces["emg"].duration, manual.traces["emg"].duration}
        if len(durations) != 1:
            raise ValueError(f"user {user}: assisted and manual logs cover different durations")
        for mode, log in (("assisted", assisted), ("manual", manual)):
            emg = log.traces["emg"]
            minutes = emg.duration / 60.0
            hr = [r["hr"] for r in log.seconds]
            rows.append({
                "user": user,
                "mode": mode,
                "contractions_per_min": count_contractions(emg) / minutes if minutes > 0 else 0.0,
                "mean_hr": float(np.mean(hr)) if hr else float("nan"),
            })
    return rows
