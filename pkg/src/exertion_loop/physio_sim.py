"""Synthetic wheelchair user: heart rate, fatigue, ECG/EMG traces and push behaviour.

The human is modelled just richly enough for every downstream measure to have
something to detect: a first-order heart-rate response to mechanical work, a
linear fatigue budget, a sum-of-Gaussians ECG whose noise grows with activity,
and EMG bursts whose spectrum slides down as fatigue builds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .wheelchair_sim import ChairParams, ChairState, Surface, resistive_force

ECG_FS = 130
EMG_FS = 20

ACTIVITY_LEVELS = ("low", "medium", "high")
PROMPTS = ("none", "go_slower", "go_faster")


@dataclass(frozen=True)
class HumanParams:
    baseline_hr: float = 70.0
    hr_gain: float = 60.0  # bpm per unit effort demand
    hr_time_constant: float = 30.0  # s
    fatigue_hr_coupling: float = 0.8
    hr_noise_std: float = 0.3  # bpm / sqrt(s)
    fatigue_accum_rate: float = 0.004  # per effort unit per s
    fatigue_recovery_rate: float = 0.001  # per s
    push_cadence: float = 1.0  # pushes / s
    cadence_jitter: float = 0.08  # relative std of the push interval
    effort_noise_std: float = 0.1  # relative
    tracking_gain: float = 0.5  # fraction of the velocity error closed per push
    min_push_effort: float = 0.05
    brake_margin: float = 0.3  # m/s above target before the rider brakes with the hand rims
    fatigue_capacity_loss: float = 0.3
    reference_power: float = 20.0  # W of push work per unit effort demand
    pace_per_setpoint: float = 2.0  # m/s of target speed per unit pre-training setpoint
    activity_medium: float = 0.45  # effort demand thresholds for ECG activity labels
    activity_high: float = 0.9
    emg_amplitude: float = 1.0
    emg_burst_duration: float = 0.4  # s
    emg_fatigue_gain: float = 0.5  # relative amplitude growth at full fatigue
    emg_flip_fresh: float = 0.9  # sign-flip probability of the burst carrier
    emg_flip_fatigued: float = 0.1

    def __post_init__(self):
        for name in ("hr_time_constant", "fatigue_accum_rate", "fatigue_recovery_rate",
                     "push_cadence", "reference_power"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class HumanState:
    heart_rate: float = 70.0
    baseline_hr: float = 70.0
    fatigue: float = 0.0
    rr_phase: float = 0.0


@dataclass(frozen=True)
class PushEvent:
    time: float
    effort: float

    def __post_init__(self):
        if not 0.0 <= self.effort <= 1.0:
            raise ValueError(f"push effort must lie in [0, 1], got {self.effort}")


def _clamp(x, lo, hi):
    return min(max(x, lo), hi)


def step_heart_rate(state: HumanState, effort_demand: float, assist_fraction: float, dt: float,
                    params: HumanParams, rng: np.random.Generator | None = None) -> HumanState:
    """First-order heart-rate response; exact for inputs held constant over ``dt``.

    Passing ``rng=None`` (or ``hr_noise_std=0``) gives the noise-free response.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    assist = _clamp(assist_fraction, 0.0, 1.0)
    target = state.baseline_hr + params.hr_gain * effort_demand * (1.0 - assist) * (
        1.0 + params.fatigue_hr_coupling * state.fatigue)
    decay = math.exp(-dt / params.hr_time_constant)
    hr = target + (state.heart_rate - target) * decay
    if rng is not None and params.hr_noise_std > 0:
        hr += params.hr_noise_std * math.sqrt(dt) * rng.standard_normal()
    return replace(state, heart_rate=_clamp(hr, 40.0, 220.0))


def step_fatigue(state: HumanState, muscular_work: float, dt: float, params: HumanParams) -> HumanState:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if muscular_work < 0:
        raise ValueError("muscular work must be non-negative")
    f = state.fatigue + params.fatigue_accum_rate * muscular_work * dt - params.fatigue_recovery_rate * dt
    return replace(state, fatigue=_clamp(f, 0.0, 1.0))


def push_work(effort: float, velocity: float, chair: ChairParams) -> float:
    """Mechanical work (J) of a push: the kinetic energy it adds to the chair."""
    impulse = chair.push_impulse_gain * effort
    return impulse * (velocity + impulse / (2.0 * chair.total_mass))


def activity_level(effort_demand: float, params: HumanParams) -> str:
    if effort_demand >= params.activity_high:
        return "high"
    if effort_demand >= params.activity_medium:
        return "medium"
    return "low"


# --- ECG -------------------------------------------------------------------

# (phase offset from the R peak, amplitude mV, width in phase units)
_PQRST = (
    (-0.20, 0.15, 0.040),
    (-0.03, -0.12, 0.010),
    (0.00, 1.00, 0.012),
    (0.03, -0.25, 0.012),
    (0.30, 0.30, 0.060),
)

# amplitude scale, baseline-wander amplitude, additive noise std
_ACTIVITY_STYLE = {
    "low": (1.00, 0.05, 0.02),
    "medium": (1.15, 0.15, 0.08),
    "high": (1.30, 0.30, 0.18),
}


def ecg_template(phase: np.ndarray) -> np.ndarray:
    """Noise-free beat shape evaluated at cardiac phase (R peak at phase 0 mod 1)."""
    out = np.zeros_like(phase, dtype=np.float64)
    for center, amp, width in _PQRST:
        d = np.mod(phase - center + 0.5, 1.0) - 0.5
        out += amp * np.exp(-0.5 * (d / width) ** 2)
    return out


def _hr_samples(heart_rate_trace, n: int) -> np.ndarray:
    hr = np.asarray(heart_rate_trace, dtype=np.float64)
    if hr.ndim == 0:
        hr = np.full(n, float(hr))
    if hr.shape != (n,):
        raise ValueError(f"heart-rate trace needs {n} samples, got {hr.shape}")
    if n and np.any(hr <= 0):
        raise ValueError("heart rate must be positive")
    return hr


def ecg_phase_after(heart_rate_trace, fs: float, phase0: float = 0.0) -> float:
    """Cardiac phase reached after the last sample of ``heart_rate_trace``."""
    hr = np.atleast_1d(np.asarray(heart_rate_trace, dtype=np.float64))
    return float(np.mod(phase0 + hr.sum() / 60.0 / fs, 1.0))


def synthesize_ecg(heart_rate_trace, activity_level: str = "low", fs: float = ECG_FS,
                   duration: float | None = None, rng: np.random.Generator | None = None,
                   phase0: float = 0.0, t0: float = 0.0) -> np.ndarray:
    """Render an ECG trace sample by sample from a heart-rate trace.

    ``heart_rate_trace`` is either a scalar (constant rate) or one value per
    output sample. Beat spacing follows 60/HR seconds; ``phase0`` is the cardiac
    phase at the first sample and ``t0`` its time stamp, which keeps consecutive
    chunks continuous. Without ``rng`` the trace is noise-free.
    """
    if fs <= 0:
        raise ValueError(f"sample rate must be positive, got {fs}")
    if activity_level not in _ACTIVITY_STYLE:
        raise ValueError(f"activity level must be one of {ACTIVITY_LEVELS}, got {activity_level!r}")
    if duration is None:
        n = int(np.size(heart_rate_trace))
    else:
        n_float = duration * fs
        n = int(round(n_float))
        if abs(n_float - n) > 1e-9:
            raise ValueError(f"duration*fs must be an integer, got {n_float}")
    if n == 0:
        return np.zeros(0)
    hr = _hr_samples(heart_rate_trace, n)
    increments = hr / 60.0 / fs
    phase = phase0 + np.concatenate(([0.0], np.cumsum(increments[:-1])))
    scale, wander, noise = _ACTIVITY_STYLE[activity_level]
    signal = scale * ecg_template(phase)
    if rng is not None:
        t = t0 + np.arange(n) / fs
        signal = signal + wander * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
        signal = signal + noise * rng.standard_normal(n)
    return signal


# --- EMG -------------------------------------------------------------------

def synthesize_emg(push_events: Sequence[PushEvent], fatigue_trace, fs: float = EMG_FS,
                   duration: float = 0.0, rng: np.random.Generator | None = None,
                   params: HumanParams = HumanParams()) -> np.ndarray:
    """One triceps channel: a burst per push on an otherwise silent trace.

    Each burst carries a random-sign (telegraph) carrier whose sign-flip
    probability drops with fatigue, moving power toward low frequencies; burst
    amplitude scales with push effort and grows with fatigue.
    """
    if fs <= 0:
        raise ValueError("sample rate must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = int(round(duration * fs))
    out = np.zeros(n)
    fatigue = np.atleast_1d(np.asarray(fatigue_trace, dtype=np.float64))
    burst_len = max(1, int(round(params.emg_burst_duration * fs)))
    for ev in push_events:
        if not 0.0 <= ev.time <= duration:
            raise ValueError(f"push event at {ev.time}s lies outside [0, {duration}]")
        start = int(round(ev.time * fs))
        if start >= n:
            continue
        f = float(fatigue[min(int(ev.time), len(fatigue) - 1)]) if fatigue.size else 0.0
        flip = params.emg_flip_fresh - (params.emg_flip_fresh - params.emg_flip_fatigued) * f
        flips = rng.random(burst_len - 1) < flip
        signs = np.concatenate(([1.0], np.where(flips, -1.0, 1.0))).cumprod()
        signs *= 1.0 if rng.random() < 0.5 else -1.0
        amp = params.emg_amplitude * ev.effort * (1.0 + params.emg_fatigue_gain * f)
        stop = min(n, start + burst_len)
        out[start:stop] += amp * signs[:stop - start]
    return out


# --- push behaviour ----------------------------------------------------------

def maintenance_effort(chair: ChairState, chair_params: ChairParams, surface: Surface,
                       params: HumanParams, velocity: float | None = None) -> float:
    """Per-push effort that exactly offsets the net resistance over one push period."""
    v = chair.velocity if velocity is None else velocity
    # resistance felt even when momentarily stopped, so starting from rest needs effort
    drag = resistive_force(max(v, 1e-6), chair_params, surface)
    net = drag - (chair_params.motor_force if chair.motor_on else 0.0)
    if net <= 0 or chair_params.push_impulse_gain == 0:
        return 0.0
    return net / params.push_cadence / chair_params.push_impulse_gain


def zone_target_velocity(profile, prompt: str = "none") -> float:
    """Speed (m/s) the user aims for given the profile's velocity zones and a prompt."""
    if profile is None:
        raise PreconditionError("user profile is not initialized; run pre-training first")
    if prompt not in PROMPTS:
        raise ValueError(f"prompt must be one of {PROMPTS}, got {prompt!r}")
    lo, mid, hi = profile.vel_thresholds
    if prompt == "go_faster":
        target_n = 0.5 * (mid + hi)
    elif prompt == "go_slower":
        target_n = 0.5 * (-abs(hi) + lo)
    else:
        target_n = 0.5 * (lo + mid)
    return max(0.0, profile.vel_mean + profile.vel_std * target_n)


def planned_effort(target_velocity: float, state: HumanState, chair: ChairState,
                   chair_params: ChairParams, surface: Surface, params: HumanParams) -> float:
    """Noise-free effort before the capacity limit: maintenance plus proportional correction."""
    correction = params.tracking_gain * chair_params.total_mass * (target_velocity - chair.velocity)
    correction /= max(chair_params.push_impulse_gain, 1e-12)
    return maintenance_effort(chair, chair_params, surface, params) + correction


def push_toward(target_velocity: float, state: HumanState, chair: ChairState,
                chair_params: ChairParams, surface: Surface, params: HumanParams,
                rng: np.random.Generator | None = None) -> PushEvent | None:
    effort = planned_effort(target_velocity, state, chair, chair_params, surface, params)
    if rng is not None and params.effort_noise_std > 0:
        effort *= 1.0 + params.effort_noise_std * rng.standard_normal()
    capacity = 1.0 - params.fatigue_capacity_loss * state.fatigue
    effort = _clamp(effort, 0.0, capacity)
    if effort < params.min_push_effort:
        return None
    return PushEvent(time=chair.time, effort=effort)


def brake_effort(target_velocity: float, state: HumanState, chair: ChairState,
                 chair_params: ChairParams, params: HumanParams) -> float:
    """Hand-rim braking when the chair runs clearly faster than the rider wants (0 otherwise)."""
    excess = chair.velocity - target_velocity
    if excess <= params.brake_margin:
        return 0.0
    effort = params.tracking_gain * chair_params.total_mass * excess / max(chair_params.push_impulse_gain, 1e-12)
    return _clamp(effort, 0.0, 1.0 - params.fatigue_capacity_loss * state.fatigue)


def user_push_policy(state: HumanState, chair: ChairState, profile, prompt: str = "none",
                     mode: str = "assisted", rng: np.random.Generator | None = None, *,
                     chair_params: ChairParams = ChairParams(), surface: Surface | None = None,
                     params: HumanParams = HumanParams()) -> PushEvent | None:
    """Decide the next push while trying to ride in the moderate velocity zone.

    ``mode`` is accepted for symmetry with the session: the person behaves the
    same with or without assistance and only feels the motor through the chair.
    """
    if mode not in ("assisted", "manual"):
        raise ValueError(f"mode must be 'assisted' or 'manual', got {mode!r}")
    if surface is None:
        raise ValueError("surface is required")
    target = zone_target_velocity(profile, prompt)
    return push_toward(target, state, chair, chair_params, surface, params, rng)


def next_push_interval(params: HumanParams, rng: np.random.Generator | None = None) -> float:
    period = 1.0 / params.push_cadence
    if rng is None or params.cadence_jitter <= 0:
        return period
    return period * _clamp(1.0 + params.cadence_jitter * rng.standard_normal(), 0.5, 1.5)
