"""Longitudinal point-mass model of the wheelchair and its hall-effect speed sensor."""

from __future__ import annotations

import math
from dataclasses import dataclass

GRAVITY = 9.81
MAX_SPEED = 2.5  # m/s, hardware speed limiter
MAGNETS = 18
PULSE_ANGLE = 2.0 * math.pi / MAGNETS


@dataclass(frozen=True)
class Surface:
    name: str
    rolling_resistance_coeff: float

    def __post_init__(self):
        if self.rolling_resistance_coeff <= 0:
            raise ValueError(f"rolling resistance must be positive, got {self.rolling_resistance_coeff}")


SLATE = Surface("slate", 0.010)
CARPET = Surface("carpet", 0.028)


def make_surface(name: str, slate_coeff: float = SLATE.rolling_resistance_coeff,
                 carpet_coeff: float = CARPET.rolling_resistance_coeff) -> Surface:
    if carpet_coeff <= slate_coeff:
        raise ValueError("carpet rolling resistance must exceed slate rolling resistance")
    if name == "slate":
        return Surface("slate", slate_coeff)
    if name == "carpet":
        return Surface("carpet", carpet_coeff)
    raise ValueError(f"unknown surface {name!r}; expected 'slate' or 'carpet'")


@dataclass(frozen=True)
class ChairParams:
    """Chair + occupant constants.

    Parameters
    ----------
    total_mass : float
        Occupant plus chair, kg.
    motor_force : float
        Net tractive force of both motors while ON, N.
    push_impulse_gain : float
        Impulse delivered by one push at full effort, N*s.
    wheel_radius : float
        Rear wheel radius, m (0.3048 m is a 24-inch wheel).
    drag_coeff : float
        Quadratic drag, N/(m/s)^2.
    """

    total_mass: float = 100.0
    motor_force: float = 45.0
    push_impulse_gain: float = 40.0
    wheel_radius: float = 0.3048
    drag_coeff: float = 0.5

    def __post_init__(self):
        for name in ("total_mass", "motor_force", "wheel_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.push_impulse_gain < 0 or self.drag_coeff < 0:
            raise ValueError("push_impulse_gain and drag_coeff must be non-negative")


@dataclass(frozen=True)
class ChairState:
    velocity: float = 0.0
    motor_on: bool = False
    wheel_angle: float = 0.0
    time: float = 0.0


def resistive_force(velocity: float, params: ChairParams, surface: Surface) -> float:
    """Rolling resistance plus drag at ``velocity`` (zero at rest)."""
    if velocity <= 0:
        return 0.0
    return surface.rolling_resistance_coeff * params.total_mass * GRAVITY + params.drag_coeff * velocity**2


def step_dynamics(state: ChairState, params: ChairParams, surface: Surface,
                  push_effort: float, motor_on: bool, dt: float, brake_effort: float = 0.0) -> ChairState:
    """Advance the chair by one explicit Euler step of length ``dt``.

    A non-zero ``push_effort`` is treated as a push event landing in this step,
    i.e. the full impulse ``push_impulse_gain * push_effort`` is delivered within
    ``dt``. The motor can only add force. ``brake_effort`` is the rider gripping
    the hand rims: an impulse of the same scale against the motion, which can
    stop the chair but never reverse it.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not 0.0 <= push_effort <= 1.0:
        raise ValueError(f"push_effort must lie in [0, 1], got {push_effort}")
    if not 0.0 <= brake_effort <= 1.0:
        raise ValueError(f"brake_effort must lie in [0, 1], got {brake_effort}")
    v = state.velocity
    f_push = params.push_impulse_gain * push_effort / dt
    f_motor = params.motor_force if motor_on else 0.0
    f_roll = surface.rolling_resistance_coeff * params.total_mass * GRAVITY * (1.0 if v > 0 else 0.0)
    f_drag = params.drag_coeff * v * v
    f_brake = params.push_impulse_gain * brake_effort / dt if v > 0 else 0.0
    v_new = v + dt * (f_push + f_motor - f_roll - f_drag - f_brake) / params.total_mass
    v_new = min(max(v_new, 0.0), MAX_SPEED)
    angle = state.wheel_angle + 0.5 * (v + v_new) * dt / params.wheel_radius
    return ChairState(velocity=v_new, motor_on=motor_on, wheel_angle=angle, time=state.time + dt)


def quantize_pulses(wheel_angle_delta: float) -> int:
    """Whole magnet passes contained in a rotation of ``wheel_angle_delta`` radians."""
    if wheel_angle_delta < 0:
        raise ValueError(f"wheel angle delta must be non-negative, got {wheel_angle_delta}")
    # tolerate float error so that exactly 2*pi reads as 18 pulses
    return int(math.floor(wheel_angle_delta / PULSE_ANGLE + 1e-9))


def hall_velocity(pulses_in_window: int, window: float, wheel_radius: float) -> float:
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if pulses_in_window < 0:
        raise ValueError("pulse count must be non-negative")
    return (pulses_in_window / MAGNETS) * (2.0 * math.pi * wheel_radius) / window


class HallSensor:
    """Pulse counter that carries the fractional rotation between read-outs."""

    def __init__(self):
        self._angle = 0.0
        self._emitted = 0

    def read(self, wheel_angle_delta: float) -> int:
        if wheel_angle_delta < 0:
            raise ValueError("wheel angle delta must be non-negative")
        self._angle += wheel_angle_delta
        total = quantize_pulses(self._angle)
        pulses = total - self._emitted
        self._emitted = total
        return pulses

    @property
    def total_pulses(self) -> int:
        return self._emitted

