from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from exertion_loop.wheelchair_sim import (
    CARPET,
    MAX_SPEED,
    SLATE,
    ChairParams,
    ChairState,
    HallSensor,
    Surface,
    hall_velocity,
    make_surface,
    quantize_pulses,
    step_dynamics,
)


def test_rest_stays_at_rest():
    s = step_dynamics(ChairState(), ChairParams(), SLATE, 0.0, False, 0.1)
    assert s.velocity == 0.0
    assert s.wheel_angle == 0.0


def test_speed_cap_binds():
    s = step_dynamics(ChairState(velocity=2.5), ChairParams(), SLATE, 1.0, True, 0.1)
    assert s.velocity == MAX_SPEED


def test_rolling_only_step_matches_hand_value():
    # mu*g = 0.5 m/s^2, no drag, no push, motor off
    surface = Surface("slate", 0.5 / 9.81)
    params = ChairParams(drag_coeff=0.0)
    s = step_dynamics(ChairState(velocity=1.0), params, surface, 0.0, False, 0.1)
    assert s.velocity == pytest.approx(0.95, abs=1e-12)


@pytest.mark.parametrize("dt", [0.0, -0.1])
def test_non_positive_dt_rejected(dt):
    with pytest.raises(ValueError):
        step_dynamics(ChairState(), ChairParams(), SLATE, 0.0, False, dt)


@pytest.mark.parametrize("effort", [-0.1, 1.5])
def test_push_effort_range(effort):
    with pytest.raises(ValueError):
        step_dynamics(ChairState(), ChairParams(), SLATE, effort, False, 0.1)


def test_brake_never_reverses():
    s = step_dynamics(ChairState(velocity=0.2), ChairParams(), SLATE, 0.0, False, 0.1, brake_effort=1.0)
    assert s.velocity == 0.0


def test_surface_ordering_and_validation():
    assert CARPET.rolling_resistance_coeff > SLATE.rolling_resistance_coeff > 0
    with pytest.raises(ValueError):
        Surface("slate", 0.0)
    with pytest.raises(ValueError):
        make_surface("carpet", 0.02, 0.01)
    with pytest.raises(ValueError):
        make_surface("grass")


def test_chair_params_validation():
    with pytest.raises(ValueError):
        ChairParams(total_mass=0)
    with pytest.raises(ValueError):
        ChairParams(motor_force=-1)


def test_hall_velocity_examples():
    assert hall_velocity(0, 1.0, 0.3048) == 0.0
    assert hall_velocity(18, 1.0, 0.3048) == pytest.approx(2 * math.pi * 0.3048)
    assert hall_velocity(18, 1.0, 0.3048) == pytest.approx(1.915, abs=5e-4)
    assert hall_velocity(9, 1.0, 0.3048) == pytest.approx(0.9576, abs=5e-5)
    with pytest.raises(ValueError):
        hall_velocity(3, 0.0, 0.3)


def test_quantize_examples():
    assert quantize_pulses(2 * math.pi) == 18
    assert quantize_pulses(0.0) == 0
    assert quantize_pulses(math.pi / 9) == 1
    with pytest.raises(ValueError):
        quantize_pulses(-0.1)


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans(), st.floats(0, 1)), min_size=1, max_size=80),
       st.sampled_from([SLATE, CARPET]))
def test_velocity_stays_in_bounds(actions, surface):
    s = ChairState()
    for push, motor, brake in actions:
        prev_angle = s.wheel_angle
        s = step_dynamics(s, ChairParams(), surface, push, motor, 0.1, brake)
        assert 0.0 <= s.velocity <= MAX_SPEED
        assert s.wheel_angle >= prev_angle


@given(st.floats(0.01, 2.5), st.sampled_from([SLATE, CARPET]))
def test_coasting_decays_to_zero(v0, surface):
    s = ChairState(velocity=v0)
    for _ in range(100_000):
        nxt = step_dynamics(s, ChairParams(), surface, 0.0, False, 0.1)
        assert nxt.velocity <= s.velocity
        s = nxt
        if s.velocity == 0.0:
            break
    assert s.velocity == 0.0


@given(st.lists(st.floats(0.0, 0.7), min_size=1, max_size=400))
def test_pulse_count_carries_remainder(deltas):
    sensor = HallSensor()
    total = sum(sensor.read(d) for d in deltas)
    assert abs(total - sum(deltas) / (2 * math.pi / 18)) <= 1.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
def test_carpet_never_faster_than_slate(pushes):
    a = b = ChairState()
    for p in pushes:
        a = step_dynamics(a, ChairParams(), SLATE, p, False, 0.1)
        b = step_dynamics(b, ChairParams(), CARPET, p, False, 0.1)
    assert b.velocity <= a.velocity + 1e-12
