"""Three-phase protocol: pre-training, agent training with prompts, paired tests.

A :class:`Simulation` owns one simulated user sitting in one chair. It advances
at 10 Hz sub-steps, exposes 1 Hz sensor frames and keeps running across phases
(the person does not reset between episodes or phases).
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import physio_sim as ps
from .analysis import SignalTrace
from .dqn_agent import DQNAgent, Transition
from .ecg_encoder import WINDOW_LENGTH, EncoderModel, encode
from .errors import DataError, PreconditionError
from .reward import ProfileConfig, UserProfile, compute_profile, normalize, reward, zone_of
from .wheelchair_sim import SLATE, ChairParams, ChairState, HallSensor, Surface, hall_velocity, step_dynamics

log = logging.getLogger(__name__)

MODES = ("assisted", "manual")
_ECG_PER_SECOND = ps.ECG_FS


@dataclass(frozen=True)
class ProtocolConfig:
    pretrain_interval: float = 45.0
    pretrain_setpoints: tuple[float, float, float] = (0.3, 0.6, 0.9)
    train_episodes: int = 30
    train_timesteps: int = 20
    timestep: float = 2.0
    substep_hz: int = 10
    prompt_slow_episode: int = 15
    prompt_fast_episode: int = 25
    prompt_duration: int = 1  # episodes a prompt stays in force
    test_episodes: int = 5
    test_timesteps: int = 30
    test_rest: float = 300.0  # s of seated rest between training and each test
    train_surface: str = "slate"
    surfaces: tuple[str, ...] = ("slate", "carpet")
    mode: str = "assisted"

    def __post_init__(self):
        for name in ("prompt_slow_episode", "prompt_fast_episode"):
            ep = getattr(self, name)
            if not 1 <= ep <= self.train_episodes:
                raise ValueError(f"{name}={ep} must lie within [1, {self.train_episodes}]")
        if self.timestep <= 0 or abs(self.timestep - round(self.timestep)) > 1e-9:
            raise ValueError(f"timestep must be a whole number of 1 s frames, got {self.timestep}")
        if self.substep_hz <= 0 or _ECG_PER_SECOND % self.substep_hz:
            raise ValueError(f"substep rate {self.substep_hz} Hz must divide the ECG rate")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.pretrain_interval <= 0 or self.pretrain_interval != int(self.pretrain_interval):
            raise ValueError("pretrain_interval must be a positive whole number of seconds")

    @property
    def frames_per_step(self) -> int:
        return int(round(self.timestep))

    def prompt_for(self, episode: int) -> str:
        if self.prompt_slow_episode <= episode < self.prompt_slow_episode + self.prompt_duration:
            return "go_slower"
        if self.prompt_fast_episode <= episode < self.prompt_fast_episode + self.prompt_duration:
            return "go_faster"
        return "none"


@dataclass
class Frame:
    """One second of sensor readings."""

    time: float  # end of the second, session clock
    hr: float
    vel: float
    motor_on: bool
    pushes: list[tuple[float, float]]
    fatigue: float
    exertion: float
    ecg_window: np.ndarray
    warmup: bool
    embedding: np.ndarray | None = None


class Simulation:
    """One user + chair advancing on a shared clock."""

    def __init__(self, chair_params: ChairParams = ChairParams(), human: ps.HumanParams = ps.HumanParams(),
                 surface: Surface = SLATE, seed: int = 0, substep_hz: int = 10):
        self.chair_params = chair_params
        self.human_params = human
        self.surface = surface
        self.substep_hz = substep_hz
        self.chair = ChairState()
        self.human = ps.HumanState(heart_rate=human.baseline_hr, baseline_hr=human.baseline_hr)
        self.hall = HallSensor()
        self.ticks = 0
        self.next_push_tick = 0
        self._motor_hist: list[bool] = []
        self._ecg = np.zeros(0)
        self.frames: list[Frame] = []
        self.reseed(seed)
        self._recording: dict | None = None

    def reseed(self, *key: int) -> None:
        streams = np.random.SeedSequence(list(key)).spawn(4)
        self.rng_push, self.rng_hr, self.rng_ecg, self.rng_emg = (np.random.default_rng(s) for s in streams)

    @property
    def time(self) -> float:
        return self.ticks / self.substep_hz

    # -- recording of raw traces for one phase ---------------------------------

    def start_recording(self) -> None:
        self._recording = {"start": self.time, "pushes": [], "fatigue": [], "ecg": []}

    def stop_recording(self) -> dict[str, SignalTrace]:
        rec = self._recording
        if rec is None:
            raise PreconditionError("stop_recording() without start_recording()")
        self._recording = None
        duration = self.time - rec["start"]
        events = [ps.PushEvent(t, e) for t, e in rec["pushes"]]
        emg = ps.synthesize_emg(events, rec["fatigue"], ps.EMG_FS, duration, self.rng_emg, self.human_params)
        ecg = np.concatenate(rec["ecg"]) if rec["ecg"] else np.zeros(0)
        return {
            "ecg": SignalTrace(ps.ECG_FS, ecg, rec["start"]),
            "emg": SignalTrace(ps.EMG_FS, emg, rec["start"]),
        }

    # -- stepping --------------------------------------------------------------

    def second(self, motor_on: bool, target_velocity: float | None) -> Frame:
        """Advance one second holding the motor state; ``target_velocity=None`` means no pushing."""
        hp, cp = self.human_params, self.chair_params
        dt = 1.0 / self.substep_hz
        per_sub = _ECG_PER_SECOND // self.substep_hz
        angle0 = self.chair.wheel_angle
        hr_samples = np.empty(_ECG_PER_SECOND)
        pushes = []
        for k in range(self.substep_hz):
            effort = brake = 0.0
            if target_velocity is not None and self.ticks >= self.next_push_tick:
                chair_now = replace(self.chair, motor_on=motor_on, time=self.time)
                ev = ps.push_toward(target_velocity, self.human, chair_now, cp, self.surface, hp, self.rng_push)
                interval = ps.next_push_interval(hp, self.rng_push)
                self.next_push_tick = self.ticks + max(1, int(round(interval * self.substep_hz)))
                if ev is not None:
                    effort = ev.effort
                    pushes.append((self.time, effort))
                    if self._recording is not None:
                        self._recording["pushes"].append((self.time - self._recording["start"], effort))
                else:
                    brake = ps.brake_effort(target_velocity, self.human, chair_now, cp, hp)
            elif target_velocity is None:
                self.next_push_tick = self.ticks + 1
            work = ps.push_work(effort, self.chair.velocity, cp) if effort > 0 else 0.0
            self.chair = step_dynamics(self.chair, cp, self.surface, effort, motor_on, dt, brake)
            self._motor_hist.append(motor_on)
            del self._motor_hist[:-self.substep_hz]
            assist = sum(self._motor_hist) / len(self._motor_hist)
            demand = work / (hp.reference_power * dt)
            self.human = ps.step_heart_rate(self.human, demand, assist, dt, hp, self.rng_hr)
            self.human = ps.step_fatigue(self.human, demand, dt, hp)
            hr_samples[k * per_sub:(k + 1) * per_sub] = self.human.heart_rate
            self.ticks += 1

        exertion = max(0.0, (self.human.heart_rate - self.human.baseline_hr) / hp.hr_gain)
        level = ps.activity_level(exertion, hp)
        t_start = self.time - 1.0
        chunk = ps.synthesize_ecg(hr_samples, level, ps.ECG_FS, rng=self.rng_ecg,
                                  phase0=self.human.rr_phase, t0=t_start)
        self.human = replace(self.human, rr_phase=ps.ecg_phase_after(hr_samples, ps.ECG_FS, self.human.rr_phase))
        self._ecg = np.concatenate([self._ecg, chunk])[-WINDOW_LENGTH:]
        warmup = self._ecg.size < WINDOW_LENGTH
        window = self._ecg if not warmup else np.pad(self._ecg, (WINDOW_LENGTH - self._ecg.size, 0), mode="edge")

        pulses = self.hall.read(self.chair.wheel_angle - angle0)
        frame = Frame(
            time=self.time, hr=float(self.human.heart_rate),
            vel=hall_velocity(pulses, 1.0, cp.wheel_radius), motor_on=bool(motor_on),
            pushes=pushes, fatigue=float(self.human.fatigue), exertion=exertion,
            ecg_window=window.copy(), warmup=warmup,
        )
        if self._recording is not None:
            self._recording["fatigue"].append(frame.fatigue)
            self._recording["ecg"].append(chunk)
        self.frames.append(frame)
        del self.frames[:-2]
        return frame

    def snapshot(self) -> dict:
        """JSON-safe state of user and chair (noise streams are reseeded on restore)."""
        return {
            "chair": {"velocity": self.chair.velocity, "motor_on": self.chair.motor_on,
                      "wheel_angle": self.chair.wheel_angle, "time": self.chair.time},
            "human": {"heart_rate": self.human.heart_rate, "baseline_hr": self.human.baseline_hr,
                      "fatigue": self.human.fatigue, "rr_phase": self.human.rr_phase},
            "hall_angle": self.hall._angle, "hall_pulses": self.hall._emitted,
            "ticks": self.ticks, "next_push_tick": self.next_push_tick,
            "motor_hist": list(self._motor_hist), "ecg": self._ecg.tolist(),
            "frames": [{"time": f.time, "hr": f.hr, "vel": f.vel, "motor_on": f.motor_on,
                        "pushes": [list(p) for p in f.pushes], "fatigue": f.fatigue, "exertion": f.exertion,
                        "ecg_window": f.ecg_window.tolist(), "warmup": f.warmup} for f in self.frames],
        }

    @classmethod
    def restore(cls, snap: dict, chair_params: ChairParams, human: ps.HumanParams, surface: Surface,
                substep_hz: int = 10) -> "Simulation":
        sim = cls(chair_params, human, surface, 0, substep_hz)
        sim.chair = ChairState(**snap["chair"])
        sim.human = ps.HumanState(**snap["human"])
        sim.hall._angle = snap["hall_angle"]
        sim.hall._emitted = snap["hall_pulses"]
        sim.ticks, sim.next_push_tick = snap["ticks"], snap["next_push_tick"]
        sim._motor_hist = [bool(m) for m in snap["motor_hist"]]
        sim._ecg = np.asarray(snap["ecg"], dtype=np.float64)
        sim.frames = [Frame(**dict(f, pushes=[tuple(p) for p in f["pushes"]],
                                   ecg_window=np.asarray(f["ecg_window"], dtype=np.float64)))
                      for f in snap["frames"]]
        return sim

    def rest(self, seconds: float) -> None:
        """Sit still with the motor off; heart rate and fatigue recover, the chair rolls to a stop."""
        for _ in range(int(round(seconds))):
            self.second(False, None)


# -- logs ------------------------------------------------------------------------

def _r(x: float, nd: int = 6) -> float:
    return round(float(x), nd)


@dataclass
class EpisodeLog:
    """Per-second and per-timestep records of one phase plus raw traces.

    JSONL schema: a ``meta`` line first, then ``second`` and ``step`` records
    in time order. Traces are written next to it as ``<stem>_<name>.csv`` with
    ``time,value`` rows.
    """

    phase: str
    meta: dict = field(default_factory=dict)
    seconds: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    traces: dict[str, SignalTrace] = field(default_factory=dict)
    _order: list[str] = field(default_factory=list, repr=False)

    def add_second(self, rec: dict) -> None:
        if self.seconds and rec["t"] <= self.seconds[-1]["t"]:
            raise DataError(f"second records must have strictly increasing time ({rec['t']})")
        self.seconds.append(rec)
        self._order.append("second")

    def add_step(self, rec: dict) -> None:
        self.steps.append(rec)
        self._order.append("step")

    def records(self):
        it_s, it_t = iter(self.seconds), iter(self.steps)
        for kind in self._order:
            yield next(it_s) if kind == "second" else next(it_t)

    def write(self, directory, stem: str | None = None) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.phase
        paths = {"log": directory / f"{stem}.jsonl"}
        for name in sorted(self.traces):
            paths[name] = directory / f"{stem}_{name}.csv"
        meta = dict(self.meta, record="meta", phase=self.phase,
                    traces={n: paths[n].name for n in sorted(self.traces)},
                    sample_rates={n: self.traces[n].sample_rate for n in sorted(self.traces)})
        with open(paths["log"], "w") as fh:
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for name in sorted(self.traces):
            tr = self.traces[name]
            t = tr.start_time + np.arange(len(tr.samples)) / tr.sample_rate
            with open(paths[name], "w") as fh:
                fh.write("time,value\n")
                fh.writelines(f"{a:.6f},{b:.6f}\n" for a, b in zip(t, tr.samples))
        return paths

    @classmethod
    def read(cls, path) -> "EpisodeLog":
        path = Path(path)
        out = None
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                try:
                    rec = json.loads(line)
                    kind = rec["record"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: corrupt log record ({exc})") from None
                if out is None:
                    if kind != "meta":
                        raise DataError(f"{path}:{lineno}: first record must be 'meta'")
                    meta = {k: v for k, v in rec.items() if k not in ("record", "phase")}
                    out = cls(phase=rec.get("phase", "unknown"), meta=meta)
                elif kind == "second":
                    out.add_second(rec)
                elif kind == "step":
                    out.add_step(rec)
                else:
                    raise DataError(f"{path}:{lineno}: unknown record type {kind!r}")
        if out is None:
            raise DataError(f"{path}: empty log")
        rates = out.meta.get("sample_rates", {})
        for name, fname in out.meta.get("traces", {}).items():
            data = np.loadtxt(path.parent / fname, delimiter=",", skiprows=1, ndmin=2)
            start = float(data[0, 0]) if len(data) else 0.0
            out.traces[name] = SignalTrace(rates[name], data[:, 1] if len(data) else np.zeros(0), start)
        return out


def _second_record(frame: Frame, phase: str, profile: UserProfile | None, **extra) -> dict:
    rec = {
        "record": "second", "phase": phase, "t": _r(frame.time, 3), "hr": _r(frame.hr), "vel": _r(frame.vel),
        "motor_on": frame.motor_on, "pushes": [[_r(t, 3), _r(e)] for t, e in frame.pushes],
        "fatigue": _r(frame.fatigue), "warmup": frame.warmup,
    }
    if profile is not None:
        hr_n, vel_n = normalize(frame.hr, frame.vel, profile)
        rec["hr_zone"] = zone_of(hr_n, profile.hr_thresholds).value
        rec["vel_zone"] = zone_of(vel_n, profile.vel_thresholds).value
    rec.update(extra)
    return rec


# -- observations ----------------------------------------------------------------

def embed_frames(frames: list[Frame], encoder: EncoderModel) -> None:
    todo = [f for f in frames if f.embedding is None]
    if todo:
        z = encode(encoder, np.stack([f.ecg_window for f in todo]))
        for f, row in zip(todo, z):
            f.embedding = np.asarray(row, dtype=np.float64)


def compose_observation(frames: list[Frame], encoder: EncoderModel, profile: UserProfile) -> tuple[np.ndarray, bool]:
    """Stack the two most recent frames into a 22-value observation.

    Per frame: normalized heart rate, normalized velocity, motor state during
    that second, 8-value ECG embedding. Older frame first. With fewer than two
    frames the earliest one is repeated and the result is flagged as warm-up.
    """
    if not frames:
        raise PreconditionError("no sensor frames yet")
    frames = list(frames[-2:])
    warmup = len(frames) < 2 or any(f.warmup for f in frames)
    if len(frames) < 2:
        frames = [frames[0], frames[0]]
    embed_frames(frames, encoder)
    parts = []
    for f in frames:
        hr_n, vel_n = normalize(f.hr, f.vel, profile)
        parts.append(np.concatenate(([hr_n, vel_n, float(f.motor_on)], f.embedding)))
    return np.concatenate(parts), warmup


# -- phases ------------------------------------------------------------------------

def run_pretraining(sim: Simulation, protocol: ProtocolConfig = ProtocolConfig(),
                    profile_config: ProfileConfig = ProfileConfig()) -> tuple[UserProfile, EpisodeLog]:
    """Three consecutive intervals (low, moderate, high intent) with the motor off."""
    log_ = EpisodeLog("pretrain", meta={"surface": sim.surface.name})
    sim.start_recording()
    frames = []
    pace = sim.human_params.pace_per_setpoint
    for intent, setpoint in zip(("low", "moderate", "high"), protocol.pretrain_setpoints):
        for _ in range(int(protocol.pretrain_interval)):
            frames.append((intent, sim.second(False, pace * setpoint)))
    log_.traces = sim.stop_recording()
    profile = compute_profile(_IntervalView(frames), profile_config)
    for intent, frame in frames:
        log_.add_second(_second_record(frame, "pretrain", profile, interval=intent))
    return profile, log_


@dataclass
class _IntervalView:
    frames: list

    @property
    def seconds(self):
        return [{"interval": i, "hr": f.hr, "vel": f.vel} for i, f in self.frames]


def _step_record(phase, episode, step, t, obs, action, r, failed, eps, loss, **extra) -> dict:
    rec = {
        "record": "step", "phase": phase, "episode": episode, "step": step, "t": _r(t, 3),
        "observation": None if obs is None else [_r(v) for v in obs],
        "action": int(action), "reward": _r(r, 9), "failed": bool(failed),
        "epsilon": None if eps is None else _r(eps, 9), "loss": None if loss is None else _r(loss, 9),
    }
    rec.update(extra)
    return rec


def run_training(sim: Simulation, encoder: EncoderModel, agent: DQNAgent, profile: UserProfile,
                 protocol: ProtocolConfig = ProtocolConfig()) -> tuple[DQNAgent, EpisodeLog]:
    """Online DQN training with prompts; an episode stops early on failure."""
    if profile is None:
        raise PreconditionError("training needs a user profile; run pre-training first")
    if not encoder.frozen or encoder.has_head:
        raise PreconditionError("training needs a frozen, stripped encoder")
    log_ = EpisodeLog("train", meta={"surface": sim.surface.name, "episodes": protocol.train_episodes})
    sim.start_recording()
    if not sim.frames:
        sim.second(False, None)
    obs, warm = compose_observation(sim.frames, encoder, profile)
    for episode in range(1, protocol.train_episodes + 1):
        prompt = protocol.prompt_for(episode)
        target = ps.zone_target_velocity(profile, prompt)
        for step in range(1, protocol.train_timesteps + 1):
            eps = agent.epsilon()
            action = agent.act(obs, eps)
            frames = [sim.second(bool(action), target) for _ in range(protocol.frames_per_step)]
            next_obs, next_warm = compose_observation(sim.frames, encoder, profile)
            hr_n, vel_n = normalize(frames[-1].hr, frames[-1].vel, profile)
            r, failed = reward(hr_n, vel_n, action, profile)
            loss = agent.observe(Transition(obs, action, r, next_obs, failed))
            for f in frames:
                log_.add_second(_second_record(f, "train", profile, episode=episode, prompt=prompt))
            log_.add_step(_step_record("train", episode, step, frames[-1].time, obs, action, r, failed,
                                       eps, loss, warmup=warm))
            obs, warm = next_obs, next_warm
            if failed:
                break
    log_.traces = sim.stop_recording()
    return agent, log_


def run_test(sim: Simulation, encoder: EncoderModel | None, agent: DQNAgent | None, profile: UserProfile,
             surface: Surface, mode: str = "assisted", protocol: ProtocolConfig = ProtocolConfig()) -> EpisodeLog:
    """Greedy (or manual) test on ``surface``; no learning, no early termination."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "assisted" and (agent is None or encoder is None):
        raise PreconditionError("assisted test needs a trained agent and an encoder")
    sim.surface = surface
    log_ = EpisodeLog("test", meta={"surface": surface.name, "mode": mode,
                                    "rolling_resistance_coeff": surface.rolling_resistance_coeff})
    target = ps.zone_target_velocity(profile, "none")
    sim.start_recording()
    obs = warm = None
    if mode == "assisted":
        obs, warm = compose_observation(sim.frames, encoder, profile)
    for episode in range(1, protocol.test_episodes + 1):
        for step in range(1, protocol.test_timesteps + 1):
            action = agent.act(obs, 0.0) if mode == "assisted" else 0
            frames = [sim.second(bool(action), target) for _ in range(protocol.frames_per_step)]
            hr_n, vel_n = normalize(frames[-1].hr, frames[-1].vel, profile)
            r, failed = reward(hr_n, vel_n, action, profile)
            for f in frames:
                log_.add_second(_second_record(f, "test", profile, episode=episode))
            log_.add_step(_step_record("test", episode, step, frames[-1].time, obs, action, r, failed,
                                       0.0 if mode == "assisted" else None, None, warmup=warm))
            if mode == "assisted":
                obs, warm = compose_observation(sim.frames, encoder, profile)
    log_.traces = sim.stop_recording()
    return log_


def test_pair_seed(seed: int, surface: str) -> tuple[int, int]:
    """Noise-stream key shared by the assisted and manual runs of one surface."""
    names = ("slate", "carpet")
    return seed, 1 + (names.index(surface) if surface in names else len(names))


@dataclass
class SessionResult:
    profile: UserProfile
    pretrain: EpisodeLog
    train: EpisodeLog
    agent: DQNAgent
    tests: dict[tuple[str, str], EpisodeLog]
    sim_after_training: Simulation


def prepare_test(sim_after_training: Simulation, seed: int, surface: Surface, rest: float) -> Simulation:
    """Copy of the post-training user, reseeded per surface and rested."""
    sim = copy.deepcopy(sim_after_training)
    sim.reseed(*test_pair_seed(seed, surface.name))
    sim.surface = surface
    sim.rest(rest)
    return sim


def episode_rewards(train_log: EpisodeLog, episodes: int | None = None) -> list[dict]:
    """Mean/total reward, length and failure flag per training episode."""
    by_ep: dict[int, list[dict]] = {}
    for rec in train_log.steps:
        by_ep.setdefault(rec["episode"], []).append(rec)
    n = episodes or (max(by_ep) if by_ep else 0)
    rows = []
    for ep in range(1, n + 1):
        recs = by_ep.get(ep, [])
        rs = [r["reward"] for r in recs]
        rows.append({
            "episode": ep,
            "mean_reward": float(np.mean(rs)) if rs else math.nan,
            "total_reward": float(np.sum(rs)),
            "length": len(recs),
            "failed": bool(recs and recs[-1]["failed"]),
            "epsilon": recs[0]["epsilon"] if recs else math.nan,
        })
    return rows
