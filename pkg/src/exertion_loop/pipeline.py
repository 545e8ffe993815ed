"""End-to-end runs for one simulated user and per-test summaries."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import ecg_encoder as enc
from .analysis import count_contractions, mnf_series, zone_occupancy
from .config import SURFACES, RunConfig
from .dqn_agent import DQNAgent
from .errors import SilentSignalError
from .nn import load_module, save_module
from .reward import ZoneLabel, normalize
from .session import (
    MODES,
    EpisodeLog,
    SessionResult,
    Simulation,
    prepare_test,
    run_pretraining,
    run_test,
    run_training,
)

log = logging.getLogger(__name__)


def encoder_cache_path(config: RunConfig, cache_dir) -> Path:
    return Path(cache_dir) / f"encoder-{config.encoder_fingerprint()}.npz"


def load_encoder(path, config: RunConfig) -> enc.EncoderModel:
    model = enc.EncoderModel(seed=config.encoder.seed)
    model.head = None
    load_module(model, path)
    return enc.freeze_and_strip(model)


def train_encoder(config: RunConfig) -> tuple[enc.EncoderModel, list[dict]]:
    ec = config.encoder
    windows, labels = enc.make_ecg_dataset(ec.samples, ec.setpoints, ec.seed, config.human)
    model, metrics = enc.train_classifier(windows, labels, ec)
    return model, metrics


def load_or_train_encoder(config: RunConfig, cache_dir) -> tuple[enc.EncoderModel, dict]:
    """Frozen encoder from the cache when the fingerprint matches, else train and cache it."""
    path = encoder_cache_path(config, cache_dir)
    metrics_path = path.with_suffix(".metrics.json")
    if path.exists():
        log.info("reusing cached encoder %s", path.name)
        metrics = json.loads(metrics_path.read_text()) if metrics_path.exists() else []
        return load_encoder(path, config), {"cached": True, "path": str(path), "metrics": metrics}
    model, metrics = train_encoder(config)
    enc.freeze_and_strip(model)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp.npz")
    save_module(model, tmp)
    tmp.replace(path)
    metrics_path.write_text(json.dumps(metrics, indent=1) + "\n")
    return model, {"cached": False, "path": str(path), "metrics": metrics}


def new_simulation(config: RunConfig) -> Simulation:
    return Simulation(config.chair, config.human, config.make_surface(config.protocol.train_surface),
                      config.seed, config.protocol.substep_hz)


def run_user(config: RunConfig, encoder: enc.EncoderModel, surfaces=SURFACES, modes=MODES) -> SessionResult:
    """Pre-training, training, then one rested test per (surface, mode) from the same post-training state."""
    sim = new_simulation(config)
    profile, pre_log = run_pretraining(sim, config.protocol, config.profile)
    agent = DQNAgent(config.agent_config())
    agent, train_log = run_training(sim, encoder, agent, profile, config.protocol)
    tests = {}
    for surface in surfaces:
        for mode in modes:
            test_sim = prepare_test(sim, config.seed, config.make_surface(surface), config.protocol.test_rest)
            tests[(surface, mode)] = run_test(test_sim, encoder, agent, profile, test_sim.surface, mode,
                                              config.protocol)
    return SessionResult(profile, pre_log, train_log, agent, tests, sim)


def test_summary(test_log: EpisodeLog, profile) -> dict:
    hr_n = [normalize(r["hr"], r["vel"], profile)[0] for r in test_log.seconds]
    vel_n = [normalize(r["hr"], r["vel"], profile)[1] for r in test_log.seconds]
    emg = test_log.traces["emg"]
    try:
        slope = mnf_series(emg).fit_slope
    except SilentSignalError:
        slope = float("nan")
    return {
        "hr_moderate": float(zone_occupancy(hr_n, profile.hr_thresholds)[ZoneLabel.MODERATE]),
        "vel_moderate": float(zone_occupancy(vel_n, profile.vel_thresholds)[ZoneLabel.MODERATE]),
        "contractions": count_contractions(emg),
        "mnf_slope": slope,
        "motor_fraction": float(np.mean([r["motor_on"] for r in test_log.seconds])),
        "mean_hr": float(np.mean([r["hr"] for r in test_log.seconds])),
        "failures": int(sum(s["failed"] for s in test_log.steps)),
    }
