"""Command-line entry point: ``exertion-loop <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    count_contractions,
    kde_density,
    mnf_series,
    moving_average,
    zone_occupancy,
)
from .config import SURFACES, ConfigError, RunConfig, RunManifest, load_config
from .dqn_agent import DQNAgent
from .errors import DataError, DegenerateDensityError, DegenerateProfileError, PreconditionError, SilentSignalError
from .nn import load_module, save_module
from .pipeline import load_or_train_encoder, new_simulation, run_user, test_summary
from .reward import ZONES, UserProfile, normalize
from .session import (
    MODES,
    EpisodeLog,
    Simulation,
    episode_rewards,
    prepare_test,
    run_pretraining,
    run_test,
    run_training,
)

log = logging.getLogger("exertion_loop")

THREADS_ENV = "EXERTION_LOOP_THREADS"


class UsageError(Exception):
    """Bad invocation: exit status 2."""


# -- output helpers --------------------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return v


# per-invocation choices that do not change what earlier phases produced
_PHASE_LOCAL = ("surface", "mode", "out")


def _manifest(out: Path, config: RunConfig) -> RunManifest:
    path = out / "manifest.json"
    if path.exists():
        m = RunManifest.load(path)
        mine = json.loads(json.dumps(config.to_flat()))
        if {k: v for k, v in m.config.items() if k not in _PHASE_LOCAL} == \
                {k: v for k, v in mine.items() if k not in _PHASE_LOCAL}:
            return m
        log.warning("config differs from %s; starting a new manifest", path)
    return RunManifest(config=config.to_flat())


def _write_reward_curve(train_log: EpisodeLog, out: Path, episodes: int) -> Path:
    rows = episode_rewards(train_log, episodes)
    cols = ["episode", "mean_reward", "total_reward", "length", "failed", "epsilon"]
    return _write_csv(out / "reward_curve.csv", cols, ([r[c] for c in cols] for r in rows))


def _cache_dir(args, out: Path) -> Path:
    return Path(args.cache) if getattr(args, "cache", None) else out / "cache"


def _test_stem(surface: str, mode: str) -> str:
    return f"test_{surface}_{mode}"


# -- phase commands --------------------------------------------------------------------------

def cmd_pretrain(config: RunConfig, out: Path) -> dict:
    sim = new_simulation(config)
    profile, pre_log = run_pretraining(sim, config.protocol, config.profile)
    pre_log.meta.update(seed=config.seed)
    paths = list(pre_log.write(out, "pretrain").values())
    profile.save(out / "profile.json")
    paths.append(out / "profile.json")
    m = _manifest(out, config)
    m.record(out, paths, "pretrain")
    m.write(out / "manifest.json")
    return {"profile": profile, "log": pre_log}


def _load_profile(path: Path) -> UserProfile:
    if not path.exists():
        raise UsageError(f"profile not found: {path} (run `pretrain` first or pass --profile)")
    return UserProfile.load(path)


def cmd_train(config: RunConfig, out: Path, profile_path: Path, cache: Path) -> dict:
    profile = _load_profile(profile_path)
    # replay pre-training to bring the simulated user to the same state
    sim = new_simulation(config)
    replayed, _ = run_pretraining(sim, config.protocol, config.profile)
    if replayed != profile:
        raise UsageError(f"{profile_path} does not match the profile produced by this config and seed")
    encoder, info = load_or_train_encoder(config, cache)
    agent = DQNAgent(config.agent_config())
    agent, train_log = run_training(sim, encoder, agent, profile, config.protocol)
    train_log.meta.update(seed=config.seed)
    paths = list(train_log.write(out, "train").values())
    paths.append(_write_reward_curve(train_log, out, config.protocol.train_episodes))
    save_module(agent.policy, out / "agent.npz")
    (out / "user_state.json").write_text(json.dumps(sim.snapshot()) + "\n")
    paths += [out / "agent.npz", out / "user_state.json"]
    m = _manifest(out, config)
    m.record(out, paths, "train")
    m.extra["encoder"] = Path(info["path"]).name
    m.extra["encoder_cached"] = info["cached"]
    m.write(out / "manifest.json")
    return {"agent": agent, "log": train_log, "encoder_info": info}


def cmd_test(config: RunConfig, out: Path, profile_path: Path, checkpoint: Path, cache: Path,
             surface: str, modes) -> dict:
    if surface not in SURFACES:
        raise UsageError(f"surface must be one of {SURFACES}, got {surface!r}")
    profile = _load_profile(profile_path)
    state_path = checkpoint.parent / "user_state.json"
    for p in (checkpoint, state_path):
        if not p.exists():
            raise UsageError(f"missing {p}; run `train` first")
    encoder, _ = load_or_train_encoder(config, cache)
    agent = DQNAgent(config.agent_config())
    load_module(agent.policy, checkpoint)
    base = Simulation.restore(json.loads(state_path.read_text()), config.chair, config.human,
                              config.make_surface(config.protocol.train_surface), config.protocol.substep_hz)
    m = _manifest(out, config)
    logs = {}
    for mode in modes:
        sim = prepare_test(base, config.seed, config.make_surface(surface), config.protocol.test_rest)
        test_log = run_test(sim, encoder, agent, profile, sim.surface, mode, config.protocol)
        test_log.meta.update(seed=config.seed)
        stem = _test_stem(surface, mode)
        m.record(out, test_log.write(out, stem).values(), stem)
        logs[mode] = test_log
    m.extra.setdefault("friction", {})[surface] = config.make_surface(surface).rolling_resistance_coeff
    m.write(out / "manifest.json")
    return logs


def write_user(result, config: RunConfig, out: Path, encoder_name: str = "") -> None:
    """Persist a full in-memory run with the same layout as the phase commands."""
    out.mkdir(parents=True, exist_ok=True)
    m = RunManifest(config=config.to_flat())
    result.pretrain.meta.update(seed=config.seed)
    m.record(out, result.pretrain.write(out, "pretrain").values(), "pretrain")
    result.profile.save(out / "profile.json")
    result.train.meta.update(seed=config.seed)
    paths = list(result.train.write(out, "train").values())
    paths.append(_write_reward_curve(result.train, out, config.protocol.train_episodes))
    save_module(result.agent.policy, out / "agent.npz")
    (out / "user_state.json").write_text(json.dumps(result.sim_after_training.snapshot()) + "\n")
    m.record(out, paths + [out / "profile.json", out / "agent.npz", out / "user_state.json"], "train")
    for (surface, mode), test_log in sorted(result.tests.items()):
        test_log.meta.update(seed=config.seed)
        stem = _test_stem(surface, mode)
        m.record(out, test_log.write(out, stem).values(), stem)
    m.extra["friction"] = {s: config.make_surface(s).rolling_resistance_coeff for s in SURFACES}
    m.extra["encoder"] = encoder_name
    m.write(out / "manifest.json")


# -- analysis ---------------------------------------------------------------------------------

def _zone_fractions(log_: EpisodeLog, signal: str, profile: UserProfile | None):
    if profile is not None:
        idx = 0 if signal == "hr" else 1
        series = [normalize(r["hr"], r["vel"], profile)[idx] for r in log_.seconds]
        thr = profile.hr_thresholds if signal == "hr" else profile.vel_thresholds
        return zone_occupancy(series, thr)
    labels = [r.get(f"{signal}_zone") for r in log_.seconds]
    if not labels or None in labels:
        raise DataError(f"log has no {signal} zone labels and no profile is available")
    n = len(labels)
    return {z: Fraction(labels.count(z.value), n) for z in ZONES}


def cmd_analyze(log_dir: Path, out: Path | None = None) -> dict[str, Path]:
    log_dir = Path(log_dir)
    if not log_dir.is_dir():
        raise UsageError(f"log directory not found: {log_dir}")
    out = out or log_dir / "reports"
    profile = UserProfile.load(log_dir / "profile.json") if (log_dir / "profile.json").exists() else None
    test_paths = sorted(log_dir.glob("test_*.jsonl"))
    train_path = log_dir / "train.jsonl"
    if not test_paths and not train_path.exists():
        raise UsageError(f"no logs found in {log_dir}")
    zone_rows, contr_rows, mnf_rows, trend_rows = [], [], [], []
    written = {}
    for path in test_paths:
        lg = EpisodeLog.read(path)
        surface, mode = lg.meta.get("surface", "?"), lg.meta.get("mode", "?")
        for signal in ("hr", "vel"):
            fr = _zone_fractions(lg, signal, profile)
            zone_rows.append([path.stem, surface, mode, signal] + [float(fr[z]) for z in ZONES]
                             + [float(sum(fr.values()))])
        emg = lg.traces["emg"]
        n = count_contractions(emg)
        minutes = emg.duration / 60.0
        hr = np.array([r["hr"] for r in lg.seconds])
        contr_rows.append([path.stem, surface, mode, emg.duration, n, n / minutes if minutes else 0.0, hr.mean()])
        try:
            trend = mnf_series(emg)
        except SilentSignalError:
            log.warning("%s: EMG is silent throughout; no MNF trend", path.name)
            trend_rows.append([path.stem, surface, mode, math.nan, math.nan, "all"])
            continue
        for i, (f, pct) in enumerate(zip(trend.segment_mnf, trend.normalized)):
            mnf_rows.append([path.stem, surface, mode, i + 1, f, pct])
        trend_rows.append([path.stem, surface, mode, trend.fit_slope, trend.fit_intercept,
                           " ".join(map(str, trend.degenerate))])
        # gnuplot-ready data files
        dat = out / "gnuplot"
        dat.mkdir(parents=True, exist_ok=True)
        np.savetxt(dat / f"{path.stem}_mnf.dat",
                   np.column_stack([np.arange(1, len(trend.segment_mnf) + 1), trend.segment_mnf, trend.normalized]),
                   fmt="%.6g", header="segment mnf_hz percent_of_initial")
        t = emg.start_time + np.arange(len(emg.samples)) / emg.sample_rate
        np.savetxt(dat / f"{path.stem}_emg_ma.dat", np.column_stack([t, moving_average(emg.samples, emg.sample_rate)]),
                   fmt="%.6g", header="time rectified_moving_average_5s")
        for signal, values in (("hr", hr), ("vel", np.array([r["vel"] for r in lg.seconds]))):
            try:
                kde = kde_density(values)
            except DegenerateDensityError:
                continue
            grid = np.linspace(values.min() - 3 * kde.bandwidth, values.max() + 3 * kde.bandwidth, 200)
            np.savetxt(dat / f"{path.stem}_{signal}_kde.dat", np.column_stack([grid, kde(grid)]),
                       fmt="%.6g", header=f"{signal} density")
    if test_paths:
        written["zones"] = _write_csv(out / "zones.csv", ["log", "surface", "mode", "signal"]
                                      + [z.value for z in ZONES] + ["total"], zone_rows)
        written["contractions"] = _write_csv(out / "contractions.csv", ["log", "surface", "mode", "duration_s",
                                             "contractions", "per_min", "mean_hr"], contr_rows)
        written["mnf"] = _write_csv(out / "mnf.csv", ["log", "surface", "mode", "segment", "mnf_hz",
                                    "percent_of_initial"], mnf_rows)
        written["mnf_trend"] = _write_csv(out / "mnf_trend.csv", ["log", "surface", "mode", "slope_hz_per_segment",
                                          "intercept_hz", "degenerate_segments"], trend_rows)
    if train_path.exists():
        written["reward_curve"] = _write_reward_curve(EpisodeLog.read(train_path), out, 0)
    return written


# -- bench / report -----------------------------------------------------------------------------

def _bench_worker(job):
    config, out, cache = job
    encoder, info = load_or_train_encoder(config, cache)
    result = run_user(config, encoder)
    write_user(result, config, out, Path(info["path"]).name)
    log.info("user %d done", config.seed)


def fan_out_workers(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(n_jobs, cap))


def cmd_bench(config: RunConfig, out: Path, users: int, cache: Path) -> Path:
    if users < 1:
        raise UsageError("--users must be at least 1")
    load_or_train_encoder(config, cache)  # train once before fanning out
    jobs = [(replace(config, seed=config.seed + i), out / f"user_{config.seed + i:03d}", cache) for i in range(users)]
    workers = fan_out_workers(users)
    if workers == 1:
        for j in jobs:
            _bench_worker(j)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            list(ex.map(_bench_worker, jobs))
    for _, job_out, _ in jobs:
        cmd_analyze(job_out)
    return cmd_report(out)


def cmd_report(bench_dir: Path) -> Path:
    bench_dir = Path(bench_dir)
    user_dirs = sorted(p for p in bench_dir.iterdir() if p.is_dir() and (p / "profile.json").exists())
    if not user_dirs:
        raise UsageError(f"no user run directories under {bench_dir}")
    rows, curves = [], []
    for d in user_dirs:
        profile = UserProfile.load(d / "profile.json")
        for path in sorted(d.glob("test_*.jsonl")):
            lg = EpisodeLog.read(path)
            s = test_summary(lg, profile)
            rows.append([d.name, lg.meta["surface"], lg.meta["mode"], s["hr_moderate"], s["vel_moderate"],
                         s["contractions"], s["mnf_slope"], s["motor_fraction"], s["mean_hr"]])
        if (d / "train.jsonl").exists():
            curves.append([r["mean_reward"] for r in episode_rewards(EpisodeLog.read(d / "train.jsonl"))])
    header = ["user", "surface", "mode", "hr_moderate", "vel_moderate", "contractions", "mnf_slope",
              "motor_fraction", "mean_hr"]
    summary = _write_csv(bench_dir / "bench_summary.csv", header, rows)
    if curves:
        n = max(len(c) for c in curves)
        arr = np.full((len(curves), n), np.nan)
        for i, c in enumerate(curves):
            arr[i, :len(c)] = c
        mean = np.nanmean(arr, axis=0)
        _write_csv(bench_dir / "reward_curve_mean.csv", ["episode", "mean_reward", "users"],
                   ([i + 1, mean[i], int(np.sum(~np.isnan(arr[:, i])))] for i in range(n)))

    lines = [f"users: {len(user_dirs)}"]
    by = {}
    for r in rows:
        by.setdefault((r[1], r[2]), []).append(r)
    for surface in SURFACES:
        a, m = by.get((surface, "assisted"), []), by.get((surface, "manual"), [])
        if not a or not m:
            continue
        ha, hm = np.mean([r[3] for r in a]), np.mean([r[3] for r in m])
        pairs = {r[0]: r for r in m}
        red = [1 - r[5] / pairs[r[0]][5] for r in a if r[0] in pairs and pairs[r[0]][5] > 0]
        lines.append(f"{surface}: moderate-zone HR assisted {100 * ha:.1f}% vs manual {100 * hm:.1f}% "
                     f"({100 * (ha - hm):+.1f} pp); mean contraction reduction {100 * np.mean(red) if red else math.nan:.1f}%")
    (bench_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return summary


# -- argument parsing ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file (or a run manifest)")
    common.add_argument("--seed", type=int, help="run seed (default 0)")
    common.add_argument("--out", help="output directory (default: runs)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. agent.lr=0.001 (repeatable)")
    common.add_argument("--cache", help="encoder cache directory (default: <out>/cache)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="exertion-loop", description="Simulated exertion-aware wheelchair assistance.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("pretrain", parents=[common], help="phase 1: personal zones from three intervals")
    t = sub.add_parser("train", parents=[common], help="phase 2: encoder (cached) and agent training")
    t.add_argument("--profile", help="profile file (default: <out>/profile.json)")
    te = sub.add_parser("test", parents=[common], help="phase 3: 300 s test on one surface")
    te.add_argument("--profile", help="profile file (default: <out>/profile.json)")
    te.add_argument("--checkpoint", help="agent checkpoint (default: <out>/agent.npz)")
    te.add_argument("--surface", help="slate or carpet")
    te.add_argument("--mode", help="assisted or manual")
    te.add_argument("--paired", action="store_true", help="run assisted and manual with the same seed")
    a = sub.add_parser("analyze", parents=[common], help="reports from a run directory")
    a.add_argument("log_dir")
    b = sub.add_parser("bench", parents=[common], help="N seeded users through every phase")
    b.add_argument("--users", type=int, default=10)
    r = sub.add_parser("report", parents=[common], help="aggregate a bench directory")
    r.add_argument("bench_dir")
    return p


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in ("seed", "out", "surface", "mode"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config_from_args(args)
        out = Path(config.out)
        cache = _cache_dir(args, out)
        if args.command == "pretrain":
            res = cmd_pretrain(config, out)
            print(f"pre-training: {len(res['log'].seconds)} s logged; profile -> {out / 'profile.json'}")
        elif args.command == "train":
            profile = Path(args.profile) if args.profile else out / "profile.json"
            res = cmd_train(config, out, profile, cache)
            print(f"training: {len(res['log'].steps)} agent steps; checkpoint -> {out / 'agent.npz'}")
        elif args.command == "test":
            profile = Path(args.profile) if args.profile else out / "profile.json"
            ckpt = Path(args.checkpoint) if args.checkpoint else out / "agent.npz"
            modes = MODES if args.paired else (config.mode,)
            logs = cmd_test(config, out, profile, ckpt, cache, config.surface, modes)
            for mode, lg in logs.items():
                motor = sum(r["motor_on"] for r in lg.seconds)
                print(f"test {config.surface}/{mode}: {len(lg.seconds)} s, motor on {motor} s")
        elif args.command == "analyze":
            for name, path in cmd_analyze(Path(args.log_dir)).items():
                print(f"{name}: {path}")
        elif args.command == "bench":
            print(f"summary: {cmd_bench(config, out, args.users, cache)}")
        elif args.command == "report":
            print(f"summary: {cmd_report(Path(args.bench_dir))}")
    except (UsageError, ConfigError) as exc:
        print(f"exertion-loop {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateProfileError, DataError, PreconditionError, FloatingPointError, ValueError) as exc:
        print(f"exertion-loop {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
