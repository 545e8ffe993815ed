"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The simulated-user criteria (5-9) share one bench of ten seeded users run
through pre-training, slate training and paired tests on both surfaces.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest
import test_analysis
import test_nn_core

from exertion_loop.cli import main
from exertion_loop.config import RunConfig
from exertion_loop.dqn_agent import QNetwork
from exertion_loop.ecg_encoder import WINDOW_LENGTH, EncoderModel
from exertion_loop.pipeline import load_or_train_encoder, run_user
from exertion_loop.pipeline import test_summary as summarize_test
from exertion_loop.reward import UserProfile, reward
from exertion_loop.session import episode_rewards

SEEDS = range(10)
SURFACES = ("slate", "carpet")


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="session")
def encoder_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("encoder-cache")


@pytest.fixture(scope="session")
def trained_encoder(encoder_cache):
    """The production encoder: 303 windows, 80/20 split, at most 500 epochs."""
    start = time.perf_counter()
    model, info = load_or_train_encoder(RunConfig(), encoder_cache)
    return model, info["metrics"], time.perf_counter() - start


@pytest.fixture(scope="session")
def bench(trained_encoder):
    encoder = trained_encoder[0]
    users = []
    for seed in SEEDS:
        start = time.perf_counter()
        result = run_user(RunConfig(seed=seed), encoder)
        summary = {key: summarize_test(lg, result.profile) for key, lg in result.tests.items()}
        users.append({"seed": seed, "curve": [r["mean_reward"] for r in episode_rewards(result.train, 30)],
                      "tests": summary, "seconds": time.perf_counter() - start})
    return users


# -- 1 ------------------------------------------------------------------------------------

def test_c01_reward_oracle(verdict):
    p = UserProfile(90, 10, 1, 0.5, 70, 130, 2.0, -1.0, 1.0, 2.0, -1.0, 1.0, 2.2)
    start = time.perf_counter()
    hand = [
        (reward(0.0, 0.0, 0, p)[0], 1.2),
        (reward(2.5, 0.0, 0, p)[0], -1.2),
        (reward(1.5, 0.5, 0, p)[0], -1.4 + 0.5 * math.exp(-1.5) + 0.5),
        (reward(0.8, 1.5, 1, p)[0], -1 + math.exp(-0.9)),
    ]
    hand_err = max(abs(a - b) for a, b in hand)
    rng = np.random.default_rng(0)
    n = 100_000
    hr, vel, act = rng.uniform(-5, 5, n), rng.uniform(-5, 5, n), rng.integers(0, 2, n)
    out = [reward(h, v, int(a), p) for h, v, a in zip(hr, vel, act)]
    r = np.array([o[0] for o in out])
    failed = np.array([o[1] for o in out])
    elapsed = time.perf_counter() - start
    ok = (hand_err <= 1e-9 and r.min() >= -1.4 and r.max() <= 1.2
          and np.array_equal(failed, r == -1.2) and elapsed < 1.0)
    verdict(1, ok, f"hand-case error {hand_err:.1e}, fuzz range [{r.min():.3f}, {r.max():.3f}], "
                   f"{failed.sum()} failures all at -1.2: {np.array_equal(failed, r == -1.2)}, {elapsed:.2f} s")


# -- 2 ------------------------------------------------------------------------------------

GRAD_TESTS = [name for name in dir(test_nn_core) if name.startswith("test_") and name.endswith("_gradients")]


def test_c02_gradient_suite(verdict):
    start = time.perf_counter()
    failures = []
    for name in GRAD_TESTS:
        fn = getattr(test_nn_core, name)
        for seed in test_nn_core.SHAPES:
            try:
                fn(seed)
            except AssertionError as exc:
                failures.append(f"{name}[{seed}]: {exc}")
    elapsed = time.perf_counter() - start
    checks = len(GRAD_TESTS) * len(test_nn_core.SHAPES)
    ok = not failures and len(test_nn_core.SHAPES) >= 20 and elapsed < 60
    verdict(2, ok, f"{checks - len(failures)}/{checks} finite-difference checks below {test_nn_core.TOL:g} "
                   f"({len(GRAD_TESTS)} layers/losses x {len(test_nn_core.SHAPES)} shapes), {elapsed:.1f} s"
                   + (f"; first failure {failures[0]}" if failures else ""))


# -- 3 ------------------------------------------------------------------------------------

def test_c03_encoder_adjunct_task(verdict, trained_encoder):
    _, metrics, elapsed = trained_encoder
    last = metrics[-1]
    ok = (last["train_acc"] >= 0.95 and last["val_acc"] >= 0.80 and last["epoch"] <= 500
          and elapsed < 600)
    verdict(3, ok, f"303 windows, stopped at epoch {last['epoch']}: train {last['train_acc']:.3f}, "
                   f"val {last['val_acc']:.3f}, {elapsed:.0f} s")


# -- 4 ------------------------------------------------------------------------------------

def test_c04_architecture_arithmetic(verdict):
    model = EncoderModel(seed=0)
    model.eval()
    z = model.embed(np.zeros((2, WINDOW_LENGTH), dtype=np.float32))
    n_enc = model.num_parameters()
    n_q = QNetwork().num_parameters()
    ok = z.shape == (2, 8) and abs(n_enc - 1e6) <= 0.2e6 and abs(n_q - 110_000) <= 55_000
    verdict(4, ok, f"390 -> {z.shape[1]} embedding; encoder+head {n_enc:,} params "
                   f"({100 * (n_enc / 1e6 - 1):+.1f}% vs 1e6); Q-network {n_q:,} "
                   f"({100 * (n_q / 110_000 - 1):+.1f}% vs 110,000)")


# -- 5-9: simulated users -----------------------------------------------------------------

def learning_curve_shape(mean_curve):
    """Rise over episodes 1-15, a dip in 15-20 below the pre-prompt level, recovery by 30."""
    y = np.asarray(mean_curve, dtype=np.float64)
    slope = float(np.polyfit(np.arange(1, 16), y[:15], 1)[0])
    pre = float(np.mean(y[10:14]))  # episodes 11-14
    trough = float(np.min(y[14:20]))  # episodes 15-20
    end = float(np.mean(y[27:30]))  # episodes 28-30
    recovered = end >= trough + 0.5 * (pre - trough)
    return slope, pre, trough, end, slope > 0 and trough < pre and recovered


def test_c05_learning_curve(verdict, bench):
    curves = np.array([u["curve"] for u in bench], dtype=np.float64)
    mean = np.nanmean(curves, axis=0)
    slope, pre, trough, end, ok = learning_curve_shape(mean)
    worst = max(u["seconds"] for u in bench)
    ok = ok and worst < 15 * 60
    verdict(5, ok, f"{len(bench)} seeds: slope(1-15) {slope:+.4f}/episode, episodes 11-14 {pre:.3f}, "
                   f"trough(15-20) {trough:.3f}, episodes 28-30 {end:.3f}; slowest seed {worst:.0f} s")


def _moderate(bench, surface, mode):
    return float(np.mean([u["tests"][(surface, mode)]["hr_moderate"] for u in bench]))


def test_c06_zone_occupancy(verdict, bench):
    d = {s: (_moderate(bench, s, "assisted"), _moderate(bench, s, "manual")) for s in SURFACES}
    gain = {s: d[s][0] - d[s][1] for s in SURFACES}
    ok = gain["slate"] >= 0.10 and gain["carpet"] >= 0.15 and d["carpet"][0] >= 0.60
    verdict(6, ok, "moderate-zone HR, assisted vs manual: "
            + "; ".join(f"{s} {100 * d[s][0]:.1f}% vs {100 * d[s][1]:.1f}% ({100 * gain[s]:+.1f} pp)"
                        for s in SURFACES))


def test_c07_contraction_reduction(verdict, bench):
    red = {}
    for s in SURFACES:
        red[s] = float(np.mean([1 - u["tests"][(s, "assisted")]["contractions"]
                                / u["tests"][(s, "manual")]["contractions"] for u in bench]))
    ok = all(v >= 0.15 for v in red.values())
    verdict(7, ok, "mean seed-paired contraction reduction: "
            + ", ".join(f"{s} {100 * v:.1f}%" for s, v in red.items()))


def test_c08_fatigue_trend(verdict, bench):
    hits = {}
    for s in SURFACES:
        hits[s] = sum(
            u["tests"][(s, "manual")]["mnf_slope"] < 0
            and u["tests"][(s, "assisted")]["mnf_slope"] > u["tests"][(s, "manual")]["mnf_slope"]
            for u in bench)
    ok = all(h >= 8 for h in hits.values())
    verdict(8, ok, "seeds with manual MNF slope < 0 and assisted slope above it: "
            + ", ".join(f"{s} {h}/{len(bench)}" for s, h in hits.items()))


def test_c09_generalization(verdict, bench):
    a, m = _moderate(bench, "carpet", "assisted"), _moderate(bench, "carpet", "manual")
    per_seed = " ".join(f"{u['tests'][('carpet', 'assisted')]['hr_moderate']:.2f}" for u in bench)
    ok = a >= 0.60 and a - m >= 0.15
    verdict(9, ok, f"slate-trained agent on carpet: assisted {100 * a:.1f}% vs manual {100 * m:.1f}% "
                   f"({100 * (a - m):+.1f} pp); per seed [{per_seed}]")


# -- 10 -----------------------------------------------------------------------------------

TINY = ["protocol.train_episodes=3", "protocol.prompt_slow_episode=2", "protocol.prompt_fast_episode=3",
        "protocol.test_episodes=1", "protocol.test_timesteps=10", "protocol.test_rest=30"]


def _run_phases(out, cache, config=None):
    common = ["--out", str(out), "--cache", str(cache), "--seed", "4"]
    if config:
        common += ["--config", str(config)]
    else:
        for s in TINY:
            common += ["--set", s]
    codes = [main(["pretrain", *common]), main(["train", *common])]
    for surface in SURFACES:
        codes.append(main(["test", *common, "--surface", surface, "--paired"]))
    codes.append(main(["analyze", str(out)]))
    return codes


def test_c10_determinism(verdict, tmp_path, encoder_cache, trained_encoder):
    first, second = tmp_path / "first", tmp_path / "second"
    codes = _run_phases(first, encoder_cache) + _run_phases(second, encoder_cache, first / "manifest.json")
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file() and p.name != "manifest.json")
    differ = [str(f) for f in files if (first / f).read_bytes() != (second / f).read_bytes()]
    m1, m2 = (json.loads((d / "manifest.json").read_text()) for d in (first, second))
    ok = (all(c == 0 for c in codes) and files and not differ
          and m1["files"] == m2["files"] and m1["phases"] == m2["phases"])
    verdict(10, ok, f"rerun from the manifest: {len(files) - len(differ)}/{len(files)} files byte-identical"
                    + (f"; differing {differ[:3]}" if differ else "") + f"; exit codes {sorted(set(codes))}")


# -- 11 -----------------------------------------------------------------------------------

ORACLES = ["test_contraction_examples", "test_contractions_use_magnitude", "test_kde_hand_value",
           "test_kde_integrates_to_one", "test_mnf_pure_sine", "test_mnf_white_noise",
           "test_mnf_monte_carlo_white_noise_mean", "test_mnf_skips_silent_segments"]


def test_c11_signal_oracles(verdict):
    failures = []
    for name in ORACLES:
        fn = getattr(test_analysis, name)
        try:
            fn(np.random.default_rng(1234)) if fn.__code__.co_argcount else fn()
        except AssertionError as exc:
            failures.append(f"{name}: {exc}")
    verdict(11, not failures, f"{len(ORACLES) - len(failures)}/{len(ORACLES)} analysis oracles hold"
                              + (f"; {failures[0]}" if failures else ""))
