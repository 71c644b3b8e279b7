import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import rlreg.trainer as trainer
from rlreg.env import EnvConfig, distance, reset
from rlreg.geometry import Action, SimilarityTransform, apply_action
from rlreg.nn import LstmState, NetworkConfig, SharedParameters, init_network, run_window
from rlreg.synthdata import PerturbationRange, generate_pair
from rlreg.trainer import (A3CConfig, TrainingError, TrajectoryWindow, a3c_gradients, compute_returns,
                           greedy_optimal_action, run_a3c, run_sl)

TINY = NetworkConfig(input_size=16, conv=((4, 4, 2), (6, 3, 1), (8, 3, 1)), fc_width=16,
                     recurrent_width=8)
TOY_RANGE = PerturbationRange(tx=(-3, 3, 1), ty=(0, 0, 1), angle=(0, 0, 1), scale=(1, 1, 0.05))


@pytest.fixture(scope="module")
def pair16():
    return generate_pair(11, 16)


def _cfg(**kw):
    base = dict(workers=1, lr=1e-3, t_max=5, max_episodes=6, seed=3, perturbation=TOY_RANGE,
                env=EnvConfig(max_steps=12, obs_size=16, landmarks="grid"))
    base.update(kw)
    return A3CConfig(**base)


def _brute_returns(rewards, bootstrap, gamma):
    n = len(rewards)
    return [sum(gamma ** (k - t) * rewards[k] for k in range(t, n)) + gamma ** (n - t) * bootstrap
            for t in range(n)]


# -- returns ----------------------------------------------------------------

def test_returns_examples():
    assert compute_returns([1, 1], 2, 0.5) == [2.0, 2.0]
    assert compute_returns([-3.5], 0, 0.9) == [-3.5]
    assert compute_returns([], 4.0, 0.9) == []


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=40), st.floats(-100, 100),
       st.floats(0.01, 1.0))
def test_returns_match_direct_sum(rewards, bootstrap, gamma):
    np.testing.assert_allclose(compute_returns(rewards, bootstrap, gamma),
                               _brute_returns(rewards, bootstrap, gamma), rtol=1e-12, atol=1e-9)


def test_config_validation():
    for bad in (dict(gamma=0), dict(gamma=1.5), dict(t_max=0), dict(workers=0)):
        with pytest.raises(ValueError):
            _cfg(**bad)


# -- gradients ----------------------------------------------------------------

def _window(params, pair, rewards=None, bootstrap=0.0):
    obs = [np.random.default_rng(i).random((2, 16, 16)) for i in range(3)]
    logits, values, _, tape = run_window(params, obs, LstmState.zeros(TINY, params.dtype))
    return TrajectoryWindow(tape, logits, values, [0, 3, 5], rewards or [0.0] * 3, bootstrap,
                            LstmState.zeros(TINY))


def test_zero_advantage_gives_zero_gradient(pair16):
    params = init_network(TINY, 0, dtype=np.float64)
    w = _window(params, pair16)
    gamma, boot = 0.9, 0.7
    v = list(w.values) + [boot]
    # rewards chosen so every return equals the predicted value
    w.rewards = [v[t] - gamma * v[t + 1] for t in range(3)]
    w.bootstrap = boot
    grads = a3c_gradients(w, params, gamma, beta=0.0)
    for g in grads.values():
        np.testing.assert_allclose(g, 0, atol=1e-12)


def test_entropy_pushes_toward_uniform(pair16):
    params = init_network(TINY, 0, dtype=np.float64)
    w = _window(params, pair16)
    w.values = np.zeros(3)
    w.rewards = [0.0, 0.0, 0.0]
    g = a3c_gradients(w, params, 0.9, beta=1.0)
    assert np.abs(g["policy.w"]).max() > 0
    # one small step against the gradient raises the mean entropy
    from rlreg.nn import layers
    before = layers.entropy(layers.softmax(w.logits)).mean()
    stepped = params.copy()
    for k in stepped:
        stepped.arrays[k] = stepped[k] - 1e-3 * g[k]
    after_logits, _, _, _ = run_window(stepped, [np.random.default_rng(i).random((2, 16, 16))
                                                 for i in range(3)], LstmState.zeros(TINY, np.float64))
    assert layers.entropy(layers.softmax(after_logits)).mean() > before


# -- greedy teacher -----------------------------------------------------------

def test_greedy_example(pair16):
    state, _ = reset(pair16, SimilarityTransform(tx=3), EnvConfig(obs_size=16, landmarks="grid"))
    assert greedy_optimal_action(state, EnvConfig(obs_size=16, landmarks="grid")) == Action.TX_MINUS


@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5), st.integers(-2, 2),
       st.sampled_from(["lme", "matrix"]))
def test_greedy_matches_exhaustive_search(tx, ty, ang, ds, kind):
    pair = generate_pair(11, 16)
    cfg = EnvConfig(obs_size=16, landmarks="grid", reward_kind=kind)
    state, _ = reset(pair, SimilarityTransform(tx, ty, round(1 + 0.05 * ds, 10), ang), cfg)
    ds_ = [distance(state, apply_action(state.pose, a), cfg) for a in range(8)]
    expected = min(range(8), key=lambda a: (ds_[a], a))
    assert greedy_optimal_action(state, cfg) == expected


# -- training loop ------------------------------------------------------------

def test_zero_episodes(pair16):
    shared = SharedParameters(init_network(TINY, 1))
    before = shared.snapshot()
    report = run_a3c(_cfg(max_episodes=0), [pair16], shared)
    assert report.episodes_completed == 0 and report.updates == 0
    for k in before:
        np.testing.assert_array_equal(before[k], shared.params[k])


def test_empty_dataset():
    with pytest.raises(ValueError):
        run_a3c(_cfg(), [], SharedParameters(init_network(TINY)))


@pytest.mark.parametrize("runner", [run_a3c, run_sl])
def test_single_worker_deterministic(pair16, runner):
    out = []
    for _ in range(2):
        shared = SharedParameters(init_network(TINY, 1))
        report = runner(_cfg(), [pair16, generate_pair(12, 16)], shared)
        out.append((report, shared))
    (r1, s1), (r2, s2) = out
    assert [(e.episode, e.steps, e.cum_reward, e.terminal) for e in r1.episodes] == \
           [(e.episode, e.steps, e.cum_reward, e.terminal) for e in r2.episodes]
    assert r1.updates == r2.updates > 0
    for k in s1.params:
        np.testing.assert_array_equal(s1.params[k], s2.params[k])


def test_multi_worker_applies_every_update_once(pair16):
    shared = SharedParameters(init_network(TINY, 1))
    report = run_a3c(_cfg(workers=3, max_episodes=9), [pair16], shared)
    assert report.episodes_completed == 9
    assert sorted(e.episode for e in report.episodes) == list(range(9))
    assert {e.worker for e in report.episodes} <= {0, 1, 2}
    assert all(t == report.updates for t in shared.adam.t.values())


def test_truncated_episode_not_counted_terminal(pair16):
    cfg = _cfg(env=EnvConfig(max_steps=1, obs_size=16, landmarks="grid"),
               perturbation=PerturbationRange(tx=(3, 3, 1), ty=(0, 0, 1), angle=(0, 0, 1),
                                              scale=(1, 1, 0.05)))
    report = run_a3c(cfg, [pair16], SharedParameters(init_network(TINY, 1)))
    assert all(e.steps == 1 and not e.terminal for e in report.episodes)
    assert report.terminal_rate() == 0.0


def test_sl_teacher_always_terminates(pair16):
    report = run_sl(_cfg(max_episodes=8), [pair16], SharedParameters(init_network(TINY, 1)))
    assert report.terminal_rate() == 1.0
    assert all(e.steps <= 3 for e in report.episodes)


def test_lstm_state_zeroed_each_episode(pair16, monkeypatch):
    seen = []
    real_reset, real_forward = trainer.reset, trainer.forward
    fresh = {"flag": False}

    def spy_reset(*a, **k):
        fresh["flag"] = True
        return real_reset(*a, **k)

    def spy_forward(params, obs, state):
        if fresh["flag"]:
            seen.append(state.is_zero())
            fresh["flag"] = False
        return real_forward(params, obs, state)

    monkeypatch.setattr(trainer, "reset", spy_reset)
    monkeypatch.setattr(trainer, "forward", spy_forward)
    run_a3c(_cfg(max_episodes=5), [pair16], SharedParameters(init_network(TINY, 1)))
    assert len(seen) == 5 and all(seen)


def test_pair_changes_every_two_episodes(monkeypatch):
    pairs = [generate_pair(20 + i, 16) for i in range(6)]
    used = []
    real_reset = trainer.reset

    def spy_reset(pair, *a, **k):
        used.append(pair.id)
        return real_reset(pair, *a, **k)

    monkeypatch.setattr(trainer, "reset", spy_reset)
    run_a3c(_cfg(max_episodes=8, pair_every=2), pairs, SharedParameters(init_network(TINY, 1)))
    assert all(used[i] == used[i + 1] for i in range(0, 8, 2))


def test_worker_failure_reports_partial_progress(pair16, monkeypatch):
    calls = {"n": 0}
    real_step = trainer.step

    def flaky(state, a, cfg):
        calls["n"] += 1
        if calls["n"] > 30:
            raise RuntimeError("sensor fault")
        return real_step(state, a, cfg)

    monkeypatch.setattr(trainer, "step", flaky)
    with pytest.raises(TrainingError) as info:
        run_sl(_cfg(max_episodes=50), [pair16], SharedParameters(init_network(TINY, 1)))
    report = info.value.report
    assert 0 < report.episodes_completed < 50
    assert "sensor fault" in report.error


def test_log_and_checkpoints(pair16, tmp_path):
    cfg = _cfg(max_episodes=4, checkpoint_every=2, checkpoint_dir=str(tmp_path / "ck"),
               log_path=str(tmp_path / "log.jsonl"))
    run_a3c(cfg, [pair16], SharedParameters(init_network(TINY, 1)))
    lines = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert len(lines) == 4
    assert set(lines[0]) == {"episode", "worker", "steps", "cum_reward", "terminal"}
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["ckpt_000002.rgnn", "ckpt_000004.rgnn"]


def test_gradient_clipping_bounds_update(pair16):
    shared = SharedParameters(init_network(TINY, 1), lr=1.0, max_grad_norm=1e-3)
    grads = {k: np.full_like(v, 100.0) for k, v in shared.params.items()}
    shared.apply(grads)
    # Adam normalises magnitude, so check the clipped gradient reached the moments
    total = math.sqrt(sum(float(np.sum((m / 0.1) ** 2)) for m in shared.adam.m.values()))
    assert total == pytest.approx(1e-3, rel=1e-4)
