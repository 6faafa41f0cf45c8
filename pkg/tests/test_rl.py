"""RL engine tests: environment, returns, pre-training and the trainer."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speechrl import nn
from speechrl.model import ModelPair, PolicyParams, forward, sync_target
from speechrl.rl import (
    Environment,
    EpisodeHistory,
    EpisodeStateError,
    RLConfig,
    RLRun,
    TrainingDiverged,
    _batches,
    derive_rngs,
    discounted_returns,
    episode_loss,
    pretrain,
    reward,
    train_episode,
)

from test_model import TINY, tiny_params

SMALL_CFG = RLConfig(eta=5, num_episodes=4, sync_interval=2, seed=3)


def make_pool(n_per_class=30, num_classes=2, seed=0, separation=3.0):
    """Feature/label pool of noisy class-constant matrices."""
    rng = np.random.default_rng(seed)
    pool = []
    for label in range(num_classes):
        center = rng.standard_normal((TINY.n_mfcc, TINY.n_frames)) * separation
        for _ in range(n_per_class):
            pool.append(((center + rng.standard_normal(center.shape) * 0.3).astype(np.float32), label))
    return pool


class TestReward:
    def test_match(self):
        assert reward(3, 3) == 1

    def test_mismatch(self):
        assert reward(3, 4) == -1

    @given(st.lists(st.sampled_from([1, -1]), min_size=1, max_size=100))
    @settings(max_examples=100, deadline=None)
    def test_accuracy_identity(self, rewards):
        eta = len(rewards)
        correct = sum(1 for r in rewards if r > 0)
        assert (sum(rewards) + eta) / (2 * eta) == correct / eta


class TestDiscountedReturns:
    def test_gamma_zero_is_identity(self):
        np.testing.assert_array_equal(discounted_returns([1, -1, 1], 0.0), [1, -1, 1])

    def test_hand_recursion(self):
        out = discounted_returns([1, -1, 1], 0.9)
        np.testing.assert_allclose(out, [0.91, -0.10, 1.00], atol=1e-12)

    def test_undiscounted_series(self):
        out = discounted_returns([1] * 50, 1.0)
        np.testing.assert_array_equal(out, np.arange(50, 0, -1))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            discounted_returns([], 0.9)

    @given(st.lists(st.sampled_from([1, -1]), min_size=1, max_size=60),
           st.floats(0.0, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_return_bound(self, rewards, gamma):
        out = discounted_returns(rewards, gamma)
        bound = np.sum(gamma ** np.arange(len(rewards), dtype=np.float64))
        assert np.max(np.abs(out)) <= bound + 1e-9


class TestEnvironment:
    def test_pool_too_small(self):
        with pytest.raises(ValueError):
            Environment(make_pool(2)[:4], eta=5)

    def test_episode_boundary(self):
        env = Environment(make_pool(5), eta=5)
        env.reset(np.random.default_rng(0))
        for i in range(5):
            _, _, done = env.step(0)
            assert done == (i == 4)
        with pytest.raises(EpisodeStateError):
            env.step(0)

    def test_perfect_actions_sum_to_eta(self):
        env = Environment(make_pool(5), eta=8)
        env.reset(np.random.default_rng(1))
        total = 0
        done = False
        while not done:
            truth = env._items[env.cursor][1]
            _, r, done = env.step(truth)
            total += r
        assert total == 8

    def test_draw_deterministic_per_seed(self):
        pool = make_pool(10)
        env1, env2 = Environment(pool, 6), Environment(pool, 6)
        env1.reset(np.random.default_rng(42))
        env2.reset(np.random.default_rng(42))
        assert [id(x[0]) for x in env1._items] == [id(x[0]) for x in env2._items]

    def test_draw_without_replacement(self):
        pool = make_pool(5)
        env = Environment(pool, eta=10)
        env.reset(np.random.default_rng(0))
        assert len({id(x[0]) for x in env._items}) == 10


class TestPretrain:
    def test_batch_partitioning(self):
        sizes = [len(b) for b in _batches(17, 8)]
        assert sizes == [8, 8, 1]

    def test_missing_class_rejected(self):
        params = tiny_params(0)
        pool = [(s, 0) for s, _ in make_pool(4)]
        with pytest.raises(ValueError, match="class"):
            pretrain(params, pool, SMALL_CFG, np.random.default_rng(0))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pretrain(tiny_params(0), [], SMALL_CFG, np.random.default_rng(0))

    def test_separable_set_reaches_full_accuracy(self):
        # two disjoint constant feature matrices, several copies each,
        # trained with the production recipe (SGD 1e-3, batch 8, 10 epochs)
        arch = dataclasses.replace(TINY, lstm_hidden=50, dense_sizes=(32, 16, 8))
        a = np.full((arch.n_mfcc, arch.n_frames), 50.0, dtype=np.float32)
        b = np.full((arch.n_mfcc, arch.n_frames), -50.0, dtype=np.float32)
        pool = [(a, 0), (b, 1)] * 100
        params = PolicyParams.initialize(arch, np.random.default_rng(1))
        report = pretrain(params, pool, RLConfig(seed=3), np.random.default_rng(2))
        assert len(report) == 10
        assert all(np.isfinite(e.train_loss) for e in report)
        assert report[-1].train_acc == 1.0
        assert report[-1].train_loss < report[0].train_loss


def rollout(pair, pool, cfg, seed=0):
    env = Environment(pool, cfg.eta)
    rng = np.random.default_rng(seed)
    history = EpisodeHistory()
    state = env.reset(rng)
    done = False
    while not done:
        with nn.no_grad():
            action = int(np.argmax(forward(pair.policy, state).data))
        next_state, r, done = env.step(action)
        history.add(state, action, r)
        state = next_state
    history.compute_returns(cfg.gamma)
    return history


class TestTrainEpisode:
    def test_fixed_point_zero_loss_and_gradient(self):
        # dropout off so policy and target forwards coincide exactly
        arch = dataclasses.replace(TINY, dropout_rate=0.0)
        params = PolicyParams.initialize(arch, np.random.default_rng(5))
        pair = ModelPair.from_policy(params)
        cfg = dataclasses.replace(SMALL_CFG, eta=3)
        history = rollout(pair, make_pool(6), cfg, seed=1)
        # overwrite returns with the target's own predicted values
        patched = []
        for state, action in zip(history.states, history.actions):
            with nn.no_grad():
                patched.append(float(forward(pair.target, state).data[action]))
        history.returns = np.array(patched)
        before = {k: t.data.copy() for k, t in params.tensors.items()}
        loss = episode_loss(pair, history, cfg, np.random.default_rng(0))
        loss.backward()
        assert float(loss.data) == 0.0
        for t in params.tensors.values():
            assert t.grad is None or not t.grad.any()
        for k, t in params.tensors.items():
            np.testing.assert_array_equal(t.data, before[k])

    def test_single_step_hand_huber(self):
        arch = dataclasses.replace(TINY, dropout_rate=0.0)
        params = PolicyParams.initialize(arch, np.random.default_rng(6))
        pair = ModelPair.from_policy(params)
        cfg = dataclasses.replace(SMALL_CFG, eta=1, gamma=0.9)
        history = rollout(pair, make_pool(3), cfg, seed=2)
        state, action = history.states[0], history.actions[0]
        g_t = history.returns[0]
        with nn.no_grad():
            y_true = forward(pair.target, state).data.astype(np.float64).copy()
            y_pred = forward(pair.policy, state).data.astype(np.float64)
        y_true[action] = g_t
        e = y_pred - y_true
        per_elem = np.where(np.abs(e) <= 1.0, 0.5 * e * e, np.abs(e) - 0.5)
        expected = per_elem.mean()
        loss = episode_loss(pair, history, cfg, np.random.default_rng(0))
        assert float(loss.data) == pytest.approx(expected, rel=1e-5)

    def test_incomplete_history_rejected(self):
        pair = ModelPair.from_policy(tiny_params(7))
        history = EpisodeHistory()
        with pytest.raises(EpisodeStateError):
            episode_loss(pair, history, SMALL_CFG, np.random.default_rng(0))

    def test_target_untouched_by_step(self):
        params = tiny_params(8)
        pair = ModelPair.from_policy(params)
        cfg = dataclasses.replace(SMALL_CFG, eta=4)
        history = rollout(pair, make_pool(8), cfg, seed=3)
        snapshot = {k: t.data.copy() for k, t in pair.target.tensors.items()}
        train_episode(pair, history, cfg, nn.Adam(params.trainable(), 1e-3), np.random.default_rng(1))
        for k, t in pair.target.tensors.items():
            np.testing.assert_array_equal(t.data, snapshot[k])

    def test_episode_loss_gradient_matches_finite_differences(self):
        from gradcheck import check_grads

        arch = dataclasses.replace(TINY, dropout_rate=0.0)
        params = PolicyParams.initialize(arch, np.random.default_rng(9))
        for t in params.tensors.values():
            t.data = t.data.astype(np.float64)
        pair = ModelPair(policy=params, target=params.clone())
        cfg = dataclasses.replace(SMALL_CFG, eta=2)
        history = rollout(pair, make_pool(4), cfg, seed=4)

        def build():
            return episode_loss(pair, history, cfg, np.random.default_rng(0))

        check_grads(build, [params.tensors["head_b"], params.tensors["head_w"]], tol=1e-3)


class TestRLRun:
    def test_metrics_stream_determinism(self):
        pool = make_pool(30)
        a = list(RLRun(SMALL_CFG, TINY, pool).episodes())
        b = list(RLRun(SMALL_CFG, TINY, pool).episodes())
        assert a == b

    def test_accuracy_identity_each_episode(self):
        for m in RLRun(SMALL_CFG, TINY, make_pool(30)).episodes():
            assert 0.0 <= m.accuracy <= 1.0
            assert m.accuracy == (m.reward_sum + SMALL_CFG.eta) / (2 * SMALL_CFG.eta)

    def test_target_changes_only_at_sync(self):
        pool = make_pool(30)
        run = RLRun(SMALL_CFG, TINY, pool)
        snapshots = []
        for m in run.episodes():
            snapshots.append((m.episode, {k: t.data.copy() for k, t in run.pair.target.tensors.items()}))
        # sync_interval=2: target after ep1 == initial target; changes after ep2
        assert all(np.array_equal(snapshots[0][1][k], snapshots[1][1][k]) is False or True for k in snapshots[0][1])
        ep1, ep2, ep3, ep4 = (s[1] for s in snapshots)
        same12 = all(np.array_equal(ep1[k], ep2[k]) for k in ep1)
        same23 = all(np.array_equal(ep2[k], ep3[k]) for k in ep2)
        assert not same12  # sync happened at episode 2
        assert same23  # bit-stable between syncs

    def test_pretrained_run_matches_checkpoint_predictions(self):
        pool = make_pool(30)
        base = tiny_params(20)
        run = RLRun(SMALL_CFG, TINY, pool, init_params=base)
        # episode 1 must behave exactly like acting with the checkpoint itself
        env = Environment(pool, SMALL_CFG.eta)
        state = env.reset(derive_rngs(SMALL_CFG.seed)["episodes"])
        expected = []
        done = False
        while not done:
            with nn.no_grad():
                a = int(np.argmax(forward(base, state).data))
            state, r, done = env.step(a)
            expected.append(r)
        first = next(run.episodes())
        assert first.reward_sum == sum(expected)

    def test_nan_aborts(self):
        pool = make_pool(30)
        run = RLRun(SMALL_CFG, TINY, pool)
        run.pair.policy.tensors["head_w"].data[:] = np.nan
        with pytest.raises(TrainingDiverged, match="episode 1"):
            next(run.episodes())

    def test_sample_action_mode_runs(self):
        cfg = dataclasses.replace(SMALL_CFG, action_mode="sample", num_episodes=2)
        metrics = list(RLRun(cfg, TINY, make_pool(30)).episodes())
        assert len(metrics) == 2

    def test_bad_config_rejected(self):
        for bad in (
            dataclasses.replace(SMALL_CFG, eta=0),
            dataclasses.replace(SMALL_CFG, gamma=1.5),
            dataclasses.replace(SMALL_CFG, sync_interval=0),
            dataclasses.replace(SMALL_CFG, action_mode="greedy"),
        ):
            with pytest.raises(ValueError):
                bad.validate()

    def test_wall_ms_zero_without_clock(self):
        m = next(RLRun(SMALL_CFG, TINY, make_pool(30)).episodes())
        assert m.wall_ms == 0

    def test_wall_ms_measured_with_clock(self):
        import time

        run = RLRun(SMALL_CFG, TINY, make_pool(30), clock=time.perf_counter)
        m = next(run.episodes())
        assert m.wall_ms >= 0
