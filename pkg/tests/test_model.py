"""Policy network assembly, target sync and checkpoint tests."""

import numpy as np
import pytest

from speechrl import nn
from speechrl.model import (
    ArchConfig,
    CheckpointError,
    ModelPair,
    PolicyParams,
    act,
    desk_arch,
    forward,
    load_checkpoint,
    param_count,
    save_checkpoint,
    shapes_for,
    sync_target,
)

TINY = ArchConfig(
    n_mfcc=6, n_frames=4, num_classes=2,
    conv1_filters=2, conv2_filters=2, lstm_hidden=4, dense_sizes=(8, 6, 4),
)


def tiny_params(seed=0, dtype=None) -> PolicyParams:
    params = PolicyParams.initialize(TINY, np.random.default_rng(seed))
    if dtype is not None:
        for t in params.tensors.values():
            t.data = t.data.astype(dtype)
    return params


def rand_state(arch, seed=0):
    return np.random.default_rng(seed).standard_normal((arch.n_mfcc, arch.n_frames))


class TestForward:
    def test_output_is_distribution(self):
        arch = ArchConfig(n_mfcc=8, n_frames=5, num_classes=20,
                          conv1_filters=3, conv2_filters=2, lstm_hidden=6, dense_sizes=(10, 8, 6))
        params = PolicyParams.initialize(arch, np.random.default_rng(1))
        probs = forward(params, rand_state(arch, 2)).data
        assert probs.shape == (20,)
        assert abs(probs.sum() - 1.0) <= 1e-6
        assert (probs >= 0).all()

    def test_inference_deterministic(self):
        params = tiny_params()
        s = rand_state(TINY, 3)
        a = forward(params, s, training=False).data
        b = forward(params, s, training=False).data
        np.testing.assert_array_equal(a, b)

    def test_wrong_state_shape(self):
        with pytest.raises(nn.ShapeError):
            forward(tiny_params(), np.zeros((5, 4)))

    def test_param_count_matches_hand_sum(self):
        arch = ArchConfig(n_mfcc=40, n_frames=32, num_classes=2)
        conv1 = 3 * 1 * 16 + 16
        conv2 = 3 * 16 * 8 + 8
        lstm_in = (40 // 2) * 8
        lstm = 4 * (lstm_in * 50) + 4 * (50 * 50) + 4 * 50
        dense = (50 * 512 + 512) + (512 * 256 + 256) + (256 * 64 + 64)
        head = 64 * 2 + 2
        assert param_count(arch) == conv1 + conv2 + lstm + dense + head == 216674

    def test_shapes_map_consistent_with_init(self):
        params = tiny_params()
        for name, shape in shapes_for(TINY).items():
            assert params.tensors[name].shape == shape

    def test_forget_gate_bias_is_one(self):
        params = tiny_params()
        assert (params.tensors["lstm_b_f"].data == 1.0).all()
        assert not params.tensors["lstm_b_i"].data.any()


class TestAct:
    def test_argmax_of_probs(self):
        params = tiny_params(4)
        s = rand_state(TINY, 5)
        with nn.no_grad():
            probs = forward(params, s).data
        assert act(params, s) == int(np.argmax(probs))

    def test_head_shift_invariance(self):
        params = tiny_params(6)
        s = rand_state(TINY, 7)
        before = act(params, s)
        params.tensors["head_b"].data += 123.0
        assert act(params, s) == before

    def test_tie_breaks_low(self):
        params = tiny_params(8)
        # zero head weights: logits all equal -> uniform probs -> action 0
        params.tensors["head_w"].data[:] = 0.0
        params.tensors["head_b"].data[:] = 0.0
        assert act(params, rand_state(TINY, 9)) == 0


class TestModelPair:
    def test_sync_copies_exactly(self):
        pair = ModelPair.from_policy(tiny_params(10))
        pair.policy.tensors["head_b"].data += 0.5
        sync_target(pair)
        s = rand_state(TINY, 11)
        np.testing.assert_array_equal(
            forward(pair.policy, s).data, forward(pair.target, s).data
        )

    def test_target_isolated_from_policy_updates(self):
        pair = ModelPair.from_policy(tiny_params(12))
        sync_target(pair)
        snapshot = {k: t.data.copy() for k, t in pair.target.tensors.items()}
        for t in pair.policy.tensors.values():
            t.data += 0.25
        for k, t in pair.target.tensors.items():
            np.testing.assert_array_equal(t.data, snapshot[k])

    def test_sync_idempotent(self):
        pair = ModelPair.from_policy(tiny_params(13))
        pair.policy.tensors["dense0_w"].data *= 2.0
        sync_target(pair)
        once = {k: t.data.copy() for k, t in pair.target.tensors.items()}
        sync_target(pair)
        for k, t in pair.target.tensors.items():
            np.testing.assert_array_equal(t.data, once[k])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = tiny_params(14)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        for name, t in params.tensors.items():
            np.testing.assert_array_equal(t.data, loaded.tensors[name].data)
        assert loaded.arch == TINY

    def test_num_classes_mismatch_names_head(self, tmp_path):
        params = tiny_params(15)
        p = tmp_path / "c.ckpt"
        save_checkpoint(params, p)
        import dataclasses

        other = dataclasses.replace(TINY, num_classes=3)
        with pytest.raises(CheckpointError, match="head_w"):
            load_checkpoint(p, expect_arch=other)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTCKPT networks here")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_truncated(self, tmp_path):
        params = tiny_params(16)
        p = tmp_path / "t.ckpt"
        save_checkpoint(params, p)
        p.write_bytes(p.read_bytes()[:-50])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)

    def test_loaded_params_predict_identically(self, tmp_path):
        params = tiny_params(17)
        p = tmp_path / "d.ckpt"
        save_checkpoint(params, p)
        loaded = load_checkpoint(p, expect_arch=TINY)
        s = rand_state(TINY, 18)
        np.testing.assert_array_equal(forward(params, s).data, forward(loaded, s).data)


class TestEndToEndGradient:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_full_network_matches_finite_differences(self, seed):
        from gradcheck import check_grads

        params = tiny_params(seed, dtype=np.float64)
        state = rand_state(TINY, seed + 100)
        target = seed % TINY.num_classes

        def build():
            return nn.cross_entropy(
                forward(params, state, training=True, rng=np.random.default_rng(seed)), target
            )

        check_grads(build, params.trainable(), tol=1e-3)


def test_desk_arch_shrinks_dense_stack():
    arch = ArchConfig(n_mfcc=40, n_frames=32, num_classes=2)
    assert desk_arch(arch).dense_sizes == (128, 64, 32)
    assert desk_arch(arch).lstm_hidden == 50
