"""Episodic RL engine: environment, pre-training and the policy trainer.

An episode draws ``eta`` feature/label pairs from the pool without
replacement; the agent classifies them one at a time for a +1/-1 reward
per step. At episode end the policy is regressed toward the target
model's output with the taken action's entry replaced by the discounted
return, under a mean Huber loss, and one Adam step is applied. The
target model is a frozen copy of the policy, refreshed every
``sync_interval`` episodes.

All randomness derives from the run seed through fixed-purpose child
streams (weight init, pre-training, episode draws, dropout, action
sampling), so two runs that differ only in whether they pre-train still
draw identical episode batches.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .metrics import EpisodeMetrics, RollingWindow
from .model import ArchConfig, ModelPair, PolicyParams, forward, sync_target
from .nn import Adam, Sgd

ACTION_MODES = ("argmax", "sample")


class EpisodeStateError(RuntimeError):
    """Environment stepped after the episode ended, or history incomplete."""


class TrainingDiverged(RuntimeError):
    """A non-finite loss appeared; the run is aborted, not skipped."""


@dataclass(frozen=True)
class RLConfig:
    eta: int = 50
    num_episodes: int = 10000
    gamma: float = 0.99
    sync_interval: int = 200
    rl_lr: float = 1e-4
    pretrain_lr: float = 1e-3
    pretrain_epochs: int = 10
    pretrain_batch: int = 8
    pretrain_val_split: float = 0.10
    huber_delta: float = 1.0
    seed: int = 0
    action_mode: str = "argmax"

    def validate(self):
        if self.eta < 1:
            raise ValueError(f"eta must be >= 1, got {self.eta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.sync_interval < 1:
            raise ValueError(f"sync_interval must be >= 1, got {self.sync_interval}")
        if self.num_episodes < 1:
            raise ValueError(f"num_episodes must be >= 1, got {self.num_episodes}")
        if self.action_mode not in ACTION_MODES:
            raise ValueError(f"action_mode must be one of {ACTION_MODES}, got {self.action_mode!r}")
        if not 0.0 <= self.pretrain_val_split < 1.0:
            raise ValueError("pretrain_val_split must be in [0, 1)")


RNG_STREAMS = ("init", "pretrain", "episodes", "dropout", "action", "bench_init", "bench_shuffle")


def derive_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent child streams, one per purpose, in a fixed order.

    Streams are independent generators, so consuming one (say,
    pre-training) never perturbs another (episode draws); two runs with
    the same seed that differ only in pre-training see identical
    episodes.
    """
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(RNG_STREAMS, children)}


def reward(action: int, truth: int) -> int:
    return 1 if action == truth else -1


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """Backward recursion G_t = r_t + gamma * G_{t+1}."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("rewards must be non-empty")
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


class Environment:
    """Classification MDP over a drawn batch of feature/label pairs."""

    def __init__(self, pool: list[tuple], eta: int):
        if len(pool) < eta:
            raise ValueError(f"pool of {len(pool)} items cannot fill an episode of {eta} steps")
        self.pool = pool
        self.eta = eta
        self._items: list[tuple] = []
        self.cursor = 0
        self.done = True

    def reset(self, rng: np.random.Generator):
        """Draw ``eta`` items without replacement; returns the first state."""
        idx = rng.choice(len(self.pool), size=self.eta, replace=False)
        self._items = [self.pool[i] for i in idx]
        self.cursor = 0
        self.done = False
        return self._items[0][0]

    def step(self, action: int):
        if self.done:
            raise EpisodeStateError("step() after the episode ended")
        truth = self._items[self.cursor][1]
        r = reward(action, truth)
        self.cursor += 1
        self.done = self.cursor >= self.eta
        next_state = None if self.done else self._items[self.cursor][0]
        return next_state, r, self.done


@dataclass
class EpisodeHistory:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    returns: np.ndarray | None = None

    def add(self, state, action: int, r: int):
        self.states.append(state)
        self.actions.append(action)
        self.rewards.append(r)

    def __len__(self):
        return len(self.rewards)

    def compute_returns(self, gamma: float):
        self.returns = discounted_returns(self.rewards, gamma)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield range(start, min(start + size, n))


def supervised_epoch(
    params: PolicyParams,
    items: list[tuple],
    opt,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One shuffled cross-entropy epoch; returns (mean loss, accuracy).

    Accuracy is measured from the training forwards, dropout included.
    """
    perm = rng.permutation(len(items))
    loss_sum = 0.0
    correct = 0
    for batch in _batches(len(items), batch_size):
        losses = []
        for j in batch:
            fm, label = items[perm[j]]
            probs = forward(params, fm, training=True, rng=rng)
            if int(np.argmax(probs.data)) == label:
                correct += 1
            losses.append(nn.cross_entropy(probs, label))
        batch_loss = nn.scale(nn.add_n(losses), 1.0 / len(losses))
        batch_loss.backward()
        opt.step()
        opt.zero_grad()
        loss_sum += float(batch_loss.data) * len(losses)
    return loss_sum / len(items), correct / len(items)


def evaluate(params: PolicyParams, items: list[tuple]) -> tuple[float, float]:
    """Inference-mode (mean loss, accuracy) over a labelled set."""
    if not items:
        return float("nan"), float("nan")
    loss_sum = 0.0
    correct = 0
    with nn.no_grad():
        for fm, label in items:
            probs = forward(params, fm, training=False)
            loss_sum += float(nn.cross_entropy(probs, label).data)
            if int(np.argmax(probs.data)) == label:
                correct += 1
    return loss_sum / len(items), correct / len(items)


def pretrain(
    params: PolicyParams,
    pretrain_set: list[tuple],
    cfg: RLConfig,
    rng: np.random.Generator,
) -> list[EpochStats]:
    """Supervised warm start: SGD on cross-entropy, batched, with holdout.

    Mutates ``params`` in place and returns per-epoch statistics.
    """
    cfg.validate()
    if not pretrain_set:
        raise ValueError("pretrain set is empty")
    present = {label for _, label in pretrain_set}
    missing = set(range(params.arch.num_classes)) - present
    if missing:
        raise ValueError(f"pretrain set is missing class indices {sorted(missing)}")

    items = list(pretrain_set)
    order = rng.permutation(len(items))
    items = [items[i] for i in order]
    n_val = int(round(cfg.pretrain_val_split * len(items)))
    val_items, train_items = items[:n_val], items[n_val:]
    if not train_items:
        raise ValueError("pretrain set too small for the validation split")

    opt = Sgd(params.trainable(), lr=cfg.pretrain_lr)
    report = []
    for epoch in range(1, cfg.pretrain_epochs + 1):
        train_loss, train_acc = supervised_epoch(params, train_items, opt, cfg.pretrain_batch, rng)
        val_loss, val_acc = evaluate(params, val_items)
        report.append(
            EpochStats(
                epoch=epoch,
                train_loss=train_loss,
                train_acc=train_acc,
                val_loss=val_loss,
                val_acc=val_acc,
            )
        )
    return report


def episode_loss(
    pair: ModelPair,
    history: EpisodeHistory,
    cfg: RLConfig,
    rng: np.random.Generator,
    target_cache: dict | None = None,
) -> nn.Tensor:
    """Mean over steps of Huber(policy output, return-patched target output).

    The regression target for step t is the target model's probability
    vector with the taken action's entry replaced by the discounted
    return G_t; only the policy side carries gradients.

    ``target_cache`` (keyed by state object identity) memoizes target
    predictions; valid only while the target parameters are unchanged,
    so the owner must clear it at every sync.
    """
    if len(history) != cfg.eta:
        raise EpisodeStateError(f"history has {len(history)} steps, episode needs {cfg.eta}")
    if history.returns is None:
        history.compute_returns(cfg.gamma)

    losses = []
    for state, action, g_t in zip(history.states, history.actions, history.returns):
        probs = target_cache.get(id(state)) if target_cache is not None else None
        if probs is None:
            with nn.no_grad():
                probs = forward(pair.target, state, training=False).data
            if target_cache is not None:
                target_cache[id(state)] = probs
        y_true = probs.copy()
        y_true[action] = g_t
        y_pred = forward(pair.policy, state, training=True, rng=rng)
        losses.append(nn.huber(y_pred, y_true, cfg.huber_delta))
    return nn.scale(nn.add_n(losses), 1.0 / cfg.eta)


def train_episode(
    pair: ModelPair,
    history: EpisodeHistory,
    cfg: RLConfig,
    opt: Adam,
    rng: np.random.Generator,
    target_cache: dict | None = None,
) -> float:
    """One regression step of the policy toward return-patched target outputs."""
    loss = episode_loss(pair, history, cfg, rng, target_cache)
    loss.backward()
    opt.step()
    opt.zero_grad()
    return float(loss.data)


class RLRun:
    """One seeded training run; ``episodes()`` yields a metrics row per episode.

    Optional ``init_params`` (e.g. a loaded checkpoint) take the place of
    fresh random weights; optional ``pretrain_set`` runs the supervised
    warm start before any episode. ``clock`` (seconds, monotonic) enables
    wall-time measurement; without it wall_ms stays 0 so runs with equal
    config and seed emit byte-identical metric streams.
    """

    def __init__(
        self,
        cfg: RLConfig,
        arch: ArchConfig,
        pool: list[tuple],
        init_params: PolicyParams | None = None,
        pretrain_set: list[tuple] | None = None,
        clock=None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.clock = clock
        self.rngs = derive_rngs(cfg.seed)
        if init_params is not None:
            params = init_params.clone()
        else:
            params = PolicyParams.initialize(arch, self.rngs["init"])
        self.pretrain_report = None
        if pretrain_set is not None:
            self.pretrain_report = pretrain(params, pretrain_set, cfg, self.rngs["pretrain"])
        self.pair = ModelPair.from_policy(params)
        self.env = Environment(pool, cfg.eta)
        self.opt = Adam(params.trainable(), lr=cfg.rl_lr)

    def _select_action(self, state) -> int:
        with nn.no_grad():
            probs = forward(self.pair.policy, state, training=False).data
        if self.cfg.action_mode == "argmax":
            return int(np.argmax(probs))
        p = np.asarray(probs, dtype=np.float64)
        p /= p.sum()
        return int(self.rngs["action"].choice(len(p), p=p))

    def episodes(self):
        cfg = self.cfg
        rolling = RollingWindow(window=200)
        target_cache: dict = {}
        for ep in range(1, cfg.num_episodes + 1):
            t0 = self.clock() if self.clock else 0.0
            history = EpisodeHistory()
            state = self.env.reset(self.rngs["episodes"])
            done = False
            while not done:
                action = self._select_action(state)
                next_state, r, done = self.env.step(action)
                history.add(state, action, r)
                state = next_state
            history.compute_returns(cfg.gamma)
            loss = train_episode(self.pair, history, cfg, self.opt, self.rngs["dropout"], target_cache)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"episode {ep}: non-finite loss {loss!r}")
            if ep % cfg.sync_interval == 0:
                sync_target(self.pair)
                target_cache.clear()

            reward_sum = int(sum(history.rewards))
            accuracy = (reward_sum + cfg.eta) / (2 * cfg.eta)
            correct = sum(1 for r in history.rewards if r > 0)
            assert accuracy == correct / cfg.eta, "episode accuracy identity violated"
            mean, std = rolling.push(accuracy)
            wall_ms = int(round(((self.clock() - t0) if self.clock else 0.0) * 1000))
            yield EpisodeMetrics(
                episode=ep,
                accuracy=accuracy,
                reward_sum=reward_sum,
                loss=loss,
                rolling_mean=mean,
                rolling_std=std,
                wall_ms=wall_ms,
            )


def run(
    cfg: RLConfig,
    arch: ArchConfig,
    pool: list[tuple],
    init_params: PolicyParams | None = None,
    pretrain_set: list[tuple] | None = None,
    measure_time: bool = False,
):
    """Convenience wrapper: build an RLRun and stream its metrics."""
    rl = RLRun(
        cfg,
        arch,
        pool,
        init_params=init_params,
        pretrain_set=pretrain_set,
        clock=time.perf_counter if measure_time else None,
    )
    return rl, rl.episodes()
