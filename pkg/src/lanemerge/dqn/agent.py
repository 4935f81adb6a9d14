"""Replay-based Dueling DQN training."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import N_ACTIONS, STATE_DIM, EnvExhausted, MergeEnv, shift_reward
from .network import SGD, Adam, DuelingNetwork, NetworkFault

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    max_steps: int = 150_000
    max_episodes: int | None = None
    replay_capacity: int = 50_000
    batch_size: int = 64
    gamma: float = 0.95
    learning_rate: float = 5e-4
    optimizer: str = "adam"
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.5
    target_sync: int = 500
    learning_starts: int = 1_000
    train_every: int = 1
    hidden: tuple[int, int] = (64, 64)
    demonstration_episodes: int = 0
    huber_delta: float | None = None
    grad_clip: float | None = None
    eval_every: int = 0
    eval_episodes: int = 50

    def epsilon(self, step: int) -> float:
        horizon = self.epsilon_fraction * self.max_steps
        if horizon <= 0:
            return self.epsilon_end
        frac = min(1.0, step / horizon)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions stored column-wise."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action: int, reward: float, next_state, terminal: bool) -> None:
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminals[idx]


def td_targets(target_net: DuelingNetwork, rewards, next_states, terminals, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    if gamma == 0.0:
        return rewards.copy()
    q_next = target_net.q_values(next_states).max(axis=1)
    return rewards + gamma * q_next * (~np.asarray(terminals, dtype=bool))


def loss_and_gradients(net: DuelingNetwork, states, actions, targets, huber_delta: float | None = None) -> tuple[float, dict]:
    """Mean squared TD error on the taken actions (or mean Huber loss when ``huber_delta`` is set)."""
    q, cache = net.forward(states)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    dq = np.zeros_like(q)
    if huber_delta is None:
        loss = float(np.mean(err * err))
        dq[rows, actions] = 2.0 * err / len(actions)
    else:
        a = np.abs(err)
        quad = np.minimum(a, huber_delta)
        loss = float(np.mean(0.5 * quad * quad + huber_delta * (a - quad)))
        dq[rows, actions] = np.clip(err, -huber_delta, huber_delta) / len(actions)
    return loss, net.backward(cache, dq)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the original norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def train_step(
    net: DuelingNetwork,
    target_net: DuelingNetwork,
    batch,
    gamma: float,
    learning_rate: float,
    optimizer=None,
    huber_delta: float | None = None,
    grad_clip: float | None = None,
) -> float:
    """One gradient update on the taken-action squared TD error; returns the loss before the update."""
    states, actions, rewards, next_states, terminals = batch
    if len(actions) == 0:
        raise ValueError("empty batch")
    targets = td_targets(target_net, rewards, next_states, terminals, gamma)
    loss, grads = loss_and_gradients(net, states, np.asarray(actions, dtype=np.int64), targets, huber_delta)
    if not np.isfinite(loss):
        raise NetworkFault(
            "non-finite loss; diagnostic: "
            + json.dumps(
                {
                    "loss": repr(loss),
                    "targets_finite": bool(np.all(np.isfinite(targets))),
                    "states_finite": bool(np.all(np.isfinite(states))),
                    "weight_max_abs": {k: float(np.nanmax(np.abs(v))) for k, v in net.params.items()},
                }
            )
        )
    if grad_clip is not None:
        clip_gradients(grads, grad_clip)
    (optimizer or SGD(lr=learning_rate)).step(net.params, grads, learning_rate)
    return loss


@dataclass
class RewardRecord:
    step: int
    episode: int
    variant: str
    reward: float


@dataclass
class TrainingResult:
    net: DuelingNetwork
    variant: str
    rewards: list[RewardRecord] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    outcomes: list[str] = field(default_factory=list)
    steps: int = 0
    episodes: int = 0
    exhausted: bool = False
    seconds: float = 0.0
    checkpoint_step: int | None = None
    validation_history: list[tuple[int, float]] = field(default_factory=list)

    def reward_values(self) -> np.ndarray:
        return np.array([r.reward for r in self.rewards])


def run_training(
    env: MergeEnv,
    variant: str,
    config: TrainingConfig = TrainingConfig(),
    seed: int = 0,
    validation=None,
) -> TrainingResult:
    """Epsilon-greedy DQN with uniform replay and a hard-synced target network.

    With ``validation`` episodes and ``config.eval_every`` set, the greedy
    policy is scored periodically and the best-scoring weights are returned.
    """
    shift_reward(0.0, variant)  # validates the variant name
    rng = np.random.default_rng(seed)
    net = DuelingNetwork(STATE_DIM, N_ACTIONS, config.hidden, seed=seed)
    target = net.copy()
    if config.optimizer == "adam":
        opt = Adam(net.params, lr=config.learning_rate)
    elif config.optimizer == "sgd":
        opt = SGD(lr=config.learning_rate)
    else:
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    buf = ReplayBuffer(config.replay_capacity)
    if config.demonstration_episodes:
        _prefill(buf, env, variant, config.demonstration_episodes)
    result = TrainingResult(net=net, variant=variant)
    started = time.perf_counter()
    val_eps = list(validation or [])[: config.eval_episodes] if config.eval_every else []
    best: tuple[float, int, DuelingNetwork] | None = None

    def checkpoint(at: int) -> None:
        nonlocal best
        rate = evaluate(net, val_eps, env.params, env.follower_slowdown).success_rate
        result.validation_history.append((at, rate))
        log.info("step %d validation success %.3f", at, rate)
        if best is None or rate > best[0]:
            best = (rate, at, net.copy())

    step = 0
    episode = 0
    state = None
    while step < config.max_steps:
        if state is None:
            if config.max_episodes is not None and episode >= config.max_episodes:
                break
            try:
                state = env.reset()
            except EnvExhausted:
                result.exhausted = True
                log.info("environment exhausted after %d episodes", episode)
                break
        if rng.random() < config.epsilon(step):
            action = int(rng.integers(N_ACTIONS))
        else:
            action = int(np.argmax(net.q_values(state)[0]))
        res = env.step(action)
        reward = shift_reward(res.reward, variant)
        buf.add(state, action, reward, res.state, res.terminal)
        result.rewards.append(RewardRecord(step, episode, variant, reward))
        step += 1
        if step >= config.learning_starts and step % config.train_every == 0:
            loss = train_step(
                net, target, buf.sample(rng, config.batch_size), config.gamma, config.learning_rate, opt,
                config.huber_delta, config.grad_clip,
            )
            result.losses.append(loss)
        if val_eps and step % config.eval_every == 0:
            checkpoint(step)
        if step % config.target_sync == 0:
            target.load_state(net)
        if res.terminal or res.truncated:
            result.outcomes.append(res.outcome or "timeout")
            episode += 1
            state = None
            if episode % 100 == 0:
                recent = result.outcomes[-100:]
                log.info(
                    "step %d episode %d eps %.3f success %.2f",
                    step, episode, config.epsilon(step), recent.count("success") / len(recent),
                )
        else:
            state = res.state
    net.check_finite()
    if val_eps:
        if not result.validation_history or result.validation_history[-1][0] != step:
            checkpoint(step)
        result.net = best[2]
        result.checkpoint_step = best[1]
    result.steps = step
    result.episodes = episode
    result.seconds = time.perf_counter() - started
    return result


def _prefill(buf: ReplayBuffer, env: MergeEnv, variant: str, episodes: int) -> None:
    """Seed the replay buffer with reference-controller rollouts on the training episodes.

    These transitions are not counted as training steps and are not logged.
    """
    from .env import ScenarioRunner, reference_action

    for ep in env.episodes[:episodes]:
        runner = ScenarioRunner(ep, env.params, env.follower_slowdown)
        state = runner.state()
        while True:
            action = reference_action(runner)
            res = runner.step(action)
            buf.add(state, action, shift_reward(res.reward, variant), res.state, res.terminal)
            if res.terminal or res.truncated:
                break
            state = res.state


def greedy_policy(net: DuelingNetwork):
    return lambda state: int(np.argmax(net.q_values(state)[0]))


@dataclass
class EvaluationSummary:
    episodes: int
    successes: int
    outcomes: dict[str, int]
    mean_steps: float
    rewards: list[float] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0


def evaluate(net: DuelingNetwork, episodes, params=None, follower_slowdown: bool = True) -> EvaluationSummary:
    """Greedy rollouts; success means M ended in a safe slot."""
    from ..geometry import SafetyParams
    from .env import ScenarioRunner

    params = params or SafetyParams()
    policy = greedy_policy(net)
    counts: dict[str, int] = {}
    steps = []
    rewards: list[float] = []
    for ep in episodes:
        runner = ScenarioRunner(ep, params, follower_slowdown)
        outcome = runner.outcome
        state = runner.state()
        while outcome is None:
            res = runner.step(policy(state))
            rewards.append(res.reward)
            state, outcome = res.state, res.outcome
            if res.truncated:
                outcome = "timeout"
        counts[outcome] = counts.get(outcome, 0) + 1
        steps.append(runner.t)
    n = len(steps)
    return EvaluationSummary(n, counts.get("success", 0), counts, float(np.mean(steps)) if n else 0.0, rewards)


def write_reward_log(records, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "episode", "variant", "reward"])
        for r in records:
            w.writerow([r.step, r.episode, r.variant, repr(float(r.reward))])


def read_reward_log(path: str | Path) -> list[RewardRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            RewardRecord(int(row["step"]), int(row["episode"]), row["variant"], float(row["reward"]))
            for row in csv.DictReader(fh)
        ]


def reward_histogram(rewards, variant: str, bins: int = 20) -> list[tuple[float, float, int]]:
    """Counts over equal-width bins spanning the variant's codomain; the top edge is inclusive."""
    lo = 0.0 if variant == "positive" else -1.0
    edges = lo + np.arange(bins + 1) / bins
    r = np.asarray(rewards, dtype=float)
    idx = np.clip(np.floor((r - lo) * bins + 1e-9).astype(np.int64), 0, bins - 1) if r.size else np.array([], dtype=np.int64)
    counts = np.bincount(idx, minlength=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def write_histogram(hist, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in hist:
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", c])


def top_quartile_mass(hist) -> float:
    """Fraction of all counts in the highest quarter of the bins."""
    counts = np.array([c for _, _, c in hist])
    total = counts.sum()
    if total == 0:
        return 0.0
    q = len(counts) - len(counts) // 4
    return float(counts[q:].sum() / total)


def save_config(config: TrainingConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(config), indent=2) + "\n", encoding="utf-8")
