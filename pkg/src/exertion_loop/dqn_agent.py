"""Deep Q-network for the binary motor ON/OFF decision."""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import BufferNotReady, NumericError, ShapeError
from .nn import Adam, Conv1d, Flatten, Linear, ReLU, Sequential, smooth_l1

FRAME_FEATURES = 11  # hr, velocity, previous action, 8-d ECG embedding
FRAMES = 2
OBS_LENGTH = FRAME_FEATURES * FRAMES


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    lr: float = 5e-4
    batch_size: int = 32
    buffer_size: int = 120
    eps_start: float = 0.99
    eps_end: float = 0.05
    eps_decay: float = 150.0  # agent steps
    tau: float = 0.005
    grad_clip: float = 100.0
    conv_kernel: int = 5
    conv_padding: int = 4
    seed: int = 0


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    next_observation: np.ndarray
    terminal: bool

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise NumericError(f"transition reward must be finite, got {self.reward}")
        if self.action not in (0, 1):
            raise ValueError(f"action must be 0 or 1, got {self.action}")


class QNetwork(Sequential):
    """Two 1-D convolutions (1->8->16 channels) then 128 -> 32 -> 2 dense layers."""

    def __init__(self, obs_length: int = OBS_LENGTH, kernel_size: int = 5, padding: int = 4,
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        conv1 = Conv1d(1, 8, kernel_size, padding, rng, dtype)
        conv2 = Conv1d(8, 16, kernel_size, padding, rng, dtype)
        flat_len = 16 * conv2.output_length(conv1.output_length(obs_length))
        super().__init__(
            conv1, ReLU(), conv2, ReLU(), Flatten(),
            Linear(flat_len, 128, rng, dtype), ReLU(),
            Linear(128, 32, rng, dtype), ReLU(),
            Linear(32, 2, rng, dtype),
        )
        self.obs_length = obs_length
        self.flat_features = flat_len
        self.dtype = dtype

    def q_values(self, obs) -> np.ndarray:
        x = np.asarray(obs, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim == 2:
            x = x[:, None, :]
        if x.shape[1:] != (1, self.obs_length):
            raise ShapeError(f"observations must have length {self.obs_length}, got shape {x.shape}")
        return self.forward(x)


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling without replacement."""

    def __init__(self, capacity: int = 120):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def ready(self, n: int) -> bool:
        return len(self._items) >= n

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if not self.ready(n):
            raise BufferNotReady(f"buffer holds {len(self._items)} transitions, batch needs {n}")
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]

    def __iter__(self):
        return iter(self._items)


def push_transition(buffer: ReplayBuffer, transition: Transition) -> None:
    buffer.push(transition)


def sample_batch(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> list[Transition] | None:
    """Uniform batch, or ``None`` when the buffer is still too small (skip the update)."""
    if not buffer.ready(n):
        return None
    return buffer.sample(n, rng)


def epsilon_at(step: int, eps_start: float = 0.99, eps_end: float = 0.05, decay: float = 150.0) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    return eps_end + (eps_start - eps_end) * math.exp(-step / decay)


def select_action(net: QNetwork, obs, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; ties in Q go to action 0 (motor OFF)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(2))
    return greedy_action(net.q_values(obs)[0])


def greedy_action(q) -> int:
    return int(np.argmax(q))


def td_targets(rewards, next_q_max, terminal, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    bootstrap = np.where(np.asarray(terminal, dtype=bool), 0.0, gamma * np.asarray(next_q_max, dtype=np.float64))
    return rewards + bootstrap


def td_update(policy: QNetwork, target: QNetwork, batch: list[Transition], gamma: float,
              optimizer: Adam) -> float:
    """One smooth-L1 TD step on ``batch``; the target network is only read."""
    obs = np.stack([t.observation for t in batch])
    next_obs = np.stack([t.next_observation for t in batch])
    actions = np.array([t.action for t in batch])
    rewards = np.array([t.reward for t in batch])
    terminal = np.array([t.terminal for t in batch])

    next_q = target.q_values(next_obs).max(axis=1)
    y = td_targets(rewards, next_q, terminal, gamma)
    q = policy.q_values(obs)
    rows = np.arange(len(batch))
    loss, g = smooth_l1(q[rows, actions].astype(np.float64), y)
    if not math.isfinite(loss):
        raise NumericError("TD loss is not finite; update aborted")
    grad_q = np.zeros_like(q)
    grad_q[rows, actions] = g
    optimizer.zero_grad()
    policy.backward(grad_q)
    optimizer.step()
    return loss


def soft_update(target: QNetwork, policy: QNetwork, tau: float = 0.005) -> None:
    tp = list(target.named_parameters())
    pp = list(policy.named_parameters())
    if [n for n, _ in tp] != [n for n, _ in pp]:
        raise ShapeError("target and policy networks have different layouts")
    for (name, t), (_, p) in zip(tp, pp):
        if t.shape != p.shape:
            raise ShapeError(f"{name}: target shape {t.shape} vs policy shape {p.shape}")
        t.value *= 1.0 - tau
        t.value += tau * p.value


class DQNAgent:
    """Policy/target pair with replay, epsilon schedule and one update per step."""

    def __init__(self, config: AgentConfig = AgentConfig(), obs_length: int = OBS_LENGTH):
        self.config = config
        self.policy = QNetwork(obs_length, config.conv_kernel, config.conv_padding, seed=config.seed)
        self.target = copy.deepcopy(self.policy)
        self.optimizer = Adam(list(self.policy.named_parameters()), lr=config.lr,
                              clip=(-config.grad_clip, config.grad_clip))
        self.buffer = ReplayBuffer(config.buffer_size)
        self.rng = np.random.default_rng(config.seed)
        self.steps = 0

    def epsilon(self) -> float:
        c = self.config
        return epsilon_at(self.steps, c.eps_start, c.eps_end, c.eps_decay)

    def act(self, obs, epsilon: float | None = None) -> int:
        return select_action(self.policy, obs, self.epsilon() if epsilon is None else epsilon, self.rng)

    def observe(self, transition: Transition) -> float | None:
        """Store a transition, learn from a replay batch, nudge the target network."""
        self.buffer.push(transition)
        self.steps += 1
        batch = sample_batch(self.buffer, self.config.batch_size, self.rng)
        loss = None
        if batch is not None:
            loss = td_update(self.policy, self.target, batch, self.config.gamma, self.optimizer)
        soft_update(self.target, self.policy, self.config.tau)
        return loss
