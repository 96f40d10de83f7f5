"""Fixed-capacity FIFO replay buffer of executed transitions."""
from typing import NamedTuple

import numpy as np

from rgrl.numkit import RngStream


class Transition(NamedTuple):
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    # max{0, g_j(a;s)} per inequality of the executed action
    violation: np.ndarray
    done: bool


class Batch(NamedTuple):
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    violation: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int, n_ineq: int, rng: RngStream):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self.obs = np.zeros((capacity, state_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, state_dim))
        self.violation = np.zeros((capacity, n_ineq))
        self.done = np.zeros(capacity, dtype=bool)
        # next slot to write; wraps around at capacity
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, transition: Transition) -> None:
        i = self.cursor
        self.obs[i] = transition.obs
        self.action[i] = transition.action
        self.reward[i] = transition.reward
        self.next_obs[i] = transition.next_obs
        self.violation[i] = transition.violation
        self.done[i] = transition.done
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        """Uniform batch without replacement; smaller than batch_size while the buffer is short."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        index = self.rng.choice(self.size, min(batch_size, self.size), replace=False)
        return Batch(
            self.obs[index].copy(),
            self.action[index].copy(),
            self.reward[index].copy(),
            self.next_obs[index].copy(),
            self.violation[index].copy(),
            self.done[index].copy(),
        )
