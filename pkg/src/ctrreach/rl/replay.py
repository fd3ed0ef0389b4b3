"""Transition ring buffer and hindsight goal relabeling.

Completed episodes are relabeled on insertion: each transition is stored
once with its original goal plus k copies whose desired goal is the achieved
goal of a uniformly drawn future step ("future" strategy). Relabeled rewards
are recomputed from the stored ground-truth goals and the tolerance recorded
at that timestep, so they satisfy the sparse reward rule exactly.
"""
from __future__ import annotations

import numpy as np

from ..env import GOAL_DELTA_SLICE, Transition


def relabeled_transition(tr: Transition, new_goal: np.ndarray) -> Transition:
    """Rewrite one transition against a different desired goal.

    The observation's goal-delta block shifts by (old goal - new goal); the
    reward and success terminal are recomputed from the stored achieved goal
    and tolerance.
    """
    shift = tr.desired_goal - new_goal
    state = tr.state.copy()
    next_state = tr.next_state.copy()
    state[GOAL_DELTA_SLICE] += shift
    next_state[GOAL_DELTA_SLICE] += shift
    error = float(np.linalg.norm(tr.achieved_goal - new_goal))
    success = error <= tr.tolerance
    return Transition(
        state=state,
        action=tr.action,
        reward=0.0 if success else -1.0,
        next_state=next_state,
        achieved_goal=tr.achieved_goal,
        desired_goal=np.asarray(new_goal, dtype=float).copy(),
        tolerance=tr.tolerance,
        terminal=success,
    )


def her_relabel(
    episode: list[Transition],
    k: int,
    rng: np.random.Generator,
) -> list[Transition]:
    """Original transitions plus k future-relabeled copies of each.

    The future index is drawn uniformly from the transition's own index to
    the episode end; index t relabels with the achieved goal of transition j,
    i.e. the tip reached after action j.
    """
    out = []
    n = len(episode)
    for t, tr in enumerate(episode):
        out.append(tr)
        for _ in range(k):
            j = int(rng.integers(t, n))
            out.append(relabeled_transition(tr, episode[j].achieved_goal))
    return out


class ReplayBuffer:
    """Fixed-capacity FIFO transition store backed by preallocated arrays."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int,
                 dtype=np.float32):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=dtype)
        self.rewards = np.zeros(capacity, dtype=dtype)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.terminals = np.zeros(capacity, dtype=dtype)
        self._next = 0
        self._size = 0
        self.inserted = 0
        self.evicted = 0

    def __len__(self) -> int:
        return self._size

    def add(self, tr: Transition) -> None:
        i = self._next
        self.obs[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_obs[i] = tr.next_state
        self.terminals[i] = 1.0 if tr.terminal else 0.0
        self._next = (i + 1) % self.capacity
        self.inserted += 1
        if self._size < self.capacity:
            self._size += 1
        else:
            self.evicted += 1

    def add_episode(self, episode: list[Transition], her_k: int,
                    rng: np.random.Generator) -> None:
        for tr in her_relabel(episode, her_k, rng):
            self.add(tr)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "terminals": self.terminals[idx],
        }
