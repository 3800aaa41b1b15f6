"""Small synthetic environments with enumerable product spaces.

These are the fixtures the exact oracle runs on: binary local states and
actions, a two-state toggling reward machine per agent, and local transition
probabilities drawn from seeded tables. The label of a transition depends only
on the agent's current state and action, so the per-step reward is a function
of the current (state, RM state, action) triple.
"""

from __future__ import annotations

import numpy as np

from ..graph_mdp import (
    AgentGraph,
    GlobalState,
    GraphMdpEnv,
    chain_graph,
    clique_graph,
)
from ..reward_machine import EMPTY_EVENT, EventSet, RewardMachine

_FIRE = frozenset({"p"})


def _toggle_machine(reward_hi: float, reward_lo: float) -> RewardMachine:
    return RewardMachine(
        states=("u0", "u1"),
        initial="u0",
        events=EventSet(("p",)),
        transitions={("u0", _FIRE): "u1", ("u1", _FIRE): "u0"},
        rewards={("u0", _FIRE): reward_hi, ("u1", _FIRE): reward_lo},
    )


class SyntheticEnv(GraphMdpEnv):
    """Binary-state agents on an arbitrary graph with tunable coupling.

    Each agent's probability of moving to local state 1 is a seeded base value
    in (0, 1) that depends on its own (state, action), shifted by ``coupling``
    times a seeded term that depends on the full neighborhood configuration.
    At ``coupling == 0`` the agents are fully decoupled.
    """

    N_LOCAL_STATES = 2
    N_ACTIONS = 2

    def __init__(self, graph: AgentGraph, coupling: float, seed: int):
        if not 0.0 <= coupling <= 1.0:
            raise ValueError("coupling must be in [0, 1]")
        self.graph = graph
        self.coupling = float(coupling)
        self.seed = int(seed)
        self.machines = tuple(_toggle_machine(1.0, 0.5) for _ in range(graph.n))
        rng = np.random.default_rng([seed, 0xC0])
        self._base = [rng.uniform(0.25, 0.75, size=(2, 2)) for _ in range(graph.n)]
        self._shift = []
        for i in range(graph.n):
            k = len(graph.neighbors(i))
            self._shift.append(rng.uniform(-0.45, 0.45, size=(2**k, 2**k)))

    def n_actions(self, i: int) -> int:
        return self.N_ACTIONS

    def enumerate_local_states(self, i: int) -> tuple:
        return (0, 1)

    def reset(self) -> GlobalState:
        n = self.graph.n
        return GlobalState(
            mdp_states=(0,) * n,
            rm_states=tuple(m.initial_index for m in self.machines),
            t=0,
        )

    @staticmethod
    def _pack(bits: tuple[int, ...]) -> int:
        code = 0
        for b in bits:
            code = (code << 1) | b
        return code

    def transition_prob_one(self, i: int, states: tuple, actions: tuple[int, ...]) -> float:
        """P(next local state = 1) for agent i given its neighborhood."""
        own = self.graph.neighbors(i).index(i)
        s_i, a_i = states[own], actions[own]
        p = self._base[i][s_i, a_i]
        if self.coupling > 0.0:
            p = p + self.coupling * self._shift[i][self._pack(states), self._pack(actions)]
        return float(min(max(p, 0.02), 0.98))

    def local_transition(self, i, states, actions):
        p1 = self.transition_prob_one(i, states, actions)
        return {0: 1.0 - p1, 1: p1}

    def label(self, i, s, a, s_next):
        return _FIRE if (s == 1 and a == 1) else EMPTY_EVENT

    def state_features(self, i, s):
        return (float(s),)

    def feature_ranges(self, i):
        return ((0.0, 1.0),)


def make_chain_env(n: int, coupling: float, seed: int) -> SyntheticEnv:
    """n-agent chain 0-1-...-(n-1); the standard oracle fixture."""
    return SyntheticEnv(chain_graph(n), coupling, seed)


def make_clique_env(n: int, coupling: float, seed: int) -> SyntheticEnv:
    return SyntheticEnv(clique_graph(n), coupling, seed)
