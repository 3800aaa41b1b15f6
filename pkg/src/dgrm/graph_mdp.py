"""Labeled graph-based multi-agent MDPs coupled with per-agent reward machines.

Each agent owns a local state, a local action set and a reward machine. Local
transitions may depend on the states and actions of the agent's graph
neighborhood; labels and rewards depend only on the agent's own transition.
``global_step`` advances all agents synchronously from a common snapshot, so
the outcome is invariant to the order agents are processed in.
"""

from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .reward_machine import EMPTY_EVENT, Event, RewardMachine

LocalState = Hashable


class GraphMdpError(ValueError):
    """Invalid graph, state or action supplied to an environment operation."""


@dataclass(frozen=True)
class AgentGraph:
    """Undirected interaction graph over agents ``0..n-1``.

    ``N(i)`` always contains ``i`` itself; self-edges are rejected.
    """

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n <= 0:
            raise GraphMdpError("agent count must be positive")
        normalized = set()
        for a, b in self.edges:
            if a == b:
                raise GraphMdpError(f"self-edge on agent {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise GraphMdpError(f"edge ({a},{b}) endpoint out of range")
            normalized.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(normalized))
        adjacency = [set([i]) for i in range(self.n)]
        for a, b in self.edges:
            adjacency[a].add(b)
            adjacency[b].add(a)
        object.__setattr__(self, "_adjacency", tuple(tuple(sorted(s)) for s in adjacency))

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Agents adjacent to ``i``, including ``i``, ascending."""
        self._check_agent(i)
        return self._adjacency[i]

    def _check_agent(self, i: int) -> None:
        if not (0 <= i < self.n):
            raise GraphMdpError(f"agent {i} out of range [0, {self.n})")


def chain_graph(n: int) -> AgentGraph:
    return AgentGraph(n, frozenset((i, i + 1) for i in range(n - 1)))


def clique_graph(n: int) -> AgentGraph:
    return AgentGraph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def neighborhood(graph: AgentGraph, i: int, kappa: int) -> tuple[int, ...]:
    """All agents within shortest-path distance ``kappa`` of ``i``, ascending.

    The ascending order makes joint keys over the neighborhood canonical.
    """
    graph._check_agent(i)
    if kappa < 0:
        raise GraphMdpError("kappa must be >= 0")
    seen = {i}
    frontier = [i]
    for _ in range(kappa):
        nxt = []
        for u in frontier:
            for v in graph.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    return tuple(sorted(seen))


class LocalObservation(NamedTuple):
    """What a localized policy sees: the agent's MDP state and RM state index."""

    s: LocalState
    u: int


@dataclass(frozen=True)
class GlobalState:
    mdp_states: tuple
    rm_states: tuple[int, ...]
    t: int = 0

    def __post_init__(self):
        if len(self.mdp_states) != len(self.rm_states):
            raise GraphMdpError("mdp_states and rm_states lengths differ")


@dataclass(frozen=True)
class StepOutcome:
    next_state: GlobalState
    rewards: tuple[float, ...]
    labels: tuple[Event, ...]
    done: tuple[bool, ...]


class EpisodeRng:
    """Counter-based randomness: one independent stream per (step, agent).

    Perturbing one agent's inputs never shifts another agent's draws, which is
    what makes the transition-locality tests meaningful.
    """

    def __init__(self, seed: int, episode: int = 0):
        self.seed = int(seed)
        self.episode = int(episode)

    def stream(self, t: int, agent: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.episode, 2, t, agent])


class GraphMdpEnv(ABC):
    """Contract for environments usable by the training loops and the oracle.

    Subclasses set ``graph`` and ``machines`` (one reward machine per agent)
    and implement the local dynamics. ``local_transition`` receives exactly the
    ``graph.neighbors(i)``-restricted state/action tuples, which structurally
    enforces transition locality.
    """

    graph: AgentGraph
    machines: Sequence[RewardMachine]

    @property
    def n_agents(self) -> int:
        return self.graph.n

    @abstractmethod
    def n_actions(self, i: int) -> int: ...

    @abstractmethod
    def reset(self) -> GlobalState: ...

    @abstractmethod
    def local_transition(
        self, i: int, states: tuple, actions: tuple[int, ...]
    ) -> dict[LocalState, float]:
        """Distribution of agent ``i``'s next state given its neighborhood.

        ``states`` and ``actions`` are restricted to ``graph.neighbors(i)`` in
        ascending agent order. Keys must be inserted deterministically.
        """

    @abstractmethod
    def label(self, i: int, s: LocalState, a: int, s_next: LocalState) -> Event: ...

    def legal_actions(self, i: int, s: LocalState) -> tuple[int, ...]:
        return tuple(range(self.n_actions(i)))

    def enumerate_local_states(self, i: int) -> tuple:
        """Finite local state space; required only for tabular/oracle use."""
        raise NotImplementedError(f"{type(self).__name__} does not enumerate local states")

    def state_features(self, i: int, s: LocalState) -> tuple[float, ...]:
        """Raw numeric features of a local state; required for deep training."""
        raise NotImplementedError(f"{type(self).__name__} does not expose state features")

    def feature_ranges(self, i: int) -> tuple[tuple[float, float], ...]:
        raise NotImplementedError(f"{type(self).__name__} does not expose feature ranges")

    def encode_local(self, i: int, s: LocalState) -> str:
        """Compact text encoding of a local state for trajectory logs."""
        return repr(s)

    def initial_done(self) -> tuple[bool, ...]:
        state = self.reset()
        return tuple(
            self.machines[i].is_terminal_index(state.rm_states[i]) for i in range(self.n_agents)
        )


def _sample_from(dist: dict, gen: np.random.Generator):
    total = 0.0
    draw = gen.random()
    last = None
    for value, p in dist.items():
        if p < 0:
            raise GraphMdpError("negative transition probability")
        total += p
        last = value
        if draw < total:
            return value
    if abs(total - 1.0) > 1e-9:
        raise GraphMdpError(f"transition distribution sums to {total}")
    return last


def global_step(
    env: GraphMdpEnv,
    state: GlobalState,
    actions: Sequence[int],
    rng: EpisodeRng,
    agent_order: Sequence[int] | None = None,
) -> StepOutcome:
    """Advance every agent one synchronous step from the same snapshot.

    Agents whose RM state is a goal or sink are frozen: their MDP state is
    kept, they emit the empty label and reward 0. ``agent_order`` only changes
    the processing order, never the outcome; it exists so tests can check that.
    """
    n = env.n_agents
    if len(actions) != n:
        raise GraphMdpError(f"expected {n} actions, got {len(actions)}")
    order = range(n) if agent_order is None else agent_order
    if agent_order is not None and sorted(agent_order) != list(range(n)):
        raise GraphMdpError("agent_order must be a permutation of all agents")

    next_mdp: list = [None] * n
    next_rm: list[int] = [0] * n
    rewards: list[float] = [0.0] * n
    labels: list[Event] = [EMPTY_EVENT] * n
    done: list[bool] = [False] * n

    for i in order:
        a_i = actions[i]
        machine = env.machines[i]
        u_i = state.rm_states[i]
        s_i = state.mdp_states[i]
        if machine.is_terminal_index(u_i):
            next_mdp[i], next_rm[i], done[i] = s_i, u_i, True
            continue
        if not (0 <= a_i < env.n_actions(i)):
            raise GraphMdpError(f"action {a_i} out of range for agent {i}")
        nbrs = env.graph.neighbors(i)
        dist = env.local_transition(
            i,
            tuple(state.mdp_states[j] for j in nbrs),
            tuple(actions[j] for j in nbrs),
        )
        s_next = _sample_from(dist, rng.stream(state.t, i))
        ev = env.label(i, s_i, a_i, s_next)
        u_next, r = machine.step_indexed(u_i, ev)
        next_mdp[i] = s_next
        next_rm[i] = u_next
        rewards[i] = r
        labels[i] = ev
        done[i] = machine.is_terminal_index(u_next)

    return StepOutcome(
        next_state=GlobalState(tuple(next_mdp), tuple(next_rm), state.t + 1),
        rewards=tuple(rewards),
        labels=tuple(labels),
        done=tuple(done),
    )


def global_reward(rewards: Sequence[float]) -> float:
    """Mean of the per-agent rewards."""
    if len(rewards) == 0:
        raise GraphMdpError("global reward of zero agents is undefined")
    return float(sum(rewards)) / len(rewards)


def discounted_return(reward_seq: Sequence[float], gamma: float) -> float:
    """Sum of gamma**t * r_t over a finite reward sequence."""
    acc = 0.0
    g = 1.0
    for r in reward_seq:
        acc += g * r
        g *= gamma
    return acc


TRAJECTORY_COLUMNS = ("episode", "t", "agent", "s", "u", "a", "r")


def write_trajectory_csv(path, rows: Iterable[Mapping]) -> None:
    """Write per-(step, agent) trajectory rows with the documented columns."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def trajectory_rows(
    env: GraphMdpEnv,
    episode: int,
    states: Sequence[GlobalState],
    actions: Sequence[Sequence[int]],
    rewards: Sequence[Sequence[float]],
):
    """Flatten one episode into trajectory-log rows."""
    for t, (state, acts, rews) in enumerate(zip(states, actions, rewards)):
        for i in range(env.n_agents):
            yield {
                "episode": episode,
                "t": t,
                "agent": i,
                "s": env.encode_local(i, state.mdp_states[i]),
                "u": env.machines[i].state_id(state.rm_states[i]),
                "a": acts[i],
                "r": rews[i],
            }
