"""Finite-state reward machines: construction, execution, parsing, validation.

A reward machine consumes high-level events (sets of propositions emitted by a
labeling function) and produces rewards while tracking progress through a task.
Machines are deterministic Mealy-style automata with a partial transition map;
any (state, event) pair without a defined transition is treated as a self-loop
with zero reward.

Text format (line oriented, UTF-8, ``#`` starts a comment)::

    states: u0 u1 u2 u3 u4
    initial: u0
    props: A P G L
    sinks: u4
    goals: u3
    u0 --A-> u1 : 5.0
    u0 --L-> u4 : 0.0
    u1 --P & X | Q-> u2 : 5.0

A transition label is a ``|``-separated list of alternatives, each alternative
a ``&``-separated set of propositions. Every alternative denotes one exact
event (matched set-for-set, not by formula satisfaction) and produces its own
transition entry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

Event = frozenset[str]

EMPTY_EVENT: Event = frozenset()


class RmError(ValueError):
    """Structural or usage error in a reward machine."""


class RmParseError(RmError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(f"{message}{loc}")


def make_event(props: Iterable[str]) -> Event:
    return frozenset(props)


@dataclass(frozen=True)
class EventSet:
    """Ordered alphabet of proposition identifiers.

    A concrete event is a subset of ``props``; ``encode`` maps it to a bitmask
    over the declared ordering, which is the canonical encoding used for keys.
    """

    props: tuple[str, ...]

    def __post_init__(self):
        if any(not p for p in self.props):
            raise RmError("proposition identifiers must be nonempty")
        if len(set(self.props)) != len(self.props):
            raise RmError("duplicate proposition identifiers")

    def __contains__(self, prop: str) -> bool:
        return prop in self.props

    def validate_event(self, ev: Iterable[str]) -> Event:
        ev = frozenset(ev)
        unknown = ev - set(self.props)
        if unknown:
            raise RmError(f"propositions outside alphabet: {sorted(unknown)}")
        return ev

    def encode(self, ev: Iterable[str]) -> int:
        ev = self.validate_event(ev)
        return sum(1 << i for i, p in enumerate(self.props) if p in ev)


@dataclass(frozen=True)
class RmRun:
    """States visited and rewards emitted by a run over a label sequence."""

    visited: tuple[str, ...]
    rewards: tuple[float, ...]


@dataclass(frozen=True)
class RewardMachine:
    """Deterministic reward machine over an event alphabet.

    ``transitions`` and ``rewards`` are partial maps keyed by
    ``(state_id, event)`` and must have identical domains. Undefined pairs
    self-loop with reward 0. ``sinks`` and ``goals`` are disjoint subsets of
    ``states``; entering either one ends an agent's task.
    """

    states: tuple[str, ...]
    initial: str
    events: EventSet
    transitions: Mapping[tuple[str, Event], str]
    rewards: Mapping[tuple[str, Event], float]
    sinks: frozenset[str] = frozenset()
    goals: frozenset[str] = frozenset()

    # interned lookup tables, built once in __post_init__
    _index: dict[str, int] = field(init=False, repr=False, compare=False)
    _step_table: dict[tuple[int, Event], tuple[int, float]] = field(
        init=False, repr=False, compare=False
    )
    _terminal: frozenset[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.states)) != len(self.states):
            raise RmError("duplicate state ids")
        index = {u: k for k, u in enumerate(self.states)}
        if self.initial not in index:
            raise RmError(f"initial state {self.initial!r} not declared")
        for name, group in (("sink", self.sinks), ("goal", self.goals)):
            for u in group:
                if u not in index:
                    raise RmError(f"{name} state {u!r} not declared")
        if self.sinks & self.goals:
            raise RmError(f"states marked both sink and goal: {sorted(self.sinks & self.goals)}")
        if set(self.transitions) != set(self.rewards):
            raise RmError("transition and reward domains differ")
        step_table: dict[tuple[int, Event], tuple[int, float]] = {}
        for (u, ev), v in self.transitions.items():
            if u not in index:
                raise RmError(f"transition from undeclared state {u!r}")
            if v not in index:
                raise RmError(f"transition to undeclared state {v!r}")
            ev = self.events.validate_event(ev)
            step_table[(index[u], ev)] = (index[v], float(self.rewards[(u, ev)]))
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_step_table", step_table)
        object.__setattr__(
            self,
            "_terminal",
            frozenset(index[u] for u in self.sinks | self.goals),
        )

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def initial_index(self) -> int:
        return self._index[self.initial]

    def index(self, u: str) -> int:
        try:
            return self._index[u]
        except KeyError:
            raise RmError(f"unknown RM state id {u!r}") from None

    def state_id(self, idx: int) -> str:
        return self.states[idx]

    def is_terminal_index(self, idx: int) -> bool:
        return idx in self._terminal

    def step_indexed(self, u_idx: int, ev: Event) -> tuple[int, float]:
        """Hot-path step on interned indices; implicit zero-reward self-loop."""
        hit = self._step_table.get((u_idx, ev))
        if hit is not None:
            return hit
        if not ev <= set(self.events.props):
            raise RmError(f"propositions outside alphabet: {sorted(ev - set(self.events.props))}")
        return u_idx, 0.0


def rm_step(rm: RewardMachine, u: str, ev: Iterable[str]) -> tuple[str, float]:
    """Advance one step from state ``u`` on event ``ev``.

    Returns the successor state and emitted reward; undefined (state, event)
    pairs self-loop with reward 0.
    """
    ev = rm.events.validate_event(ev)
    v_idx, r = rm.step_indexed(rm.index(u), ev)
    return rm.state_id(v_idx), r


def rm_run(rm: RewardMachine, labels: Sequence[Iterable[str]]) -> RmRun:
    """Fold ``rm_step`` over a label sequence starting at the initial state."""
    visited = [rm.initial]
    rewards: list[float] = []
    u = rm.initial
    for ev in labels:
        u, r = rm_step(rm, u, ev)
        visited.append(u)
        rewards.append(r)
    return RmRun(tuple(visited), tuple(rewards))


_HEADER_KEYS = ("states", "initial", "props", "sinks", "goals")
_TRANSITION_RE = re.compile(r"^(\S+)\s*--(.*?)->\s*(\S+)\s*:\s*(\S+)\s*$")


def _parse_label(label: str, props: set[str], lineno: int, line: str) -> list[Event]:
    events: list[Event] = []
    for alt in label.split("|"):
        names = [p.strip() for p in alt.split("&")]
        if any(not p for p in names):
            raise RmParseError("empty proposition in event label", lineno)
        for p in names:
            if p not in props:
                raise RmParseError(f"undeclared proposition {p!r}", lineno, line.find(p) + 1)
        events.append(frozenset(names))
    return events


def rm_parse(text: str) -> RewardMachine:
    """Parse the line-oriented RM text format into a validated machine."""
    headers: dict[str, list[str]] = {}
    raw_transitions: list[tuple[int, str, str, str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, rest = line.partition(":")
        if sep and head.strip() in _HEADER_KEYS and "--" not in head:
            key = head.strip()
            if key in headers:
                raise RmParseError(f"duplicate {key!r} header", lineno)
            headers[key] = rest.split()
            continue
        m = _TRANSITION_RE.match(line)
        if not m:
            raise RmParseError("unrecognized line", lineno)
        raw_transitions.append((lineno, m.group(1), m.group(2).strip(), m.group(3), m.group(4)))

    for key in ("states", "initial", "props"):
        if key not in headers:
            raise RmParseError(f"missing {key!r} header")
    if len(headers["initial"]) != 1:
        raise RmParseError("initial must name exactly one state")

    states = tuple(headers["states"])
    declared = set(states)
    props = set(headers["props"])
    transitions: dict[tuple[str, Event], str] = {}
    rewards: dict[tuple[str, Event], float] = {}
    for lineno, src, label, dst, reward_text in raw_transitions:
        for name, state in (("source", src), ("target", dst)):
            if state not in declared:
                raise RmParseError(f"undeclared {name} state {state!r}", lineno)
        try:
            reward = float(reward_text)
        except ValueError:
            raise RmParseError(f"bad reward {reward_text!r}", lineno) from None
        for ev in _parse_label(label, props, lineno, label):
            if (src, ev) in transitions:
                raise RmParseError(
                    f"duplicate transition from {src!r} on {'&'.join(sorted(ev))}", lineno
                )
            transitions[(src, ev)] = dst
            rewards[(src, ev)] = reward

    try:
        return RewardMachine(
            states=states,
            initial=headers["initial"][0],
            events=EventSet(tuple(headers["props"])),
            transitions=transitions,
            rewards=rewards,
            sinks=frozenset(headers.get("sinks", ())),
            goals=frozenset(headers.get("goals", ())),
        )
    except RmError as exc:
        raise RmParseError(str(exc)) from exc


def rm_serialize(rm: RewardMachine) -> str:
    """Emit the text form of a machine; inverse of ``rm_parse``."""
    lines = [
        "states: " + " ".join(rm.states),
        "initial: " + rm.initial,
        "props: " + " ".join(rm.events.props),
    ]
    if rm.sinks:
        lines.append("sinks: " + " ".join(sorted(rm.sinks, key=rm.index)))
    if rm.goals:
        lines.append("goals: " + " ".join(sorted(rm.goals, key=rm.index)))
    entries = sorted(
        rm.transitions.items(),
        key=lambda kv: (rm.index(kv[0][0]), sorted(kv[0][1])),
    )
    for (u, ev), v in entries:
        lines.append(f"{u} --{'&'.join(sorted(ev))}-> {v} : {rm.rewards[(u, ev)]!r}")
    return "\n".join(lines) + "\n"


def rm_validate(rm: RewardMachine) -> list[str]:
    """Check semantic invariants; returns one diagnostic string per violation.

    Construction already guarantees structural soundness (declared states,
    matching transition/reward domains, disjoint sinks and goals), so the
    diagnostics cover sink absorption and reachability from the initial state.
    """
    diagnostics: list[str] = []
    for (u, ev), v in sorted(rm.transitions.items(), key=lambda kv: (kv[0][0], sorted(kv[0][1]))):
        if u in rm.sinks and v not in rm.sinks:
            diagnostics.append(
                f"sink-escape: {u} --{'&'.join(sorted(ev))}-> {v} leaves the sink set"
            )
    reached = {rm.initial}
    frontier = [rm.initial]
    out: dict[str, list[str]] = {}
    for (u, _), v in rm.transitions.items():
        out.setdefault(u, []).append(v)
    while frontier:
        u = frontier.pop()
        for v in out.get(u, ()):
            if v not in reached:
                reached.add(v)
                frontier.append(v)
    for u in rm.states:
        if u not in reached:
            diagnostics.append(f"unreachable-state: {u} cannot be reached from {rm.initial}")
    return diagnostics


def rm_load(path) -> RewardMachine:
    with open(path, "r", encoding="utf-8") as fh:
        return rm_parse(fh.read())
