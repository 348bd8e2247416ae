"""Pieces shared by the BP and VMP engines: result containers and unit handling.

Inside the engines the clock offset travels as c*theta (meters) so the three
variables of a node have comparable magnitudes; conversion back to seconds
happens only when a :class:`SlotResult` is assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import Belief, Gaussian1D
from .world import SlotData

Triple = tuple  # (x, y, clock) Gaussian1D triple, clock in meters


@dataclass
class CommCounter:
    """Transmitted real-valued parameters, per transmitting agent."""

    per_node: dict = field(default_factory=dict)
    bias_params: int = 0
    exchanges: int = 0

    def add(self, node: int, n: int) -> None:
        self.per_node[node] = self.per_node.get(node, 0) + n

    @property
    def node_total(self) -> int:
        return sum(self.per_node.values())

    @property
    def total(self) -> int:
        return self.node_total + self.bias_params

    def merge(self, other: "CommCounter") -> None:
        for k, v in other.per_node.items():
            self.add(k, v)
        self.bias_params += other.bias_params
        self.exchanges += other.exchanges


@dataclass
class SlotResult:
    """Outcome of message passing in one slot.

    ``history[k]`` holds the agent estimates (x, y, theta[s]) after external
    round k+1, as an array aligned with ``agent_ids``.
    """

    agent_ids: list
    beliefs: dict
    history: list
    comm: CommCounter
    fallbacks: int = 0
    skipped_links: int = 0
    bias: dict = field(default_factory=dict)

    @property
    def estimates(self) -> dict:
        return {i: b.mean for i, b in self.beliefs.items()}


def anchor_triple(slot: SlotData, j: int) -> Triple:
    x, y = slot.states[j].position
    return (Gaussian1D(x, 0.0), Gaussian1D(y, 0.0), Gaussian1D(0.0, 0.0))


def orient(t: Triple, sign: int) -> Triple:
    """Flip the clock axis for the transmitting end of a link."""
    if sign > 0:
        return t
    p = t[2]
    return (t[0], t[1], Gaussian1D(-p.mean, p.var))


def to_meters(priors: dict, c: float) -> dict:
    return {i: b.to_range_units(c) for i, b in priors.items()}


def to_beliefs(triples: dict, c: float) -> dict:
    return {i: Belief.from_range_units(t, c) for i, t in triples.items()}


def snapshot_estimates(agent_ids, triples: dict, c: float) -> np.ndarray:
    return np.array([[triples[i][0].mean, triples[i][1].mean, triples[i][2].mean / c]
                     for i in agent_ids], dtype=float).reshape(-1, 3)


class LinkTable:
    """Per-agent link arrays of one slot, plus the routing used by exchanges.

    Rows of agent i follow ``slot.links(i)``.  Stacking all agents' rows gives
    the global edge order; ``reverse[e]`` is the edge of the same link seen
    from the other agent (-1 when the other end is an anchor).
    """

    def __init__(self, slot: SlotData, agent_ids, nlos_aware: bool = True):
        self.agent_ids = list(agent_ids)
        self.z, self.sign, self.nlos, self.anchor, self.other = {}, {}, {}, {}, {}
        self.offset = {}
        self.anchor_means = {}
        edge_of = {}
        pos = 0
        for i in self.agent_ids:
            links = slot.links(i)
            self.offset[i] = pos
            self.z[i] = np.array([l.z for l in links], dtype=float)
            self.sign[i] = np.array([l.sign for l in links], dtype=float)
            self.nlos[i] = np.array([l.nlos and nlos_aware for l in links], dtype=bool)
            self.anchor[i] = np.array([l.other_is_anchor for l in links], dtype=bool)
            self.other[i] = np.array([l.other for l in links], dtype=int)
            am = np.zeros((len(links), 3))
            for r, l in enumerate(links):
                if l.other_is_anchor:
                    am[r, :2] = slot.states[l.other].position
                edge_of[(i, l.other)] = pos + r
            self.anchor_means[i] = am
            pos += len(links)
        self.n_edges = pos
        self.reverse = np.full(pos, -1, dtype=int)
        for (i, j), e in edge_of.items():
            self.reverse[e] = edge_of.get((j, i), -1)
        self.from_agent = self.reverse >= 0

    def rows(self, i: int) -> slice:
        return slice(self.offset[i], self.offset[i] + len(self.z[i]))

    def route(self, outgoing: dict, fill: dict) -> dict:
        """Deliver per-edge rows: edge e receives ``outgoing`` row ``reverse[e]``.

        ``outgoing[i]`` and ``fill[i]`` are (rows_i, ...) arrays; rows facing an
        anchor keep the value from ``fill``.
        """
        if self.n_edges == 0:
            return {i: fill[i].copy() for i in self.agent_ids}
        out_all = np.concatenate([outgoing[i] for i in self.agent_ids])
        got = np.concatenate([fill[i] for i in self.agent_ids])
        got[self.from_agent] = out_all[self.reverse[self.from_agent]]
        return {i: got[self.rows(i)] for i in self.agent_ids}


class SlotEngine:
    """One slot of synchronous message passing.

    Subclasses hold per-agent local state in ``self.local`` and received
    neighbor data in ``self.inbox``.  :func:`run_rounds` drives them.
    """

    agent_ids: list

    def start(self) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def update(self, i: int, local, inbox_i):  # pragma: no cover - interface
        raise NotImplementedError

    def exchange(self) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def record(self) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def result(self) -> SlotResult:  # pragma: no cover - interface
        raise NotImplementedError


def run_rounds(engine: SlotEngine, n_int: int, n_ext: int, node_order=None) -> SlotResult:
    """``n_ext`` exchange rounds, each after ``n_int`` local updates per agent.

    Every agent updates from the inbox frozen at the last exchange, and
    results are committed only once all agents are done, so the node order
    has no effect on the outcome.
    """
    engine.start()
    order = list(node_order) if node_order is not None else list(engine.agent_ids)
    if sorted(order) != sorted(engine.agent_ids):
        raise ValueError("node_order must be a permutation of the agent ids")
    for _ in range(n_ext):
        fresh = {}
        for i in order:
            local = engine.local[i]
            for _ in range(n_int):
                local = engine.update(i, local, engine.inbox[i])
            fresh[i] = local
        engine.local.update(fresh)
        engine.exchange()
        engine.record()
    return engine.result()
