"""Ground-truth simulation: placement, mobility, clocks, connectivity and TOA ranges."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from shapely import prepared
from shapely.geometry import LineString, Point, box
from shapely.ops import unary_union

from .config import SPEED_OF_LIGHT, NlosSpec, NoiseModel, Rect, ScenarioConfig
from .gaussian import Belief, Gaussian1D

ANCHOR = "anchor"
AGENT = "agent"


@dataclass(frozen=True, slots=True)
class NodeState:
    """Truth for one node at one slot.  ``clock_offset`` in seconds."""

    id: int
    role: str
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    clock_offset: float = 0.0

    def __post_init__(self):
        if self.role not in (ANCHOR, AGENT):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == ANCHOR and (self.clock_offset != 0.0 or self.velocity != (0.0, 0.0)):
            raise ValueError("anchors are static and synchronized")

    @property
    def is_anchor(self) -> bool:
        return self.role == ANCHOR


@dataclass(frozen=True, slots=True)
class Measurement:
    """Range-equivalent TOA observation from ``tx`` to ``rx`` (meters).

    ``bias`` is the hidden NLOS excess path, kept for evaluation only.
    """

    tx: int
    rx: int
    slot: int
    z: float
    nlos: bool
    bias: float = 0.0


@dataclass(frozen=True, slots=True)
class LinkEnd:
    """A measurement seen from one of its endpoints.

    ``sign`` is +1 when this node received the packet, so the observation reads
    z = d + sign * c * (theta_self - theta_other) + noise.
    """

    other: int
    z: float
    sign: int
    nlos: bool
    other_is_anchor: bool
    key: tuple[int, int]


class ObstacleMap:
    """Axis-aligned blocking rectangles."""

    def __init__(self, rects: Iterable[Rect]):
        self.rects = tuple(tuple(float(v) for v in r) for r in rects)
        self._union = unary_union([box(*r) for r in self.rects]) if self.rects else None
        self._prepared = prepared.prep(self._union) if self._union is not None else None

    def blocks(self, p, q) -> bool:
        """True iff the segment p-q crosses any rectangle."""
        if self._prepared is None:
            return False
        if p[0] == q[0] and p[1] == q[1]:
            return self._prepared.intersects(Point(p))
        return self._prepared.intersects(LineString([p, q]))

    def contains(self, p) -> bool:
        return self._prepared is not None and self._prepared.intersects(Point(p))


@dataclass(frozen=True)
class CommSet:
    """Unordered node pairs within range, plus per-node neighbor tuples."""

    pairs: frozenset
    neighbors: dict

    def degree(self, i: int) -> int:
        return len(self.neighbors.get(i, ()))


@dataclass(frozen=True)
class SlotData:
    n: int
    states: tuple
    comm: CommSet
    measurements: tuple
    _links: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        links: dict[int, list[LinkEnd]] = {s.id: [] for s in self.states}
        for m in self.measurements:
            tx_anchor = self.states[m.tx].is_anchor
            rx_anchor = self.states[m.rx].is_anchor
            key = (m.tx, m.rx)
            links[m.rx].append(LinkEnd(m.tx, m.z, +1, m.nlos, tx_anchor, key))
            links[m.tx].append(LinkEnd(m.rx, m.z, -1, m.nlos, rx_anchor, key))
        object.__setattr__(self, "_links", {i: tuple(v) for i, v in links.items()})

    @property
    def agents(self) -> list[int]:
        return [s.id for s in self.states if not s.is_anchor]

    @property
    def anchors(self) -> list[int]:
        return [s.id for s in self.states if s.is_anchor]

    def links(self, i: int) -> tuple:
        return self._links[i]

    def degree(self, i: int) -> int:
        return self.comm.degree(i)


@dataclass(frozen=True)
class Simulation:
    config: ScenarioConfig
    slots: list
    priors: dict  # agent id -> Belief at the first slot


# ----------------------------------------------------------------- operations

def step_mobility(state: NodeState, noise: NoiseModel, dt: float, rng: np.random.Generator,
                  *, velocity_max: float = 3.0,
                  bounds: tuple[float, float] | None = None) -> NodeState:
    """Advance one agent by one slot of the Gauss-Markov model.

    The current velocity moves the node; a fresh velocity is then drawn for the
    next slot, pointing back inside ``bounds`` when the node would leave them.
    Anchors are returned unchanged.
    """
    if state.is_anchor:
        return state
    ax = rng.normal(0.0, noise.sigma_ux)
    ay = rng.normal(0.0, noise.sigma_uy)
    beta = rng.normal(0.0, noise.sigma_utheta)
    x = state.position[0] + state.velocity[0] * dt + ax
    y = state.position[1] + state.velocity[1] * dt + ay
    vx = rng.uniform(0.0, velocity_max)
    vy = rng.uniform(0.0, velocity_max)
    if bounds is not None:
        x = _reflect(x, bounds[0])
        y = _reflect(y, bounds[1])
        vx = _inward(x, vx, dt, bounds[0])
        vy = _inward(y, vy, dt, bounds[1])
    return NodeState(state.id, AGENT, (x, y), (vx, vy), state.clock_offset + beta)


def _reflect(v: float, upper: float) -> float:
    if v < 0.0:
        v = -v
    if v > upper:
        v = 2.0 * upper - v
    return min(max(v, 0.0), upper)


def _inward(pos: float, v: float, dt: float, upper: float) -> float:
    return -v if pos + v * dt > upper else v


def build_comm_set(states: Sequence[NodeState], d_max: float) -> CommSet:
    """Pairs (i, j), i < j, with ||x_i - x_j|| <= d_max."""
    ids = [s.id for s in states]
    pos = np.array([s.position for s in states], dtype=float).reshape(-1, 2)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    close = dist <= d_max
    pairs = set()
    neighbors: dict[int, list[int]] = {i: [] for i in ids}
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            if close[a, b]:
                i, j = sorted((ids[a], ids[b]))
                pairs.add((i, j))
                neighbors[i].append(j)
                neighbors[j].append(i)
    return CommSet(frozenset(pairs), {i: tuple(sorted(v)) for i, v in neighbors.items()})


def classify_nlos(p, q, spec: NlosSpec, rng: np.random.Generator | None = None,
                  obstacle_map: ObstacleMap | None = None) -> bool:
    """Label the link between positions p and q.

    In probability mode a uniform draw is consumed even when ``p_nlos`` is 0 so
    that changing the NLOS fraction does not shift the random stream.
    """
    if spec.mode == "none":
        return False
    if spec.mode == "probability":
        if rng is None:
            raise ValueError("probability mode needs an rng")
        return bool(rng.random() < spec.p_nlos)
    if obstacle_map is None:
        obstacle_map = ObstacleMap(spec.obstacles)
    return obstacle_map.blocks(p, q)


def generate_measurement(tx: NodeState, rx: NodeState, nlos: bool, noise: NoiseModel,
                         rng: np.random.Generator, *, slot: int = 0,
                         c: float = SPEED_OF_LIGHT) -> Measurement:
    """z = ||x_tx - x_rx|| + b + c (theta_rx - theta_tx) + zeta."""
    d = math.hypot(tx.position[0] - rx.position[0], tx.position[1] - rx.position[1])
    zeta = rng.normal(0.0, noise.sigma_d)
    b = rng.exponential(1.0 / noise.nlos_rate) if nlos else 0.0
    z = d + b + c * (rx.clock_offset - tx.clock_offset) + zeta
    return Measurement(tx.id, rx.id, slot, float(z), bool(nlos), float(b))


def measure_slot(n: int, states: Sequence[NodeState], cfg: ScenarioConfig,
                 rng: np.random.Generator, obstacle_map: ObstacleMap | None = None) -> SlotData:
    """Connectivity, NLOS labels and one measurement per linked pair (tx = lower id)."""
    comm = build_comm_set(states, cfg.d_max)
    meas = []
    for i, j in sorted(comm.pairs):
        a, b = states[i], states[j]
        if a.is_anchor and b.is_anchor and not cfg.anchor_links:
            continue
        nlos = classify_nlos(a.position, b.position, cfg.nlos, rng, obstacle_map)
        meas.append(generate_measurement(a, b, nlos, cfg.noise, rng, slot=n, c=cfg.speed_of_light))
    return SlotData(n, tuple(states), comm, tuple(meas))


def _place_agents(cfg: ScenarioConfig, rng: np.random.Generator,
                  obstacle_map: ObstacleMap) -> list[tuple[float, float]]:
    w, h = cfg.bounds
    out = []
    while len(out) < cfg.n_agents:
        p = (float(rng.uniform(0.0, w)), float(rng.uniform(0.0, h)))
        if not obstacle_map.contains(p):
            out.append(p)
    return out


def _min_agent_degree(cfg: ScenarioConfig, positions) -> int:
    pos = np.asarray(list(cfg.anchors) + list(positions), dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    close = np.hypot(diff[..., 0], diff[..., 1]) <= cfg.d_max
    deg = close.sum(axis=1) - 1
    return int(deg[cfg.n_anchors:].min()) if cfg.n_agents else 0


def initial_states(cfg: ScenarioConfig, rng: np.random.Generator,
                   obstacle_map: ObstacleMap | None = None, max_tries: int = 10_000) -> list[NodeState]:
    """Anchors first (ids 0..A-1), then uniformly placed agents."""
    obstacle_map = obstacle_map or ObstacleMap(cfg.nlos.obstacles)
    for _ in range(max_tries):
        positions = _place_agents(cfg, rng, obstacle_map)
        if cfg.min_degree <= 0 or _min_agent_degree(cfg, positions) >= cfg.min_degree:
            break
    else:
        raise RuntimeError(f"no placement with min degree {cfg.min_degree} in {max_tries} tries")
    states = [NodeState(k, ANCHOR, (float(x), float(y))) for k, (x, y) in enumerate(cfg.anchors)]
    lo, hi = cfg.clock_offset_range
    w, h = cfg.bounds
    for k, (x, y) in enumerate(positions):
        vx = _inward(x, float(rng.uniform(0.0, cfg.velocity_max)), cfg.dt, w)
        vy = _inward(y, float(rng.uniform(0.0, cfg.velocity_max)), cfg.dt, h)
        theta = float(rng.uniform(lo, hi)) / cfg.speed_of_light
        states.append(NodeState(cfg.n_anchors + k, AGENT, (x, y), (vx, vy), theta))
    return states


def draw_priors(states: Sequence[NodeState], cfg: ScenarioConfig,
                rng: np.random.Generator) -> dict[int, Belief]:
    """Agent priors centred on a perturbed truth with the configured spreads."""
    pr = cfg.prior
    priors = {}
    for s in states:
        if s.is_anchor:
            continue
        mx = s.position[0] + rng.normal(0.0, pr.sigma_x0)
        my = s.position[1] + rng.normal(0.0, pr.sigma_y0)
        mt = s.clock_offset + rng.normal(0.0, pr.sigma_theta0)
        priors[s.id] = Belief(Gaussian1D(float(mx), pr.sigma_x0**2),
                              Gaussian1D(float(my), pr.sigma_y0**2),
                              Gaussian1D(float(mt), pr.sigma_theta0**2))
    return priors


def simulate(cfg: ScenarioConfig, rng: np.random.Generator) -> Simulation:
    """Run the world for ``cfg.n_time`` slots."""
    obstacle_map = ObstacleMap(cfg.nlos.obstacles)
    states = initial_states(cfg, rng, obstacle_map)
    priors = draw_priors(states, cfg, rng)
    slots = []
    for n in range(1, cfg.n_time + 1):
        if n > 1:
            states = [step_mobility(s, cfg.noise, cfg.dt, rng, velocity_max=cfg.velocity_max,
                                    bounds=cfg.bounds) for s in states]
        slots.append(measure_slot(n, states, cfg, rng, obstacle_map))
    return Simulation(cfg, slots, priors)


def write_truth_csv(sim: Simulation, path: str | Path) -> None:
    """Ground-truth trace: slot, id, role, x, y, theta (s)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "id", "role", "x", "y", "theta"])
        for slot in sim.slots:
            for s in slot.states:
                w.writerow([slot.n, s.id, s.role, f"{s.position[0]:.9g}", f"{s.position[1]:.9g}",
                            f"{s.clock_offset:.9g}"])
