"""Gaussian belief propagation for joint localization and clock synchronization.

Each agent holds three scalar variables: x, y and its clock offset.  With the
range linearized around the current estimates, the clock message is the
Gaussian integral of the linearized likelihood against the incoming messages.
Position messages are radial: the neighbor position plus the clock-corrected
range along the expansion direction, scalar per axis.  NLOS links fold the
exponential bias prior in and are moment matched.

The engine works on per-agent arrays with one row per link; the scalar
functions below wrap the same array core.

All closed forms below take clock quantities in meters (c * theta) and are
written from the receiving side of the link, where the observation reads

    z = lam * (x_i - x_j) + gam * (y_i - y_j) + (p_i - p_j) + b + noise,

with p = c * theta.  The engine flips the clock axis for the transmitting
end (see :func:`coopsync.engine.orient`).
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .config import SPEED_OF_LIGHT, NoiseModel
from .engine import (CommCounter, LinkTable, SlotEngine, SlotResult, Triple, orient, run_rounds,
                     to_beliefs, to_meters)
from .gaussian import (VARIANCE_CEILING, VARIANCE_FLOOR, Belief, DegenerateExtrinsic, Gaussian1D,
                       divide, moment_match, product, truncated_normal_moments)
from .linearize import DELTA_MIN, LinearizedRange, SingularGeometry, linearize
from .world import SlotData

PARAMS_PER_MESSAGE = 6  # mean and variance for x, y and theta


# ------------------------------------------------------------- closed forms

def prediction_message(prev: Belief, velocity: tuple[float, float], dt: float,
                       noise: NoiseModel) -> Belief:
    """Propagate last slot's belief through the Gauss-Markov transition.

    Dirac (anchor) beliefs are returned unchanged.
    """
    if prev.x.is_dirac and prev.y.is_dirac and prev.theta.is_dirac:
        return prev
    return Belief(Gaussian1D(prev.x.mean + velocity[0] * dt, prev.x.var + noise.sigma_ux**2),
                  Gaussian1D(prev.y.mean + velocity[1] * dt, prev.y.var + noise.sigma_uy**2),
                  Gaussian1D(prev.theta.mean, prev.theta.var + noise.sigma_utheta**2))


def link_messages_arrays(z, own_m, own_v, other_m, other_v, lam, gam, sigma_d2: float):
    """Unclamped LOS messages to (x_i, y_i, p_i) for a batch of links.

    ``own_*`` and ``other_*`` are (n, 3) means and variances of the incoming
    variable-to-factor messages, clock axis already oriented; ``z``, ``lam``
    and ``gam`` are (n,).  Returns (n, 3) means, variances and bias
    coefficients.  Position messages place node i at the neighbor plus the
    clock-corrected range along the expansion direction, with per-axis noise
    ``sigma_d2``.  The clock message integrates the first-order range model
    against every incoming message.  A bias b enters each message as
    ``- coefficient * b``.
    """
    l2, g2 = lam * lam, gam * gam
    r = z - own_m[:, 2] + other_m[:, 2]
    vr = own_v[:, 2] + other_v[:, 2]
    m = np.empty_like(own_m)
    v = np.empty_like(own_v)
    m[:, 0] = other_m[:, 0] + lam * r
    v[:, 0] = sigma_d2 + other_v[:, 0] + l2 * vr
    m[:, 1] = other_m[:, 1] + gam * r
    v[:, 1] = sigma_d2 + other_v[:, 1] + g2 * vr
    m[:, 2] = z + other_m[:, 2] - lam * (own_m[:, 0] - other_m[:, 0]) - gam * (own_m[:, 1] - other_m[:, 1])
    v[:, 2] = (sigma_d2 + other_v[:, 2] + l2 * (own_v[:, 0] + other_v[:, 0])
               + g2 * (own_v[:, 1] + other_v[:, 1]))
    coef = np.column_stack([lam, gam, np.ones_like(lam)])
    return m, v, coef


def link_messages(z, own_m, own_v, other_m, other_v, lam, gam, sigma_d2: float,
                  nlos=None, rate: float = 1.0):
    """Clamped factor-to-variable messages for a batch of links.

    Rows flagged in ``nlos`` have the exponential bias integrated out and the
    result moment matched (mean shifts by -k/rate, variance grows by (k/rate)^2).
    """
    m, v, coef = link_messages_arrays(z, own_m, own_v, other_m, other_v, lam, gam, sigma_d2)
    if nlos is not None and nlos.any():
        shift = coef[nlos] / rate
        m[nlos] -= shift
        v[nlos] += shift * shift
    return m, np.clip(v, VARIANCE_FLOOR, VARIANCE_CEILING)


def _rows(t: Triple) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([[g.mean for g in t]], dtype=float), np.array([[g.var for g in t]], dtype=float))


def _triple(m, v) -> Triple:
    return tuple(Gaussian1D(float(a), float(b)) for a, b in zip(m, v))


def bp_factor_to_variable_agent(z: float, own: Triple, other: Triple, lin: LinearizedRange,
                                sigma_d2: float) -> Triple:
    """LOS messages from f_ij to (x_i, y_i, p_i) when j is an agent.

    ``own`` and ``other`` are the variable-to-factor messages of i and j.
    """
    m, v = link_messages(np.array([z]), *_rows(own), *_rows(other), np.array([lin.lam]),
                         np.array([lin.gam]), sigma_d2)
    return _triple(m[0], v[0])


def bp_factor_to_variable_anchor(z: float, own: Triple, anchor_xy: tuple[float, float],
                                 lin: LinearizedRange, sigma_d2: float) -> Triple:
    """LOS messages from f_ij to (x_i, y_i, p_i) when j is an anchor."""
    other = (Gaussian1D(anchor_xy[0], 0.0), Gaussian1D(anchor_xy[1], 0.0), Gaussian1D(0.0, 0.0))
    return bp_factor_to_variable_agent(z, own, other, lin, sigma_d2)


def bp_factor_to_variable_nlos(z: float, own: Triple, other: Triple, lin: LinearizedRange,
                               sigma_d2: float, rate: float, *, method: str = "analytic") -> Triple:
    """NLOS messages: exponential bias integrated out, then moment matched.

    ``method="analytic"`` uses the known moments of a Gaussian plus a scaled
    exponential; ``"quadrature"`` integrates that density numerically.
    """
    args = (np.array([z]), *_rows(own), *_rows(other), np.array([lin.lam]), np.array([lin.gam]), sigma_d2)
    if method == "analytic":
        m, v = link_messages(*args, nlos=np.array([True]), rate=rate)
        return _triple(m[0], v[0])
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    m, v, coef = link_messages_arrays(*args)
    out = []
    for a, b, k in zip(m[0], v[0], coef[0]):
        g = _emg_by_quadrature(float(a), float(b), float(k), rate)
        out.append(Gaussian1D(g.mean, min(max(g.var, VARIANCE_FLOOR), VARIANCE_CEILING)))
    return tuple(out)


def _emg_by_quadrature(m: float, v: float, k: float, rate: float) -> Gaussian1D:
    """Moments of m - k*b + N(0, v), b ~ Exp(rate), by numerical integration."""
    s = math.sqrt(v)
    scale = abs(k) / rate  # mean of |k| * b
    if scale == 0.0:
        return Gaussian1D(m, v)
    shape = scale / s
    sgn = math.copysign(1.0, k)
    density = lambda u: stats.exponnorm.pdf(sgn * (m - u), shape, scale=s)  # noqa: E731
    return moment_match(density, m - k / rate, math.sqrt(v + scale * scale))


def bp_bias_belief(z: float, own: Triple, other: Triple, lin: LinearizedRange,
                   sigma_d2: float, rate: float) -> Gaussian1D:
    """Moment-matched belief of the NLOS bias on one link (meters).

    The bias sees a Gaussian likelihood from the link constraint and the
    exponential prior, i.e. a Gaussian truncated to b > 0.
    """
    xi, yi, pi = own
    xj, yj, pj = other
    lam, gam = lin.lam, lin.gam
    ab = z - pi.mean + pj.mean - lam * (xi.mean - xj.mean) - gam * (yi.mean - yj.mean)
    vb = (sigma_d2 + pi.var + pj.var + lam * lam * (xi.var + xj.var)
          + gam * gam * (yi.var + yj.var))
    return truncated_normal_moments(ab - rate * vb, vb, 0.0)


def compute_belief(prediction: Gaussian1D, msgs: Sequence[Gaussian1D]) -> Gaussian1D:
    """Belief of one variable: prediction times every incoming factor message."""
    return product([prediction, *msgs])


def extrinsic_message(belief: Gaussian1D, factor_msg: Gaussian1D) -> tuple[Gaussian1D, bool]:
    """Variable-to-factor message.  Falls back to the belief (flag True) when degenerate."""
    try:
        return divide(belief, factor_msg), False
    except DegenerateExtrinsic:
        return belief, True


# ------------------------------------------------------------------ engine

class BPLocal(NamedTuple):
    """Agent state; message arrays have one row per link in ``slot.links(i)`` order."""

    belief_m: np.ndarray   # (3,) x, y, p
    belief_v: np.ndarray
    out_m: np.ndarray      # messages from our variables to each factor
    out_v: np.ndarray
    f_m: np.ndarray        # latest factor-to-variable messages
    f_v: np.ndarray
    used: np.ndarray       # links that produced a message in the last update
    fallbacks: int
    skipped: int

    @property
    def belief(self) -> Triple:
        return _triple(self.belief_m, self.belief_v)


class BPEngine(SlotEngine):
    """Standard or broadcast BP over one slot.

    A zero range-noise std is floored at the engine variance floor.
    """

    def __init__(self, slot: SlotData, priors: dict, noise: NoiseModel, *, mode: str = "standard",
                 nlos_aware: bool = True, c: float = SPEED_OF_LIGHT):
        if mode not in ("standard", "broadcast"):
            raise ValueError(f"unknown BP mode {mode!r}")
        self.slot = slot
        self.noise = noise
        self.mode = mode
        self.nlos_aware = nlos_aware
        self.c = c
        self.agent_ids = slot.agents
        self.pred = to_meters({i: priors[i] for i in self.agent_ids}, c)
        self.sigma_d2 = max(noise.sigma_d2, VARIANCE_FLOOR)
        self.rate = noise.nlos_rate
        self.comm = CommCounter()
        self.history = []

    def start(self) -> None:
        self.table = LinkTable(self.slot, self.agent_ids, self.nlos_aware)
        self.local = {}
        self.pred_m, self.pred_v, self.flip = {}, {}, {}
        for i in self.agent_ids:
            pm, pv = (a[0] for a in _rows(self.pred[i]))
            n = len(self.table.z[i])
            self.pred_m[i], self.pred_v[i] = pm, pv
            self.flip[i] = np.ones((n, 3))
            self.flip[i][:, 2] = self.table.sign[i]
            empty = np.zeros((n, 3))
            self.local[i] = BPLocal(pm, pv, np.tile(pm, (n, 1)), np.tile(pv, (n, 1)), empty, empty,
                                    np.zeros(n, dtype=bool), 0, 0)
        self._deliver()

    def _deliver(self) -> None:
        t = self.table
        ids = self.agent_ids
        m = t.route({i: self.local[i].out_m for i in ids}, t.anchor_means)
        v = t.route({i: self.local[i].out_v for i in ids}, {i: np.zeros_like(t.anchor_means[i]) for i in ids})
        self.inbox = {i: (m[i], v[i]) for i in ids}

    def update(self, i: int, local: BPLocal, inbox_i) -> BPLocal:
        t = self.table
        in_m, in_v = inbox_i
        pm, pv = self.pred_m[i], self.pred_v[i]
        n = len(t.z[i])
        if n == 0:
            return local._replace(belief_m=pm, belief_v=pv)
        dx = local.belief_m[0] - in_m[:, 0]
        dy = local.belief_m[1] - in_m[:, 1]
        d = np.hypot(dx, dy)
        ok = d > DELTA_MIN
        safe = np.where(ok, d, 1.0)
        lam = np.where(ok, dx / safe, 0.0)
        gam = np.where(ok, dy / safe, 0.0)
        flip = self.flip[i]
        m, v = link_messages(t.z[i], local.out_m * flip, local.out_v, in_m * flip, in_v, lam, gam,
                             self.sigma_d2, t.nlos[i], self.rate)
        m *= flip
        prec = 1.0 / pv + np.sum(1.0 / v[ok], axis=0)
        info = pm / pv + np.sum(m[ok] / v[ok], axis=0)
        bv = 1.0 / prec
        bm = bv * info
        out_m = np.tile(bm, (n, 1))
        out_v = np.tile(bv, (n, 1))
        fallbacks = 0
        if self.mode == "standard":
            diff = v - bv
            good = (diff > VARIANCE_FLOOR) & ok[:, None]
            fallbacks = int(np.count_nonzero(ok[:, None] & ~good))
            safe = np.where(good, diff, 1.0)
            out_v = np.where(good, bv * v / safe, out_v)
            out_m = np.where(good, (bm * v - m * bv) / safe, out_m)
        return BPLocal(bm, bv, out_m, out_v, m, v, ok, local.fallbacks + fallbacks,
                       local.skipped + int(n - np.count_nonzero(ok)))

    def exchange(self) -> None:
        self._deliver()
        for i in self.agent_ids:
            n = PARAMS_PER_MESSAGE * self.slot.degree(i) if self.mode == "standard" else PARAMS_PER_MESSAGE
            self.comm.add(i, n)
        self.comm.exchanges += 1

    def record(self) -> None:
        self.history.append(np.array([self.local[i].belief_m / (1.0, 1.0, self.c) for i in self.agent_ids],
                                     dtype=float).reshape(-1, 3))

    def bias_beliefs(self) -> dict:
        out = {}
        for m in self.slot.measurements:
            if not (m.nlos and self.nlos_aware):
                continue
            # computed at the receiving agent when there is one
            i = m.rx if not self.slot.states[m.rx].is_anchor else m.tx
            loc = self.local[i]
            r, link = next((r, l) for r, l in enumerate(self.slot.links(i)) if l.key == (m.tx, m.rx))
            in_m, in_v = self.inbox[i]
            try:
                lin = linearize(tuple(loc.belief_m[:2]), tuple(in_m[r, :2]))
            except SingularGeometry:
                continue
            own = orient(_triple(loc.out_m[r], loc.out_v[r]), link.sign)
            other = orient(_triple(in_m[r], in_v[r]), link.sign)
            out[link.key] = bp_bias_belief(link.z, own, other, lin, self.sigma_d2, self.rate)
        return out

    def result(self) -> SlotResult:
        beliefs = {i: self.local[i].belief for i in self.agent_ids}
        return SlotResult(
            agent_ids=list(self.agent_ids),
            beliefs=to_beliefs(beliefs, self.c),
            history=self.history,
            comm=self.comm,
            fallbacks=sum(self.local[i].fallbacks for i in self.agent_ids),
            skipped_links=sum(self.local[i].skipped for i in self.agent_ids),
            bias=self.bias_beliefs(),
        )


def run_slot_bp(slot: SlotData, priors: dict, noise: NoiseModel, *, mode: str = "standard",
                n_iter: int = 20, nlos_aware: bool = True, c: float = SPEED_OF_LIGHT,
                node_order=None) -> SlotResult:
    """Synchronous BP for one slot: ``n_iter`` iterations, one exchange each.

    ``priors`` maps every agent id to its prediction (a :class:`Belief` with
    theta in seconds).  Returns beliefs, per-iteration estimates and the
    number of transmitted parameters.
    """
    engine = BPEngine(slot, priors, noise, mode=mode, nlos_aware=nlos_aware, c=c)
    return run_rounds(engine, 1, n_iter, node_order)
