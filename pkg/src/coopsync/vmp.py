"""Variational message passing under a mean-field factorization.

Each factor sends every variable a Gaussian message whose mean is computed
from point estimates of the other variables and whose variance is the range
noise.  Agents exchange only their three estimates (x, y, c*theta).  On NLOS
links the bias gets its own mean-field factor; the receiving agent maintains
it and shares the estimate with the transmitter.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .config import SPEED_OF_LIGHT, NoiseModel
from .engine import CommCounter, LinkTable, SlotEngine, SlotResult, Triple, run_rounds, to_beliefs, to_meters
from .gaussian import VARIANCE_FLOOR, Belief, Gaussian1D
from .linearize import DELTA_MIN, LinearizedRange

PARAMS_PER_BROADCAST = 3


def vmp_factor_to_variable(z: float, own_hat, other_hat, lin: LinearizedRange, sigma_d2: float,
                           bias_hat: float = 0.0) -> Triple:
    """Messages from one range factor to (x_i, y_i, p_i), receiver orientation.

    ``own_hat`` and ``other_hat`` are (x, y, p) point estimates, p = c*theta
    in meters; ``bias_hat`` is the non-negative bias estimate.
    """
    xj, yj, pj = other_hat
    pi = own_hat[2]
    r = z - (pi - pj) - bias_hat  # bias and clock corrected range
    return (Gaussian1D(xj + r * lin.lam, sigma_d2),
            Gaussian1D(yj + r * lin.gam, sigma_d2),
            Gaussian1D(pj + z - lin.d_hat - bias_hat, sigma_d2))


def vmp_bias_message(z: float, own_hat, other_hat, lin: LinearizedRange, sigma_d2: float) -> Gaussian1D:
    """Message from the range factor to the bias of its link."""
    return Gaussian1D(z - (own_hat[2] - other_hat[2]) - lin.d_hat, sigma_d2)


def vmp_bias_belief(msg: Gaussian1D, rate: float, sigma_d2: float) -> Gaussian1D:
    """Combine the factor message with the exponential prior.

    The result is left unclamped; callers substitute ``max(mean, 0)``.
    """
    return Gaussian1D(msg.mean - sigma_d2 * rate, sigma_d2)


def vmp_prediction(prev: Belief, velocity: tuple[float, float], dt: float,
                   noise: NoiseModel, c: float = SPEED_OF_LIGHT) -> Belief:
    """Next-slot prediction: moved mean, transition noise as the variance.

    The clock floor is applied in range units (m^2), i.e. divided by c^2.
    """
    return Belief(Gaussian1D(prev.x.mean + velocity[0] * dt, max(noise.sigma_ux**2, VARIANCE_FLOOR)),
                  Gaussian1D(prev.y.mean + velocity[1] * dt, max(noise.sigma_uy**2, VARIANCE_FLOOR)),
                  Gaussian1D(prev.theta.mean, max(noise.sigma_utheta**2, VARIANCE_FLOOR / c**2)))


def vmp_belief(pred: Gaussian1D, msg_means, link_var: float) -> Gaussian1D:
    """Prediction times len(msg_means) messages of common variance ``link_var``."""
    prec = 1.0 / pred.var + len(msg_means) / link_var
    info = pred.mean / pred.var + sum(msg_means) / link_var
    return Gaussian1D(info / prec, 1.0 / prec)


class VMPLocal(NamedTuple):
    """Agent state; bias arrays have one row per link in ``slot.links(i)`` order."""

    belief_m: np.ndarray   # (3,) x, y, p
    belief_v: np.ndarray
    bias_m: np.ndarray     # bias beliefs (meters); meaningful on owned NLOS rows
    bias_v: np.ndarray
    skipped: int

    @property
    def belief(self) -> Triple:
        return tuple(Gaussian1D(float(m), float(v)) for m, v in zip(self.belief_m, self.belief_v))


class VMPEngine(SlotEngine):
    """VMP over one slot.  A zero range-noise std is floored at the engine variance floor."""

    def __init__(self, slot, priors: dict, noise: NoiseModel, *, nlos_aware: bool = True,
                 c: float = SPEED_OF_LIGHT):
        self.slot = slot
        self.noise = noise
        self.nlos_aware = nlos_aware
        self.c = c
        self.agent_ids = slot.agents
        self.pred = to_meters({i: priors[i] for i in self.agent_ids}, c)
        self.sigma_d2 = max(noise.sigma_d2, VARIANCE_FLOOR)
        self.rate = noise.nlos_rate
        self.comm = CommCounter()
        self.history = []

    def start(self) -> None:
        t = self.table = LinkTable(self.slot, self.agent_ids, self.nlos_aware)
        # the receiver owns an agent-agent bias; anchor links belong to the agent
        self.owned = {i: t.nlos[i] & ((t.sign[i] > 0) | t.anchor[i]) for i in self.agent_ids}
        self.shared = {i: t.nlos[i] & ~self.owned[i] for i in self.agent_ids}
        self.pred_m = {i: np.array([g.mean for g in self.pred[i]]) for i in self.agent_ids}
        self.pred_v = {i: np.array([g.var for g in self.pred[i]]) for i in self.agent_ids}
        b0 = 1.0 / self.rate
        self.local = {}
        for i in self.agent_ids:
            n = len(t.z[i])
            self.local[i] = VMPLocal(self.pred_m[i], self.pred_v[i], np.full(n, b0), np.full(n, b0 * b0), 0)
        self._deliver()

    def _deliver(self) -> None:
        t = self.table
        ids = self.agent_ids
        # an agent's outgoing row carries its estimate; routing hands it to the neighbor
        est = t.route({i: np.tile(self.local[i].belief_m, (len(t.z[i]), 1)) for i in ids}, t.anchor_means)
        bias = t.route({i: self.local[i].bias_m for i in ids}, {i: np.zeros(len(t.z[i])) for i in ids})
        self.inbox = {i: {"est": est[i], "bias": np.where(self.shared[i], bias[i], 0.0)} for i in ids}

    def update(self, i: int, local: VMPLocal, inbox_i: dict) -> VMPLocal:
        t = self.table
        n = len(t.z[i])
        pm, pv = self.pred_m[i], self.pred_v[i]
        if n == 0:
            return local._replace(belief_m=pm, belief_v=pv)
        est = inbox_i["est"]
        own = local.belief_m
        dx = own[0] - est[:, 0]
        dy = own[1] - est[:, 1]
        d = np.hypot(dx, dy)
        ok = d > DELTA_MIN
        safe = np.where(ok, d, 1.0)
        lam = np.where(ok, dx / safe, 0.0)
        gam = np.where(ok, dy / safe, 0.0)
        s = t.sign[i]
        z = t.z[i]
        dp = s * own[2] - s * est[:, 2]   # oriented clock difference p_i - p_j
        upd = self.owned[i] & ok
        msg = z - dp - d
        bias_m = np.where(upd, msg - self.sigma_d2 * self.rate, local.bias_m)
        bias_v = np.where(upd, self.sigma_d2, local.bias_v)
        b_src = np.where(self.owned[i], bias_m, inbox_i["bias"])
        b_hat = np.where(t.nlos[i], np.maximum(b_src, 0.0), 0.0)
        r = z - dp - b_hat
        mx = est[:, 0] + r * lam
        my = est[:, 1] + r * gam
        mp = s * (s * est[:, 2] + z - d - b_hat)
        k = np.count_nonzero(ok)
        prec = 1.0 / pv + k / self.sigma_d2
        sums = np.array([mx[ok].sum(), my[ok].sum(), mp[ok].sum()])
        info = pm / pv + sums / self.sigma_d2
        return VMPLocal(info / prec, 1.0 / prec, bias_m, bias_v, local.skipped + int(n - k))

    def exchange(self) -> None:
        self._deliver()
        t = self.table
        for i in self.agent_ids:
            self.comm.bias_params += int(np.count_nonzero(self.owned[i] & ~t.anchor[i]))
            self.comm.add(i, PARAMS_PER_BROADCAST)
        self.comm.exchanges += 1

    def record(self) -> None:
        self.history.append(np.array([self.local[i].belief_m / (1.0, 1.0, self.c) for i in self.agent_ids],
                                     dtype=float).reshape(-1, 3))

    def result(self) -> SlotResult:
        beliefs = {i: self.local[i].belief for i in self.agent_ids}
        bias = {}
        for i in self.agent_ids:
            loc = self.local[i]
            for r, link in enumerate(self.slot.links(i)):
                if self.owned[i][r]:
                    bias[link.key] = Gaussian1D(float(loc.bias_m[r]), float(loc.bias_v[r]))
        return SlotResult(
            agent_ids=list(self.agent_ids),
            beliefs=to_beliefs(beliefs, self.c),
            history=self.history,
            comm=self.comm,
            skipped_links=sum(self.local[i].skipped for i in self.agent_ids),
            bias=bias,
        )


def run_slot_vmp(slot, priors: dict, noise: NoiseModel, *, n_iter: int = 20, nlos_aware: bool = True,
                 c: float = SPEED_OF_LIGHT, node_order=None) -> SlotResult:
    """Synchronous VMP for one slot, ``n_iter`` iterations with one exchange each."""
    engine = VMPEngine(slot, priors, noise, nlos_aware=nlos_aware, c=c)
    return run_rounds(engine, 1, n_iter, node_order)
