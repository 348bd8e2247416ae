"""Reference implementations used to check the message-passing engines.

* :func:`quadrature_message` integrates a factor against incoming Gaussian
  messages numerically and returns the moment-matched Gaussian message.
* :func:`particle_bp_slot` runs sample-based BP on the exact (square-root)
  range likelihood for small networks.

Neither reuses the engines' closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .config import SPEED_OF_LIGHT, NoiseModel
from .gaussian import Belief, Gaussian1D
from .linearize import LinearizedRange, linearized_range


class OracleFailure(RuntimeError):
    """The reference computation did not produce a usable answer."""


# --------------------------------------------------------------- quadrature

def _gauss_normal(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(u)], u ~ N(0, 1)."""
    x, w = special.roots_hermitenorm(n)
    return x, w / math.sqrt(2.0 * math.pi)


def _gauss_exponential(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(u)], u ~ Exp(1)."""
    return special.roots_laguerre(n)


def quadrature_message(likelihood: Callable, incoming: Sequence[Gaussian1D], *, center: float,
                       scale: float, bias_rate: float | None = None, n_nodes: int = 3,
                       n_bias_nodes: int = 6, width: float = 40.0, rtol: float = 1e-10,
                       lower: float = -math.inf) -> Gaussian1D:
    """Moment-matched message on a target variable t.

    The message is  int L(t, u) prod_k N(u_k; incoming_k) [Exp(b; rate)] du db,
    where ``likelihood(t, u)`` takes a 1-D array ``t`` and a tuple ``u`` of
    nuisance values (plus the bias as the last entry when ``bias_rate`` is
    given).  Nuisance variables are integrated with Gauss-Hermite (Gaussian)
    and Gauss-Laguerre (bias) rules, which are exact when the t-moments of
    the likelihood are polynomials of degree < 2 * nodes in the nuisances.
    The t integral is adaptive over ``center +- width * scale``.
    """
    if not (scale > 0 and math.isfinite(scale) and math.isfinite(center)):
        raise OracleFailure(f"bad integration window center={center!r} scale={scale!r}")
    axes = []
    weights = []
    gx, gw = _gauss_normal(n_nodes)
    for g in incoming:
        if g.var == 0.0:
            axes.append(np.array([g.mean]))
            weights.append(np.array([1.0]))
        else:
            axes.append(g.mean + g.std * gx)
            weights.append(gw)
    if bias_rate is not None:
        lx, lw = _gauss_exponential(n_bias_nodes)
        axes.append(lx / bias_rate)
        weights.append(lw)
    grids = np.meshgrid(*axes, indexing="ij") if axes else []
    nodes = tuple(g.ravel() for g in grids)
    w = np.ones(1)
    for wk in weights:
        w = np.multiply.outer(w, wk)
    w = w.ravel()

    def mixture(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        vals = likelihood(t[:, None], tuple(u[None, :] for u in nodes))
        return np.asarray(vals, dtype=float).reshape(t.size, -1) @ w

    lo, hi = max(center - width * scale, lower), center + width * scale
    if not hi > lo:
        raise OracleFailure("empty integration window")
    # locate the mass so the adaptive rule cannot step over narrow peaks
    grid = np.linspace(lo, hi, 2001)
    dens = mixture(grid)
    if not np.all(np.isfinite(dens)) or dens.max() <= 0:
        raise OracleFailure("message density vanishes on the integration window")
    keep = np.nonzero(dens > dens.max() * 1e-30)[0]
    a = grid[max(keep[0] - 1, 0)]
    b = grid[min(keep[-1] + 1, grid.size - 1)]
    peak = grid[int(np.argmax(dens))]
    near = peak + np.outer([-1.0, 1.0], scale * 2.0 ** -np.arange(40)).ravel()
    edges = np.unique(np.concatenate([np.linspace(a, b, 64), [peak], near[(near > a) & (near < b)]]))
    moments = None
    for order in (32, 64, 128, 256, 512):
        x, wl = special.roots_legendre(order)
        half = 0.5 * np.diff(edges)[:, None]
        t = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half * x[None, :]
        tw = (half * wl[None, :]).ravel()
        f = mixture(t.ravel()) * tw
        u = t.ravel() - peak
        z0 = f.sum()
        if not (math.isfinite(z0) and z0 > 0):
            raise OracleFailure(f"degenerate normalizer {z0!r}")
        m1 = (f @ u) / z0
        var = (f @ (u * u)) / z0 - m1 * m1
        if moments is not None:
            pm1, pvar = moments
            scale_ref = math.sqrt(abs(var)) + abs(peak + m1)
            if abs(m1 - pm1) <= rtol * scale_ref and abs(var - pvar) <= rtol * abs(var):
                break
        moments = (m1, var)
    else:
        raise OracleFailure("composite Gauss-Legendre rule did not converge")
    if not var > 0:
        raise OracleFailure(f"non-positive variance {var!r}")
    return Gaussian1D(float(peak + m1), float(var))


def _normal_pdf(r, var):
    return np.exp(-0.5 * r * r / var) / np.sqrt(2.0 * np.pi * var)


def radial_axis_likelihood(z: float, lam: float, sigma_d2: float):
    """Per-axis position factor: own = other + lam * (z - b - p_own + p_other) + N(0, sigma_d2).

    Nuisance order: (other coordinate, p_own, p_other[, b]).
    """
    def lik(t, u):
        b = u[3] if len(u) > 3 else 0.0
        return _normal_pdf(t - u[0] - lam * (z - b - u[1] + u[2]), sigma_d2)
    return lik


def linearized_clock_likelihood(z: float, lin: LinearizedRange, xi_hat, xj_hat, sigma_d2: float):
    """Clock factor from the first-order range model.

    Target t = p_i; nuisance order: (x_i, y_i, x_j, y_j, p_j[, b]).
    """
    def lik(t, u):
        d = linearized_range(lin, xi_hat, xj_hat, (u[0], u[1]), (u[2], u[3]))
        b = u[5] if len(u) > 5 else 0.0
        return _normal_pdf(z - d - t + u[4] - b, sigma_d2)
    return lik


def exact_likelihood(z: float, sigma_d2: float, target: str):
    """Square-root range likelihood with the target variable left free.

    ``target`` is "x", "y" or "p"; the nuisance tuple always lists the
    remaining entries of (x_i, y_i, p_i, x_j, y_j, p_j[, b]) in order.
    """
    order = ("x", "y", "p")
    k = order.index(target)

    def lik(t, u):
        own = list(u[:2])
        own.insert(k, t)
        xj, yj, pj = u[2], u[3], u[4]
        b = u[5] if len(u) > 5 else 0.0
        d = np.hypot(own[0] - xj, own[1] - yj)
        return _normal_pdf(z - d - own[2] + pj - b, sigma_d2)
    return lik


# ---------------------------------------------------------------- particles

@dataclass
class ParticleSet:
    """Weighted samples of (x, y, p) for one agent, p = c*theta in meters."""

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != self.particles.shape[0] or w.size < 1:
            raise ValueError("need one weight per particle and at least one particle")
        if np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValueError("weights must be finite, non-negative and not all zero")
        self.weights = w / w.sum()

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def std(self) -> np.ndarray:
        d = self.particles - self.mean()
        return np.sqrt(self.weights @ (d * d))

    def std_error(self) -> np.ndarray:
        """Monte-Carlo standard error of :meth:`mean` for self-normalized weights."""
        d = self.particles - self.mean()
        return np.sqrt((self.weights**2) @ (d * d))


@dataclass
class ParticleResult:
    agent_ids: list
    sets: dict

    def mean(self, i) -> np.ndarray:
        return self.sets[i].mean()

    def std(self, i) -> np.ndarray:
        return self.sets[i].std()

    def std_error(self, i) -> np.ndarray:
        return self.sets[i].std_error()

    def beliefs(self, c: float = SPEED_OF_LIGHT) -> dict:
        out = {}
        for i, s in self.sets.items():
            m, sd = s.mean(), s.std()
            out[i] = Belief(Gaussian1D(m[0], sd[0] ** 2), Gaussian1D(m[1], sd[1] ** 2),
                            Gaussian1D(m[2] / c, (sd[2] / c) ** 2))
        return out


def _log_range_lik(z, own, other, sigma_d2, nlos, rate):
    """log p(z | own, other) for rows of (x, y, p) in receiver orientation."""
    d = np.hypot(own[..., 0] - other[..., 0], own[..., 1] - other[..., 1])
    r = z - d - own[..., 2] + other[..., 2]
    if not nlos:
        return -0.5 * r * r / sigma_d2 - 0.5 * math.log(2.0 * math.pi * sigma_d2)
    # Gaussian noise plus Exp(rate) bias: exponentially modified Gaussian in r
    s = math.sqrt(sigma_d2)
    arg = (rate * sigma_d2 - r) / (s * math.sqrt(2.0))
    return math.log(rate / 2.0) + rate * (rate * sigma_d2 / 2.0 - r) + np.log(special.erfc(arg).clip(1e-300))


def _log_normal3(x, mean, var):
    out = np.zeros(x.shape[0])
    for k in range(3):
        if var[k] == 0.0:
            continue
        out += -0.5 * (x[:, k] - mean[k]) ** 2 / var[k] - 0.5 * math.log(2.0 * math.pi * var[k])
    return out


def _draw(rng, mean, var, n):
    return mean[None, :] + rng.standard_normal((n, 3)) * np.sqrt(var)[None, :]


# proposal width multipliers tried in turn when the weights collapse
_SPREADS = (1.0, 0.25, 4.0, 0.0625)


def particle_bp_slot(slot, priors: dict, noise: NoiseModel, R: int, rng: np.random.Generator, *,
                     n_iter: int = 10, message_particles: int = 500, inflate: float = 2.0,
                     prior_mix: float = 0.2, nlos_aware: bool = True, c: float = SPEED_OF_LIGHT,
                     max_retries: int = 3, max_log_ratio: float = 10.0) -> ParticleResult:
    """Sample-based BP on the exact likelihood (small networks only).

    Each agent keeps R particles over (x, y, c*theta).  Every iteration it
    redraws them from a Gaussian fitted to its current belief (variance
    inflated by ``inflate``) mixed with its prior, and weights them by
    prior / proposal times all incoming messages.  A message from an agent
    neighbor is a kernel sum of the exact likelihood over that neighbor's
    previous particles, reweighted to remove the message it got from us.
    """
    if R < 1:
        raise ValueError("R must be positive")
    sigma_d2 = max(noise.sigma_d2, 1e-24)
    rate = noise.nlos_rate
    agents = slot.agents
    pm = {i: np.array([b.x.mean, b.y.mean, c * b.theta.mean]) for i, b in priors.items() if i in agents}
    pv = {i: np.array([b.x.var, b.y.var, (c * b.theta.std) ** 2]) for i, b in priors.items() if i in agents}
    sets = {i: ParticleSet(_draw(rng, pm[i], pv[i], R), np.ones(R)) for i in agents}
    # log message from f_ij evaluated at agent i's particles, for extrinsic reweighting
    msg_at = {i: {} for i in agents}

    for _ in range(n_iter):
        old = sets
        old_msg = msg_at
        new_sets, new_msg = {}, {i: {} for i in agents}
        for i in agents:
            for attempt in range(max_retries + 1):
                spread = inflate * _SPREADS[attempt % len(_SPREADS)]
                m, s = old[i].mean(), old[i].std()
                var_q = np.maximum(spread * s * s, 1e-24)
                n_prior = int(round(prior_mix * R)) if R > 1 else 0
                x = np.vstack([_draw(rng, m, var_q, R - n_prior), _draw(rng, pm[i], pv[i], n_prior)])
                if np.any(pv[i] == 0.0):
                    x[:, pv[i] == 0.0] = pm[i][pv[i] == 0.0]
                # mixture proposal density
                lq_fit = _log_normal3(x, m, np.where(pv[i] == 0.0, 0.0, var_q))
                lq_pri = _log_normal3(x, pm[i], pv[i])
                frac = n_prior / R
                lq = np.logaddexp(math.log1p(-frac) + lq_fit, math.log(frac) + lq_pri) if frac > 0 else lq_fit
                lw = _log_normal3(x, pm[i], pv[i]) - lq
                for link in slot.links(i):
                    s_ = link.sign
                    own = x * np.array([1.0, 1.0, s_])
                    nlos = link.nlos and nlos_aware
                    if link.other_is_anchor:
                        ax, ay = slot.states[link.other].position
                        lm = _log_range_lik(link.z, own, np.array([ax, ay, 0.0]), sigma_d2, nlos, rate)
                    else:
                        j = link.other
                        src = old[j]
                        lwj = np.log(src.weights.clip(1e-300))
                        if i in old_msg[j]:
                            # divide our old message out, limiting the boost of particles it
                            # nearly ruled out so a few outliers cannot carry the message
                            back = old_msg[j][i]
                            lwj = lwj - np.maximum(back, back.max() - max_log_ratio)
                        lwj = lwj - special.logsumexp(lwj)
                        k = min(message_particles, src.size)
                        idx = rng.choice(src.size, size=k, replace=True, p=np.exp(lwj)) if k < src.size \
                            else np.arange(src.size)
                        base = np.zeros(k) if k < src.size else lwj
                        other = src.particles[idx] * np.array([1.0, 1.0, s_])
                        ll = _log_range_lik(link.z, own[:, None, :], other[None, :, :], sigma_d2, nlos, rate)
                        lm = special.logsumexp(ll + base[None, :], axis=1) - (math.log(k) if k < src.size else 0.0)
                        new_msg[i][j] = lm
                    lw = lw + lm
                if not np.isfinite(lw).any():
                    continue
                lw = np.where(np.isfinite(lw), lw, -np.inf)
                w = np.exp(lw - lw.max())
                cand = ParticleSet(x, w)
                if cand.ess >= min(R, 2):
                    break
            else:
                raise OracleFailure(f"particle weights degenerate for agent {i}")
            if cand.ess < R / 10 and R > 1:
                idx = rng.choice(R, size=R, replace=True, p=cand.weights)
                cand = ParticleSet(cand.particles[idx], np.ones(R))
                new_msg[i] = {j: v[idx] for j, v in new_msg[i].items()}
            new_sets[i] = cand
        sets, msg_at = new_sets, new_msg
    return ParticleResult(list(agents), sets)
