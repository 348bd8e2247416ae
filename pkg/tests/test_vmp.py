import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from coopsync.config import NlosSpec, NoiseModel, PriorModel
from coopsync.engine import run_rounds
from coopsync.experiment import run_trial, trial_rng
from coopsync.gaussian import Belief, Gaussian1D, product
from coopsync.linearize import SingularGeometry, linearize
from coopsync.vmp import (VMPEngine, run_slot_vmp, vmp_belief, vmp_bias_belief, vmp_bias_message,
                          vmp_factor_to_variable, vmp_prediction)
from coopsync.config import reference_random_scenario

from conftest import C, exact_prior, random_slot, trilateration_slot

G = Gaussian1D


def test_anchor_messages():
    lin = linearize((3, 4), (0, 0))
    m = vmp_factor_to_variable(6.0, (3, 4, 0.0), (0, 0, 0.0), lin, 0.5)
    assert_allclose([m[0].mean, m[0].var], [3.6, 0.5], rtol=1e-15)
    assert_allclose([m[1].mean, m[1].var], [4.8, 0.5], rtol=1e-15)
    # clock in meters: (z - d_hat) = 1 m, i.e. 1/c seconds with variance sd2/c^2
    assert_allclose([m[2].mean, m[2].var], [1.0, 0.5], rtol=1e-15)


def test_bias_message_and_belief():
    lin = linearize((3, 4), (0, 0))
    msg = vmp_bias_message(10.0, (3, 4, 1.0), (0, 0, 0.0), lin, 1.0)
    assert_allclose([msg.mean, msg.var], [4.0, 1.0], rtol=1e-15)
    b = vmp_bias_belief(G(5, 1), 0.38, 1.0)
    assert_allclose([b.mean, b.var], [4.62, 1.0], rtol=1e-15)
    assert vmp_bias_belief(G(5, 1), 0.0, 1.0).mean == 5
    assert_allclose(vmp_bias_belief(G(0.1, 1), 0.38, 1.0).mean, -0.28, rtol=1e-12)


def test_prediction_examples():
    noise = NoiseModel(sigma_ux=1.0, sigma_uy=1.0, sigma_utheta=1e-8)
    p = vmp_prediction(Belief(G(2, 0.5), G(0, 7), G(5e-9, 123.0)), (1.0, 0.0), 1.0, noise)
    assert_allclose([p.x.mean, p.x.var], [3, 1])
    assert_allclose([p.theta.mean, p.theta.var], [5e-9, 1e-16], rtol=1e-15)
    still = NoiseModel(sigma_ux=0.0, sigma_uy=0.0, sigma_utheta=0.0)
    p = vmp_prediction(Belief(G(2, 0.5), G(0, 7), G(0, 1)), (0.0, 0.0), 1.0, still)
    assert p.x.var == 1e-12 and p.theta.var == 1e-12 / C**2


def test_belief_examples():
    g = vmp_belief(G(0, 1), [1.0, 3.0], 1.0)
    assert_allclose([g.mean, g.var], [4 / 3, 1 / 3], rtol=1e-15)
    assert vmp_belief(G(2, 3), [], 1.0) == G(2, 3)
    rng = np.random.default_rng(0)
    ms = list(rng.normal(size=5))
    g = vmp_belief(G(0.5, 2), ms, 0.7)
    ref = product([G(0.5, 2)] + [G(m, 0.7) for m in ms])
    assert_allclose([g.mean, g.var], [ref.mean, ref.var], rtol=1e-13)


def _scalar_reference_iteration(engine, slot):
    sd2, rate = engine.sigma_d2, engine.rate
    out = {}
    for i in engine.agent_ids:
        loc = engine.local[i]
        own = tuple(loc.belief_m)
        est = engine.inbox[i]["est"]
        sums = ([], [], [])
        for r, link in enumerate(slot.links(i)):
            other = tuple(est[r])
            try:
                lin = linearize(own[:2], other[:2])
            except SingularGeometry:
                continue
            s = link.sign
            o = (own[0], own[1], s * own[2])
            t = (other[0], other[1], s * other[2])
            b = 0.0
            if link.nlos and engine.nlos_aware:
                if engine.owned[i][r]:
                    b = vmp_bias_belief(vmp_bias_message(link.z, o, t, lin, sd2), rate, sd2).mean
                else:
                    b = engine.inbox[i]["bias"][r]
                b = max(b, 0.0)
            m = vmp_factor_to_variable(link.z, o, t, lin, sd2, b)
            sums[0].append(m[0].mean)
            sums[1].append(m[1].mean)
            sums[2].append(s * m[2].mean)
        out[i] = [vmp_belief(engine.pred[i][k], sums[k], sd2) for k in range(3)]
    return out


def test_engine_matches_scalar_composition():
    cfg, slot, priors = random_slot(8, seed=4, nlos=NlosSpec("probability", 0.4))
    eng = VMPEngine(slot, priors, cfg.noise)
    eng.start()
    for _ in range(4):
        ref = _scalar_reference_iteration(eng, slot)
        fresh = {i: eng.update(i, eng.local[i], eng.inbox[i]) for i in eng.agent_ids}
        eng.local.update(fresh)
        eng.exchange()
        for i in eng.agent_ids:
            assert_allclose(eng.local[i].belief_m, [g.mean for g in ref[i]], rtol=1e-11, atol=1e-9)
            assert_allclose(eng.local[i].belief_v, [g.var for g in ref[i]], rtol=1e-12)


def test_belief_variance_depends_only_on_prior_noise_and_degree():
    cfg, slot, priors = random_slot(10, seed=6)
    res = run_slot_vmp(slot, priors, cfg.noise, n_iter=7)
    for i in slot.agents:
        k = len(slot.links(i))
        pv = priors[i]
        b = res.beliefs[i]
        assert_allclose(b.x.var, 1 / (1 / pv.x.var + k / cfg.noise.sigma_d2), rtol=1e-12)
        pt = (C * pv.theta.std) ** 2
        assert_allclose(b.theta.var * C * C, 1 / (1 / pt + k / cfg.noise.sigma_d2), rtol=1e-9)


def test_one_iteration_at_truth_reproduces_truth():
    cfg, slot, _ = random_slot(8, seed=5, noise=NoiseModel(sigma_d=0.0))
    pri = exact_prior(slot)
    res = run_slot_vmp(slot, pri, cfg.noise, n_iter=1)
    truth = np.array([[*slot.states[i].position, slot.states[i].clock_offset] for i in slot.agents])
    assert_allclose(res.history[0][:, :2], truth[:, :2], atol=1e-9)
    assert_allclose(res.history[0][:, 2], truth[:, 2], atol=1e-17)


def test_noiseless_fixed_point():
    slot = trilateration_slot()
    res = run_slot_vmp(slot, exact_prior(slot), NoiseModel(sigma_d=0.0), n_iter=20)
    est = res.history[-1][0]
    assert math.hypot(est[0] - 20, est[1] - 15) <= 1e-6
    assert abs(est[2] - 30 / C) <= 1e-14


def test_comm_counts_and_bias_exchange():
    cfg, slot, priors = random_slot(10, seed=2, nlos=NlosSpec("probability", 0.3))
    res = run_slot_vmp(slot, priors, cfg.noise, n_iter=3)
    for i in slot.agents:
        assert res.comm.per_node[i] == 9
    shared = sum(1 for m in slot.measurements if m.nlos and not slot.states[m.tx].is_anchor)
    assert res.comm.bias_params == 3 * shared
    unaware = run_slot_vmp(slot, priors, cfg.noise, n_iter=3, nlos_aware=False)
    assert unaware.comm.bias_params == 0 and unaware.bias == {}


def test_broadcast_identical_across_recipients():
    cfg, slot, priors = random_slot(10, seed=8)
    eng = VMPEngine(slot, priors, cfg.noise)
    run_rounds(eng, 1, 2)
    for i in slot.agents:
        sent = eng.local[i].belief_m
        for j in slot.agents:
            for r, link in enumerate(slot.links(j)):
                if link.other == i:
                    assert eng.inbox[j]["est"][r].tobytes() == sent.tobytes()


def test_bias_estimates_are_raw_and_clamped_in_use():
    cfg, slot, priors = random_slot(10, seed=3, nlos=NlosSpec("probability", 0.5))
    res = run_slot_vmp(slot, priors, cfg.noise, n_iter=5)
    assert set(res.bias) == {(m.tx, m.rx) for m in slot.measurements if m.nlos}
    assert all(math.isfinite(b.mean) and b.var == cfg.noise.sigma_d2 for b in res.bias.values())


def test_jacobi_order_invariance_bit_exact():
    cfg, slot, priors = random_slot(10, seed=7, nlos=NlosSpec("probability", 0.3))
    a = run_slot_vmp(slot, priors, cfg.noise, n_iter=6)
    b = run_slot_vmp(slot, priors, cfg.noise, n_iter=6, node_order=list(reversed(slot.agents)))
    for x, y in zip(a.history, b.history):
        assert np.array_equal(x, y)


@pytest.mark.slow
def test_tight_priors_close_to_bp():
    cfg = reference_random_scenario(n_agents=20, prior=PriorModel(0.1, 0.1))
    bp, vmp = [], []
    for t in range(10):
        bp.append(run_trial(cfg, trial_rng(3, t), "std-bp").position_errors())
        vmp.append(run_trial(cfg, trial_rng(3, t), "vmp").position_errors())
    r_bp = math.sqrt(np.mean(np.concatenate(bp) ** 2))
    r_vmp = math.sqrt(np.mean(np.concatenate(vmp) ** 2))
    print(f"tight priors: BP {r_bp:.4f} m, VMP {r_vmp:.4f} m")
    assert abs(r_vmp - r_bp) <= 0.05 * r_bp
