import math

import numpy as np
import pytest

from bdtwin.baselines import BaselineSpec, wdpo_step, wtcm_step
from bdtwin.dpra import AuxQueues, Decision, LyapunovParams, SlotProblem, dpra_step
from bdtwin.env import sample_slot

from conftest import realization, reputation_params, tiny_network

LP = LyapunovParams(V=10.0)


def single_layer_net():
    return tiny_network([[3e6]] * 4, [[1e4]] * 4, [[1, 0], [1, 0], [0, 1], [0, 1]], [[1], [1]],
                        phi_G=8.0, f_G=5e6, v_G=1e-24, d=5.0, phi_A=32.0, f_max=1e8,
                        v_A=1e-24, B=5e6, N0=4e-21)


def test_spec_defaults(default_cfg):
    net, rep = default_cfg.network, default_cfg.rep
    l = BaselineSpec("WDPO").partition(net)
    # 16-layer VGG-11 and 6-layer CNN: ceil(L/2)
    assert sorted(set(l.tolist())) == [3, 8]
    assert BaselineSpec("WTCM").gamma(rep) == pytest.approx(math.exp(-5e-5 * 50 + 29), rel=1e-12)
    with pytest.raises(ValueError):
        BaselineSpec("WTCM", fixed_gamma=0.0)
    with pytest.raises(ValueError):
        BaselineSpec("WDPO", fixed_l=(0,) * net.topology.N).partition(net)


def test_wdpo_equals_dpra_with_singleton_layers():
    net = single_layer_net()
    rep = reputation_params(kappa=1e5, alpha=0.01, beta=-16.0, p0=0.9)
    real = realization(net, [1.0, 2.0, 0.5, 1.5], E_G=1.0, E_A=2.0)
    q = AuxQueues(np.array([10.0]), np.array([5.0]))
    a = wdpo_step(net, real, rep, q, LP, BaselineSpec("WDPO"))
    b = dpra_step(SlotProblem(net, real, rep, q, LP.V), LP)
    assert a.decision.l.tolist() == b.decision.l.tolist() == [1, 1, 1, 1]
    assert a.metrics.objective == pytest.approx(b.metrics.objective, rel=1e-9)


def test_wtcm_with_matching_gamma_reproduces_block_time():
    net = single_layer_net()
    rep = reputation_params(kappa=1e5, alpha=0.01, beta=-16.0, p0=0.9)
    real = realization(net, [1.0] * 4, E_G=1.0, E_A=2.0)
    q = AuxQueues(np.zeros(1), np.zeros(1))
    dec = Decision(np.ones(4, int), np.array([2e7, 2e7]), np.array([5e7]))
    dpra = SlotProblem(net, real, rep, q, 1.0).evaluate(dec)
    fixed = SlotProblem(net, real, rep, q, 1.0, fixed_gamma=float(dpra.gamma[0])).evaluate(dec)
    assert fixed.tau_bloc == pytest.approx(dpra.tau_bloc, rel=1e-14)


def test_wtcm_block_time_ignores_partition():
    net = tiny_network([[1e6, 2e6, 3e6]] * 2, [[1e4] * 3] * 2, [[1], [1]], [[1]], f_max=1e8,
                       v_A=1e-24, B=5e6, N0=4e-21)
    rep = reputation_params(kappa=1e5, alpha=0.01, beta=-16.0, p0=0.9)
    pr = SlotProblem(net, realization(net, [1.0, 1.0]), rep, AuxQueues(np.zeros(1), np.zeros(1)),
                     1.0, fixed_gamma=123.0)
    taus = {pr.evaluate(Decision(np.array(l), np.array([1e7]), np.array([4e7]))).tau_bloc
            for l in [(1, 1), (2, 3), (3, 3)]}
    assert len(taus) == 1


def test_baselines_feasible_where_dpra_is(default_cfg):
    net, rep, lp = default_cfg.network, default_cfg.rep, default_cfg.lyapunov
    q = AuxQueues.initial(net.topology.J, rep.U_min, rep.U_max)
    for t in range(4):
        real = sample_slot(net, 2, t)
        d = dpra_step(SlotProblem(net, real, rep, q, lp.V), lp)
        w = wdpo_step(net, real, rep, q, lp, BaselineSpec("WDPO"))
        c = wtcm_step(net, real, rep, q, lp, BaselineSpec("WTCM"))
        assert d.metrics.feasible_lenient
        assert w.metrics.feasible_lenient and c.metrics.feasible_lenient
        # WDPO keeps the rule's partition except on gateways where it exceeds the energy budget
        rule = BaselineSpec("WDPO").partition(net)
        pr = SlotProblem(net, real, rep, q, lp.V)
        bad = pr.per_gateway(pr.eG_dt, rule) > real.E_G
        keep = ~bad[net.topology.gateway_of]
        assert np.array_equal(w.decision.l[keep], rule[keep])
