import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bdtwin.consensus import (Affine, Log, NoMinerError, ReputationParams, Table, block_energy,
                              block_time, calibrate_kappa, consensus_slot, difficulty,
                              mining_weight, offloaded_flops, reputation, sample_block_time)

from conftest import reputation_params, tiny_network


def params(**kw):
    base = dict(alpha=5e-5, beta=-29.0, g=Affine(1e6), p0=1 - 1e-15, U_min=25.0, U_max=75.0)
    base.update(kw)
    return ReputationParams(**base)


def test_offloaded_flops_fixtures():
    net = tiny_network([[40.0, 100.0]], [[1.0, 1.0]], [[1]], [[1]])
    assert offloaded_flops(net, [2.0], [1])[0] == 200.0
    assert offloaded_flops(net, [2.0], [2])[0] == 0.0
    # two DTs on two APs, everything but the first layer offloaded
    net2 = tiny_network([[1.0, 2.0, 3.0], [10.0, 20.0]], [[1.0] * 3, [1.0] * 2],
                        [[1, 0], [0, 1]], [[1, 0], [0, 1]])
    O = offloaded_flops(net2, [2.0, 0.5], [1, 1])
    assert O.tolist() == [2.0 * (2 + 3), 0.5 * 20]


def test_reputation_fixtures():
    p = params()
    assert reputation(p, 0.0) == 0.0
    assert reputation(p, 5e7) == pytest.approx(50.0, rel=1e-15)


def test_difficulty_fixtures():
    assert difficulty(params(alpha=1.0, beta=-3.0), 3.0) == 1.0
    assert difficulty(params(), 50.0) == pytest.approx(math.exp(28.9975), rel=1e-12)
    assert difficulty(params(), 10.0) > difficulty(params(), 11.0)
    assert mining_weight(params(), 50.0) * difficulty(params(), 50.0) == pytest.approx(1.0, rel=1e-15)


def test_block_time_fixtures():
    p = params(p0=1 - math.exp(-1.0), alpha=0.0, beta=0.0)
    theta_hat, tau = block_time(p, [1.0], gamma=[1.0])
    assert theta_hat == 1.0
    assert tau == pytest.approx(1.0, rel=1e-12)
    _, t1 = block_time(params(), [3.0, 5.0], U=[10.0, 40.0])
    _, t2 = block_time(params(), [6.0, 10.0], U=[10.0, 40.0])
    assert t2 == pytest.approx(t1 / 2, rel=1e-14)
    _, one = block_time(params(), [2.0], U=[30.0])
    _, four = block_time(params(), [2.0] * 4, U=[30.0] * 4)
    assert four / one == pytest.approx(0.25, rel=1e-14)
    with pytest.raises(NoMinerError):
        block_time(params(), [0.0, 0.0], U=[1.0, 1.0])


def test_block_energy_fixtures():
    assert block_energy(1.0, 2.0, 0.0) == 0.0
    assert block_energy(1.0, 2.0, 3.0) == 54.0
    assert block_energy(2.0, 0.5, 6.0) == 8 * block_energy(2.0, 0.5, 3.0)


def test_sampled_block_time_moments():
    rng = np.random.default_rng(11)
    theta_hat = 4.0
    x = sample_block_time(theta_hat, rng, 10 ** 5)
    assert abs(x.mean() * theta_hat - 1) < 0.02
    assert stats.kstest(x, "expon", args=(0, 1 / theta_hat)).pvalue > 0.01
    fast = sample_block_time(1e6, rng, 10 ** 5)
    assert abs(np.median(fast) / (math.log(2) / 1e6) - 1) < 0.05


def test_consensus_slot_identity():
    net = tiny_network([[1.0, 4.0]] * 2, [[1.0, 1.0]] * 2, [[1, 0], [0, 1]], [[1, 0], [0, 1]],
                       v_A=[2.0, 3.0])
    p = reputation_params(kappa=2.0, alpha=0.1, beta=-1.0, p0=0.9)
    r = consensus_slot(net, p, [1.0, 3.0], [1, 2], [2.0, 1.0])
    assert r.O.tolist() == [4.0, 0.0]
    assert r.U.tolist() == [2.0, 0.0]
    assert r.tau_bloc * r.theta_hat == pytest.approx(-math.log(0.1), rel=1e-12)
    assert r.e_bloc.tolist() == pytest.approx([2.0 * r.tau_bloc * 8, 3.0 * r.tau_bloc], rel=1e-15)


def test_other_reputation_curves():
    g = Log(10.0, 1e6)
    assert g(0.0) == 0.0
    assert g(1e6) == pytest.approx(10 * math.log(2))
    t = Table((0.0, 1e6, 3e6), (0.0, 20.0, 30.0))
    assert t(5e5) == 10.0
    assert t(5e6) == pytest.approx(40.0)
    with pytest.raises(ValueError):
        Table((0.0, 1.0), (5.0, 1.0))


def test_kappa_calibration_on_default_profile(default_cfg):
    # per AP: 8/7 VGG-11 and 7/8 CNN DTs alternate; type-1 APs see 100 arrivals, type-2 see 50;
    # full offload keeps everything but the first layer
    vgg = 343_484_416 - 3_538_944
    cnn = 24_583_936 - 1_254_400
    O = [100 * (8 * vgg + 7 * cnn), 100 * (7 * vgg + 8 * cnn),
         50 * (8 * vgg + 7 * cnn), 50 * (7 * vgg + 8 * cnn)]
    expect = sum(O) / 4 / 50.0
    rep = default_cfg.rep
    assert rep.g.kappa == pytest.approx(expect, rel=1e-12)
    assert calibrate_kappa(default_cfg.network, 25.0, 75.0) == pytest.approx(expect, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.0, 1e9), min_size=2, max_size=5),
       st.lists(st.floats(1.0, 1e8), min_size=5, max_size=5), st.integers(0, 4), st.floats(1.0, 1e9))
def test_more_offload_never_slows_blocks(O, f, k, extra):
    p = params(alpha=5e-3, g=Affine(1e7))
    J = len(O)
    f = np.array(f[:J])
    O = np.array(O)
    k %= J
    _, before = block_time(p, f, U=reputation(p, O))
    O[k] += extra
    theta_hat, after = block_time(p, f, U=reputation(p, O))
    assert after <= before * (1 + 1e-12)
    assert after * theta_hat == pytest.approx(p.race_constant, rel=1e-12)
