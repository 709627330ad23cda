import numpy as np
import pytest

from bdtwin.config import ExperimentConfig, default_profile
from bdtwin.consensus import Affine, ReputationParams
from bdtwin.dpra import AuxQueues
from bdtwin.env import (ApParams, ChannelParams, GatewayParams, Network, SlotRealization,
                        Topology)
from bdtwin.profile import LayerProfile, ModelProfile


def tiny_network(flops, bits, a, b, *, phi_G=1.0, f_G=1.0, v_G=1e-24, P=0.1, d=1.0,
                 phi_A=1.0, v_A=1.0, f_max=1.0, f_min=None, E_G_max=1.0, E_A_max=1.0,
                 h0=1e-3, nu=3.0, B=1.0, N0=1e-21, theta=1.0):
    """Network built from explicit per-DT layer FLOPs and output bits."""
    top = Topology(np.array(a), np.array(b))
    models = tuple(ModelProfile(f"m{n}", tuple(LayerProfile(f, o) for f, o in zip(fl, bt)))
                   for n, (fl, bt) in enumerate(zip(flops, bits)))
    f_max_v = np.broadcast_to(np.asarray(f_max, float), (top.J,))
    gws = GatewayParams.build(top.M, phi_G=phi_G, f_G=f_G, v_G=v_G, P=P, d=d, E_G_max=E_G_max)
    aps = ApParams.build(top.J, phi_A=phi_A, v_A=v_A, f_max=f_max_v,
                         f_min=1e-4 * f_max_v if f_min is None else f_min, E_A_max=E_A_max)
    ch = ChannelParams(h0=h0, d0=1.0, nu=nu, B=B, N0=N0, interference_mean=0.0,
                       interference_std=0.0)
    return Network(top, gws, aps, ch, models, np.broadcast_to(theta, (top.N,)))


def realization(net, D, rho=1.0, E_G=1.0, E_A=1.0):
    M, J = net.topology.M, net.topology.J
    return SlotRealization(D=np.asarray(D, float), rho=np.broadcast_to(float(rho), (M,)).copy(),
                           eta=np.zeros(M), E_G=np.broadcast_to(np.asarray(E_G, float), (M,)).copy(),
                           E_A=np.broadcast_to(np.asarray(E_A, float), (J,)).copy())


def reputation_params(kappa=1.0, alpha=0.0, beta=0.0, p0=1 - np.exp(-1.0), U_min=25.0, U_max=75.0):
    return ReputationParams(alpha=alpha, beta=beta, g=Affine(kappa), p0=p0, U_min=U_min, U_max=U_max)


def zero_queues(J):
    return AuxQueues(np.zeros(J), np.zeros(J))


@pytest.fixture(scope="session")
def default_cfg():
    return ExperimentConfig.from_dict(default_profile())


# one verdict line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
