"""Brute-force references for the per-slot solvers on small instances.

Frequencies: a zooming grid search (about 10^3 points per level) over the box
[0, f_max]^k.  Partition: plain enumeration of every l, each evaluated through
SlotProblem.evaluate rather than the branch-and-bound tables.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .consensus import Affine, NoMinerError, ReputationParams
from .dpra import (AuxQueues, Decision, LyapunovParams, SlotProblem, TIE_RTOL, solve_fA,
                   solve_fbloc, solve_partition)
from .env import (ApParams, ChannelParams, GatewayParams, InfeasibleSlotError, Network,
                  SlotRealization, Topology)
from .profile import LayerProfile, ModelProfile

FEAS_RTOL = 1e-9


def zoom_minimize(fun, lo, hi, points: int = 1000, max_levels: int = 80, rtol: float = 1e-10):
    """Minimise a vectorised ``fun(X) -> values`` (inf = infeasible) over a box by grid zooming."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    d = lo.size
    k = max(3, int(math.ceil(points ** (1.0 / d))))
    best_x, best_v = None, math.inf
    a, b = lo.copy(), hi.copy()
    for _ in range(max_levels):
        axes = [np.linspace(a[i], b[i], k) for i in range(d)]
        X = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        vals = fun(X)
        idx = int(np.argmin(vals))
        if vals[idx] < best_v:
            best_v, best_x = float(vals[idx]), X[idx].copy()
        if best_x is None:
            return None, math.inf
        step = (b - a) / (k - 1)
        a = np.maximum(lo, best_x - step)
        b = np.minimum(hi, best_x + step)
        if np.all(b - a <= rtol * np.maximum(np.abs(hi), 1e-300)):
            break
    return best_x, best_v


# --- block oracles ------------------------------------------------------------------------


def fbloc_oracle(problem: SlotProblem, l, f_A):
    """Least block time over the f_bloc box subject to the AP energy budgets."""
    m = problem.evaluate(Decision(np.asarray(l), np.asarray(f_A, float),
                                  np.zeros(problem.net.topology.J)))
    E_res = problem.real.E_A - m.e_inf_A
    w = problem.weights(m.U)
    v = problem.net.aps.v_A
    c = problem.c

    def fun(F):
        rate = F @ w
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.where(rate > 0, c / rate, np.inf)
            e = v[None, :] * tau[:, None] * F ** 3
        ok = (e <= E_res[None, :] + FEAS_RTOL * np.maximum(problem.real.E_A, 1e-300)).all(axis=1)
        return np.where(ok, tau, np.inf)

    x, val = zoom_minimize(fun, np.zeros_like(w), problem.net.aps.f_max)
    return x, val


def fA_oracle(problem: SlotProblem, l, f_bloc):
    """Least makespan over the f_A box subject to AP capacity and energy budgets."""
    l = np.asarray(l)
    A = problem.per_gateway(problem.t_G_dt, l) + problem.per_gateway(problem.t_off_dt, l)
    W = problem.per_gateway(problem.apF, l)
    m = problem.evaluate(Decision(l, np.ones(problem.net.topology.M), np.asarray(f_bloc, float)))
    budget = problem.real.E_A - m.e_bloc
    phi, v = problem.phi_A_gw, problem.v_A_gw
    b = problem.net.topology.b.astype(float)
    f_max = problem.net.aps.f_max

    def fun(F):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(W[None, :] > 0, W[None, :] / (phi[None, :] * F), 0.0)
        span = (A[None, :] + t).max(axis=1)
        e = (v * W / phi)[None, :] * F ** 2 @ b
        ok = ((F @ b <= f_max[None, :] * (1 + FEAS_RTOL)).all(axis=1)
              & (e <= budget[None, :] + FEAS_RTOL * problem.real.E_A[None, :]).all(axis=1))
        return np.where(ok & np.isfinite(span), span, np.inf)

    x, val = zoom_minimize(fun, np.zeros(problem.net.topology.M), f_max[problem.ap_gw])
    return x, val


def _partition_domains(problem: SlotProblem) -> list:
    domains = [range(1, int(L) + 1) for L in problem.net.tables.L]
    # lenient rule: DTs of gateways that cannot meet their energy budget sit at their least-energy point
    fixed = problem.min_energy_cols() + 1
    for n in np.flatnonzero(problem.energy_forced[problem.gw]):
        domains[n] = [int(fixed[n])]
    return domains


def partition_oracle(problem: SlotProblem, f_A, f_bloc):
    """(l, objective) by enumerating every l; lexicographically smallest among ties."""
    best_l, best = None, math.inf
    for l in itertools.product(*_partition_domains(problem)):
        l = np.array(l)
        m = problem.evaluate(Decision(l, np.asarray(f_A, float), np.asarray(f_bloc, float)))
        if m.ap_energy_violation.any() or (m.gw_energy_violation & ~m.energy_forced).any():
            continue
        if best_l is None or m.objective < best - TIE_RTOL * abs(best):
            best_l, best = l, m.objective
    if best_l is None:
        raise InfeasibleSlotError("no feasible partition")
    return best_l, best


def joint_oracle(problem: SlotProblem):
    """Global P2 optimum by enumerating l and zoom-gridding (f_A, f_bloc) jointly."""
    net = problem.net
    M, J = net.topology.M, net.topology.J
    b = net.topology.b.astype(float)
    f_max = net.aps.f_max
    phi, v = problem.phi_A_gw, problem.v_A_gw
    best = (None, math.inf)
    for l in itertools.product(*_partition_domains(problem)):
        l = np.array(l)
        m0 = problem.evaluate(Decision(l, np.ones(M), np.ones(J)))
        if (m0.gw_energy_violation & ~m0.energy_forced).any():
            continue
        A = m0.tau_exe_G + m0.tau_off
        W = problem.per_gateway(problem.apF, l)
        w = 1.0 / m0.gamma
        q_term = float(np.dot(problem.qcoef, m0.U))

        def fun(X):
            F, Fb = X[:, :M], X[:, M:]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(W[None, :] > 0, W[None, :] / (phi[None, :] * F), 0.0)
                rate = Fb @ w
                tau = np.where(rate > 0, problem.c / rate, np.inf)
                span = (A[None, :] + t).max(axis=1)
                e = (v * W / phi)[None, :] * F ** 2 @ b + net.aps.v_A[None, :] * tau[:, None] * Fb ** 3
            ok = ((F @ b <= f_max[None, :] * (1 + FEAS_RTOL)).all(axis=1)
                  & (e <= problem.real.E_A[None, :] * (1 + FEAS_RTOL)).all(axis=1))
            obj = problem.V * (span + tau) + q_term
            return np.where(ok & np.isfinite(obj), obj, np.inf)

        hi = np.concatenate([f_max[problem.ap_gw], f_max])
        x, val = zoom_minimize(fun, np.zeros(M + J), hi, points=4000)
        if val < best[1]:
            best = (l, val)
    return best


# --- random instances ---------------------------------------------------------------------


@dataclass
class Instance:
    problem: SlotProblem
    l: np.ndarray
    f_A: np.ndarray
    lp: LyapunovParams
    spec: dict


def build_instance(spec: dict) -> Instance:
    top = Topology(np.array(spec["a"]), np.array(spec["b"]))
    models = tuple(ModelProfile(f"m{n}", tuple(LayerProfile(f, o) for f, o in zip(fl, bits)))
                   for n, (fl, bits) in enumerate(zip(spec["flops"], spec["bits"])))
    M, J = top.M, top.J
    gws = GatewayParams.build(M, phi_G=8.0, f_G=spec["f_G"], v_G=1e-24, P=0.1, d=spec["d"],
                              E_G_max=1.0)
    aps = ApParams.build(J, phi_A=32.0, v_A=1e-24, f_max=spec["f_max"],
                         f_min=[1e-4 * f for f in spec["f_max"]], E_A_max=1.0)
    ch = ChannelParams(h0=1e-3, d0=1.0, nu=3.0, B=5e6, N0=4e-21)
    net = Network(top, gws, aps, ch, models, np.ones(top.N))
    rep = ReputationParams(alpha=spec["alpha"], beta=spec["beta"], g=Affine(spec["kappa"]),
                           p0=0.9, U_min=25.0, U_max=75.0)
    real = SlotRealization(D=np.array(spec["D"]), rho=np.array(spec["rho"]),
                           eta=np.zeros(M), E_G=np.array(spec["E_G"]), E_A=np.array(spec["E_A"]))
    queues = AuxQueues(np.array(spec["Q"]), np.array(spec["S"]))
    problem = SlotProblem(net, real, rep, queues, spec["V"])
    return Instance(problem, np.array(spec["l"]), np.array(spec["f_A"]), LyapunovParams(V=spec["V"]),
                    spec)


def random_instance(rng: np.random.Generator, max_M: int = 3, max_N: int = 4, max_L: int = 5,
                    max_J: int = 3) -> Instance:
    M = int(rng.integers(1, max_M + 1))
    J = int(rng.integers(1, min(M, max_J) + 1))
    N = int(rng.integers(1, max_N + 1))
    b = np.zeros((M, J), int)
    b[np.arange(M), np.concatenate([np.arange(J), rng.integers(0, J, M - J)])] = 1
    a = np.zeros((N, M), int)
    a[np.arange(N), rng.integers(0, M, N)] = 1
    Ls = rng.integers(1, max_L + 1, N)
    flops = [list(rng.uniform(1e6, 1e8, L)) for L in Ls]
    bits = [list(rng.uniform(1e3, 1e6, L)) for L in Ls]
    D = rng.uniform(0.5, 2.0, N)
    total = sum(d * sum(f) for d, f in zip(D, flops))
    f_max = list(rng.uniform(5e7, 2e8, J))
    spec = dict(
        a=a.tolist(), b=b.tolist(), flops=flops, bits=bits, D=D.tolist(),
        f_G=list(rng.uniform(1e6, 1e7, M)), d=list(rng.uniform(1.0, 50.0, M)),
        f_max=f_max, rho=list(rng.exponential(1.0, M)),
        E_G=list(rng.uniform(1e-4, 2e-2, M)), E_A=list(rng.uniform(0.05, 2.0, J)),
        alpha=float(rng.uniform(0.005, 0.05)), beta=float(rng.uniform(-20.0, -16.0)),
        kappa=float(total / 50.0), Q=list(rng.uniform(0, 100, J)), S=list(rng.uniform(0, 100, J)),
        V=float(10 ** rng.uniform(0, 3)),
        l=[int(rng.integers(1, L + 1)) for L in Ls],
    )
    # random shares that respect the AP capacity
    shares = rng.uniform(0.05, 1.0, M)
    per_ap = b.T @ shares
    spec["f_A"] = [float(shares[m] / per_ap[b[m].argmax()] * f_max[b[m].argmax()]) for m in range(M)]
    return build_instance(spec)


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(inst.spec, fh, indent=1)


def load_instance(path) -> Instance:
    with open(path) as fh:
        return build_instance(json.load(fh))


def _rel(solver: float, oracle: float) -> float:
    if not math.isfinite(oracle):
        return 0.0 if not math.isfinite(solver) else 0.0
    return max(0.0, (solver - oracle) / abs(oracle))


def compare_all(inst: Instance) -> dict:
    """Relative objective gaps (solver minus oracle) for the three block solvers."""
    pr, l, f_A, lp = inst.problem, inst.l, inst.f_A, inst.lp
    out = {"fbloc": 0.0, "fA": 0.0, "partition": 0.0}
    # f_bloc with l and f_A fixed
    try:
        fb = solve_fbloc(pr, l, f_A, lp)
        tau = pr.evaluate(Decision(l, f_A, fb)).tau_bloc
        _, tau_o = fbloc_oracle(pr, l, f_A)
        feas = not pr.evaluate(Decision(l, f_A, fb)).ap_energy_violation.any()
        out["fbloc"] = _rel(tau, tau_o) if feas else math.inf
    except (InfeasibleSlotError, NoMinerError):
        _, tau_o = fbloc_oracle(pr, l, f_A)
        out["fbloc"] = 0.0 if not math.isfinite(tau_o) else math.inf
        return out
    # f_A with l and a slack-leaving f_bloc fixed
    fb_half = 0.5 * fb
    try:
        fa = solve_fA(pr, l, fb_half, lp)
        m = pr.evaluate(Decision(l, fa, fb_half))
        _, span_o = fA_oracle(pr, l, fb_half)
        feas = not (m.capacity_violation.any() or m.ap_energy_violation.any())
        out["fA"] = _rel(m.makespan, span_o) if feas else math.inf
    except InfeasibleSlotError:
        _, span_o = fA_oracle(pr, l, fb_half)
        out["fA"] = 0.0 if not math.isfinite(span_o) else math.inf
    # partition with frequencies fixed
    try:
        res = solve_partition(pr, f_A, fb_half, incumbent=None)
        solver_l, solver_obj = res.l, res.objective
    except InfeasibleSlotError:
        solver_l, solver_obj = None, math.inf
    try:
        oracle_l, oracle_obj = partition_oracle(pr, f_A, fb_half)
    except InfeasibleSlotError:
        oracle_l, oracle_obj = None, math.inf
    if solver_l is None or oracle_l is None:
        out["partition"] = 0.0 if solver_l is None and oracle_l is None else math.inf
    else:
        out["partition"] = 0.0 if np.array_equal(solver_l, oracle_l) else max(
            abs(solver_obj - oracle_obj) / abs(oracle_obj), 1e-300)
    return out
