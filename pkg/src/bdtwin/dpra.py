"""Per-slot drift-plus-penalty optimisation by block coordinate descent.

Each slot solves

    min  V * tau(t) + sum_j (S_j - Q_j) * U_j(t)

over partition points l, AP inference frequencies f_A and mining frequencies f_bloc, cycling
through three exact-ish block solvers: a bisection for f_bloc, a bisection on the makespan for
f_A, and a branch-and-bound (one case per candidate bottleneck gateway) for l.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import _bnb
from .consensus import Affine, Log, NoMinerError, ReputationParams, Table, mining_weight
from .env import InfeasibleSlotError, Network, SlotRealization, slot_rates

log = logging.getLogger(__name__)

ENERGY_RTOL = 1e-9
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class AuxQueues:
    Q: np.ndarray
    S: np.ndarray

    @classmethod
    def initial(cls, J: int, U_min: float, U_max: float) -> "AuxQueues":
        mid = 0.5 * (U_min + U_max)
        return cls(np.full(J, mid), np.full(J, mid))

    @property
    def lyapunov(self) -> float:
        return 0.5 * float(np.sum(self.Q ** 2 + self.S ** 2))


def update_queues(queues: AuxQueues, U, U_min: float, U_max: float) -> AuxQueues:
    U = np.asarray(U, dtype=float)
    # grouping the band offset first keeps a queue unchanged when U sits exactly on its edge
    return AuxQueues(np.maximum(queues.Q + (U_min - U), 0.0), np.maximum(queues.S + (U - U_max), 0.0))


@dataclass(frozen=True)
class LyapunovParams:
    V: float
    bcd_max_rounds: int = 10
    bcd_tol: float = 1e-6
    bisection_tol: float = 1e-9
    bisection_max_iters: int = 100
    partition_node_cap: int = 1_000

    def __post_init__(self):
        if not self.V > 0:
            raise ValueError("V must be positive")
        if not (self.bcd_tol > 0 and self.bisection_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Decision:
    l: np.ndarray
    f_A: np.ndarray
    f_bloc: np.ndarray


@dataclass
class SlotMetrics:
    objective: float
    tau: float
    makespan: float
    tau_bloc: float
    gateway_time: np.ndarray  # per gateway: bottom inference + offload + top inference
    tau_exe_G: np.ndarray
    tau_off: np.ndarray
    tau_exe_A: np.ndarray
    O: np.ndarray
    U: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    theta_hat: float
    e_G: np.ndarray
    e_inf_A: np.ndarray  # per AP, top-layer inference
    e_bloc: np.ndarray
    e_A: np.ndarray
    capacity_violation: np.ndarray
    mining_freq_violation: np.ndarray
    gw_energy_violation: np.ndarray
    ap_energy_violation: np.ndarray
    energy_forced: np.ndarray  # gateways where no partition fits the energy arrival (lenient mode waives them)

    @property
    def feasible(self) -> bool:
        return not (self.capacity_violation.any() or self.mining_freq_violation.any() or self.gw_energy_violation.any()
                    or self.ap_energy_violation.any())

    @property
    def feasible_lenient(self) -> bool:
        return not (self.capacity_violation.any() or self.mining_freq_violation.any() or self.ap_energy_violation.any()
                    or (self.gw_energy_violation & ~self.energy_forced).any())


def _g_code(g):
    if isinstance(g, Affine):
        return _bnb.G_AFFINE, np.array([g.slope]), np.zeros(2), np.zeros(2)
    if isinstance(g, Log):
        return _bnb.G_LOG, np.array([g.c1, g.c2]), np.zeros(2), np.zeros(2)
    if isinstance(g, Table):
        return _bnb.G_TABLE, np.zeros(1), np.asarray(g.flops, float), np.asarray(g.values, float)
    raise TypeError(f"unsupported reputation function {g!r}")


class SlotProblem:
    """The per-slot problem P2 for one realization and queue state.

    ``fixed_gamma`` pins every AP's difficulty (reputation no longer affects mining);
    ``queue_weight`` scales the (S - Q) * U term (0 switches it off).
    """

    def __init__(self, net: Network, real: SlotRealization, rep: ReputationParams,
                 queues: AuxQueues, V: float, *, fixed_gamma: float | None = None,
                 queue_weight: float = 1.0):
        self.net = net
        self.real = real
        self.rep = rep
        self.queues = queues
        self.V = float(V)
        self.fixed_gamma = fixed_gamma
        self.qcoef = queue_weight * (np.asarray(queues.S, float) - np.asarray(queues.Q, float))
        top, gws, aps, tab = net.topology, net.gateways, net.aps, net.tables
        self.gw = top.gateway_of
        self.ap_dev = top.ap_of_device
        self.ap_gw = top.ap_of_gateway
        D = np.asarray(real.D, dtype=float)[:, None]
        with np.errstate(invalid="ignore"):
            self.gwF = D * tab.prefix
            self.apF = D * tab.suffix
            self.bits = D * tab.out_bits
        self.R = slot_rates(net, real)
        if ((self.R <= 0) & (np.bincount(self.gw, weights=np.asarray(real.D, float),
                                         minlength=top.M) > 0)).any():
            raise InfeasibleSlotError("a gateway with pending data has zero uplink rate")
        speed_G = gws.phi_G * gws.f_G
        c_G = gws.v_G * gws.f_G ** 2 / gws.phi_G
        with np.errstate(divide="ignore", invalid="ignore"):
            t_off = np.where(self.bits > 0, self.bits / self.R[self.gw][:, None], 0.0)
        t_off[~tab.valid] = np.nan
        self.t_G_dt = self.gwF / speed_G[self.gw][:, None]
        self.t_off_dt = t_off
        self.A_dt = self.t_G_dt + t_off  # fixed (gateway + uplink) part of each DT's time
        self.eG_dt = c_G[self.gw][:, None] * self.gwF + gws.P[self.gw][:, None] * t_off
        self.phi_A_gw = net.phi_A_gw
        self.v_A_gw = net.v_A_gw
        self.c = rep.race_constant
        self.gcode, self.gpar, self.gx, self.gy = _g_code(rep.g)
        self._rows = np.arange(top.N)
        self._a = top.a.astype(float)
        self._b = top.b.astype(float)
        self.energy_forced = self.c4_infeasible_gateways()
        self.E_G_lenient = np.where(self.energy_forced, np.inf, real.E_G)

    # --- elementary evaluations ---------------------------------------------------------

    def cols(self, l) -> np.ndarray:
        l = np.asarray(l, dtype=np.int64)
        if l.shape != (self.net.topology.N,):
            raise ValueError("partition vector has the wrong length")
        if (l < 1).any() or (l > self.net.tables.L).any():
            raise IndexError("partition point outside 1..L_n")
        return l - 1

    def per_gateway(self, table, l) -> np.ndarray:
        return np.bincount(self.gw, weights=table[self._rows, self.cols(l)],
                           minlength=self.net.topology.M)

    def offloaded(self, l) -> np.ndarray:
        return np.bincount(self.ap_dev, weights=self.apF[self._rows, self.cols(l)],
                           minlength=self.net.topology.J)

    def reputation(self, l) -> np.ndarray:
        return np.asarray(self.rep.g(self.offloaded(l)), dtype=float)

    def weights(self, U) -> np.ndarray:
        if self.fixed_gamma is not None:
            return np.full(self.net.topology.J, 1.0 / self.fixed_gamma)
        return mining_weight(self.rep, U)

    def block_tau(self, U, f_bloc) -> float:
        theta_hat = float(np.sum(np.asarray(f_bloc, float) * self.weights(U)))
        return self.c / theta_hat if theta_hat > 0 else math.inf

    def ap_time(self, W, f_A) -> np.ndarray:
        f_A = np.asarray(f_A, dtype=float)
        out = np.zeros_like(W)
        pos = W > 0
        with np.errstate(divide="ignore"):
            out[pos] = W[pos] / (self.phi_A_gw[pos] * f_A[pos])
        return out

    def ap_inference_energy(self, W, f_A) -> np.ndarray:
        """Per-gateway energy spent at its AP on that gateway's top layers."""
        return self.v_A_gw * np.asarray(f_A, float) ** 2 / self.phi_A_gw * W

    def evaluate(self, dec: Decision) -> SlotMetrics:
        net, rep = self.net, self.rep
        l = dec.l
        f_A = np.asarray(dec.f_A, dtype=float)
        f_bloc = np.asarray(dec.f_bloc, dtype=float)
        t_G = self.per_gateway(self.t_G_dt, l)
        t_off = self.per_gateway(self.t_off_dt, l)
        W = self.per_gateway(self.apF, l)
        t_A = self.ap_time(W, f_A)
        gw_time = t_G + t_off + t_A
        O = self.offloaded(l)
        U = np.asarray(rep.g(O), dtype=float)
        w = self.weights(U)
        theta = f_bloc * w
        theta_hat = float(theta.sum())
        tau_bloc = self.c / theta_hat if theta_hat > 0 else math.inf
        e_bloc = net.aps.v_A * tau_bloc * f_bloc ** 3 if theta_hat > 0 else np.full_like(f_bloc, math.inf)
        e_inf_gw = self.ap_inference_energy(W, f_A)
        e_inf = self._b.T @ e_inf_gw
        e_A = e_inf + e_bloc
        e_G = self.per_gateway(self.eG_dt, l)
        makespan = float(gw_time.max())
        tau = makespan + tau_bloc
        obj = self.V * tau + float(np.dot(self.qcoef, U))
        f_max = net.aps.f_max
        return SlotMetrics(
            objective=obj, tau=tau, makespan=makespan, tau_bloc=tau_bloc, gateway_time=gw_time,
            tau_exe_G=t_G, tau_off=t_off, tau_exe_A=t_A, O=O, U=U, gamma=1.0 / w, theta=theta,
            theta_hat=theta_hat, e_G=e_G, e_inf_A=e_inf, e_bloc=e_bloc, e_A=e_A,
            capacity_violation=(self._b.T @ f_A > f_max * (1 + ENERGY_RTOL)) | (f_A < 0).any(),
            mining_freq_violation=(f_bloc < 0) | (f_bloc > f_max * (1 + ENERGY_RTOL)),
            gw_energy_violation=e_G > self.real.E_G * (1 + ENERGY_RTOL),
            ap_energy_violation=e_A > self.real.E_A * (1 + ENERGY_RTOL),
            energy_forced=self.energy_forced,
        )

    def objective(self, dec: Decision) -> float:
        return self.evaluate(dec).objective

    # --- helpers shared by the solvers --------------------------------------------------

    def min_energy_cols(self) -> np.ndarray:
        """Per-DT partition column with the least gateway energy (smallest l on ties)."""
        e = np.where(self.net.tables.valid, self.eG_dt, np.inf)
        return np.argmin(e, axis=1)

    def c4_infeasible_gateways(self) -> np.ndarray:
        best = self.eG_dt[self._rows, self.min_energy_cols()]
        need = np.bincount(self.gw, weights=best, minlength=self.net.topology.M)
        return need > self.real.E_G * (1 + ENERGY_RTOL)


def drift_plus_penalty(problem: SlotProblem, dec: Decision) -> float:
    """V * tau + sum_j (S_j - Q_j) U_j for a decision within the layer range, AP capacity and frequency bounds."""
    m = problem.evaluate(dec)
    if m.capacity_violation.any() or m.mining_freq_violation.any():
        raise ValueError("frequencies violate the AP capacity or frequency bounds")
    return m.objective


# --- f_bloc: bisection on the block time ------------------------------------------------


def _bisect(feasible, lo, hi, tol, max_iters, what):
    it = 0
    while hi - lo > tol * abs(hi) and it < max_iters:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
        it += 1
    if hi - lo > tol * abs(hi):
        log.warning("%s bisection hit the iteration cap (gap %.3g)", what, (hi - lo) / hi)
    return hi, it


def solve_fbloc(problem: SlotProblem, l, f_A, lp: LyapunovParams) -> np.ndarray:
    net = problem.net
    aps = net.aps
    W = problem.per_gateway(problem.apF, l)
    e_inf = problem._b.T @ problem.ap_inference_energy(W, f_A)
    E_res = problem.real.E_A - e_inf
    if (E_res < -ENERGY_RTOL * np.maximum(problem.real.E_A, 1e-300)).any():
        raise InfeasibleSlotError("AP inference energy already exceeds the energy arrival")
    E_res = np.maximum(E_res, 0.0)
    if not (E_res > 0).any():
        raise NoMinerError("no AP has energy left for block generation")
    w = problem.weights(problem.reputation(l))
    c = problem.c
    can = E_res > 0

    def freq(mu):
        f = np.zeros_like(E_res)
        f[can] = np.minimum(aps.f_max[can], np.cbrt(E_res[can] / (aps.v_A[can] * mu)))
        return f

    def feasible(mu):
        # mu is achievable iff the block time under the energy-capped rates is at most mu
        return mu >= c / float(np.sum(freq(mu) * w))

    lo = c / float(np.sum(aps.f_max * w))
    if feasible(lo):
        return freq(lo)
    with np.errstate(divide="ignore"):
        hi = c / float(np.sum(aps.f_min * w))
    if not (math.isfinite(hi) and hi > lo and feasible(hi)):
        hi = 2.0 * lo
        while not feasible(hi):
            lo, hi = hi, 2.0 * hi
    mu, _ = _bisect(feasible, lo, hi, lp.bisection_tol, lp.bisection_max_iters, "f_bloc")
    return freq(mu)


# --- f_A: bisection on the makespan -----------------------------------------------------


def solve_fA(problem: SlotProblem, l, f_bloc, lp: LyapunovParams) -> np.ndarray:
    net = problem.net
    aps = net.aps
    J = net.topology.J
    A = problem.per_gateway(problem.t_G_dt, l) + problem.per_gateway(problem.t_off_dt, l)
    W = problem.per_gateway(problem.apF, l)
    U = problem.reputation(l)
    tau_bloc = problem.block_tau(U, f_bloc)
    f_bloc = np.asarray(f_bloc, float)
    # an AP that does not mine spends nothing on it, even though the block time is then infinite
    with np.errstate(invalid="ignore"):
        e_bloc = np.where(f_bloc > 0, aps.v_A * tau_bloc * f_bloc ** 3, 0.0)
    budget = problem.real.E_A - e_bloc
    work = W > 0
    ap_gw = problem.ap_gw
    busy_ap = np.bincount(ap_gw, weights=work.astype(float), minlength=J) > 0
    if (busy_ap & (budget <= 0)).any():
        raise InfeasibleSlotError("no AP energy left for offloaded inference")
    phi = problem.phi_A_gw
    v = problem.v_A_gw
    f_max_gw = aps.f_max[ap_gw]

    def needed(lam):
        f = np.zeros_like(W)
        gap = lam - A[work]
        f[work] = np.where(gap > 0, W[work] / (phi[work] * np.where(gap > 0, gap, 1.0)), np.inf)
        return f

    def feasible(lam):
        f = needed(lam)
        if not np.isfinite(f).all():
            return False
        tot = np.bincount(ap_gw, weights=f, minlength=J)
        energy = np.bincount(ap_gw, weights=v * f ** 2 / phi * W, minlength=J)
        return bool((tot <= aps.f_max * (1 + ENERGY_RTOL)).all()
                    and (energy <= budget + ENERGY_RTOL * problem.real.E_A).all())

    if not work.any():
        f = np.zeros_like(W)
    else:
        lo = float(np.max(A + np.where(work, W / (phi * f_max_gw), 0.0)))
        if feasible(lo):
            lam = lo
        else:
            hi = 2.0 * lo if lo > 0 else 1.0
            n = 0
            while not feasible(hi):
                lo, hi = hi, 2.0 * hi
                n += 1
                if n > 2000:
                    raise InfeasibleSlotError("no feasible AP frequency allocation")
            lam, _ = _bisect(feasible, lo, hi, lp.bisection_tol, lp.bisection_max_iters, "f_A")
        f = needed(lam)
    # idle gateways split whatever capacity their AP has left; it costs no energy
    idle = ~work
    if idle.any():
        left = np.maximum(aps.f_max - np.bincount(ap_gw, weights=f, minlength=J), 0.0)
        n_idle = np.bincount(ap_gw, weights=idle.astype(float), minlength=J)
        share = np.divide(left, n_idle, out=np.zeros(J), where=n_idle > 0)
        f[idle] = share[ap_gw[idle]]
    return f


# --- l: case analysis + branch and bound --------------------------------------------------


@dataclass
class PartitionTables:
    T: np.ndarray
    eG: np.ndarray
    eA: np.ndarray
    O: np.ndarray
    valid: np.ndarray
    sepq: np.ndarray
    affine_queue: bool
    fb: np.ndarray
    wfix: np.ndarray
    use_wfix: bool
    E_G: np.ndarray  # gateway energy caps, +inf where the budget is waived
    energy_forced: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def partition_tables(problem: SlotProblem, f_A, f_bloc, strict: bool = False) -> PartitionTables:
    net = problem.net
    tab = net.tables
    f_A = np.asarray(f_A, dtype=float)
    speed_A = (problem.phi_A_gw * f_A)[problem.gw][:, None]
    apF = problem.apF
    with np.errstate(divide="ignore", invalid="ignore"):
        t_A = np.where(apF > 0, apF / speed_A, 0.0)
    T = problem.A_dt + t_A
    valid = tab.valid & np.isfinite(T)
    c_A = (problem.v_A_gw * f_A ** 2 / problem.phi_A_gw)[problem.gw][:, None]
    eA = c_A * apF
    eG = problem.eG_dt.copy()
    forced = problem.energy_forced
    if forced.any():
        if strict:
            raise InfeasibleSlotError(f"gateway energy budget unsatisfiable at gateways "
                                      f"{np.flatnonzero(forced).tolist()}")
        cols = problem.min_energy_cols()
        for n in np.flatnonzero(forced[problem.gw]):
            keep = np.zeros(tab.valid.shape[1], bool)
            keep[cols[n]] = True
            valid[n] &= keep
    if not valid.any(axis=1).all():
        raise InfeasibleSlotError("some DT has no admissible partition point")
    g = problem.rep.g
    affine = isinstance(g, Affine)
    if affine:
        sepq = problem.qcoef[problem.ap_dev][:, None] * g.slope * np.nan_to_num(apF)
    else:
        sepq = np.zeros_like(T)
    J = net.topology.J
    use_wfix = problem.fixed_gamma is not None
    wfix = np.full(J, 1.0 / problem.fixed_gamma) if use_wfix else np.zeros(J)
    nan0 = lambda x: np.where(valid, x, 0.0)  # noqa: E731
    return PartitionTables(T=nan0(T), eG=nan0(eG), eA=nan0(eA), O=nan0(apF), valid=valid,
                           sepq=np.where(valid, sepq, 0.0), affine_queue=affine,
                           fb=np.asarray(f_bloc, float), wfix=wfix, use_wfix=use_wfix,
                           E_G=problem.E_G_lenient, energy_forced=forced)


def partition_objective(problem: SlotProblem, pt: PartitionTables, cols: np.ndarray):
    """Objective and feasibility for a batch of column choices of shape (K, N)."""
    cols = np.atleast_2d(cols)
    net = problem.net
    rows = np.arange(net.topology.N)
    ok = pt.valid[rows, cols].all(axis=1)
    Tg = pt.T[rows, cols] @ problem._a
    eGg = pt.eG[rows, cols] @ problem._a
    ap_onehot = problem._a @ problem._b
    eAj = pt.eA[rows, cols] @ ap_onehot
    Oj = pt.O[rows, cols] @ ap_onehot
    U = np.asarray(problem.rep.g(Oj), dtype=float)
    w = np.broadcast_to(pt.wfix, U.shape) if pt.use_wfix else mining_weight(problem.rep, U)
    tau = problem.c / (w @ pt.fb)
    e_bloc = net.aps.v_A[None, :] * tau[:, None] * pt.fb[None, :] ** 3
    ok &= (eGg <= pt.E_G * (1 + ENERGY_RTOL)).all(axis=1)
    ok &= (eAj + e_bloc <= problem.real.E_A * (1 + ENERGY_RTOL)).all(axis=1)
    obj = problem.V * (Tg.max(axis=1) + tau) + U @ problem.qcoef
    return obj, ok


def _case_orders(problem: SlotProblem, cases: np.ndarray) -> np.ndarray:
    load = np.asarray(problem.real.D, float) * problem.net.tables.total
    base = np.lexsort((np.arange(len(load)), -load))
    orders = np.empty((len(cases), len(load)), dtype=np.int64)
    for k, i in enumerate(cases):
        mine = problem.gw[base] == i
        orders[k] = np.concatenate([base[mine], base[~mine]])
    return orders


@dataclass
class PartitionResult:
    l: np.ndarray
    objective: float
    nodes: int
    energy_forced: np.ndarray
    complete: bool = True  # False when the node cap stopped the search early


def solve_partition(problem: SlotProblem, f_A, f_bloc, incumbent=None, strict: bool = False,
                    pt: PartitionTables | None = None, node_cap: int = 10 ** 9) -> PartitionResult:
    pt = pt or partition_tables(problem, f_A, f_bloc, strict)
    net = problem.net
    N = net.topology.N
    if incumbent is not None:
        inc_cols = np.asarray(incumbent, dtype=np.int64) - 1
        obj, ok = partition_objective(problem, pt, inc_cols[None, :])
        inc_obj = float(obj[0]) if ok[0] else math.inf
    else:
        inc_cols = np.full(N, np.iinfo(np.int64).max)
        inc_obj = math.inf
    cases = np.arange(net.topology.M, dtype=np.int64)
    orders = _case_orders(problem, cases)
    J = net.topology.J
    ecoef = (problem.v_A_gw * np.asarray(f_A, float) ** 2 / problem.phi_A_gw)[problem.gw]
    ap_order = np.full((J, N), -1, dtype=np.int64)
    ap_count = np.zeros(J, dtype=np.int64)
    for j in range(J):
        members = np.flatnonzero(problem.ap_dev == j)
        members = members[np.argsort(ecoef[members], kind="stable")]
        ap_order[j, :len(members)] = members
        ap_count[j] = len(members)
    best_cols, best, nodes, complete = _bnb.bnb_partition(
        cases, orders, pt.valid, pt.T, pt.eG, pt.eA, pt.O, pt.sepq,
        problem.gw.astype(np.int64), problem.ap_dev.astype(np.int64),
        np.asarray(pt.E_G, float), np.asarray(problem.real.E_A, float), pt.fb,
        np.asarray(net.aps.v_A, float), problem.qcoef.astype(float), pt.wfix, pt.use_wfix,
        float(problem.rep.alpha), float(problem.rep.beta), float(problem.c), problem.V,
        problem.gcode, problem.gpar, problem.gx, problem.gy, pt.affine_queue,
        ENERGY_RTOL, TIE_RTOL, inc_cols, inc_obj, ecoef, ap_order, ap_count, int(node_cap))
    if not complete:
        log.info("partition search stopped at the node cap (%d); keeping the incumbent", node_cap)
    if not math.isfinite(best):
        raise InfeasibleSlotError("no partition fits the gateway and AP energy budgets at the given frequencies")
    return PartitionResult(l=best_cols + 1, objective=float(best), nodes=int(nodes),
                           energy_forced=pt.energy_forced, complete=bool(complete))


def solve_partition_exhaustive(problem: SlotProblem, f_A, f_bloc, strict: bool = False,
                               pt: PartitionTables | None = None, limit: int = 10 ** 6,
                               chunk: int = 65536) -> PartitionResult:
    """Enumerate every admissible l (lexicographic order); smallest l wins ties."""
    pt = pt or partition_tables(problem, f_A, f_bloc, strict)
    domains = [np.flatnonzero(row) for row in pt.valid]
    size = math.prod(len(d) for d in domains)
    if size > limit:
        raise ValueError(f"{size} partition vectors exceed the enumeration limit {limit}")
    best, best_cols = math.inf, None
    it = itertools.product(*domains)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        obj, ok = partition_objective(problem, pt, block)
        for k in np.flatnonzero(ok):
            o = obj[k]
            tol = TIE_RTOL * abs(best)
            if best_cols is None or o < best - tol:
                best, best_cols = float(o), block[k]
    if best_cols is None:
        raise InfeasibleSlotError("no partition fits the gateway and AP energy budgets at the given frequencies")
    return PartitionResult(l=best_cols + 1, objective=best, nodes=size, energy_forced=pt.energy_forced)


# --- block coordinate descent -----------------------------------------------------------


@dataclass
class StepResult:
    decision: Decision
    metrics: SlotMetrics
    objective_trace: list[float]
    rounds: int
    energy_forced: np.ndarray
    capped_searches: int = 0


def midpoint_partition(net: Network) -> np.ndarray:
    return (net.tables.L + 1) // 2


def _repair_c4(problem: SlotProblem, l: np.ndarray) -> np.ndarray:
    """Move DTs of gateways over their energy budget to their least-energy partition points."""
    e_G = problem.per_gateway(problem.eG_dt, l)
    bad = e_G > problem.real.E_G * (1 + ENERGY_RTOL)
    if not bad.any():
        return l
    l = l.copy()
    fix = bad[problem.gw]
    l[fix] = problem.min_energy_cols()[fix] + 1
    return l


def _block_tau_given_energy(problem: SlotProblem, E_res: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Least block time for each row of residual AP energies (K, J); the f_bloc problem in batch.

    Solves mu * sum_j w_j min(f_max_j, cbrt(E_j / (v_j mu))) = c by bisection on log(mu).
    """
    aps = problem.net.aps
    c = problem.c
    E = np.maximum(E_res, 0.0)
    lo = np.full(E.shape[0], c / float(np.sum(aps.f_max * w)))
    S = (w * np.cbrt(E / aps.v_A)).sum(axis=1)
    with np.errstate(divide="ignore"):
        # past mu_all every AP is energy-bound and the root is (c/S)^1.5
        mu_all = (E / (aps.v_A * aps.f_max ** 3)).max(axis=1)
        hi = np.maximum(np.maximum(mu_all, (c / S) ** 1.5), lo)

    def rate(mu):
        return (np.minimum(aps.f_max, np.cbrt(E / (aps.v_A * mu[:, None]))) * w).sum(axis=1)

    live = S > 0
    hi = np.where(live, hi, lo)  # rows without energy are answered by the final mask
    done = lo * rate(lo) >= c
    a, b = np.log(lo), np.log(hi)
    for _ in range(80):
        m = 0.5 * (a + b)
        ok = np.exp(m) * rate(np.exp(m)) >= c
        b = np.where(ok, m, b)
        a = np.where(ok, a, m)
    tau = np.where(done, lo, np.exp(b))
    return np.where(live, tau, np.inf)


def _min_shares(problem: SlotProblem, A, W, lam) -> np.ndarray:
    """Smallest per-gateway AP frequencies finishing every gateway by makespan lam (K, M)."""
    gap = np.asarray(lam, float)[:, None] - A[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(gap > 0, W[None, :] / (problem.phi_A_gw[None, :] * gap), np.inf)
    return np.where(W[None, :] > 0, f, 0.0)


def joint_frequencies(problem: SlotProblem, l, lp: LyapunovParams, levels: int = 5,
                      points: int = 41) -> tuple[np.ndarray, np.ndarray]:
    """(f_A, f_bloc) minimising makespan + block time for a fixed partition.

    At a target makespan the cheapest feasible f_A is each gateway's minimal share (energy grows
    with frequency), and every joule it leaves goes to mining; so the joint frequency problem
    is one-dimensional in the makespan and is searched by a zooming grid on a log scale.
    """
    net = problem.net
    aps = net.aps
    J = net.topology.J
    A = problem.per_gateway(problem.t_G_dt, l) + problem.per_gateway(problem.t_off_dt, l)
    W = problem.per_gateway(problem.apF, l)
    w = problem.weights(problem.reputation(l))
    ap_gw = problem.ap_gw
    cost_coef = problem.v_A_gw / problem.phi_A_gw * W
    work = W > 0
    if not work.any():
        f_A = np.zeros_like(W)
    else:
        floor = float(np.max(A + np.where(work, W / (problem.phi_A_gw * aps.f_max[ap_gw]), 0.0)))

        def cost(x):
            lam = floor * (1.0 + 10.0 ** x)
            f = _min_shares(problem, A, W, lam)
            tot = f @ problem._b
            e_inf = (cost_coef * f ** 2) @ problem._b
            E_res = problem.real.E_A - e_inf
            ok = (tot <= aps.f_max * (1 + ENERGY_RTOL)).all(axis=1)
            ok &= (E_res >= -ENERGY_RTOL * problem.real.E_A).all(axis=1)
            tau = _block_tau_given_energy(problem, np.where(ok[:, None], E_res, 0.0), w)
            return np.where(ok, np.maximum(lam, A.max()) + tau, np.inf)

        a, b = -12.0, 12.0
        best_x, best = None, math.inf
        for _ in range(levels):
            xs = np.linspace(a, b, points)
            vals = cost(xs)
            k = int(np.argmin(vals))
            if vals[k] < best:
                best_x, best = float(xs[k]), float(vals[k])
            step = (b - a) / (points - 1)
            a, b = best_x - step, best_x + step
        if best_x is None:
            raise InfeasibleSlotError("no frequency allocation meets the AP capacity and energy budgets")
        f_A = _min_shares(problem, A, W, [floor * (1.0 + 10.0 ** best_x)])[0]
    idle = ~work
    if idle.any():
        left = np.maximum(aps.f_max - np.bincount(ap_gw, weights=f_A, minlength=J), 0.0)
        n_idle = np.bincount(ap_gw, weights=idle.astype(float), minlength=J)
        share = np.divide(left, n_idle, out=np.zeros(J), where=n_idle > 0)
        f_A[idle] = share[ap_gw[idle]]
    return f_A, solve_fbloc(problem, l, f_A, lp)


def _seed(problem: SlotProblem, l: np.ndarray, lp: LyapunovParams) -> tuple[Decision, float]:
    l = _repair_c4(problem, l)
    f_A, f_bloc = joint_frequencies(problem, l, lp)
    d = Decision(l, f_A, f_bloc)
    return d, problem.objective(d)


def bcd_step(problem: SlotProblem, lp: LyapunovParams, l_init=None, *, fixed_l: bool = False,
             strict: bool = False, extra_starts=()) -> StepResult:
    """Cycle f_bloc -> f_A -> l until the relative improvement drops below ``bcd_tol``."""
    net = problem.net
    l = np.asarray(l_init if l_init is not None else midpoint_partition(net), dtype=np.int64)
    forced = problem.energy_forced
    if strict and forced.any():
        raise InfeasibleSlotError(f"gateway energy budget unsatisfiable at gateways "
                                  f"{np.flatnonzero(forced).tolist()}")
    best, best_obj = _seed(problem, l, lp)
    # alternative starting partitions are only a cheap pre-screen; BCD runs once
    for alt in extra_starts:
        cand, o = _seed(problem, np.asarray(alt, dtype=np.int64), lp)
        if o < best_obj:
            best, best_obj = cand, o
    trace = [best_obj]
    rounds = 0
    capped = 0
    for rounds in range(1, lp.bcd_max_rounds + 1):
        start = best_obj
        if rounds > 1:
            fb = solve_fbloc(problem, best.l, best.f_A, lp)
            cand = replace(best, f_bloc=fb)
            o = problem.objective(cand)
            if o <= best_obj:
                best, best_obj = cand, o
            trace.append(best_obj)
        fa = solve_fA(problem, best.l, best.f_bloc, lp)
        cand = replace(best, f_A=fa)
        o = problem.objective(cand)
        if o <= best_obj and problem.evaluate(cand).feasible_lenient:
            best, best_obj = cand, o
        trace.append(best_obj)
        if not fixed_l:
            res = solve_partition(problem, best.f_A, best.f_bloc, incumbent=best.l, strict=strict,
                                  node_cap=lp.partition_node_cap)
            capped += not res.complete
            cand = replace(best, l=res.l)
            o = problem.objective(cand)
            if o <= best_obj:
                best, best_obj = cand, o
            trace.append(best_obj)
        if start - best_obj <= lp.bcd_tol * abs(start):
            break
    return StepResult(best, problem.evaluate(best), trace, rounds, forced, capped)


def dpra_step(problem: SlotProblem, lp: LyapunovParams, l_prev=None, strict: bool = False) -> StepResult:
    """BCD from the best-seeded of the previous partition, the midpoint, full offload and
    full local execution.

    Each f_bloc solve gives mining all energy left after inference, which couples l and f_bloc
    strongly. A single start therefore tends to stay near its own partition even when another
    region is cheaper.
    """
    net = problem.net
    starts = [midpoint_partition(net), np.ones(net.topology.N, dtype=np.int64),
              np.asarray(net.tables.L, dtype=np.int64)]
    return bcd_step(problem, lp, l_prev, strict=strict,
                    extra_starts=starts if l_prev is not None else starts[1:])


# --- Lyapunov bound evaluators ----------------------------------------------------------


@dataclass(frozen=True)
class DriftReport:
    L_t: float
    L_next: float
    delta_L_pathwise: float
    H_const: float
    bound_rhs: float

    @property
    def holds(self) -> bool:
        return self.delta_L_pathwise <= self.bound_rhs + 1e-12 * max(1.0, abs(self.bound_rhs))


def drift_constant(net: Network, rep: ReputationParams, D) -> float:
    full = np.asarray(D, float) * net.tables.total
    O_full = np.bincount(net.topology.ap_of_device, weights=full, minlength=net.topology.J)
    U_cap = np.asarray(rep.g(O_full), dtype=float)
    J = net.topology.J
    return float(np.sum(U_cap ** 2) + 0.5 * J * (rep.U_min ** 2 + rep.U_max ** 2))


def drift_report(before: AuxQueues, after: AuxQueues, U, H: float, U_min: float,
                 U_max: float) -> DriftReport:
    U = np.asarray(U, dtype=float)
    L0, L1 = before.lyapunov, after.lyapunov
    rhs = float(np.sum(before.Q * (U_min - U) + before.S * (U - U_max))) + H
    return DriftReport(L0, L1, L1 - L0, H, rhs)


def latency_floor(net: Network, rep: ReputationParams) -> float:
    """Latency floor: fastest processor for all FLOPs, cheapest layer upload at mean channel,
    and every AP mining at the top frequency with full-offload reputation."""
    top, gws, aps, ch, tab = net.topology, net.gateways, net.aps, net.channel, net.tables
    Dbar = net.theta
    flops = np.bincount(top.gateway_of, weights=Dbar * tab.total, minlength=top.M)
    fastest = max(float(np.max(gws.phi_G * gws.f_G)), float(np.max(aps.phi_A)) * float(np.max(aps.f_max)))
    min_o = np.nanmin(tab.out_bits, axis=1)
    bits = np.bincount(top.gateway_of, weights=Dbar * min_o, minlength=top.M)
    H_bar = ch.h0 * (ch.d0 / gws.d) ** ch.nu
    eta_bar = _mean_interference(ch)
    R_bar = ch.B * np.log2(1.0 + gws.P * H_bar / (eta_bar + ch.noise_power))
    per_gw = flops / fastest + bits / R_bar
    O_full = np.bincount(top.ap_of_device, weights=Dbar * tab.total, minlength=top.J)
    w = np.exp(rep.beta + rep.alpha * np.asarray(rep.g(O_full), float))
    return float(per_gw.max() + rep.race_constant / (float(np.max(aps.f_max)) * float(np.sum(w))))


def _mean_interference(ch) -> float:
    if ch.interference_std == 0:
        return ch.interference_mean
    lo = -ch.interference_mean / ch.interference_std
    return float(stats.truncnorm.mean(lo, np.inf, loc=ch.interference_mean, scale=ch.interference_std))
