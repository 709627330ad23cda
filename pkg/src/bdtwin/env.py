"""Network description, per-slot random draws, and the latency/energy closed forms.

Gateway- and AP-level quantities are stored as numpy vectors indexed by gateway
(length M) or AP (length J); a single gateway is just one entry of those vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .profile import ModelProfile


class InfeasibleSlotError(RuntimeError):
    """No decision satisfies the per-slot constraints."""


def dbm_per_hz_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class Topology:
    a: np.ndarray  # N x M, device -> gateway
    b: np.ndarray  # M x J, gateway -> AP

    def __post_init__(self):
        a = np.asarray(self.a, dtype=int)
        b = np.asarray(self.b, dtype=int)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError(f"incompatible association shapes {a.shape} and {b.shape}")
        if not np.isin(a, (0, 1)).all() or not np.isin(b, (0, 1)).all():
            raise ValueError("association matrices must be 0/1")
        if (a.sum(axis=1) != 1).any():
            raise ValueError("every device must be associated with exactly one gateway")
        if (b.sum(axis=1) != 1).any():
            raise ValueError("every gateway must be associated with exactly one AP")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def N(self) -> int:
        return self.a.shape[0]

    @property
    def M(self) -> int:
        return self.a.shape[1]

    @property
    def J(self) -> int:
        return self.b.shape[1]

    @property
    def gateway_of(self) -> np.ndarray:
        return self.a.argmax(axis=1)

    @property
    def ap_of_gateway(self) -> np.ndarray:
        return self.b.argmax(axis=1)

    @property
    def ap_of_device(self) -> np.ndarray:
        return self.ap_of_gateway[self.gateway_of]

    @classmethod
    def regular(cls, devices_per_gateway: int, gateways_per_ap: int, n_aps: int) -> "Topology":
        M = gateways_per_ap * n_aps
        N = devices_per_gateway * M
        a = np.zeros((N, M), dtype=int)
        a[np.arange(N), np.arange(N) // devices_per_gateway] = 1
        b = np.zeros((M, n_aps), dtype=int)
        b[np.arange(M), np.arange(M) // gateways_per_ap] = 1
        return cls(a, b)


def _vec(x, n, name, positive=True, allow_zero=False):
    arr = np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
    if positive and not ((arr > 0) | (allow_zero & (arr == 0))).all():
        raise ValueError(f"{name} must be {'nonnegative' if allow_zero else 'positive'}: {arr}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GatewayParams:
    """Per-gateway vectors (length M)."""

    phi_G: np.ndarray
    f_G: np.ndarray
    v_G: np.ndarray
    P: np.ndarray
    d: np.ndarray
    E_G_max: np.ndarray

    @classmethod
    def build(cls, M, **kw) -> "GatewayParams":
        return cls(**{k: _vec(kw[k], M, k, allow_zero=(k == "E_G_max")) for k in
                      ("phi_G", "f_G", "v_G", "P", "d", "E_G_max")})


@dataclass(frozen=True)
class ApParams:
    """Per-AP vectors (length J)."""

    phi_A: np.ndarray
    v_A: np.ndarray
    f_max: np.ndarray
    f_min: np.ndarray
    E_A_max: np.ndarray

    def __post_init__(self):
        if (self.f_min < 0).any() or (self.f_min >= self.f_max).any():
            raise ValueError("need 0 <= f_min < f_max at every AP")

    @classmethod
    def build(cls, J, **kw) -> "ApParams":
        return cls(
            phi_A=_vec(kw["phi_A"], J, "phi_A"),
            v_A=_vec(kw["v_A"], J, "v_A"),
            f_max=_vec(kw["f_max"], J, "f_max"),
            f_min=_vec(kw["f_min"], J, "f_min", allow_zero=True),
            E_A_max=_vec(kw["E_A_max"], J, "E_A_max", allow_zero=True),
        )


@dataclass(frozen=True)
class ChannelParams:
    h0: float
    d0: float
    nu: float
    B: float
    N0: float  # W/Hz
    interference_mean: float | None = None
    interference_std: float | None = None

    def __post_init__(self):
        if not (self.h0 > 0 and self.d0 > 0 and self.B > 0 and self.N0 > 0):
            raise ValueError("h0, d0, B and N0 must be positive")
        if self.interference_mean is None:
            object.__setattr__(self, "interference_mean", self.N0 * self.B)
        if self.interference_std is None:
            object.__setattr__(self, "interference_std", self.interference_mean / 2.0)
        if self.interference_mean < 0 or self.interference_std < 0:
            raise ValueError("interference parameters must be nonnegative")

    @property
    def noise_power(self) -> float:
        return self.N0 * self.B


@dataclass(frozen=True)
class Network:
    """Everything static about the system: topology, hardware, channel and DNN profiles."""

    topology: Topology
    gateways: GatewayParams
    aps: ApParams
    channel: ChannelParams
    models: tuple[ModelProfile, ...]  # one per device / DT
    theta: np.ndarray  # mean data arrivals per DT
    ap_type: np.ndarray | None = None  # optional AP type labels for reporting
    tables: "DtTables" = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        top = self.topology
        if len(self.models) != top.N:
            raise ValueError(f"need {top.N} models, got {len(self.models)}")
        theta = _vec(self.theta, top.N, "theta", allow_zero=True)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "models", tuple(self.models))
        if len(self.gateways.f_G) != top.M or len(self.aps.f_max) != top.J:
            raise ValueError("gateway/AP parameter lengths do not match the topology")
        if self.ap_type is None:
            object.__setattr__(self, "ap_type", np.zeros(top.J, dtype=int))
        object.__setattr__(self, "tables", DtTables.build(self.models))

    # per-gateway views of the associated AP's hardware
    @property
    def phi_A_gw(self) -> np.ndarray:
        return self.aps.phi_A[self.topology.ap_of_gateway]

    @property
    def v_A_gw(self) -> np.ndarray:
        return self.aps.v_A[self.topology.ap_of_gateway]


@dataclass(frozen=True)
class DtTables:
    """Padded per-DT layer tables; column l-1 holds the value for partition point l."""

    L: np.ndarray  # (N,)
    prefix: np.ndarray  # (N, Lmax) flops of layers 1..l, nan past L_n
    suffix: np.ndarray  # (N, Lmax) flops of layers l+1..L_n
    out_bits: np.ndarray  # (N, Lmax)
    total: np.ndarray  # (N,)
    valid: np.ndarray  # (N, Lmax) bool

    @classmethod
    def build(cls, models: Sequence[ModelProfile]) -> "DtTables":
        N = len(models)
        L = np.array([m.n_layers for m in models])
        Lmax = int(L.max())
        prefix = np.full((N, Lmax), np.nan)
        out_bits = np.full((N, Lmax), np.nan)
        total = np.array([m.total_flops for m in models])
        for n, m in enumerate(models):
            prefix[n, : m.n_layers] = m.prefix_table()[1:]
            out_bits[n, : m.n_layers] = m.output_bits
        valid = ~np.isnan(prefix)
        suffix = total[:, None] - prefix
        # exact zero at the last layer (the subtraction can leave rounding residue)
        suffix[np.arange(N), L - 1] = 0.0
        for arr in (L, prefix, suffix, out_bits, total, valid):
            arr.setflags(write=False)
        return cls(L, prefix, suffix, out_bits, total, valid)

    def take(self, table: np.ndarray, l: np.ndarray) -> np.ndarray:
        l = np.asarray(l)
        if (l < 1).any() or (l > self.L).any():
            raise IndexError(f"partition point out of range 1..L_n: {l}")
        return table[np.arange(len(l)), l - 1]


@dataclass(frozen=True)
class SlotRealization:
    D: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    E_G: np.ndarray
    E_A: np.ndarray


def slot_rng(seed: int, t: int) -> np.random.Generator:
    """Independent stream per (seed, slot), so draws do not depend on evaluation order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(t)]))


def sample_slot(net: Network, seed: int, t: int) -> SlotRealization:
    rng = slot_rng(seed, t)
    M, J = net.topology.M, net.topology.J
    D = rng.exponential(1.0, net.topology.N) * net.theta
    rho = rng.exponential(1.0, M)
    ch = net.channel
    if ch.interference_std > 0:
        lo = -ch.interference_mean / ch.interference_std
        eta = stats.truncnorm.rvs(lo, np.inf, loc=ch.interference_mean, scale=ch.interference_std,
                                  size=M, random_state=rng)
    else:
        eta = np.full(M, ch.interference_mean)
    E_G = rng.uniform(0.0, 1.0, M) * net.gateways.E_G_max
    E_A = rng.uniform(0.0, 1.0, J) * net.aps.E_A_max
    return SlotRealization(D=D, rho=rho, eta=np.maximum(eta, 0.0), E_G=E_G, E_A=E_A)


def write_realizations_csv(path, net: Network, seed: int, slots: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "index", "D", "rho", "eta", "E_G", "E_A"])
        for t in slots:
            r = sample_slot(net, seed, t)
            for n, x in enumerate(r.D):
                w.writerow([t, "device", n, repr(float(x)), "", "", "", ""])
            for m in range(len(r.rho)):
                w.writerow([t, "gateway", m, "", repr(float(r.rho[m])), repr(float(r.eta[m])),
                            repr(float(r.E_G[m])), ""])
            for j, x in enumerate(r.E_A):
                w.writerow([t, "ap", j, "", "", "", "", repr(float(x))])


# --- closed forms ---------------------------------------------------------------------


def channel_gain(ch: ChannelParams, d, rho):
    d = np.asarray(d, dtype=float)
    if (d <= 0).any():
        raise ValueError("gateway-AP distance must be positive")
    return ch.h0 * np.asarray(rho, dtype=float) * (ch.d0 / d) ** ch.nu


def uplink_rate(ch: ChannelParams, P, H, eta):
    snr = np.asarray(P, dtype=float) * np.asarray(H, dtype=float) / (np.asarray(eta, dtype=float)
                                                                      + ch.noise_power)
    return ch.B * np.log2(1.0 + snr)


def slot_rates(net: Network, real: SlotRealization) -> np.ndarray:
    H = channel_gain(net.channel, net.gateways.d, real.rho)
    return uplink_rate(net.channel, net.gateways.P, H, real.eta)


def _per_gateway(net: Network, per_dt: np.ndarray) -> np.ndarray:
    return np.bincount(net.topology.gateway_of, weights=per_dt, minlength=net.topology.M)


def _safe_div(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    pos = num > 0
    if (pos & (den <= 0)).any():
        return None
    np.divide(num, den, out=out, where=pos)
    return out


def gateway_workload(net: Network, D, l) -> np.ndarray:
    """Per-gateway bottom-layer FLOPs sum_n a[n,m] D_n prefix_n(l_n)."""
    return _per_gateway(net, np.asarray(D) * net.tables.take(net.tables.prefix, l))


def ap_workload(net: Network, D, l) -> np.ndarray:
    """Per-gateway top-layer FLOPs offloaded to its AP."""
    return _per_gateway(net, np.asarray(D) * net.tables.take(net.tables.suffix, l))


def payload_bits(net: Network, D, l) -> np.ndarray:
    return _per_gateway(net, np.asarray(D) * net.tables.take(net.tables.out_bits, l))


def gateway_inference_time(net: Network, D, l) -> np.ndarray:
    g = net.gateways
    return gateway_workload(net, D, l) / (g.phi_G * g.f_G)


def gateway_inference_energy(net: Network, D, l) -> np.ndarray:
    g = net.gateways
    return g.v_G * g.f_G ** 2 / g.phi_G * gateway_workload(net, D, l)


def offload_time(net: Network, D, l, R) -> np.ndarray:
    t = _safe_div(payload_bits(net, D, l), R)
    if t is None:
        raise InfeasibleSlotError("zero uplink rate with a positive payload")
    return t


def offload_energy(net: Network, D, l, R) -> np.ndarray:
    return net.gateways.P * offload_time(net, D, l, R)


def ap_inference_time(net: Network, D, l, f_A) -> np.ndarray:
    t = _safe_div(ap_workload(net, D, l), net.phi_A_gw * np.asarray(f_A, dtype=float))
    if t is None:
        raise InfeasibleSlotError("zero AP frequency with a positive offloaded workload")
    return t


def ap_inference_energy(net: Network, D, l, f_A) -> np.ndarray:
    f_A = np.asarray(f_A, dtype=float)
    return net.v_A_gw * f_A ** 2 / net.phi_A_gw * ap_workload(net, D, l)


def slot_latency(gateway_times, block_time: float) -> float:
    gateway_times = np.asarray(gateway_times, dtype=float)
    return float(gateway_times.max()) + float(block_time) if gateway_times.size else float(block_time)


def gateway_energy(e_exe_G, e_off):
    return np.asarray(e_exe_G) + np.asarray(e_off)


def ap_energy(b, e_exe_A_gw, e_bloc):
    return np.asarray(b).T @ np.asarray(e_exe_A_gw, dtype=float) + np.asarray(e_bloc, dtype=float)


def energy_violations(consumed, available, rtol: float = 1e-9):
    """Boolean mask of entries whose consumption exceeds the energy arrival."""
    consumed = np.asarray(consumed, dtype=float)
    available = np.asarray(available, dtype=float)
    return consumed > available * (1 + rtol) + 1e-300
