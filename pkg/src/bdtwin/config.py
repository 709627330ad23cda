"""Experiment configuration: YAML loading, validation and network construction."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .consensus import Affine, Log, ReputationParams, Table, calibrate_kappa
from .dpra import LyapunovParams
from .env import (ApParams, ChannelParams, GatewayParams, Network, Topology,
                  dbm_per_hz_to_watts)
from .profile import InvalidSpecError, model_from_config

POLICIES = ("DPRA", "WDPO", "WTCM")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


DEFAULT_PROFILE: dict[str, Any] = {
    "name": "default",
    "topology": {"devices_per_gateway": 3, "gateways_per_ap": 5, "n_aps": 4},
    "ap_types": [
        {"name": "type1", "E_A_max": 10.0, "theta": 100.0},
        {"name": "type2", "E_A_max": 30.0, "theta": 50.0},
    ],
    # first half of the APs are type 1, the rest type 2
    "ap_type_of": [0, 0, 1, 1],
    "models": {
        "assignment": "alternate",
        "list": [{"preset": "vgg11_cifar10"}, {"preset": "cnn_fashion_mnist"}],
    },
    "gateway": {
        "phi_G": 8.0,
        "f_G": {"uniform": [1.0e6, 1.0e7]},
        "v_G": 1.0e-24,
        "P": 0.1,
        "d": {"uniform": [1.0, 50.0]},
        "E_G_max": 0.5,
    },
    "ap": {"phi_A": 32.0, "v_A": 1.0e-24, "f_max": 1.0e8, "f_min_ratio": 1.0e-4},
    "channel": {
        "h0": 1.0e-3, "d0": 1.0, "nu": 3.0, "B": 5.0e6, "N0_dbm_per_hz": -174.0,
        "interference_mean": None, "interference_std": None,
    },
    "reputation": {
        "alpha": 5.0e-5, "beta": -29.0, "p0": 1.0 - 1.0e-15, "U_min": 25.0, "U_max": 75.0,
        "g": {"affine": {"kappa": "auto"}},
    },
    "lyapunov": {
        "V": [1.0e4], "bcd_max_rounds": 10, "bcd_tol": 1.0e-6,
        "bisection_tol": 1.0e-9, "bisection_max_iters": 100, "partition_node_cap": 1_000,
    },
    "baselines": {"wdpo_fixed_l": None, "wtcm_fixed_gamma": None, "wtcm_keep_queue_term": True},
    "run": {
        "T": 2000, "seeds": [1], "policies": ["DPRA"], "mode": "lenient",
        "topology_seed": 0, "output_dir": "runs", "workers": 1,
    },
}


def default_profile() -> dict:
    return copy.deepcopy(DEFAULT_PROFILE)


def emit_default_yaml() -> str:
    return yaml.safe_dump(default_profile(), sort_keys=False)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> "ExperimentConfig":
    """Read a YAML file; keys missing from it fall back to the default profile."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML syntax error{where}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(_merge(DEFAULT_PROFILE, raw))


def _get(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing field {where}.{key}")
    return d[key]


def _num(d: dict, key: str, where: str, positive=True, allow_zero=False) -> float:
    v = _get(d, key, where)
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}") from None
    if positive and not (x > 0 or (allow_zero and x == 0)):
        raise ConfigError(f"{where}.{key} must be {'nonnegative' if allow_zero else 'positive'}, got {x}")
    return x


def _draw(spec, n: int, rng: np.random.Generator, where: str) -> np.ndarray:
    """A scalar, a list of length n, or {uniform: [lo, hi]}."""
    if isinstance(spec, dict):
        if set(spec) != {"uniform"} or len(spec["uniform"]) != 2:
            raise ConfigError(f"{where} must be a number, a list or {{uniform: [lo, hi]}}")
        lo, hi = map(float, spec["uniform"])
        if not 0 <= lo <= hi:
            raise ConfigError(f"{where}.uniform needs 0 <= lo <= hi")
        return rng.uniform(lo, hi, n)
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{where} has length {arr.size}, expected {n}")
    return arr


@dataclass
class ExperimentConfig:
    raw: dict
    network: Network
    rep: ReputationParams
    lyapunov: LyapunovParams
    V_list: list[float]
    T: int
    seeds: list[int]
    policies: list[str]
    strict: bool
    output_dir: str
    workers: int
    ap_type_names: list[str]
    wdpo_fixed_l: tuple[int, ...] | None = None
    wtcm_fixed_gamma: float | None = None
    wtcm_keep_queue_term: bool = True
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        run = _get(raw, "run", "")
        rng = np.random.default_rng(int(run.get("topology_seed", 0)))
        top = _build_topology(_get(raw, "topology", ""))
        N, M, J = top.N, top.M, top.J

        types = _get(raw, "ap_types", "")
        type_of = np.asarray(_get(raw, "ap_type_of", ""), dtype=int)
        if type_of.shape != (J,) or (type_of < 0).any() or (type_of >= len(types)).any():
            raise ConfigError(f"ap_type_of must list one type index in 0..{len(types) - 1} per AP ({J})")
        for k, t in enumerate(types):
            _num(t, "E_A_max", f"ap_types[{k}]", allow_zero=True)
            _num(t, "theta", f"ap_types[{k}]", allow_zero=True)
        E_A_max = np.array([float(types[t]["E_A_max"]) for t in type_of])
        theta = np.array([float(types[t]["theta"]) for t in type_of])[top.ap_of_device]

        models = _build_models(_get(raw, "models", ""), N)

        gw = _get(raw, "gateway", "")
        # draw order is fixed (f_G then d) so the topology seed pins the hardware
        f_G = _draw(_get(gw, "f_G", "gateway"), M, rng, "gateway.f_G")
        d = _draw(_get(gw, "d", "gateway"), M, rng, "gateway.d")
        try:
            gateways = GatewayParams.build(
                M, phi_G=_num(gw, "phi_G", "gateway"), f_G=f_G, v_G=_num(gw, "v_G", "gateway"),
                P=_num(gw, "P", "gateway"), d=d, E_G_max=_num(gw, "E_G_max", "gateway", allow_zero=True))
        except ValueError as exc:
            raise ConfigError(f"gateway: {exc}") from None

        ap = _get(raw, "ap", "")
        f_max = _num(ap, "f_max", "ap")
        if "f_min" in ap and ap["f_min"] is not None:
            f_min = _num(ap, "f_min", "ap", allow_zero=True)
        else:
            f_min = _num(ap, "f_min_ratio", "ap", allow_zero=True) * f_max
        try:
            aps = ApParams.build(J, phi_A=_num(ap, "phi_A", "ap"), v_A=_num(ap, "v_A", "ap"),
                                 f_max=f_max, f_min=f_min, E_A_max=E_A_max)
        except ValueError as exc:
            raise ConfigError(f"ap: {exc}") from None

        ch = _get(raw, "channel", "")
        if "N0" in ch and ch["N0"] is not None:
            N0 = _num(ch, "N0", "channel")
        else:
            N0 = dbm_per_hz_to_watts(float(_get(ch, "N0_dbm_per_hz", "channel")))
        try:
            channel = ChannelParams(
                h0=_num(ch, "h0", "channel"), d0=_num(ch, "d0", "channel"),
                nu=_num(ch, "nu", "channel", allow_zero=True), B=_num(ch, "B", "channel"), N0=N0,
                interference_mean=ch.get("interference_mean"),
                interference_std=ch.get("interference_std"))
        except ValueError as exc:
            raise ConfigError(f"channel: {exc}") from None

        net = Network(top, gateways, aps, channel, models, theta, ap_type=type_of)
        rep = _build_reputation(_get(raw, "reputation", ""), net)

        lyap = _get(raw, "lyapunov", "")
        V_list = lyap["V"] if isinstance(lyap["V"], list) else [lyap["V"]]
        try:
            V_list = [float(v) for v in V_list]
            lp = LyapunovParams(V=V_list[0], bcd_max_rounds=int(lyap["bcd_max_rounds"]),
                                bcd_tol=float(lyap["bcd_tol"]),
                                bisection_tol=float(lyap["bisection_tol"]),
                                bisection_max_iters=int(lyap["bisection_max_iters"]),
                                partition_node_cap=int(lyap.get("partition_node_cap", 1_000)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"lyapunov: {exc}") from None
        if any(not v > 0 for v in V_list):
            raise ConfigError("lyapunov.V entries must be positive")

        T = int(_get(run, "T", "run"))
        if T < 0:
            raise ConfigError("run.T must be >= 0")
        seeds = run["seeds"] if isinstance(run["seeds"], list) else [run["seeds"]]
        policies = run["policies"] if isinstance(run["policies"], list) else [run["policies"]]
        policies = [str(p).upper() for p in policies]
        bad = [p for p in policies if p not in POLICIES]
        if bad:
            raise ConfigError(f"run.policies: unknown {bad}; choose from {list(POLICIES)}")
        mode = str(run.get("mode", "lenient")).lower()
        if mode not in ("strict", "lenient"):
            raise ConfigError("run.mode must be strict or lenient")

        bl = raw.get("baselines") or {}
        fixed_l = bl.get("wdpo_fixed_l")
        if fixed_l is not None:
            fixed_l = tuple(int(x) for x in fixed_l)
            if len(fixed_l) != N or any(not 1 <= x <= L for x, L in zip(fixed_l, net.tables.L)):
                raise ConfigError("baselines.wdpo_fixed_l must hold one point in 1..L_n per DT")
        fixed_gamma = bl.get("wtcm_fixed_gamma")
        if fixed_gamma is not None and not float(fixed_gamma) > 0:
            raise ConfigError("baselines.wtcm_fixed_gamma must be positive")

        return cls(raw=raw, network=net, rep=rep, lyapunov=lp, V_list=V_list, T=T,
                   seeds=[int(s) for s in seeds], policies=policies, strict=(mode == "strict"),
                   output_dir=str(run.get("output_dir", "runs")), workers=int(run.get("workers", 1)),
                   ap_type_names=[str(t.get("name", f"type{k + 1}")) for k, t in enumerate(types)],
                   wdpo_fixed_l=fixed_l,
                   wtcm_fixed_gamma=None if fixed_gamma is None else float(fixed_gamma),
                   wtcm_keep_queue_term=bool(bl.get("wtcm_keep_queue_term", True)))


def _build_topology(spec: dict) -> Topology:
    try:
        if "a" in spec or "b" in spec:
            return Topology(np.asarray(spec["a"]), np.asarray(spec["b"]))
        return Topology.regular(int(spec["devices_per_gateway"]), int(spec["gateways_per_ap"]),
                                int(spec["n_aps"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"topology: {exc}") from None


def _build_models(spec: dict, N: int):
    entries = _get(spec, "list", "models")
    try:
        built = [model_from_config(e) for e in entries]
    except (InvalidSpecError, KeyError, TypeError) as exc:
        raise ConfigError(f"models: {exc}") from None
    if not built:
        raise ConfigError("models.list must not be empty")
    how = spec.get("assignment", "alternate")
    if how == "alternate":
        return [built[n % len(built)] for n in range(N)]
    idx = np.asarray(how, dtype=int)
    if idx.shape != (N,) or (idx < 0).any() or (idx >= len(built)).any():
        raise ConfigError(f"models.assignment must be 'alternate' or {N} indices into models.list")
    return [built[k] for k in idx]


def _build_reputation(spec: dict, net: Network) -> ReputationParams:
    U_min = _num(spec, "U_min", "reputation", positive=False)
    U_max = _num(spec, "U_max", "reputation", positive=False)
    g_spec = _get(spec, "g", "reputation")
    if not isinstance(g_spec, dict) or len(g_spec) != 1:
        raise ConfigError("reputation.g must be one of {affine: ...}, {log: ...}, {table: ...}")
    (kind, par), = g_spec.items()
    if kind == "affine":
        kappa = par.get("kappa", "auto")
        kappa = calibrate_kappa(net, U_min, U_max) if kappa == "auto" else float(kappa)
        if not kappa > 0:
            raise ConfigError("reputation.g.affine.kappa must be positive")
        g = Affine(kappa)
    elif kind == "log":
        g = Log(float(par["c1"]), float(par["c2"]))
    elif kind == "table":
        g = Table(tuple(map(float, par["flops"])), tuple(map(float, par["values"])))
    else:
        raise ConfigError(f"reputation.g: unknown kind {kind!r}")
    try:
        return ReputationParams(alpha=float(spec["alpha"]), beta=float(spec["beta"]), g=g,
                                p0=float(spec["p0"]), U_min=U_min, U_max=U_max)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"reputation: {exc}") from None
