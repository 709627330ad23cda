"""Experiment orchestration: single runs, V sweeps, traces, summaries and validation."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import consensus
from .baselines import BaselineSpec, wdpo_step, wtcm_step
from .config import ExperimentConfig
from .consensus import NoMinerError
from .dpra import (AuxQueues, LyapunovParams, SlotProblem, StepResult, dpra_step, drift_report,
                   drift_constant, latency_floor, update_queues)
from .env import InfeasibleSlotError, sample_slot

log = logging.getLogger(__name__)

TRACE_SCHEMA = "bdtwin-trace v1"
DECISION_SCHEMA = "bdtwin-decisions v1"
SWEEP_SCHEMA = "bdtwin-sweep v1"

TRACE_COLUMNS = [
    "t", "j", "ap_type", "tau", "makespan", "tau_bloc", "objective", "O", "U", "gamma", "theta",
    "f_bloc", "f_A_sum", "e_inf", "e_bloc", "E_A", "Q", "S", "energy_forced", "gw_energy_violations",
    "bcd_rounds", "capped_searches", "drift_lhs", "drift_rhs",
]


class SlotAbort(RuntimeError):
    """An infeasible slot stopped a run; carries the slot index."""

    def __init__(self, t: int, cause: Exception):
        super().__init__(f"slot {t}: {cause}")
        self.t = t


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _step(policy: str, cfg: ExperimentConfig, real, queues: AuxQueues, lp: LyapunovParams,
          l_prev) -> StepResult:
    net, rep = cfg.network, cfg.rep
    if policy == "DPRA":
        return dpra_step(SlotProblem(net, real, rep, queues, lp.V), lp, l_prev, strict=cfg.strict)
    if policy == "WDPO":
        spec = BaselineSpec("WDPO", fixed_l=cfg.wdpo_fixed_l)
        return wdpo_step(net, real, rep, queues, lp, spec, strict=cfg.strict)
    if policy == "WTCM":
        spec = BaselineSpec("WTCM", fixed_gamma=cfg.wtcm_fixed_gamma,
                            keep_queue_term=cfg.wtcm_keep_queue_term)
        return wtcm_step(net, real, rep, queues, lp, spec, l_prev, strict=cfg.strict)
    raise ValueError(f"unknown policy {policy}")


def run_cell(cfg: ExperimentConfig, seed: int, V: float, policy: str, T: int, out_dir) -> dict:
    """Simulate T slots of one (seed, V, policy) cell; write trace, decisions and summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net, rep = cfg.network, cfg.rep
    lp = LyapunovParams(V=V, bcd_max_rounds=cfg.lyapunov.bcd_max_rounds,
                        bcd_tol=cfg.lyapunov.bcd_tol, bisection_tol=cfg.lyapunov.bisection_tol,
                        bisection_max_iters=cfg.lyapunov.bisection_max_iters,
                        partition_node_cap=cfg.lyapunov.partition_node_cap)
    J = net.topology.J
    queues = AuxQueues.initial(J, rep.U_min, rep.U_max)
    l_prev = None
    trace_path = out_dir / "trace.csv"
    with open(trace_path, "w", newline="") as fh, open(out_dir / "decisions.csv", "w", newline="") as fd:
        fh.write(f"# {TRACE_SCHEMA} policy={policy} V={V!r} seed={seed}\n")
        fd.write(f"# {DECISION_SCHEMA} policy={policy} V={V!r} seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        wd = csv.writer(fd, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        wd.writerow(["t", "l", "f_A", "f_bloc"])
        for t in range(T):
            real = sample_slot(net, seed, t)
            try:
                res = _step(policy, cfg, real, queues, lp, l_prev)
            except (InfeasibleSlotError, NoMinerError) as exc:
                raise SlotAbort(t, exc) from exc
            m, dec = res.metrics, res.decision
            new_q = update_queues(queues, m.U, rep.U_min, rep.U_max)
            rpt = drift_report(queues, new_q, m.U, drift_constant(net, rep, real.D), rep.U_min, rep.U_max)
            f_A_sum = net.topology.b.T @ dec.f_A
            c4v = int(m.gw_energy_violation.sum())
            for j in range(J):
                w.writerow([_fmt(v) for v in (
                    t, j, int(net.ap_type[j]), m.tau, m.makespan, m.tau_bloc, m.objective, m.O[j],
                    m.U[j], m.gamma[j], m.theta[j], dec.f_bloc[j], f_A_sum[j], m.e_inf_A[j],
                    m.e_bloc[j], real.E_A[j], new_q.Q[j], new_q.S[j], int(res.energy_forced.sum()), c4v,
                    res.rounds, res.capped_searches, rpt.delta_L_pathwise, rpt.bound_rhs)])
            wd.writerow([t, ";".join(str(int(x)) for x in dec.l),
                         ";".join(repr(float(x)) for x in dec.f_A),
                         ";".join(repr(float(x)) for x in dec.f_bloc)])
            queues, l_prev = new_q, dec.l
    summary = summarize_trace(trace_path, cfg.ap_type_names, rep.U_min, rep.U_max)
    summary.update(policy=policy, V=V, seed=seed, tau_min=latency_floor(net, rep))
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def read_trace(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# " + TRACE_SCHEMA):
            raise ValueError(f"{path}: not a {TRACE_SCHEMA} file")
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for k, name in enumerate(header):
        vals = [r[k] for r in body]
        if name in ("t", "j", "ap_type", "energy_forced", "gw_energy_violations", "bcd_rounds", "capped_searches"):
            cols[name] = np.array(vals, dtype=np.int64)
        else:
            cols[name] = np.array([float(v) for v in vals])
    return cols


def summarize_trace(path, type_names=None, U_min=25.0, U_max=75.0, band_from: int = 100,
                    band_slack: float = 2.0) -> dict:
    """Aggregates computed only from the trace file, so they can be recomputed bit-exactly."""
    c = read_trace(path)
    if c["t"].size == 0:
        return {"n_slots": 0}
    T = int(c["t"].max()) + 1
    J = int(c["j"].max()) + 1
    grid = {k: c[k].reshape(T, J) for k in ("U", "e_inf", "e_bloc", "Q", "S", "O")}
    per_slot = {k: c[k].reshape(T, J)[:, 0] for k in ("tau", "makespan", "tau_bloc", "gw_energy_violations",
                                                      "capped_searches", "drift_lhs", "drift_rhs")}
    ap_type = c["ap_type"][:J]
    types = sorted(set(ap_type.tolist()))
    names = type_names or [f"type{k + 1}" for k in range(max(types) + 1)]
    tau = per_slot["tau"]
    drift_ok = per_slot["drift_lhs"] <= per_slot["drift_rhs"] + 1e-12 * np.maximum(1.0, np.abs(per_slot["drift_rhs"]))
    out = {
        "n_slots": T,
        "mean_tau": float(np.mean(tau)),
        "p50_tau": float(np.percentile(tau, 50)),
        "p95_tau": float(np.percentile(tau, 95)),
        "mean_makespan": float(np.mean(per_slot["makespan"])),
        "mean_tau_bloc": float(np.mean(per_slot["tau_bloc"])),
        "gw_energy_violations": int(per_slot["gw_energy_violations"].sum()),
        "capped_searches": int(per_slot["capped_searches"].sum()),
        "drift_violations": int((~drift_ok).sum()),
        "Q_over_T": [float(x) for x in grid["Q"][-1] / T],
        "S_over_T": [float(x) for x in grid["S"][-1] / T],
        "types": {},
    }
    steps = np.arange(1, T + 1)
    for k in types:
        sel = ap_type == k
        U_type = grid["U"][:, sel].mean(axis=1)
        running = np.cumsum(U_type) / steps
        tail = running[band_from:] if T > band_from else running[:0]
        out["types"][names[k]] = {
            "mean_U": float(U_type.mean()),
            "mean_e_inf": float(grid["e_inf"][:, sel].mean()),
            "mean_e_bloc": float(grid["e_bloc"][:, sel].mean()),
            "running_U_min_after": float(tail.min()) if tail.size else None,
            "running_U_max_after": float(tail.max()) if tail.size else None,
            "in_band": bool(tail.size == 0 or ((tail >= U_min - band_slack).all()
                                               and (tail <= U_max + band_slack).all())),
        }
    return out


# --- sweeps -------------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    seed: int
    V: float
    policy: str

    def dirname(self) -> str:
        return f"seed{self.seed}_V{self.V:g}_{self.policy}"


def _run_cell_job(args):
    cfg, cell, T, root = args
    return run_cell(cfg, cell.seed, cell.V, cell.policy, T, Path(root) / cell.dirname())


SWEEP_COLUMNS = ["seed", "V", "policy", "n_slots", "mean_tau", "mean_makespan", "mean_tau_bloc",
                 "tau_min", "gw_energy_violations", "drift_violations"]


def sweep(cfg: ExperimentConfig, out_dir=None, T: int | None = None, workers: int | None = None,
          plot: bool = False) -> list[dict]:
    """Run every (seed, V, policy) cell with common random numbers; write sweep.csv."""
    root = Path(out_dir or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    T = cfg.T if T is None else T
    cells = [Cell(s, V, p) for s in cfg.seeds for V in cfg.V_list for p in cfg.policies]
    jobs = [(cfg, c, T, str(root)) for c in cells]
    workers = workers or cfg.workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell_job, jobs))  # map keeps submission order
    else:
        results = [_run_cell_job(j) for j in jobs]
    write_sweep_csv(root / "sweep.csv", results, cfg.ap_type_names)
    if plot:
        plot_sweep(results, root, cfg.ap_type_names)
    return results


def write_sweep_csv(path, results: list[dict], type_names) -> None:
    type_cols = []
    for name in type_names:
        type_cols += [f"{name}_mean_U", f"{name}_mean_e_inf", f"{name}_mean_e_bloc"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SWEEP_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS + type_cols)
        for r in results:
            row = [_fmt(r[k]) if not isinstance(r[k], str) else r[k] for k in SWEEP_COLUMNS]
            for name in type_names:
                t = r.get("types", {}).get(name, {})
                row += [_fmt(t.get(k, math.nan)) for k in ("mean_U", "mean_e_inf", "mean_e_bloc")]
            w.writerow(row)


def plot_sweep(results: list[dict], out_dir, type_names) -> list[Path]:
    """Vector plots of mean latency and per-type reputation against V (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    made = []
    policies = sorted({r["policy"] for r in results})
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for p in policies:
        Vs = sorted({r["V"] for r in results if r["policy"] == p})
        ys = [np.mean([r["mean_tau"] for r in results if r["policy"] == p and r["V"] == V]) for V in Vs]
        ax.plot(Vs, ys, marker="o", label=p)
    ax.set_xscale("log")
    ax.set_xlabel("V")
    ax.set_ylabel("mean latency (s)")
    ax.legend()
    fig.tight_layout()
    made.append(out_dir / "latency_vs_V.svg")
    fig.savefig(made[-1])
    plt.close(fig)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    dpra = [r for r in results if r["policy"] == "DPRA"]
    Vs = sorted({r["V"] for r in dpra})
    for name in type_names:
        ys = [np.mean([r["types"][name]["mean_U"] for r in dpra if r["V"] == V]) for V in Vs]
        ax.plot(Vs, ys, marker="o", label=name)
    ax.set_xscale("log")
    ax.set_xlabel("V")
    ax.set_ylabel("mean reputation")
    ax.legend()
    fig.tight_layout()
    made.append(out_dir / "reputation_vs_V.svg")
    fig.savefig(made[-1])
    plt.close(fig)
    return made


# --- validation ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    kind: str
    passed: bool
    worst_gap: float
    details: dict

    def line(self) -> str:
        return f"{self.kind}: {'PASS' if self.passed else 'FAIL'} (worst gap {self.worst_gap:.3g})"


def validate_statistics(theta_hat: float = 2.5, p0: float = 1 - 1e-3, n: int = 10 ** 5,
                        seed: int = 0, alpha_level: float = 0.01) -> ValidationReport:
    from scipy import stats

    rng = np.random.default_rng(seed)
    draws = consensus.sample_block_time(theta_hat, rng, n)
    ks = stats.kstest(draws, "expon", args=(0, 1.0 / theta_hat))
    tau = -math.log1p(-p0) / theta_hat
    hit = float(np.mean(draws < tau))
    sd = math.sqrt(p0 * (1 - p0) / n)
    identity = abs(tau * theta_hat + math.log1p(-p0)) / (-math.log1p(-p0))
    ok = ks.pvalue > alpha_level and abs(hit - p0) <= 3 * sd and identity <= 1e-12
    return ValidationReport("statistics", ok, max(identity, abs(hit - p0) / max(sd, 1e-300)),
                            {"ks_pvalue": float(ks.pvalue), "p_hat": hit, "p0": p0, "sd": sd,
                             "identity_rel": identity})


def validate_drift(cfg: ExperimentConfig, T: int = 1000, seed: int | None = None,
                   V: float | None = None, out_dir=None) -> ValidationReport:
    seed = cfg.seeds[0] if seed is None else seed
    V = cfg.V_list[0] if V is None else V
    out = Path(out_dir or cfg.output_dir) / f"drift_seed{seed}_V{V:g}"
    s = run_cell(cfg, seed, V, "DPRA", T, out)
    c = read_trace(out / "trace.csv")
    J = cfg.network.topology.J
    lhs = c["drift_lhs"][::J]
    rhs = c["drift_rhs"][::J]
    gap = float(np.max(lhs - rhs)) if lhs.size else -math.inf
    return ValidationReport("drift", s.get("drift_violations", 0) == 0, gap,
                            {"slots": int(lhs.size), "violations": s.get("drift_violations", 0)})


def validate_oracle(n_instances: int = 200, seed: int = 0, out_dir=None) -> ValidationReport:
    from . import oracles

    rng = np.random.default_rng(seed)
    worst = {"fbloc": 0.0, "fA": 0.0, "partition": 0.0}
    failures = []
    for k in range(n_instances):
        inst = oracles.random_instance(rng)
        gaps = oracles.compare_all(inst)
        for key, g in gaps.items():
            worst[key] = max(worst[key], g)
        if gaps["fbloc"] > 1e-6 or gaps["fA"] > 1e-6 or gaps["partition"] > 0:
            failures.append(k)
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                oracles.save_instance(inst, Path(out_dir) / f"oracle_fail_{k}.json")
    return ValidationReport("oracle", not failures, max(worst.values()),
                            {"worst": worst, "failures": failures, "instances": n_instances})


def cpu_count() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
