"""Comparison policies: fixed partition point (WDPO) and fixed mining difficulty (WTCM)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .consensus import ReputationParams
from .dpra import (AuxQueues, LyapunovParams, SlotProblem, StepResult, bcd_step, dpra_step,
                   midpoint_partition)
from .env import Network, SlotRealization


class BaselineKind(str, enum.Enum):
    WDPO = "WDPO"
    WTCM = "WTCM"


@dataclass(frozen=True)
class BaselineSpec:
    kind: BaselineKind
    fixed_l: tuple[int, ...] | None = None  # None: midpoint ceil(L_n / 2)
    fixed_gamma: float | None = None  # None: difficulty at mid-band reputation
    keep_queue_term: bool = True  # WTCM only

    def __post_init__(self):
        object.__setattr__(self, "kind", BaselineKind(self.kind))
        if self.fixed_gamma is not None and not self.fixed_gamma > 0:
            raise ValueError("fixed_gamma must be positive")

    def partition(self, net: Network) -> np.ndarray:
        if self.fixed_l is None:
            return midpoint_partition(net)
        l = np.asarray(self.fixed_l, dtype=np.int64)
        if l.shape != (net.topology.N,) or (l < 1).any() or (l > net.tables.L).any():
            raise ValueError("fixed_l must hold one point in 1..L_n per DT")
        return l

    def gamma(self, rep: ReputationParams) -> float:
        if self.fixed_gamma is not None:
            return self.fixed_gamma
        return math.exp(-rep.alpha * 0.5 * (rep.U_min + rep.U_max) - rep.beta)


def wdpo_step(net: Network, real: SlotRealization, rep: ReputationParams, queues: AuxQueues,
              lp: LyapunovParams, spec: BaselineSpec, strict: bool = False) -> StepResult:
    """Frequencies optimised, partition fixed by rule.

    Gateways whose rule-given partition breaks their energy arrival fall back to the
    least-energy partition points so the baseline stays feasible wherever DPRA is.
    """
    problem = SlotProblem(net, real, rep, queues, lp.V)
    return bcd_step(problem, lp, spec.partition(net), fixed_l=True, strict=strict)


def wtcm_step(net: Network, real: SlotRealization, rep: ReputationParams, queues: AuxQueues,
              lp: LyapunovParams, spec: BaselineSpec, l_prev=None, strict: bool = False) -> StepResult:
    problem = SlotProblem(net, real, rep, queues, lp.V, fixed_gamma=spec.gamma(rep),
                          queue_weight=1.0 if spec.keep_queue_term else 0.0)
    return dpra_step(problem, lp, l_prev, strict=strict)
