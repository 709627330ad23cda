"""Reputation-weighted proof-of-work: off-chain reputation, difficulty, block race, block energy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import Network


class NoMinerError(RuntimeError):
    """Total block-generation rate is zero, so no block can ever be produced."""


@dataclass(frozen=True)
class Affine:
    kappa: float  # FLOPs per reputation unit

    def __call__(self, O):
        return np.asarray(O, dtype=float) / self.kappa

    @property
    def slope(self) -> float:
        return 1.0 / self.kappa


@dataclass(frozen=True)
class Log:
    c1: float
    c2: float

    def __call__(self, O):
        return self.c1 * np.log1p(np.asarray(O, dtype=float) / self.c2)

    slope = None


@dataclass(frozen=True)
class Table:
    """Piecewise-linear reputation curve through (offloaded FLOPs, reputation) knots."""

    flops: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        x, y = np.asarray(self.flops, float), np.asarray(self.values, float)
        if len(x) < 2 or len(x) != len(y) or (np.diff(x) <= 0).any() or (np.diff(y) < 0).any():
            raise ValueError("table needs >= 2 increasing knots with nondecreasing values")
        if x[0] > 0 or y[0] < 0:
            raise ValueError("table must start at or below zero FLOPs with g(0) >= 0")

    def __call__(self, O):
        # linear extrapolation past the last knot keeps g unbounded and monotone
        x, y = np.asarray(self.flops, float), np.asarray(self.values, float)
        O = np.asarray(O, dtype=float)
        tail = (y[-1] - y[-2]) / (x[-1] - x[-2])
        return np.where(O > x[-1], y[-1] + tail * (O - x[-1]), np.interp(O, x, y))

    slope = None


ReputationFn = Affine | Log | Table


@dataclass(frozen=True)
class ReputationParams:
    alpha: float
    beta: float
    g: ReputationFn
    p0: float
    U_min: float
    U_max: float

    def __post_init__(self):
        if not 0 < self.p0 < 1:
            raise ValueError("p0 must lie in (0, 1)")
        if not self.U_min < self.U_max:
            raise ValueError("need U_min < U_max")
        if float(self.g(0.0)) < 0:
            raise ValueError("reputation function must satisfy g(0) >= 0")

    @property
    def race_constant(self) -> float:
        """-ln(1 - p0), the numerator of the deterministic block time."""
        return -math.log1p(-self.p0)


@dataclass(frozen=True)
class ConsensusSlotResult:
    O: np.ndarray
    U: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    theta_hat: float
    tau_bloc: float
    e_bloc: np.ndarray


def offloaded_flops(net: Network, D, l) -> np.ndarray:
    """O_j: top-layer FLOPs offloaded to each AP."""
    per_dt = np.asarray(D, dtype=float) * net.tables.take(net.tables.suffix, l)
    return np.bincount(net.topology.ap_of_device, weights=per_dt, minlength=net.topology.J)


def reputation(params: ReputationParams, O):
    return params.g(O)


def difficulty(params: ReputationParams, U):
    return np.exp(-params.alpha * np.asarray(U, dtype=float) - params.beta)


def mining_weight(params: ReputationParams, U):
    """1/difficulty, i.e. e^{alpha U + beta}."""
    return np.exp(params.alpha * np.asarray(U, dtype=float) + params.beta)


def block_time(params: ReputationParams, f_bloc, U=None, gamma=None):
    """Return (theta_hat, tau_bloc) for mining frequencies f_bloc.

    Difficulty comes from reputation U unless an explicit gamma is given.
    """
    f_bloc = np.asarray(f_bloc, dtype=float)
    if (f_bloc < 0).any():
        raise ValueError("mining frequencies must be nonnegative")
    if gamma is None:
        theta_hat = float(np.sum(f_bloc * mining_weight(params, U)))
    else:
        theta_hat = float(np.sum(f_bloc / np.asarray(gamma, dtype=float)))
    if not theta_hat > 0:
        raise NoMinerError("no AP is mining")
    return theta_hat, params.race_constant / theta_hat


def sample_block_time(theta_hat: float, rng: np.random.Generator, size=None):
    if not theta_hat > 0:
        raise NoMinerError("block rate must be positive")
    return rng.exponential(1.0 / theta_hat, size)


def block_energy(v_A, tau_bloc, f_bloc):
    return np.asarray(v_A, dtype=float) * tau_bloc * np.asarray(f_bloc, dtype=float) ** 3


def consensus_slot(net: Network, params: ReputationParams, D, l, f_bloc, gamma=None) -> ConsensusSlotResult:
    O = offloaded_flops(net, D, l)
    U = reputation(params, O)
    if gamma is None:
        gamma = difficulty(params, U)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), O.shape)
    f_bloc = np.asarray(f_bloc, dtype=float)
    theta = f_bloc / gamma
    theta_hat, tau = block_time(params, f_bloc, gamma=gamma)
    return ConsensusSlotResult(O=O, U=U, gamma=gamma.copy(), theta=theta, theta_hat=theta_hat,
                               tau_bloc=tau, e_bloc=block_energy(net.aps.v_A, tau, f_bloc))


def calibrate_kappa(net: Network, U_min: float, U_max: float) -> float:
    """FLOPs-per-reputation-unit so that maximal offload at mean arrivals maps to mid-band."""
    l_first = np.ones(net.topology.N, dtype=int)
    O = offloaded_flops(net, net.theta, l_first)
    mean_O = float(O.mean())
    if not mean_O > 0:
        raise ValueError("cannot calibrate kappa: no offloadable work at mean arrivals")
    return mean_O / (0.5 * (U_min + U_max))
