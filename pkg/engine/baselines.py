"""
PruneGNN — Baselines
Reference power allocators: WMMSE, the top-half direct-gain heuristic,
max power, uniform random, and an exhaustive grid for 2-pair instances.
"""

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config.settings import WMMSE_CONFIG
from engine.errors import ConfigError, DimensionError
from engine.metrics import AllocationResult, evaluate, sinr
from engine.netsim import NetworkInstance
from engine.stochgeo import make_rng


@dataclass(frozen=True)
class WmmseConfig:
    max_iters: int = WMMSE_CONFIG["max_iters"]
    tolerance: float = WMMSE_CONFIG["tolerance"]
    p_init: Optional[float] = None          # None → P_max
    restarts: int = WMMSE_CONFIG["restarts"]
    single_link_starts: bool = WMMSE_CONFIG["single_link_starts"]
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if self.restarts < 0:
            raise ConfigError("restarts must be >= 0")


def _objective(net: NetworkInstance, powers: np.ndarray) -> float:
    return float(np.dot(net.weights, np.log2(1.0 + sinr(net.gains, powers, net.noise_power))))


def _wmmse_run(net: NetworkInstance, v: np.ndarray, cfg: WmmseConfig):
    """One WMMSE descent from amplitudes v. Returns (best powers, best objective, iterations, converged, trace)."""
    g = net.gains
    h_direct = np.sqrt(np.diag(g))
    a = net.weights
    v_max = math.sqrt(net.p_max)

    best_p = v ** 2
    best_obj = prev = _objective(net, best_p)
    trace = [prev]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        u = h_direct * v / (g.T @ (v ** 2) + net.noise_power)
        w = 1.0 / (1.0 - u * h_direct * v)
        num = a * w * u * h_direct
        den = g @ (a * w * u ** 2)
        v = np.clip(np.divide(num, den, out=np.zeros_like(num), where=den > 0), 0.0, v_max)

        p = v ** 2
        obj = _objective(net, p)
        trace.append(obj)
        if obj > best_obj:
            best_obj, best_p = obj, p
        if abs(obj - prev) <= cfg.tolerance * max(abs(prev), 1e-300):
            converged = True
            break
        prev = obj
    return best_p, best_obj, it, converged, trace


def wmmse_allocate(net: NetworkInstance, cfg: Optional[WmmseConfig] = None,
                   initial_powers=None) -> AllocationResult:
    """
    SISO WMMSE: block-coordinate updates of receiver gain u, MSE weight w and
    amplitude v ∈ [0, √P_max], started from full power or `initial_powers`,
    from each link alone at P_max (`single_link_starts`) and from seeded
    random restarts. The best iterate over all starts is returned.

    A zero amplitude is a fixed point of the updates, so a single-link start
    stays single-link. Full power is stationary on symmetric instances.
    """
    cfg = cfg or WmmseConfig()
    if not net.noise_power > 0:
        raise ConfigError("WMMSE needs noise power > 0")
    start = time.perf_counter()

    t = net.num_pairs
    p0 = net.p_max if cfg.p_init is None else cfg.p_init
    if initial_powers is not None:
        starts = [np.sqrt(np.clip(np.asarray(initial_powers, dtype=float), 0.0, net.p_max))]
    else:
        starts = [np.full(t, math.sqrt(p0))]
    if cfg.single_link_starts and t > 1:
        starts += [math.sqrt(net.p_max) * np.eye(t)[k] for k in range(t)]
    rng = make_rng(cfg.seed, net.instance_id)
    starts += [rng.uniform(0.0, math.sqrt(net.p_max), t) for _ in range(cfg.restarts)]

    best = None
    for v0 in starts:
        run = _wmmse_run(net, v0, cfg)
        if best is None or run[1] > best[1]:
            best = run
    powers, obj, iters, converged, trace = best

    elapsed = time.perf_counter() - start
    return AllocationResult(powers, evaluate(net, powers).weighted_sum_rate, elapsed, "wmmse",
                            iterations=iters, converged=converged, objective_trace=trace)


def heuristic_allocate(net: NetworkInstance) -> AllocationResult:
    """P_max to the ceil(T/2) pairs with the largest direct gain; ties go to the lower index."""
    start = time.perf_counter()
    t = net.num_pairs
    order = np.argsort(-net.direct_gains, kind="stable")
    powers = np.zeros(t)
    powers[order[: math.ceil(t / 2)]] = net.p_max
    elapsed = time.perf_counter() - start
    return AllocationResult(powers, evaluate(net, powers).weighted_sum_rate, elapsed, "heuristic")


def max_power_allocate(net: NetworkInstance) -> AllocationResult:
    start = time.perf_counter()
    powers = np.full(net.num_pairs, net.p_max)
    elapsed = time.perf_counter() - start
    return AllocationResult(powers, evaluate(net, powers).weighted_sum_rate, elapsed, "maxpower")


def random_allocate(net: NetworkInstance, seed: int = 0) -> AllocationResult:
    """i.i.d. uniform [0, P_max], keyed by (seed, instance id)."""
    start = time.perf_counter()
    powers = make_rng(seed, net.instance_id).uniform(0.0, net.p_max, net.num_pairs)
    elapsed = time.perf_counter() - start
    return AllocationResult(powers, evaluate(net, powers).weighted_sum_rate, elapsed, "random")


def grid_search_allocate(net: NetworkInstance, points: int = 200) -> AllocationResult:
    """Exhaustive points×points grid over (p1, p2); 2-pair instances only."""
    if net.num_pairs != 2:
        raise DimensionError(f"grid search handles 2-pair instances, got {net.num_pairs}")
    start = time.perf_counter()
    grid = np.linspace(0.0, net.p_max, points)
    p1, p2 = np.meshgrid(grid, grid, indexing="ij")
    g, s2, w = net.gains, net.noise_power, net.weights
    r1 = np.log2(1.0 + g[0, 0] * p1 / (g[1, 0] * p2 + s2))
    r2 = np.log2(1.0 + g[1, 1] * p2 / (g[0, 1] * p1 + s2))
    total = w[0] * r1 + w[1] * r2
    i, j = np.unravel_index(np.argmax(total), total.shape)
    powers = np.array([grid[i], grid[j]])
    elapsed = time.perf_counter() - start
    return AllocationResult(powers, evaluate(net, powers).weighted_sum_rate, elapsed, "grid")


BASELINES = {
    "wmmse": lambda net, seed=0: wmmse_allocate(net, WmmseConfig(seed=seed)),
    "heuristic": lambda net, seed=0: heuristic_allocate(net),
    "maxpower": lambda net, seed=0: max_power_allocate(net),
    "random": lambda net, seed=0: random_allocate(net, seed),
}


def run_baseline(name: str, net: NetworkInstance, seed: int = 0) -> AllocationResult:
    if name not in BASELINES:
        raise ConfigError(f"unknown baseline '{name}' (choose from {sorted(BASELINES)})")
    return BASELINES[name](net, seed)
