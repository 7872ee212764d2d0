"""
PruneGNN — Metrics
SINR, per-link rate, weighted sum rate, normalized performance, and the
results CSV with its provenance header.
"""

import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from config.settings import BASE_DIR
from engine.errors import DimensionError, PowerConstraintError, ZeroBaselineError
from engine.netsim import NetworkInstance

RESULT_COLUMNS = ["instance_id", "algorithm", "sum_rate", "normalized", "time_s"]
TIME_COLUMNS = ["time_s", "graph_time_s"]
POWER_CLIP_TOL = 1e-9


@dataclass
class RateReport:
    per_link_sinr: np.ndarray
    per_link_rate: np.ndarray
    weighted_sum_rate: float
    normalized_vs: Optional[tuple] = None   # (baseline name, ratio)

    def normalized(self, baseline: "RateReport", name: str = "baseline") -> "RateReport":
        if baseline.weighted_sum_rate == 0:
            raise ZeroBaselineError(f"{name} sum rate is zero")
        ratio = self.weighted_sum_rate / baseline.weighted_sum_rate
        return RateReport(self.per_link_sinr, self.per_link_rate, self.weighted_sum_rate, (name, ratio))


@dataclass
class AllocationResult:
    """Powers chosen by one algorithm on one instance, with the rate they achieve."""

    powers: np.ndarray
    weighted_sum_rate: float
    inference_time: float = 0.0
    algorithm: str = ""
    graph_time: float = 0.0
    iterations: int = 0
    converged: bool = True
    objective_trace: list = field(default_factory=list)


# ══════════════════════════════════════════════
# RATES
# ══════════════════════════════════════════════

def check_powers(powers, p_max: float, num_pairs: int) -> np.ndarray:
    """Validate 0 <= p <= P_max; excursions within POWER_CLIP_TOL·P_max are clipped."""
    p = np.asarray(powers, dtype=float)
    if p.shape != (num_pairs,):
        raise DimensionError(f"expected {num_pairs} powers, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise PowerConstraintError("powers must be finite")
    slack = POWER_CLIP_TOL * p_max
    if np.any(p < -slack) or np.any(p > p_max + slack):
        raise PowerConstraintError(f"powers outside [0, {p_max}]: min={p.min():.3g}, max={p.max():.3g}")
    return np.clip(p, 0.0, p_max)


def sinr(gains: np.ndarray, powers: np.ndarray, noise_power: float) -> np.ndarray:
    """SINR_t = G[t][t] p_t / (Σ_{j≠t} G[j][t] p_j + σ²)."""
    direct = np.diag(gains) * powers
    cross = gains.copy()
    np.fill_diagonal(cross, 0.0)
    return direct / (cross.T @ powers + noise_power)


def evaluate(net: NetworkInstance, powers) -> RateReport:
    p = check_powers(powers, net.p_max, net.num_pairs)
    s = sinr(net.gains, p, net.noise_power)
    rate = np.log2(1.0 + s)
    return RateReport(s, rate, float(np.dot(net.weights, rate)))


def weighted_sum_rate(net: NetworkInstance, powers) -> float:
    return evaluate(net, powers).weighted_sum_rate


def normalized_performance(results, baseline_results) -> float:
    """mean(alg sum rate) / mean(baseline sum rate) over the same instances."""
    alg = _rates(results)
    base = _rates(baseline_results)
    if alg.shape != base.shape:
        raise DimensionError(f"result sets differ in size: {alg.size} vs {base.size}")
    if alg.size == 0:
        raise DimensionError("no results to normalize")
    denom = base.mean()
    if denom == 0:
        raise ZeroBaselineError("baseline mean sum rate is zero")
    return float(alg.mean() / denom)


def _rates(results) -> np.ndarray:
    out = []
    for r in results:
        if isinstance(r, (RateReport, AllocationResult)):
            out.append(r.weighted_sum_rate)
        else:
            out.append(float(r))
    return np.asarray(out, dtype=float)


# ══════════════════════════════════════════════
# PROVENANCE & CSV
# ══════════════════════════════════════════════

def config_hash(config: dict) -> str:
    """First 12 hex digits of SHA-256 over the canonical JSON form."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=BASE_DIR, capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def provenance(config: dict, seed: int) -> dict:
    return {"config_hash": config_hash(config), "seed": seed, "git": git_describe()}


def write_table_csv(df: pd.DataFrame, path, provenance_info: dict) -> Path:
    """Any table with a `# key: value` provenance header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        for key, value in provenance_info.items():
            f.write(f"# {key}: {value}\n")
        df.to_csv(f, index=False)
    return path


def write_results_csv(rows, path, provenance_info: dict) -> Path:
    """rows: dicts or tuples in RESULT_COLUMNS order."""
    df = pd.DataFrame([r if isinstance(r, dict) else dict(zip(RESULT_COLUMNS, r)) for r in rows],
                      columns=RESULT_COLUMNS)
    return write_table_csv(df, path, provenance_info)


def read_table_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def csv_body(path, drop_time: bool = True) -> str:
    """CSV body without the provenance header and, by default, without wall-clock columns."""
    df = read_table_csv(path)
    if drop_time:
        df = df.drop(columns=[c for c in TIME_COLUMNS if c in df.columns])
    return df.to_csv(index=False)
