"""
PruneGNN — Network Simulator
Samples D2D network realizations (PPP transmitters, paired receivers, Rayleigh
fading) and reads/writes them as JSON-lines datasets.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

from config.settings import DATASET_SCHEMA, DATASET_VERSION, SCENARIO_CONFIG
from engine.errors import ConfigError, DatasetSchemaError, DimensionError
from engine.stochgeo import PppParams, make_rng, path_gain


class WeightMode(str, Enum):
    ALL_ONES = "all_ones"
    UNIFORM_RANDOM = "uniform_random"


# ══════════════════════════════════════════════
# SCENARIO
# ══════════════════════════════════════════════

@dataclass(frozen=True)
class ScenarioConfig:
    intensity: float = SCENARIO_CONFIG["intensity"]
    num_pairs: Optional[int] = SCENARIO_CONFIG["num_pairs"]
    region_side: float = SCENARIO_CONFIG["region_side"]
    d_min: float = SCENARIO_CONFIG["d_min"]
    d_max: float = SCENARIO_CONFIG["d_max"]
    path_loss_exponent: float = SCENARIO_CONFIG["path_loss_exponent"]
    reference_distance: float = SCENARIO_CONFIG["reference_distance"]
    noise_power: float = SCENARIO_CONFIG["noise_power"]
    p_max: float = SCENARIO_CONFIG["p_max"]
    weight_mode: WeightMode = WeightMode(SCENARIO_CONFIG["weight_mode"])
    seed: int = SCENARIO_CONFIG["seed"]

    def __post_init__(self):
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))
        if not 0 < self.d_min <= self.d_max:
            raise ConfigError(f"need 0 < d_min <= d_max, got [{self.d_min}, {self.d_max}]")
        if not self.region_side > 0:
            raise ConfigError(f"region_side must be > 0, got {self.region_side}")
        if self.num_pairs is not None and int(self.num_pairs) < 1:
            raise ConfigError(f"num_pairs must be >= 1, got {self.num_pairs}")
        if self.num_pairs is None and not self.intensity > 0:
            raise ConfigError("intensity must be > 0 when num_pairs is not fixed")
        if not self.path_loss_exponent > 2:
            raise ConfigError(f"path-loss exponent must be > 2, got {self.path_loss_exponent}")
        if not (self.noise_power > 0 and self.p_max > 0 and self.reference_distance > 0):
            raise ConfigError("noise_power, p_max and reference_distance must be > 0")

    @property
    def ppp(self) -> PppParams:
        """PPP parameters; the intensity is the realized density when T is fixed."""
        lam = self.num_pairs / self.region_side ** 2 if self.num_pairs else self.intensity
        return PppParams(lam, self.path_loss_exponent, self.reference_distance)

    @staticmethod
    def region_for_pairs(num_pairs: int, intensity: float) -> float:
        """Square side that holds T pairs at density λ: √(T/λ)."""
        return math.sqrt(num_pairs / intensity)

    def replace(self, **changes) -> "ScenarioConfig":
        return ScenarioConfig.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weight_mode"] = self.weight_mode.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad scenario config: {e}") from e


# ══════════════════════════════════════════════
# NETWORK INSTANCE
# ══════════════════════════════════════════════

def distance_matrix(positions_tx: np.ndarray, positions_rx: np.ndarray) -> np.ndarray:
    """D[j][i] = ‖tx_j − rx_i‖."""
    diff = positions_tx[:, None, :] - positions_rx[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def channel_gains(channel: np.ndarray) -> np.ndarray:
    """G = |H|² elementwise."""
    return channel.real ** 2 + channel.imag ** 2


@dataclass(eq=False)
class NetworkInstance:
    """
    One D2D realization with T pairs. H[j][i] is the channel from transmitter j
    into the receiver of pair i; the diagonal holds the direct links.
    """

    positions_tx: np.ndarray
    positions_rx: np.ndarray
    channel: np.ndarray
    weights: np.ndarray
    noise_power: float
    p_max: float
    path_loss_exponent: float
    reference_distance: float = 1.0
    instance_id: int = 0
    gains: np.ndarray = field(init=False, repr=False)
    distances: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.positions_tx = np.asarray(self.positions_tx, dtype=float)
        self.positions_rx = np.asarray(self.positions_rx, dtype=float)
        self.channel = np.asarray(self.channel, dtype=complex)
        self.weights = np.asarray(self.weights, dtype=float)
        t = self.positions_tx.shape[0]
        if self.positions_tx.shape != (t, 2) or self.positions_rx.shape != (t, 2):
            raise DimensionError("positions must be T×2 for both transmitters and receivers")
        if self.channel.shape != (t, t):
            raise DimensionError(f"channel must be {t}×{t}, got {self.channel.shape}")
        if self.weights.shape != (t,):
            raise DimensionError(f"weights must have length {t}, got {self.weights.shape}")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise DimensionError("weights must lie in [0, 1]")
        self.gains = channel_gains(self.channel)
        self.distances = distance_matrix(self.positions_tx, self.positions_rx)

    @property
    def num_pairs(self) -> int:
        return self.positions_tx.shape[0]

    @property
    def direct_gains(self) -> np.ndarray:
        return np.diag(self.gains)

    def check_consistency(self, tol: float = 1e-9) -> bool:
        """Distances agree with positions and the gains with |H|²."""
        ok_d = np.allclose(self.distances, distance_matrix(self.positions_tx, self.positions_rx), atol=tol, rtol=0)
        ok_g = np.allclose(self.gains, channel_gains(self.channel), atol=tol, rtol=0)
        return bool(ok_d and ok_g)

    def __eq__(self, other):
        if not isinstance(other, NetworkInstance):
            return NotImplemented
        return (
            np.array_equal(self.positions_tx, other.positions_tx)
            and np.array_equal(self.positions_rx, other.positions_rx)
            and np.array_equal(self.channel, other.channel)
            and np.array_equal(self.weights, other.weights)
            and self.noise_power == other.noise_power
            and self.p_max == other.p_max
            and self.path_loss_exponent == other.path_loss_exponent
            and self.reference_distance == other.reference_distance
            and self.instance_id == other.instance_id
        )

    def to_record(self) -> dict:
        return {
            "id": self.instance_id,
            "tx": self.positions_tx.tolist(),
            "rx": self.positions_rx.tolist(),
            "h_re": self.channel.real.tolist(),
            "h_im": self.channel.imag.tolist(),
            "w": self.weights.tolist(),
            "noise": self.noise_power,
            "p_max": self.p_max,
            "alpha": self.path_loss_exponent,
            "d0": self.reference_distance,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "NetworkInstance":
        t = len(rec["tx"])
        channel = np.array(rec["h_re"], dtype=float).reshape(t, t) + 1j * np.array(rec["h_im"], dtype=float).reshape(t, t)
        return cls(
            positions_tx=np.array(rec["tx"], dtype=float).reshape(t, 2),
            positions_rx=np.array(rec["rx"], dtype=float).reshape(t, 2),
            channel=channel,
            weights=np.array(rec["w"], dtype=float),
            noise_power=float(rec["noise"]),
            p_max=float(rec["p_max"]),
            path_loss_exponent=float(rec["alpha"]),
            reference_distance=float(rec["d0"]),
            instance_id=int(rec["id"]),
        )


# ══════════════════════════════════════════════
# SAMPLING
# ══════════════════════════════════════════════

def sample_network(cfg: ScenarioConfig, index: int = 0) -> NetworkInstance:
    """
    Draw instance `index` of the scenario. The draw depends only on
    (cfg.seed, index). A Poisson count of zero is redrawn from the same stream.
    """
    rng = make_rng(cfg.seed, index)
    side = cfg.region_side

    if cfg.num_pairs is not None:
        t = int(cfg.num_pairs)
    else:
        t = 0
        while t == 0:
            t = int(rng.poisson(cfg.intensity * side ** 2))

    tx = rng.uniform(0.0, side, size=(t, 2))
    angle = rng.uniform(0.0, 2.0 * math.pi, size=t)
    radius = rng.uniform(cfg.d_min, cfg.d_max, size=t)
    rx = tx + radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])

    g = path_gain(distance_matrix(tx, rx), cfg.path_loss_exponent, cfg.reference_distance)
    fading = (rng.standard_normal((t, t)) + 1j * rng.standard_normal((t, t))) / math.sqrt(2.0)
    channel = np.sqrt(g) * fading

    if cfg.weight_mode == WeightMode.UNIFORM_RANDOM:
        weights = rng.uniform(0.0, 1.0, size=t)
    else:
        weights = np.ones(t)

    return NetworkInstance(
        positions_tx=tx,
        positions_rx=rx,
        channel=channel,
        weights=weights,
        noise_power=cfg.noise_power,
        p_max=cfg.p_max,
        path_loss_exponent=cfg.path_loss_exponent,
        reference_distance=cfg.reference_distance,
        instance_id=index,
    )


def _sample_star(args):
    return sample_network(*args)


def generate_dataset(cfg: ScenarioConfig, count: int, start_index: int = 0,
                     workers: int = 1, verbose: bool = False) -> list:
    """Instances start_index .. start_index+count-1, ordered by index."""
    jobs = [(cfg, start_index + i) for i in range(count)]
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(_sample_star, jobs, chunksize=32), total=count,
                             desc="Sampling", disable=not verbose))
    return [sample_network(c, i) for c, i in tqdm(jobs, desc="Sampling", disable=not verbose)]


# ══════════════════════════════════════════════
# DATASET FILES
# ══════════════════════════════════════════════

def write_dataset(instances, path, cfg: Optional[ScenarioConfig] = None) -> Path:
    """Header line (schema, version, count, scenario) then one instance per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema": DATASET_SCHEMA,
        "version": DATASET_VERSION,
        "count": len(instances),
        "scenario": cfg.to_dict() if cfg else None,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for inst in instances:
            f.write(json.dumps(inst.to_record()) + "\n")
    return path


def read_dataset_header(path) -> dict:
    with open(path) as f:
        first = f.readline()
    return _parse_header(first, path)


def read_dataset(path) -> list:
    with open(path) as f:
        header = _parse_header(f.readline(), path)
        instances = []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                instances.append(NetworkInstance.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetSchemaError(f"{path}:{lineno}: bad instance record ({e})") from e
    if len(instances) != header["count"]:
        raise DatasetSchemaError(f"{path}: header says {header['count']} instances, found {len(instances)}")
    return instances


def _parse_header(line: str, path) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetSchemaError(f"{path}: unreadable dataset header") from e
    if not isinstance(header, dict) or header.get("schema") != DATASET_SCHEMA:
        raise DatasetSchemaError(f"{path}: not a {DATASET_SCHEMA} file")
    if header.get("version") != DATASET_VERSION:
        raise DatasetSchemaError(
            f"{path}: dataset version {header.get('version')} is not supported (expected {DATASET_VERSION})"
        )
    if not isinstance(header.get("count"), int):
        raise DatasetSchemaError(f"{path}: header is missing the instance count")
    return header
