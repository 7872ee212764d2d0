"""
PruneGNN — Central Configuration
All constants, paths, and default settings in one place.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# ── Paths ──
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = Path(os.getenv("PRUNEGNN_DATA_DIR", BASE_DIR / "data"))
OUTPUT_DIR = Path(os.getenv("PRUNEGNN_OUTPUT_DIR", BASE_DIR / "outputs"))
MODEL_DIR = Path(os.getenv("PRUNEGNN_MODEL_DIR", BASE_DIR / "models"))
DB_DIR = BASE_DIR / "database"

# ── Database ──
DATABASE_URL = os.getenv("PRUNEGNN_DATABASE_URL", f"sqlite:///{DB_DIR / 'prunegnn.db'}")

# ── Run defaults ──
DEFAULT_SEED = int(os.getenv("PRUNEGNN_SEED", "2024"))
DEFAULT_WORKERS = int(os.getenv("PRUNEGNN_WORKERS", "1"))

DATASET_SCHEMA = "prunegnn-dataset"
DATASET_VERSION = 1
MODEL_SCHEMA = "prunegnn-model"
MODEL_VERSION = 1


def ensure_dirs():
    """Create the data/output/model directories if they don't exist."""
    for d in [DATA_DIR, OUTPUT_DIR, MODEL_DIR]:
        d.mkdir(parents=True, exist_ok=True)


# ── Stochastic geometry ──
STOCHGEO_CONFIG = {
    "reference_distance": 1.0,
    "quad_abs_tol": 0.0,           # relative only; far-neighbour terms are tiny
    "quad_rel_tol": 1e-10,
    "quad_limit": 200,
    "max_neighbours": 10000,       # solver iteration cap
    "ratio_tolerance": 1e-12,      # A_t >= ratio - tol counts as reached
    "mc_region_side": 100.0,       # B = 10000 m^2
    "mc_trials": 5000,
}

# ── Network scenario ──
SCENARIO_CONFIG = {
    "intensity": 0.002,            # pairs / m^2, ignored when num_pairs is set
    "num_pairs": 20,               # fixed T; None → Poisson(λ·side²)
    "region_side": 100.0,
    "d_min": 2.0,
    "d_max": 10.0,
    "path_loss_exponent": 3.5,
    "reference_distance": 1.0,
    "noise_power": 1e-4,           # normalized units
    "p_max": 1.0,
    "weight_mode": "all_ones",     # all_ones | uniform_random
    "seed": DEFAULT_SEED,
}

# ── GNN architecture ──
GNN_CONFIG = {
    "aggregate_hidden": [6, 16, 32],     # f_A
    "combine_hidden": [16, 8, 1],        # f_C after its 32 + dim(m_v) input
    "num_layers": 3,
    "channel_encoding": "reim",          # reim | gain
}

# ── Training ──
TRAINING_CONFIG = {
    "epochs": 30,
    "batch_size": 64,
    "learning_rate": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "seed": DEFAULT_SEED,
    "train_samples": 2000,
    "test_samples": 500,
}

# ── WMMSE ──
WMMSE_CONFIG = {
    "max_iters": 100,
    "tolerance": 1e-6,
    "restarts": 0,
    # also start from each link alone at P_max (zero amplitudes stay zero under the updates)
    "single_link_starts": True,
}

# ── Timing ──
TIMING_CONFIG = {
    "pair_grid": [50, 100, 200, 400],
    "repeats": 20,
    "warmups": 3,
    "max_batch": 64,
    "edge_budget": 250000,
    "intensity": 0.01,
    "path_loss_exponent": 5.5,
    "target_ratio": 0.95,
    "min_resolution": 1e-6,
    "instances": 16,               # instances timed per pair count
}

# ── Harness ──
HARNESS_CONFIG = {
    "target_ratio": 0.95,
    "baselines": ["wmmse", "heuristic", "maxpower", "random"],
    "pair_grid": [20],
    "workers": DEFAULT_WORKERS,
    "quality_band": 0.85,          # N-GNN share of WMMSE at desk scale
    "retention_band": 0.90,        # generalisation share of WMMSE within 4× of the training size
    "self_consistency": 0.005,     # re-evaluating the training scenario
}

# Full-scale preset (`--full-scale`)
FULL_SCALE = {
    "train_samples": 10000,
    "test_samples": 2000,
    "pair_grid": [20, 40, 100, 200, 300],
    "epochs": 100,
}

# ── Published grids ──
TABLE_ALPHAS = [3.0, 3.5, 4.0, 4.5, 5.0, 5.5]
TABLE_LAMBDAS = [0.002, 0.004, 0.01, 0.02, 0.03]
TABLE_RATIOS = [0.90, 0.95, 0.98]
PAIR_GRID = [20, 40, 100, 200, 300]

# Published values, kept only to flag discrepancies in emitted tables.
PUBLISHED_TABLE_I = {
    0.90: [7, 4, 3, 2, 2, 2],
    0.95: [12, 6, 4, 3, 2, 2],
    0.98: [26, 10, 5, 4, 3, 3],
}

PUBLISHED_TABLE_II = {
    0.002: [2, 1, 1, 1, 1, 1],
    0.004: [3, 2, 1, 1, 1, 1],
    0.01: [5, 2, 2, 1, 1, 1],
    0.02: [9, 3, 2, 2, 2, 2],
    0.03: [13, 4, 2, 2, 2, 2],
}

PUBLISHED_TABLE_III = {
    0.002: [3.07, 10.01, 13.93, 25.33, 150.20, 163.76],
    0.004: [0.97, 1.99, 2.83, 5.52, 21.05, 23.12],
    0.01: [0.25, 0.39, 0.50, 0.34, 1.48, 2.47],
    0.02: [0.10, 0.19, 0.19, 0.22, 0.46, 0.98],
    0.03: [0.06, 0.12, 0.12, 0.14, 0.28, 0.58],
}

PUBLISHED_TABLE_IV = {
    0.002: [2.71, 4.81, 2.74, 2.41, 1.63, 1.55],
    0.004: [1.02, 0.42, 2.21, 2.78, 2.33, 2.29],
    0.01: [0.37, 0.41, 0.04, 3.34, 3.01, 2.97],
    0.02: [0.15, 0.18, 0.08, 0.13, 0.06, 0.06],
    0.03: [0.09, 0.12, 0.09, 0.21, 0.11, 0.11],
}

# Distance distributions of the [d_min, d_max] table (λ=0.004, α=3.5)
DISTANCE_DISTRIBUTIONS = [(2.0, 20.0), (5.0, 5.0), (5.0, 15.0), (10.0, 30.0)]

# Generalisation presets: (pairs, region side)
SPATIAL_GENERALISATION = {
    "train": (40, 100.0),
    "eval": [(10, 50.0), (160, 200.0), (360, 300.0), (640, 400.0)],
    "intensity": 0.004,
    "path_loss_exponent": 3.5,
}

DENSITY_GENERALISATION = {
    "train": (100, 100.0),
    "eval": [(20, 100.0), (40, 100.0), (200, 100.0), (300, 100.0), (400, 100.0)],
    "path_loss_exponent": 3.5,
}
