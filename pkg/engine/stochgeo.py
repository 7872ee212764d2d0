"""
PruneGNN — Stochastic Geometry
Expected interference under a stationary PPP, the distance/neighbour interference
ratios, their threshold solvers, and the Monte-Carlo variance study.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import integrate, special
from tqdm import tqdm

from config.settings import STOCHGEO_CONFIG as SG
from engine.errors import ConvergenceError, DomainError


# ══════════════════════════════════════════════
# TYPES
# ══════════════════════════════════════════════

@dataclass(frozen=True)
class PppParams:
    """Intensity λ (pairs/m²), path-loss exponent α and reference distance d0 (m)."""

    intensity: float
    path_loss_exponent: float
    reference_distance: float = 1.0

    def __post_init__(self):
        if not self.intensity > 0:
            raise DomainError(f"intensity must be > 0, got {self.intensity}")
        if not self.path_loss_exponent > 2:
            raise DomainError(
                f"path-loss exponent must be > 2 for finite interference, got {self.path_loss_exponent}"
            )
        if not self.reference_distance > 0:
            raise DomainError(f"reference distance must be > 0, got {self.reference_distance}")

    @property
    def lam(self) -> float:
        return self.intensity

    @property
    def alpha(self) -> float:
        return self.path_loss_exponent

    @property
    def d0(self) -> float:
        return self.reference_distance

    @property
    def disk_mass(self) -> float:
        """λπd0², the expected number of points inside the reference disk."""
        return self.intensity * math.pi * self.reference_distance ** 2


class ThresholdKind(str, Enum):
    DISTANCE = "distance"
    NEIGHBOUR = "neighbour"
    COMPLETE = "complete"


@dataclass(frozen=True)
class ThresholdSpec:
    """
    A pruning rule. Distance keeps interferers with d <= t, Neighbour keeps the
    n closest interferers, Complete keeps everything.
    """

    kind: ThresholdKind
    distance: Optional[float] = None
    neighbour_count: Optional[int] = None
    target_ratio: Optional[float] = None
    achieved_ratio: Optional[float] = None
    reference_distance: float = 1.0

    def __post_init__(self):
        if self.kind == ThresholdKind.DISTANCE:
            if self.distance is None or self.neighbour_count is not None:
                raise DomainError("distance threshold needs exactly a distance value")
            if not self.distance >= self.reference_distance:
                raise DomainError(
                    f"distance threshold {self.distance} is below d0={self.reference_distance}"
                )
        elif self.kind == ThresholdKind.NEIGHBOUR:
            if self.neighbour_count is None or self.distance is not None:
                raise DomainError("neighbour threshold needs exactly a neighbour count")
            if int(self.neighbour_count) != self.neighbour_count or self.neighbour_count < 1:
                raise DomainError(f"neighbour count must be a positive integer, got {self.neighbour_count}")
        elif self.distance is not None or self.neighbour_count is not None:
            raise DomainError("complete threshold carries no value")
        if self.target_ratio is not None and not 0 < self.target_ratio < 1:
            raise DomainError(f"target ratio must lie in (0, 1), got {self.target_ratio}")

    @classmethod
    def for_distance(cls, t: float, target_ratio=None, achieved_ratio=None, reference_distance=1.0):
        return cls(ThresholdKind.DISTANCE, distance=float(t), target_ratio=target_ratio,
                   achieved_ratio=achieved_ratio, reference_distance=reference_distance)

    @classmethod
    def for_neighbours(cls, n: int, target_ratio=None, achieved_ratio=None):
        return cls(ThresholdKind.NEIGHBOUR, neighbour_count=int(n), target_ratio=target_ratio,
                   achieved_ratio=achieved_ratio)

    @classmethod
    def complete(cls):
        return cls(ThresholdKind.COMPLETE)

    @classmethod
    def parse(cls, text: str, reference_distance: float = 1.0) -> "ThresholdSpec":
        """Parse `distance:4`, `neighbour:2` or `complete`."""
        kind, _, value = text.strip().lower().partition(":")
        if kind == "complete" and not value:
            return cls.complete()
        try:
            if kind == "distance":
                return cls.for_distance(float(value), reference_distance=reference_distance)
            if kind in ("neighbour", "neighbor"):
                return cls.for_neighbours(int(value))
        except ValueError as e:
            raise DomainError(f"bad threshold value in '{text}': {e}") from e
        raise DomainError(f"unknown threshold spec '{text}' (distance:t | neighbour:n | complete)")

    def __str__(self):
        if self.kind == ThresholdKind.DISTANCE:
            return f"distance:{self.distance:g}"
        if self.kind == ThresholdKind.NEIGHBOUR:
            return f"neighbour:{self.neighbour_count}"
        return "complete"


@dataclass(frozen=True)
class InterferenceStats:
    """Monte-Carlo statistics of the interference captured at the typical receiver."""

    mean: float
    variance: float
    sample_count: int
    standard_error: float = 0.0
    mean_fraction: float = 1.0

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError("variance cannot be negative")
        if self.sample_count < 1:
            raise DomainError("Monte-Carlo stats need at least one sample")


# ══════════════════════════════════════════════
# RANDOMNESS & GEOMETRY HELPERS
# ══════════════════════════════════════════════

def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, *stream); independent of call order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def path_gain(d, alpha: float, d0: float = 1.0):
    """g(d) = min{1, (d/d0)^-α}."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.minimum(1.0, (d / d0) ** (-alpha))


# ══════════════════════════════════════════════
# DISTANCE-BASED THRESHOLD
# ══════════════════════════════════════════════

def expected_total_interference(p: PppParams) -> float:
    """Campbell's theorem: E[I] = πλd0²(1 + 2/(α−2))."""
    return p.disk_mass * (1.0 + 2.0 / (p.alpha - 2.0))


def expected_distance_interference(p: PppParams, t: float) -> float:
    """E[I_d(t)], the expected interference from pairs within distance t >= d0."""
    _check_distance(p, t)
    tail = 1.0 - (t / p.d0) ** (2.0 - p.alpha)
    return p.disk_mass * (1.0 + 2.0 * tail / (p.alpha - 2.0))


def distance_interference_ratio(p: PppParams, t: float) -> float:
    """A_t = (α − 2(t/d0)^{2−α}) / α, strictly increasing in t on [d0, ∞)."""
    _check_distance(p, t)
    if math.isinf(t):
        return 1.0
    return (p.alpha - 2.0 * (t / p.d0) ** (2.0 - p.alpha)) / p.alpha


def distance_interference_variance(p: PppParams, t: float = math.inf) -> float:
    """
    Second-order Campbell moment of the interference within distance t:
    Var = λ∫_0^t g(r)² 2πr dr = πλd0²(1 + (1 − (t/d0)^{2−2α})/(α−1)).
    """
    _check_distance(p, t)
    tail = 1.0 if math.isinf(t) else 1.0 - (t / p.d0) ** (2.0 - 2.0 * p.alpha)
    return p.disk_mass * (1.0 + tail / (p.alpha - 1.0))


def solve_distance_threshold(p: PppParams, target_ratio: float) -> ThresholdSpec:
    """Smallest integer multiple of d0 whose A_t reaches target_ratio."""
    if not 0 < target_ratio < 1:
        raise DomainError(f"target ratio {target_ratio} is unreachable; must lie in (0, 1)")
    floor_ratio = (p.alpha - 2.0) / p.alpha
    if target_ratio <= floor_ratio:
        return ThresholdSpec.for_distance(p.d0, target_ratio, floor_ratio, p.d0)

    continuous = (p.alpha * (1.0 - target_ratio) / 2.0) ** (1.0 / (2.0 - p.alpha))
    k = max(1, int(math.floor(continuous)) - 1)
    tol = SG["ratio_tolerance"]
    while distance_interference_ratio(p, k * p.d0) < target_ratio - tol:
        k += 1
    t = k * p.d0
    return ThresholdSpec.for_distance(t, target_ratio, distance_interference_ratio(p, t), p.d0)


def _check_distance(p: PppParams, t: float):
    if not t >= p.d0:
        raise DomainError(f"threshold t={t} must be >= d0={p.d0}")


# ══════════════════════════════════════════════
# INCOMPLETE GAMMA
# ══════════════════════════════════════════════

def upper_incomplete_gamma(s: float, x: float) -> float:
    """
    Γ(s, x) = ∫_x^∞ t^{s−1} e^{−t} dt for any real s.

    s > 0 goes straight to scipy. For s <= 0 the value is walked down from
    Γ(s + m, x), s + m in (0, 1] (or Γ(0, x) = E1(x) for integer s), with
    Γ(a, x) = (Γ(a+1, x) − x^a e^{−x}) / a.
    """
    if x < 0 or math.isnan(x) or math.isnan(s):
        raise DomainError(f"Γ(s, x) needs x >= 0, got s={s}, x={x}")
    if s > 0:
        if x == 0:
            return float(special.gamma(s))
        value = float(special.gammaincc(s, x) * special.gamma(s))
        return _finite(value, s, x)
    if x == 0:
        raise DomainError(f"Γ({s}, 0) diverges for s <= 0")

    steps = int(math.ceil(-s)) if s != math.floor(s) else int(-s)
    a = s + steps
    value = float(special.exp1(x)) if a == 0 else float(special.gammaincc(a, x) * special.gamma(a))
    log_x = math.log(x)
    for _ in range(steps):
        a -= 1.0
        value = (value - math.exp(a * log_x - x)) / a
    return _finite(value, s, x)


def _finite(value: float, s: float, x: float) -> float:
    if not math.isfinite(value):
        raise ConvergenceError(f"Γ({s}, {x}) did not evaluate to a finite value")
    return value


def _gamma_ratio(a: float, n: int, x: float) -> float:
    """Γ(a, x) / Γ(n), computed in log space when a > 0 so large n doesn't overflow."""
    if a > 0:
        return float(special.gammaincc(a, x) * math.exp(special.gammaln(a) - special.gammaln(n)))
    return upper_incomplete_gamma(a, x) / math.exp(special.gammaln(n))


# ══════════════════════════════════════════════
# NEIGHBOUR-BASED THRESHOLD
# ══════════════════════════════════════════════

def nth_neighbour_distance_pdf(p: PppParams, n: int, r):
    """f_{Rn}(r) = e^{−λπr²} · 2(λπr²)^n / (r (n−1)!); vectorized over r."""
    if n < 1:
        raise DomainError(f"neighbour index must be >= 1, got {n}")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("distance must be >= 0")
    lam_pi = p.lam * math.pi
    out = np.zeros_like(r)
    pos = r > 0
    rp = r[pos]
    log_f = -lam_pi * rp ** 2 + math.log(2.0) + n * np.log(lam_pi * rp ** 2) - np.log(rp) - special.gammaln(n)
    out[pos] = np.exp(log_f)
    return out if out.ndim else float(out)


def nth_neighbour_expected_interference(p: PppParams, n: int) -> float:
    """
    E[I_n(n)] = 1 − (Σ_{i<n} x^i/i!) e^{−x} + x^{α/2} Γ(n − α/2, x) / Γ(n), x = λπd0².

    The leading term is the regularized lower incomplete gamma P(n, x).
    """
    if n < 1:
        raise DomainError(f"neighbour index must be >= 1, got {n}")
    x = p.disk_mass
    inside = float(special.gammainc(n, x))
    outside = x ** (p.alpha / 2.0) * _gamma_ratio(n - p.alpha / 2.0, n, x)
    return inside + outside


def nth_neighbour_interference_quadrature(p: PppParams, n: int) -> float:
    """Direct quadrature of ∫ g(r) f_{Rn}(r) dr, split at d0 and at the pdf mode."""
    d0, alpha = p.d0, p.alpha
    opts = dict(epsabs=SG["quad_abs_tol"], epsrel=SG["quad_rel_tol"], limit=SG["quad_limit"])

    def pdf(r):
        return nth_neighbour_distance_pdf(p, n, r)

    inner, _ = integrate.quad(pdf, 0.0, d0, **opts)
    mode = max(d0, math.sqrt(max(n - 0.5, 0.5) / (p.lam * math.pi)))
    outer_fn = lambda r: (r / d0) ** (-alpha) * pdf(r)
    mid, _ = integrate.quad(outer_fn, d0, mode, **opts) if mode > d0 else (0.0, 0.0)
    tail, _ = integrate.quad(outer_fn, mode, np.inf, **opts)
    return inner + mid + tail


def neighbour_interference_ratio(p: PppParams, n: int) -> float:
    """O_n = Σ_{i<=n} E[I_n(i)] / E[I]."""
    if n < 1:
        raise DomainError(f"neighbour count must be >= 1, got {n}")
    captured = sum(nth_neighbour_expected_interference(p, i) for i in range(1, n + 1))
    return captured / expected_total_interference(p)


def solve_neighbour_threshold(p: PppParams, target_ratio: float) -> ThresholdSpec:
    """Smallest n with O_n >= target_ratio, found by incrementing n."""
    if not 0 < target_ratio < 1:
        raise DomainError(f"target ratio {target_ratio} must lie in (0, 1)")
    total = expected_total_interference(p)
    tol = SG["ratio_tolerance"]
    captured = 0.0
    for n in range(1, SG["max_neighbours"] + 1):
        captured += nth_neighbour_expected_interference(p, n)
        ratio = captured / total
        if ratio >= target_ratio - tol:
            return ThresholdSpec.for_neighbours(n, target_ratio, ratio)
    raise ConvergenceError(
        f"O_n did not reach {target_ratio} within {SG['max_neighbours']} neighbours "
        f"(λ={p.lam}, α={p.alpha}); last ratio {ratio:.6f}"
    )


def resolve_threshold(kind, p: PppParams, target_ratio: float) -> ThresholdSpec:
    """Auto threshold policy: map a kind and a target ratio to a concrete spec."""
    kind = ThresholdKind(kind)
    if kind == ThresholdKind.DISTANCE:
        return solve_distance_threshold(p, target_ratio)
    if kind == ThresholdKind.NEIGHBOUR:
        return solve_neighbour_threshold(p, target_ratio)
    return ThresholdSpec.complete()


# ══════════════════════════════════════════════
# MONTE-CARLO INTERFERENCE
# ══════════════════════════════════════════════

def captured_interference(gains: np.ndarray, distances: np.ndarray, spec: ThresholdSpec) -> float:
    """Interference kept by the pruning rule at the typical receiver, given per-point gains and distances."""
    if spec.kind == ThresholdKind.COMPLETE:
        return float(gains.sum())
    if spec.kind == ThresholdKind.DISTANCE:
        return float(gains[distances <= spec.distance].sum())
    keep = np.argsort(distances, kind="stable")[: spec.neighbour_count]
    return float(gains[keep].sum())


def monte_carlo_interference_stats(
    p: PppParams,
    spec: ThresholdSpec,
    region_side: float = SG["mc_region_side"],
    trials: int = SG["mc_trials"],
    seed: int = 0,
    verbose: bool = False,
) -> InterferenceStats:
    """
    Scatter Poisson(λ·side²) points uniformly over the square, typical receiver at the
    centre, and record the interference the rule captures. Trial k draws from
    make_rng(seed, k), so any split of the trials gives the same statistics.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if not region_side > 0:
        raise DomainError("region side must be > 0")

    centre = region_side / 2.0
    expected_count = p.lam * region_side ** 2
    captured = np.empty(trials)
    fraction = np.empty(trials)

    for k in tqdm(range(trials), desc=f"MC {spec}", disable=not verbose, leave=False):
        rng = make_rng(seed, k)
        count = rng.poisson(expected_count)
        points = rng.uniform(0.0, region_side, size=(count, 2))
        distances = np.hypot(points[:, 0] - centre, points[:, 1] - centre)
        gains = path_gain(distances, p.alpha, p.d0)
        captured[k] = captured_interference(gains, distances, spec)
        total = gains.sum()
        # no points at all: nothing was missed
        fraction[k] = captured[k] / total if total > 0 else 1.0

    variance = float(captured.var(ddof=1)) if trials > 1 else 0.0
    return InterferenceStats(
        mean=float(captured.mean()),
        variance=variance,
        sample_count=trials,
        standard_error=math.sqrt(variance / trials),
        mean_fraction=float(fraction.mean()),
    )
