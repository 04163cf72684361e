"""Probability measures on the real line (or a finite set) with an explicit
atomic part and a gridded absolutely continuous part.

All measures are immutable. Densities live on uniform grids and are
integrated with the composite trapezoid rule; a density is taken to be
zero off its grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

REAL_LINE = "real-line"
FINITE_SET = "finite-set"
DOMAINS = (REAL_LINE, FINITE_SET)

MASS_TOL = 1e-9
ATOM_TOL = 1e-12
DEFAULT_POINTS = 4096
DEFAULT_WIDTH = 8.0


class MeasureError(ValueError):
    """Raised when a measure is malformed or an operation is undefined for it."""


@dataclass(frozen=True)
class CompactWindow:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
            raise MeasureError(f"window needs finite lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.lo) & (x <= self.hi)


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Nonnegative function sampled on the uniform grid ``lo + step * k``."""

    lo: float
    step: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise MeasureError("grid density needs at least two nodes")
        if not (self.step > 0 and math.isfinite(self.step)):
            raise MeasureError(f"grid step must be positive, got {self.step}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise MeasureError("grid density values must be finite and nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, fn, lo: float, hi: float, n_points: int = DEFAULT_POINTS):
        x = np.linspace(lo, hi, n_points)
        step = (hi - lo) / (n_points - 1)
        return cls(lo, step, np.asarray(fn(x), dtype=float))

    @classmethod
    def zeros(cls, lo: float, hi: float, n_points: int = DEFAULT_POINTS):
        return cls(lo, (hi - lo) / (n_points - 1), np.zeros(n_points))

    @property
    def hi(self) -> float:
        return self.lo + self.step * (self.values.size - 1)

    @property
    def x(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.values.size)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, dx=self.step))

    def cumulative(self) -> np.ndarray:
        """Trapezoid antiderivative at the nodes, starting from 0."""
        v = self.values
        inc = 0.5 * self.step * (v[1:] + v[:-1])
        return np.concatenate(([0.0], np.cumsum(inc)))

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.values, left=0.0, right=0.0)

    def same_grid(self, other: "GridDensity") -> bool:
        return (
            self.lo == other.lo
            and self.step == other.step
            and self.values.size == other.values.size
        )

    def __eq__(self, other):
        if not isinstance(other, GridDensity):
            return NotImplemented
        return self.same_grid(other) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.lo, self.step, self.values.size))


@dataclass(frozen=True, eq=False)
class MixedMeasure1D:
    """Finite measure = atoms + optional gridded density.

    Atoms closer than ``ATOM_TOL`` are merged at construction. Total mass may
    be below one (sub-probability parts from :func:`decompose`); metric
    operations insist on probability inputs.
    """

    atom_locs: np.ndarray = field(default_factory=lambda: np.empty(0))
    atom_masses: np.ndarray = field(default_factory=lambda: np.empty(0))
    density: GridDensity | None = None
    domain: str = REAL_LINE
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise MeasureError(f"unknown domain {self.domain!r}")
        locs = np.atleast_1d(np.asarray(self.atom_locs, dtype=float))
        masses = np.atleast_1d(np.asarray(self.atom_masses, dtype=float))
        if locs.shape != masses.shape or locs.ndim != 1:
            raise MeasureError("atom locations and masses must be 1-d and equal length")
        if not (np.all(np.isfinite(locs)) and np.all(np.isfinite(masses))):
            raise MeasureError("atoms must be finite")
        if np.any(masses <= 0):
            raise MeasureError("every atom mass must be positive")
        if self.domain == FINITE_SET and self.density is not None:
            raise MeasureError("finite-set measures carry no density")
        locs, masses = _merge_atoms(locs, masses)
        locs.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "atom_locs", locs)
        object.__setattr__(self, "atom_masses", masses)
        object.__setattr__(self, "meta", dict(self.meta))
        if self.total_mass > 1 + MASS_TOL:
            raise MeasureError(f"total mass {self.total_mass!r} exceeds one")

    @property
    def atom_mass(self) -> float:
        return float(self.atom_masses.sum())

    @property
    def continuous_mass(self) -> float:
        return 0.0 if self.density is None else self.density.integral()

    @property
    def total_mass(self) -> float:
        return self.atom_mass + self.continuous_mass

    @property
    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) <= MASS_TOL

    def atom_at(self, x: float) -> float:
        return float(_masses_at(self, np.array([float(x)]))[0])

    def cdf(self, x, left: bool = False) -> np.ndarray:
        """F(x) = mass of (-inf, x]; with ``left=True`` the mass of (-inf, x)."""
        x = np.asarray(x, dtype=float)
        side = "left" if left else "right"
        cum_atoms = np.concatenate(([0.0], np.cumsum(self.atom_masses)))
        out = cum_atoms[np.searchsorted(self.atom_locs, x, side=side)]
        if self.density is not None:
            d = self.density
            c = d.cumulative()
            out = out + np.interp(x, d.x, c, left=0.0, right=c[-1])
        return out

    def interval_mass(self, a: float, b: float) -> float:
        """Mass of the half-open interval (a, b]."""
        return float(self.cdf(b) - self.cdf(a))

    def require_probability(self):
        if not self.is_probability:
            raise MeasureError(
                f"mass deficit: total mass {self.total_mass!r} is not within "
                f"{MASS_TOL} of one"
            )

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "domain": self.domain,
            "atoms": [[float(x), float(m)] for x, m in zip(self.atom_locs, self.atom_masses)],
            "grid": None,
        }
        if self.density is not None:
            d = self.density
            out["grid"] = {
                "lo": d.lo,
                "hi": d.hi,
                "step": d.step,
                "values": [float(v) for v in d.values],
            }
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "MixedMeasure1D":
        atoms = data.get("atoms") or []
        grid = data.get("grid")
        density = None
        if grid is not None:
            density = GridDensity(grid["lo"], grid["step"], grid["values"])
        return cls(
            [a[0] for a in atoms],
            [a[1] for a in atoms],
            density,
            data.get("domain", REAL_LINE),
        )

    def to_json(self) -> str:
        # repr-based float encoding round-trips every double exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MixedMeasure1D":
        return cls.from_dict(json.loads(text))


def _merge_atoms(locs: np.ndarray, masses: np.ndarray):
    if locs.size == 0:
        return np.empty(0), np.empty(0)
    order = np.argsort(locs, kind="stable")
    locs, masses = locs[order], masses[order]
    new_group = np.concatenate(([True], np.diff(locs) > ATOM_TOL))
    if new_group.all():
        return locs.copy(), masses.copy()
    ids = np.cumsum(new_group) - 1
    merged = np.zeros(ids[-1] + 1)
    np.add.at(merged, ids, masses)
    return locs[new_group], merged


# constructors ------------------------------------------------------------

def dirac(x: float, domain: str = REAL_LINE) -> MixedMeasure1D:
    return MixedMeasure1D([x], [1.0], None, domain)


def categorical(masses, domain: str = FINITE_SET) -> MixedMeasure1D:
    """Atoms at 0, 1, ..., k-1; zero masses are dropped."""
    masses = np.asarray(masses, dtype=float)
    keep = masses > 0
    return MixedMeasure1D(np.arange(masses.size)[keep], masses[keep], None, domain)


def gaussian(
    mean: float,
    var: float,
    n_points: int = DEFAULT_POINTS,
    width: float = DEFAULT_WIDTH,
    window: CompactWindow | None = None,
    max_points: int = 1 << 22,
) -> MixedMeasure1D:
    """N(mean, var) on a grid over mean +/- width sd.

    With ``window`` the grid is stretched to cover it while keeping the step
    at most sd/8 (so the peak is still resolved).
    """
    if not var > 0:
        raise MeasureError(f"variance must be positive, got {var}")
    sd = math.sqrt(var)
    lo, hi = mean - width * sd, mean + width * sd
    if window is not None:
        lo, hi = min(lo, window.lo), max(hi, window.hi)
        n_points = max(n_points, int(math.ceil((hi - lo) / (sd / 8.0))) + 1)
    if n_points > max_points:
        raise MeasureError(f"grid of {n_points} points needed; exceeds {max_points}")
    step = (hi - lo) / (n_points - 1)
    if step <= 4 * np.finfo(float).eps * max(1.0, abs(lo), abs(hi)):
        raise MeasureError("predictive scale below float resolution at this location")
    x = lo + step * np.arange(n_points)
    z = (x - mean) / sd
    values = np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi))
    return MixedMeasure1D(density=GridDensity(lo, step, values), meta={"mean": mean, "var": var})


def uniform(a: float, b: float, n_points: int = DEFAULT_POINTS) -> MixedMeasure1D:
    step = (b - a) / (n_points - 1)
    return MixedMeasure1D(density=GridDensity(a, step, np.full(n_points, 1.0 / (b - a))))


def empirical(xs, domain: str = REAL_LINE) -> MixedMeasure1D:
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise MeasureError("empirical measure of an empty sample")
    return MixedMeasure1D(xs, np.full(xs.size, 1.0 / xs.size), None, domain)


def zero_measure(domain: str = REAL_LINE) -> MixedMeasure1D:
    return MixedMeasure1D(domain=domain)


# metrics -----------------------------------------------------------------

def _check_pair(mu: MixedMeasure1D, nu: MixedMeasure1D):
    if mu.domain != nu.domain:
        raise MeasureError(f"incompatible domains: {mu.domain} vs {nu.domain}")
    mu.require_probability()
    nu.require_probability()


def common_grid(a: GridDensity, b: GridDensity):
    """Resample two densities onto one grid with the finer step."""
    if a.same_grid(b):
        return a.lo, a.step, a.values, b.values
    step = min(a.step, b.step)
    lo = min(a.lo, b.lo)
    hi = max(a.hi, b.hi)
    n = int(math.ceil((hi - lo) / step - 1e-9)) + 1
    x = lo + step * np.arange(n)
    return lo, step, a(x), b(x)


def _density_pair(mu: MixedMeasure1D, nu: MixedMeasure1D):
    """Node values of both densities on a shared grid (None if neither has one)."""
    da, db = mu.density, nu.density
    if da is None and db is None:
        return None
    if da is None:
        return db.lo, db.step, np.zeros_like(db.values), db.values
    if db is None:
        return da.lo, da.step, da.values, np.zeros_like(da.values)
    return common_grid(da, db)


def _atom_pair(mu: MixedMeasure1D, nu: MixedMeasure1D):
    """Masses of both measures on the union of their atom locations."""
    locs = np.concatenate((mu.atom_locs, nu.atom_locs))
    if locs.size == 0:
        return locs, locs, locs
    union, _ = _merge_atoms(locs, np.ones(locs.size))
    return union, _masses_at(mu, union), _masses_at(nu, union)


def _masses_at(m: MixedMeasure1D, x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.size)
    if m.atom_locs.size == 0:
        return out
    i = np.minimum(np.searchsorted(m.atom_locs, x - ATOM_TOL), m.atom_locs.size - 1)
    hit = np.abs(m.atom_locs[i] - x) <= ATOM_TOL
    out[hit] = m.atom_masses[i[hit]]
    return out


def tv_distance(mu: MixedMeasure1D, nu: MixedMeasure1D) -> float:
    """Total variation distance sup_B |mu(B) - nu(B)|.

    Computed as half the L1 distance of the atomic parts plus half the L1
    distance of the densities (trapezoid rule on a shared grid). Measures with
    no overlapping mass at all are at distance exactly 1.
    """
    _check_pair(mu, nu)
    _, p, q = _atom_pair(mu, nu)
    atom_l1 = float(np.abs(p - q).sum())
    overlap = float(np.minimum(p, q).sum())
    dens_l1 = 0.0
    pair = _density_pair(mu, nu)
    if pair is not None:
        _, step, f, g = pair
        dens_l1 = float(np.trapezoid(np.abs(f - g), dx=step))
        overlap += float(np.trapezoid(np.minimum(f, g), dx=step))
    if overlap == 0.0:
        return 1.0
    return min(1.0, 0.5 * (atom_l1 + dens_l1))


def kolmogorov_distance(mu: MixedMeasure1D, nu: MixedMeasure1D) -> float:
    """sup_x |F_mu(x) - F_nu(x)|, checked at grid nodes and at atoms (x and x-)."""
    if FINITE_SET in (mu.domain, nu.domain):
        raise MeasureError(
            "kolmogorov distance undefined for unordered finite domain; use tv_distance"
        )
    _check_pair(mu, nu)
    pts = [mu.atom_locs, nu.atom_locs]
    pair = _density_pair(mu, nu)
    if pair is not None:
        lo, step, f, g = pair
        pts.append(lo + step * np.arange(f.size))
    x = np.unique(np.concatenate(pts))
    if x.size == 0:
        return 0.0
    right = np.abs(mu.cdf(x) - nu.cdf(x))
    left = np.abs(mu.cdf(x, left=True) - nu.cdf(x, left=True))
    return float(min(1.0, max(right.max(), left.max())))


def decompose(nu: MixedMeasure1D) -> tuple[MixedMeasure1D, MixedMeasure1D]:
    """Split into (continuous part, discrete part); both may be sub-probability."""
    cont = MixedMeasure1D(density=nu.density, domain=nu.domain)
    disc = MixedMeasure1D(nu.atom_locs, nu.atom_masses, None, nu.domain)
    return cont, disc


def lp_density_norm(mu: MixedMeasure1D, k: CompactWindow, p: float) -> float:
    """Integral over ``k`` of f**p, f the density of ``mu``; atoms are ignored."""
    if p < 1:
        raise MeasureError(f"p must be >= 1, got {p}")
    d = mu.density
    if d is None:
        raise MeasureError("no density")
    slack = 1e-9 * d.step
    if k.lo < d.lo - slack or k.hi > d.hi + slack:
        raise MeasureError(
            f"window outside grid: [{k.lo}, {k.hi}] not within [{d.lo}, {d.hi}]"
        )
    x = d.x
    inside = (x > k.lo) & (x < k.hi)
    xs = np.concatenate(([k.lo], x[inside], [k.hi]))
    fs = np.concatenate(([d(k.lo)], d.values[inside], [d(k.hi)]))
    return float(np.trapezoid(fs**p, xs))
