"""Generative models, predictive measures, directing measures and joint
densities for the four sequences studied here.

``polya``       Polya urn over k colours (exchangeable, purely atomic).
``gauss-conj``  theta ~ N(m0, tau0^2), then X_i iid N(theta, sigma^2).
``gauss-cid``   X_n = Z_1 + ... + Z_n + U_n with Z_i ~ N(0, b_i - b_{i-1}),
                U_n ~ N(0, 1 - b_n); c.i.d. but not exchangeable.
``singular``    X_n = sum_m V_m Y_{m,n}, V_m = U_m^m, U_m ~ U(1/(m+1), 1/m),
                Y fair coins; exchangeable with a singular directing measure.

The gauss-cid sequence is parametrised by its tail ``t_n = 1 - b_n`` so that
values of b_n within 2**-53 of one never lose precision.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

import numpy as np
from scipy import linalg, stats

from . import rng as rngmod
from .measures import (
    FINITE_SET,
    CompactWindow,
    GridDensity,
    MeasureError,
    MixedMeasure1D,
    categorical,
    gaussian,
    tv_distance,
)

TAGS = ("polya", "gauss-conj", "gauss-cid", "singular")

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "polya": {"weights": (1.0, 1.0), "proxy_horizon": 100_000},
    "gauss-conj": {"m0": 0.0, "tau0_sq": 1.0, "sigma_sq": 1.0},
    "gauss-cid": {"rule": "geometric", "ratio": 0.5, "exponent": 2.0},
    "singular": {"depth": 10},
}

CID_MAX_N = 5000
JOINT_MAX_N = 50
FD_MAX_DEPTH = 12
DIRECTING_ENUM_DEPTH = 10


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    tag: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ModelError(f"unknown model tag {self.tag!r}; expected one of {TAGS}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.tag])
        if unknown:
            raise ModelError(f"unknown parameters for {self.tag}: {sorted(unknown)}")
        params = {**DEFAULT_PARAMS[self.tag], **self.params}
        object.__setattr__(self, "params", _validate(self.tag, params))
        object.__setattr__(self, "seed", rngmod.check_seed(self.seed))

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.tag, dict(self.params), seed)

    def to_dict(self) -> dict:
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        return {"tag": self.tag, "params": params, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelSpec":
        return cls(data["tag"], dict(data.get("params", {})), data.get("seed", 0))


def _validate(tag: str, p: dict) -> dict:
    if tag == "polya":
        w = tuple(float(a) for a in p["weights"])
        if len(w) < 1 or not all(a > 0 and math.isfinite(a) for a in w):
            raise ModelError(f"polya weights must all be > 0, got {w}")
        p["weights"] = w
        p["proxy_horizon"] = int(p["proxy_horizon"])
        if p["proxy_horizon"] < 1:
            raise ModelError("proxy_horizon must be >= 1")
    elif tag == "gauss-conj":
        for k in ("m0", "tau0_sq", "sigma_sq"):
            p[k] = float(p[k])
        if not (p["tau0_sq"] > 0 and p["sigma_sq"] > 0):
            raise ModelError("gauss-conj variances must be > 0")
    elif tag == "gauss-cid":
        p["ratio"], p["exponent"] = float(p["ratio"]), float(p["exponent"])
        if p["rule"] == "geometric":
            # t_n = r^n: strictly decreasing, sum_n t_n = r / (1 - r)
            if not 0 < p["ratio"] < 1:
                raise ModelError("geometric rule needs 0 < ratio < 1")
        elif p["rule"] == "power":
            # t_n = (n+1)^-s: strictly decreasing, sum_n t_n = zeta(s) - 1
            if not p["exponent"] > 1:
                raise ModelError("power rule needs exponent > 1")
        else:
            raise ModelError(f"unknown gauss-cid rule {p['rule']!r}")
    elif tag == "singular":
        d = p["depth"]
        if int(d) != d or not 2 <= d <= 40:
            raise ModelError(f"singular depth must be an integer in [2, 40], got {d}")
        p["depth"] = int(d)
    return p


def cid_tails(spec: ModelSpec, n: int) -> np.ndarray:
    """t_0, ..., t_n with t_i = 1 - b_i."""
    i = np.arange(n + 1, dtype=float)
    if spec.params["rule"] == "geometric":
        return spec.params["ratio"] ** i
    return (i + 1.0) ** -spec.params["exponent"]


# weights of the singular model ------------------------------------------

@dataclass(frozen=True, eq=False)
class WeightSequence:
    """V_1..V_M with the sure bounds (j+1)^-j < V_j < j^-j."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ModelError("weight sequence needs at least one value")
        j = np.arange(1, v.size + 1, dtype=float)
        lower, upper = (j + 1) ** -j, j**-j
        bad = np.flatnonzero(~((lower < v) & (v < upper)))
        if bad.size:
            m = int(bad[0]) + 1
            raise ModelError(f"V_{m} = {v[m - 1]!r} violates ({m + 1})^-{m} < V_{m} < {m}^-{m}")
        if np.any(np.diff(v) >= 0):
            raise ModelError("weights must be strictly decreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def depth(self) -> int:
        return int(self.values.size)

    def beyond_truncation(self) -> float:
        """Sure bound (M+1)^-M / M on the neglected tail sum_{j>M} V_j."""
        m = self.depth
        return (m + 1.0) ** -m / m


def sample_weights(gen: np.random.Generator, depth: int) -> WeightSequence:
    m = np.arange(1, depth + 1, dtype=float)
    lo, hi = 1.0 / (m + 1), 1.0 / m
    # strictly inside (0, 1): keeps U_m off the interval endpoints
    u = (gen.integers(0, 2**52, size=depth) + 0.5) / 2.0**52
    return WeightSequence((lo + (hi - lo) * u) ** m)


# trajectories -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    spec: ModelSpec
    observations: np.ndarray
    latent: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim != 1 or obs.size < 1:
            raise ModelError("a trajectory needs at least one observation")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return int(self.observations.size)

    def prefix(self, n: int) -> np.ndarray:
        if not 0 <= n <= self.n:
            raise ModelError(f"prefix length {n} outside [0, {self.n}]")
        return self.observations[:n]

    def to_dict(self) -> dict:
        latent = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.latent.items()
        }
        return {
            "spec": self.spec.to_dict(),
            "seed": self.spec.seed,
            "latent": latent,
            "observations": self.observations.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Trajectory":
        spec = ModelSpec.from_dict(data["spec"])
        latent = {
            k: (np.asarray(v) if isinstance(v, list) else v)
            for k, v in data.get("latent", {}).items()
        }
        return cls(spec, data["observations"], latent)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "x"])
        for i, x in enumerate(self.observations, start=1):
            w.writerow([i, "%.17g" % x])
        return buf.getvalue()


def sample_trajectory(spec: ModelSpec, n: int) -> Trajectory:
    """Draw x_1..x_n; bit-reproducible from ``spec.seed``."""
    n = int(n)
    if n < 1:
        raise ModelError(f"n must be >= 1, got {n}")
    if spec.tag == "gauss-cid" and n > CID_MAX_N:
        raise ModelError(f"gauss-cid supports n <= {CID_MAX_N}, got {n}")
    gen = rngmod.stream(spec.seed, rngmod.TRAJECTORY)
    p = spec.params

    if spec.tag == "polya":
        return Trajectory(spec, _polya_draws(gen, p["weights"], n), {})

    if spec.tag == "gauss-conj":
        theta = p["m0"] + math.sqrt(p["tau0_sq"]) * gen.standard_normal()
        x = theta + math.sqrt(p["sigma_sq"]) * gen.standard_normal(n)
        return Trajectory(spec, x, {"theta": float(theta)})

    if spec.tag == "gauss-cid":
        t = cid_tails(spec, n)
        z = np.sqrt(t[:-1] - t[1:]) * gen.standard_normal(n)
        u = np.sqrt(t[1:]) * gen.standard_normal(n)
        s = np.cumsum(z)
        latent = {"z": z, "u": u, "v_hat": float(s[-1]), "tail_sd": float(math.sqrt(t[n]))}
        return Trajectory(spec, s + u, latent)

    v = sample_weights(gen, p["depth"])
    y = gen.integers(0, 2, size=(p["depth"], n), dtype=np.int8)
    latent = {"v": v.values.copy(), "y": y, "location_error": v.beyond_truncation()}
    return Trajectory(spec, v.values @ y, latent)


def _polya_draws(gen: np.random.Generator, weights, n: int) -> np.ndarray:
    counts = list(weights)
    k = len(counts)
    total = sum(counts)
    out = np.empty(n)
    for i, u in enumerate(gen.random(n)):
        r = u * total
        j, acc = 0, counts[0]
        while r >= acc and j < k - 1:
            j += 1
            acc += counts[j]
        out[i] = j
        counts[j] += 1.0
        total += 1.0
    return out


def weight_sequence(traj: Trajectory) -> WeightSequence:
    if traj.spec.tag != "singular" or "v" not in traj.latent:
        raise ModelError("missing latent: trajectory carries no singular weights")
    return WeightSequence(traj.latent["v"])


# predictive measures ------------------------------------------------------

def polya_counts(spec: ModelSpec, history) -> np.ndarray:
    k = len(spec.params["weights"])
    h = np.asarray(history, dtype=float)
    if h.size and (np.any(h != np.round(h)) or h.min() < 0 or h.max() >= k):
        raise ModelError(f"polya history must hold colour indices in 0..{k - 1}")
    return np.bincount(h.astype(int), minlength=k).astype(float)


def polya_predictive_exact(weights, counts) -> list[Fraction]:
    """Predictive colour probabilities in exact rational arithmetic."""
    w = [Fraction(a) + Fraction(int(c)) for a, c in zip(weights, counts)]
    total = sum(w)
    return [a / total for a in w]


def conj_state(spec: ModelSpec, history) -> tuple[float, float]:
    """Posterior (mean, variance) of theta given the history."""
    p = spec.params
    h = np.asarray(history, dtype=float)
    prec = 1.0 / p["tau0_sq"] + h.size / p["sigma_sq"]
    mean = (p["m0"] / p["tau0_sq"] + h.sum() / p["sigma_sq"]) / prec
    return float(mean), 1.0 / prec


def conj_update(spec: ModelSpec, mean, var, x):
    """One conjugate step; ``mean`` and ``x`` may be arrays."""
    s2 = spec.params["sigma_sq"]
    new_var = 1.0 / (1.0 / var + 1.0 / s2)
    return new_var * (mean / var + x / s2), new_var


@dataclass(frozen=True)
class CidState:
    """Filtering state of the partial sum S_n = Z_1 + ... + Z_n given x_1..x_n."""

    n: int
    mean: Any
    var: float


def cid_state(spec: ModelSpec, history) -> CidState:
    h = np.asarray(history, dtype=float)
    t = cid_tails(spec, h.size + 1)
    state = CidState(0, 0.0, 0.0)
    for x in h:
        state = cid_update(state, x, t)
    return state


def cid_update(state: CidState, x, t: np.ndarray) -> CidState:
    n = state.n
    q = state.var + (t[n] - t[n + 1])
    s = state.var + t[n]
    gain = q / s
    return CidState(n + 1, state.mean + gain * (x - state.mean), q * t[n + 1] / s)


def cid_dense_conditional(spec: ModelSpec, history) -> tuple[float, float]:
    """Conditional law of X_{n+1} by solving the full n x n Gaussian system."""
    h = np.asarray(history, dtype=float)
    n = h.size
    cov = cid_covariance(spec, n + 1)
    if n == 0:
        return 0.0, float(cov[0, 0])
    fac = linalg.cho_factor(cov[:n, :n], lower=True)
    c12 = cov[:n, n]
    mean = float(c12 @ linalg.cho_solve(fac, h))
    var = float(cov[n, n] - c12 @ linalg.cho_solve(fac, c12))
    return mean, var


def cid_covariance(spec: ModelSpec, n: int) -> np.ndarray:
    """Sigma_ij = b_min(i,j) + (1 - b_i) 1{i=j}."""
    t = cid_tails(spec, n)[1:]
    idx = np.arange(n)
    cov = 1.0 - t[np.minimum.outer(idx, idx)]
    cov[idx, idx] = 1.0
    return cov


def gaussian_predictive_params(spec: ModelSpec, history, method: str = "filter"):
    """(mean, variance) of the Gaussian predictive law of X_{n+1}."""
    if spec.tag == "gauss-conj":
        mean, var = conj_state(spec, history)
        return mean, spec.params["sigma_sq"] + var
    if spec.tag == "gauss-cid":
        if method == "dense":
            return cid_dense_conditional(spec, history)
        n = len(history)
        state = cid_state(spec, history)
        return float(state.mean), state.var + float(cid_tails(spec, n)[n])
    raise ModelError(f"{spec.tag} has no Gaussian predictive")


def predictive(
    spec: ModelSpec,
    history=(),
    window: CompactWindow | None = None,
    method: str = "filter",
) -> MixedMeasure1D:
    """Law of X_{n+1} given x_1..x_n (the prior predictive for empty history).

    ``window`` widens the density grid to cover a compact set, as needed by
    L^p norms over that set. ``method="dense"`` conditions the gauss-cid joint
    Gaussian directly instead of filtering.
    """
    if spec.tag == "singular":
        raise ModelError("predictive density intractable; use fd_density_small_n")
    if spec.tag == "polya":
        w = np.asarray(spec.params["weights"])
        c = polya_counts(spec, history)
        return categorical((w + c) / (w.sum() + c.sum()))
    if spec.tag == "gauss-cid" and len(history) > CID_MAX_N:
        raise ModelError(f"gauss-cid supports n <= {CID_MAX_N}")
    mean, var = gaussian_predictive_params(spec, history, method)
    try:
        return gaussian(mean, var, window=window)
    except MeasureError as exc:
        raise ModelError(f"{spec.tag} predictive at n={len(history)}: {exc}") from exc


# directing measures ------------------------------------------------------

def directing(
    spec: ModelSpec, traj: Trajectory, proxy_horizon: int | None = None
) -> MixedMeasure1D:
    """The random limit of the predictives on the trajectory's sample point.

    polya returns the long-run proxy alpha_H flagged in ``meta`` together with
    the doubling estimate tv(alpha_H, alpha_2H) of its bias.
    """
    p = spec.params
    if spec.tag == "gauss-conj":
        if "theta" not in traj.latent:
            raise ModelError("missing latent theta")
        return gaussian(traj.latent["theta"], p["sigma_sq"])

    if spec.tag == "gauss-cid":
        if "v_hat" not in traj.latent:
            raise ModelError("missing latent partial sums")
        return MixedMeasure1D(
            [traj.latent["v_hat"]], [1.0], meta={"tail_sd": traj.latent["tail_sd"]}
        )

    if spec.tag == "polya":
        horizon = int(proxy_horizon or p["proxy_horizon"])
        w = np.asarray(p["weights"])
        c = polya_counts(spec, traj.observations)
        gen = rngmod.stream(spec.seed, rngmod.PROXY)
        c_h = _polya_extend(gen, w, c, max(horizon - traj.n, 0))
        c_2h = _polya_extend(gen, w, c_h, max(horizon, traj.n))
        alpha_h = categorical((w + c_h) / (w.sum() + c_h.sum()))
        alpha_2h = categorical((w + c_2h) / (w.sum() + c_2h.sum()))
        meta = {
            "proxy": True,
            "horizon": int(c_h.sum()),
            "bias_estimate": tv_distance(alpha_h, alpha_2h),
        }
        return MixedMeasure1D(alpha_h.atom_locs, alpha_h.atom_masses, None, FINITE_SET, meta)

    from .fractal import directing_atoms

    return directing_atoms(weight_sequence(traj))


def _polya_extend(gen, weights, counts, draws: int) -> np.ndarray:
    """Counts after ``draws`` further urn steps (Dirichlet-multinomial, exact in law)."""
    if draws == 0:
        return counts.copy()
    probs = gen.dirichlet(weights + counts)
    return counts + gen.multinomial(draws, probs)


# joint densities --------------------------------------------------------

def joint_covariance(spec: ModelSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    if spec.tag == "gauss-conj":
        p = spec.params
        cov = p["sigma_sq"] * np.eye(n) + p["tau0_sq"] * np.ones((n, n))
        return np.full(n, p["m0"]), cov
    if spec.tag == "gauss-cid":
        return np.zeros(n), cid_covariance(spec, n)
    raise ModelError("joint density not exposed for this model")


def joint_log_density(spec: ModelSpec, point) -> np.ndarray:
    """log g_n at one point (shape (n,)) or a stack of points (shape (..., n))."""
    pts = np.asarray(point, dtype=float)
    n = pts.shape[-1] if pts.ndim else 0
    if spec.tag not in ("gauss-conj", "gauss-cid"):
        raise ModelError("joint density not exposed for this model")
    if n > JOINT_MAX_N:
        raise ModelError(f"joint density supports n <= {JOINT_MAX_N}")
    if n == 0:
        return np.zeros(pts.shape[:-1]) if pts.ndim > 1 else np.float64(0.0)
    mean, cov = joint_covariance(spec, n)
    return stats.multivariate_normal(mean, cov).logpdf(pts)


def joint_density(spec: ModelSpec, point) -> float:
    return float(np.exp(joint_log_density(spec, np.asarray(point, dtype=float))))


def predictive_density_ratio(spec: ModelSpec, history, grid: GridDensity) -> GridDensity:
    """f_n(x) = g_{n+1}(history, x) / g_n(history) on the nodes of ``grid``."""
    h = np.asarray(history, dtype=float)
    x = grid.x
    pts = np.column_stack((np.broadcast_to(h, (x.size, h.size)), x))
    log_num = joint_log_density(spec, pts)
    log_den = joint_log_density(spec, h) if h.size else 0.0
    return GridDensity(grid.lo, grid.step, np.exp(log_num - log_den))


# finite-dimensional density of the singular model -------------------------

def fd_density_small_n(
    spec: ModelSpec,
    v: WeightSequence | None = None,
    grid: GridDensity | None = None,
    step: float = 2.0**-14,
) -> tuple[GridDensity, float]:
    """Law of X_1 (averaged over the weights) as (density, atom at zero).

    The weights V_m have densities h_m(v) = (m+1) v^((1-m)/m) on
    ((m+1)^-m, m^-m); X_1 mixes, over the 2^M coin patterns, the convolutions
    of the selected h_m. The all-zero pattern is an atom of mass 2^-M. The
    depth comes from ``v`` when given, otherwise from ``spec``.

    Each h_m is binned exactly (through its CDF) into cells [k h, (k+1) h)
    and the factors 1/2 delta_0 + 1/2 h_m are convolved one at a time, which
    is the same mixture as the 2^M pattern sum.
    """
    if spec.tag != "singular":
        raise ModelError("fd_density_small_n needs a singular model spec")
    depth = v.depth if v is not None else spec.params["depth"]
    if depth > FD_MAX_DEPTH:
        raise ModelError(f"mixture too large: depth {depth} > {FD_MAX_DEPTH}")
    if grid is not None:
        step = grid.step
    upper = sum(m**-m for m in range(1, depth + 1))
    n_cells = int(math.ceil(upper / step)) + 2
    edges = step * np.arange(n_cells + 1)

    atom = 1.0
    cells = np.zeros(n_cells)
    for m in range(1, depth + 1):
        kernel = _weight_cell_masses(m, edges)
        first = int(np.flatnonzero(kernel)[0])
        conv = np.zeros(n_cells)
        conv[first:] = np.convolve(cells, kernel[first:])[: n_cells - first]
        cells = 0.5 * cells + 0.5 * conv + 0.5 * atom * kernel
        atom *= 0.5
    dens = np.maximum(cells, 0.0) / step

    if grid is None:
        pad = 4
        values = np.concatenate((np.zeros(pad), dens, np.zeros(pad)))
        return GridDensity(-pad * step, step, values), atom
    k = grid.x / step
    idx = np.round(k).astype(int)
    if np.any(np.abs(k - idx) > 1e-6):
        raise ModelError("grid nodes must be integer multiples of the step")
    inside = (idx >= 0) & (idx < n_cells)
    values = np.zeros(grid.values.size)
    values[inside] = dens[idx[inside]]
    return GridDensity(grid.lo, grid.step, values), atom


def _weight_cell_masses(m: int, edges: np.ndarray) -> np.ndarray:
    """P(V_m in [e_k, e_{k+1})) for V_m = U^m, U ~ U(1/(m+1), 1/m)."""
    lo, hi = (m + 1.0) ** -m, float(m) ** -m
    e = np.clip(edges, lo, hi)
    cdf = np.clip(m * (m + 1.0) * (e ** (1.0 / m) - 1.0 / (m + 1)), 0.0, 1.0)
    cdf[edges >= hi] = 1.0
    cdf[edges <= lo] = 0.0
    masses = np.diff(cdf)
    last = int(np.flatnonzero(masses)[-1]) + 1
    masses[last:] = 0.0
    return masses
