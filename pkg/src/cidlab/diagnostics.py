"""Numeric checks of the convergence statements on simulated trajectories.

Every check returns a :class:`DiagnosticsSeries` (or a small report object
that can produce one) carrying a pass/fail/inconclusive verdict. Thresholds
that are not theorems are calibration constants; see
:mod:`cidlab.calibration`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np
from scipy import stats

from . import rng as rngmod
from .calibration import LP_GROWTH_LIMIT, TV_THRESHOLDS
from .measures import (
    CompactWindow,
    MixedMeasure1D,
    empirical,
    kolmogorov_distance,
    lp_density_norm,
    tv_distance,
)
from .models import (
    ModelError,
    ModelSpec,
    Trajectory,
    cid_state,
    cid_tails,
    cid_update,
    conj_state,
    conj_update,
    directing,
    gaussian_predictive_params,
    polya_counts,
    polya_predictive_exact,
    predictive,
    sample_trajectory,
)

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINTS = (1, 3, 10, 30, 100, 300, 1000, 3000, 10000)
VERDICTS = ("pass", "fail", "inconclusive")
PATTERN_CAP = 10**6


@dataclass(frozen=True, eq=False)
class DiagnosticsSeries:
    label: str
    ns: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray
    verdict: str = "inconclusive"
    threshold_used: float = 0.0
    seed: int | None = None
    notes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        ns = np.asarray(self.ns, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        stderrs = np.asarray(self.stderrs, dtype=float)
        if not (ns.shape == values.shape == stderrs.shape) or ns.ndim != 1:
            raise ValueError("ns, values and stderrs must be equal-length 1-d arrays")
        if np.any(np.diff(ns) <= 0):
            raise ValueError("n must be strictly increasing")
        if np.any(stderrs < 0):
            raise ValueError("standard errors must be nonnegative")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        object.__setattr__(self, "ns", ns)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stderrs", stderrs)

    @classmethod
    def exact(cls, label, ns, values, **kw) -> "DiagnosticsSeries":
        return cls(label, ns, values, np.zeros(len(values)), **kw)

    @property
    def points(self) -> list[tuple[int, float, float]]:
        return [(int(n), float(v), float(s)) for n, v, s in zip(self.ns, self.values, self.stderrs)]

    @property
    def final(self) -> float:
        return float(self.values[-1]) if self.values.size else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "value", "stderr"])
        for n, v, s in self.points:
            w.writerow([n, "%.17g" % v, "%.17g" % s])
        return buf.getvalue()

    def verdict_record(self) -> dict:
        return {
            "label": self.label,
            "verdict": self.verdict,
            "threshold_used": self.threshold_used,
            "seed": self.seed,
        }

    def verdict_json(self) -> str:
        return json.dumps(self.verdict_record(), sort_keys=True)


def spearman(ns, values) -> float:
    """Rank correlation of (n, value); nan for a constant series."""
    values = np.asarray(values, dtype=float)
    if values.size < 2 or np.all(values == values[0]):
        return math.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(stats.spearmanr(ns, values).statistic)


def _checkpoints(traj: Trajectory, checkpoints) -> np.ndarray:
    cps = np.asarray(sorted(int(c) for c in checkpoints), dtype=np.int64)
    if cps.size == 0 or cps[0] < 0 or cps[-1] > traj.n:
        raise ModelError(f"checkpoints must lie in [0, {traj.n}]")
    return cps


# total variation to the directing measure ------------------------------

def tv_curve(
    traj: Trajectory,
    checkpoints: Sequence[int] = DEFAULT_CHECKPOINTS,
    threshold: float | None = None,
    alpha: MixedMeasure1D | None = None,
) -> DiagnosticsSeries:
    """tv(alpha_n, alpha) along the checkpoints.

    Passes when the series trends down (Spearman rho < 0) and ends below the
    threshold.
    """
    spec = traj.spec
    cps = _checkpoints(traj, checkpoints)
    alpha = directing(spec, traj) if alpha is None else alpha
    vals = np.array([tv_distance(predictive(spec, traj.prefix(int(n))), alpha) for n in cps])
    threshold = TV_THRESHOLDS[spec.tag] if threshold is None else threshold
    rho = spearman(cps, vals)
    ok = rho < 0 and vals[-1] <= threshold
    return DiagnosticsSeries.exact(
        "tv_curve", cps, vals, verdict="pass" if ok else "fail",
        threshold_used=threshold, seed=spec.seed,
        notes={"spearman": rho, **{k: v for k, v in alpha.meta.items() if k != "var"}},
    )


# atoms and empirical measures -------------------------------------------

def atom_sup_gap(traj: Trajectory, n: int, alpha: MixedMeasure1D | None = None) -> float:
    """max over atom locations x of |alpha_n{x} - alpha{x}|."""
    spec = traj.spec
    alpha = directing(spec, traj) if alpha is None else alpha
    alpha_n = predictive(spec, traj.prefix(n))
    locs = np.concatenate((alpha.atom_locs, alpha_n.atom_locs))
    if locs.size == 0:
        log.info("atom_sup_gap: neither measure has atoms; gap is 0")
        return 0.0
    return max(abs(alpha_n.atom_at(x) - alpha.atom_at(x)) for x in np.unique(locs))


def empirical_gap(traj: Trajectory, n: int) -> float:
    """Kolmogorov distance between alpha_n and the empirical measure of x_1..x_n."""
    spec = traj.spec
    alpha_n = predictive(spec, traj.prefix(n))
    return kolmogorov_distance(alpha_n, empirical(traj.prefix(n), alpha_n.domain))


# L^p boundedness of predictive densities --------------------------------

def lp_curve(
    traj: Trajectory,
    k: CompactWindow,
    p: float,
    checkpoints: Sequence[int] = DEFAULT_CHECKPOINTS,
    growth_limit: float = LP_GROWTH_LIMIT,
) -> DiagnosticsSeries:
    """int_K f_n^p along the checkpoints.

    Passes (bounded) when the running maximum grows by less than
    ``growth_limit`` (relative) over the last half of the checkpoints.
    """
    spec = traj.spec
    cps = _checkpoints(traj, checkpoints)
    vals = np.array([
        lp_density_norm(predictive(spec, traj.prefix(int(n)), window=k), k, p) for n in cps
    ])
    growth = running_max_growth(vals)
    return DiagnosticsSeries.exact(
        "lp_curve", cps, vals, verdict="pass" if growth < growth_limit else "fail",
        threshold_used=growth_limit, seed=spec.seed,
        notes={"running_max_growth": growth, "window": [k.lo, k.hi], "p": p},
    )


def running_max_growth(values) -> float:
    """Relative growth of the running maximum across the last half of a series."""
    r = np.maximum.accumulate(np.asarray(values, dtype=float))
    mid = (r.size - 1) // 2
    if r[mid] <= 0:
        return math.inf if r[-1] > 0 else 0.0
    with np.errstate(over="ignore"):
        return float(r[-1] / r[mid] - 1.0)


# martingale identity alpha_n(B) = E[alpha_{n+1}(B) | G_n] -----------------

def martingale_residual(
    spec: ModelSpec,
    history,
    targets: Sequence,
    trials: int = 10_000,
    seed: int | None = None,
) -> DiagnosticsSeries:
    """E over X_{n+1} ~ alpha_n of alpha_{n+1}(B), minus alpha_n(B), per target.

    Targets are colour sets for polya (computed exactly by enumeration) and
    upper endpoints b of half-lines (-inf, b] for the Gaussian models
    (importance-sampled Monte Carlo with closed-form CDFs). Point ``n`` of
    the series indexes the target.
    """
    history = np.asarray(history, dtype=float)
    seed = spec.seed if seed is None else seed
    if spec.tag == "polya":
        res = [_polya_residual(spec, history, set(b)) for b in targets]
        vals, ses = np.array([float(r) for r in res]), np.zeros(len(res))
        exact_zero = all(r == 0 for r in res)
        verdict = "pass" if exact_zero or np.all(np.abs(vals) <= 1e-12) else "fail"
    elif spec.tag in ("gauss-conj", "gauss-cid"):
        gen = rngmod.stream(seed, rngmod.MARTINGALE)
        mean, var = gaussian_predictive_params(spec, history)
        sd = math.sqrt(var)
        eps = gen.standard_normal(int(trials))
        # alpha_{n+1} has mean a + gain * x and a variance free of x
        (m_lo, m_hi), (var1, _) = _next_predictive(spec, history, np.array([mean, mean + 1.0]))
        gain = m_hi - m_lo
        vals, ses = [], []
        for b in targets:
            b = float(b)
            # Importance sampling: draw X_{n+1} around its conditional mean on
            # the boundary {X_{n+2} = b}, so far-tail targets are not decided
            # by a handful of lucky draws. Unbiased for any shift.
            shift = gain * var * (b - mean) / (var1 + gain**2 * var)
            x = mean + shift + sd * eps
            weight = np.exp(-(shift * (x - mean) - 0.5 * shift**2) / var)
            mean1, v1 = _next_predictive(spec, history, x)
            now = stats.norm.cdf(b, mean, sd)
            # work on the smaller tail so saturated CDFs do not cancel
            sign, tail = (1.0, stats.norm.cdf) if now <= 0.5 else (-1.0, stats.norm.sf)
            now = tail(b, mean, sd)
            nxt = weight * tail(b, mean1, np.sqrt(v1))
            vals.append(sign * float(np.mean(nxt) - now))
            ses.append(float(np.std(nxt, ddof=1) / math.sqrt(nxt.size)))
        vals, ses = np.array(vals), np.array(ses)
        verdict = "pass" if np.all(np.abs(vals) <= 3 * ses + 1e-12) else "fail"
    else:
        raise ModelError("predictive density intractable; use fd_density_small_n")
    return DiagnosticsSeries(
        "martingale_residual", np.arange(len(vals)), vals, ses,
        verdict=verdict, threshold_used=3.0, seed=seed,
        notes={"targets": [sorted(t) if spec.tag == "polya" else float(t) for t in targets],
               "n": int(history.size)},
    )


def _polya_residual(spec: ModelSpec, history, target: set) -> Fraction:
    w = spec.params["weights"]
    c = polya_counts(spec, history)
    now = polya_predictive_exact(w, c)
    mixed = Fraction(0)
    for j, pj in enumerate(now):
        c1 = c.copy()
        c1[j] += 1
        nxt = polya_predictive_exact(w, c1)
        mixed += pj * sum(nxt[i] for i in target)
    return mixed - sum(now[i] for i in target)


def _next_predictive(spec: ModelSpec, history, x):
    """(mean, var) arrays of alpha_{n+1} after appending each entry of ``x``."""
    if spec.tag == "gauss-conj":
        m, v = conj_state(spec, history)
        m1, v1 = conj_update(spec, m, v, x)
        return m1, np.full(np.shape(x), spec.params["sigma_sq"] + v1)
    n = history.size
    t = cid_tails(spec, n + 2)
    st = cid_update(cid_state(spec, history), x, t)
    return st.mean, np.full(np.shape(x), st.var + t[n + 1])


# Doob's maximal inequality ---------------------------------------------

@dataclass(frozen=True)
class DoobReport:
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    constant: float
    argmax_n: int
    verdict: str
    series: DiagnosticsSeries


def doob_constant(p: float) -> float:
    return (p / (p - 1.0)) ** p


def doob_check(
    spec: ModelSpec,
    k: CompactWindow,
    p: float,
    n_max: int,
    trials: int,
    seed: int | None = None,
) -> DoobReport:
    """Monte Carlo check of E sup_n Z_n <= (p/(p-1))^p sup_n E Z_n, Z_n = int_K f_n^p."""
    if not p > 1:
        raise ValueError("Doob's inequality needs p > 1")
    seed = spec.seed if seed is None else seed
    seeds = rngmod.stream(seed, rngmod.DOOB).integers(
        0, rngmod.MAX_SEED, size=int(trials), dtype=np.uint64, endpoint=True
    )
    z = np.empty((int(trials), int(n_max)))
    for i, s in enumerate(seeds):
        traj = sample_trajectory(spec.with_seed(int(s)), n_max)
        z[i] = [
            lp_density_norm(predictive(spec, traj.prefix(n), window=k), k, p)
            for n in range(1, n_max + 1)
        ]
    c = doob_constant(p)
    root = math.sqrt(trials)
    sup = z.max(axis=1)
    lhs, lhs_se = float(sup.mean()), float(sup.std(ddof=1) / root) if trials > 1 else 0.0
    means = z.mean(axis=0)
    ses = z.std(axis=0, ddof=1) / root if trials > 1 else np.zeros(n_max)
    j = int(np.argmax(means))
    rhs, rhs_se = c * float(means[j]), c * float(ses[j])
    ok = lhs <= rhs + 3 * math.hypot(lhs_se, rhs_se)
    verdict = "pass" if ok else "fail"
    series = DiagnosticsSeries(
        "doob_check", np.arange(1, n_max + 1), means, ses, verdict=verdict,
        threshold_used=c, seed=seed,
        notes={"lhs": lhs, "lhs_stderr": lhs_se, "rhs": rhs, "rhs_stderr": rhs_se},
    )
    return DoobReport(lhs, lhs_se, rhs, rhs_se, c, j + 1, verdict, series)


# first identity block in the coin array --------------------------------

@dataclass(frozen=True, eq=False)
class PatternReport:
    n: int
    mode: str
    depths: np.ndarray
    verdict: str

    @property
    def terminated(self) -> np.ndarray:
        return np.isfinite(self.depths)

    @property
    def mean(self) -> float:
        d = self.depths[self.terminated]
        return float(d.mean()) if d.size else math.nan

    @property
    def stderr(self) -> float:
        d = self.depths[self.terminated]
        return float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0

    def quantiles(self, qs=(0.1, 0.5, 0.9)) -> dict[float, float]:
        d = self.depths[self.terminated]
        return {q: float(np.quantile(d, q)) for q in qs} if d.size else {}

    def to_series(self, seed: int | None = None) -> DiagnosticsSeries:
        return DiagnosticsSeries(
            "identity_pattern_search", [self.n], [self.mean], [self.stderr],
            verdict=self.verdict, threshold_used=float(PATTERN_CAP), seed=seed,
            notes={"mode": self.mode, "terminated": int(self.terminated.sum()),
                   "trials": int(self.depths.size)},
        )


def identity_pattern_search(
    spec: ModelSpec,
    n: int,
    trials: int,
    seed: int | None = None,
    mode: str = "blocks",
    cap: int = PATTERN_CAP,
) -> PatternReport:
    """Depth m + n of the first rows m+1..m+n of Y whose first n columns form I_n.

    ``mode="blocks"`` scans disjoint n-row blocks (m a multiple of n);
    ``mode="sliding"`` tries every m >= 0. Rows are streamed past the
    model's truncation depth. A trial that exceeds ``cap`` rows is recorded
    as nan and makes the verdict inconclusive.
    """
    if spec.tag != "singular":
        raise ModelError("identity_pattern_search needs a singular model spec")
    if not 1 <= n <= 3:
        raise ModelError(f"pattern size n must be in 1..3, got {n}")
    gen = rngmod.stream(spec.seed if seed is None else seed, rngmod.PATTERN)
    word = 1 << np.arange(n)  # row k of I_n, columns read as bits
    if mode == "blocks":
        depths = _scan_blocks(gen, n, word, int(trials), cap)
    elif mode == "sliding":
        depths = _scan_sliding(gen, n, word, int(trials), cap)
    else:
        raise ValueError(f"unknown scan mode {mode!r}")
    verdict = "pass" if np.all(np.isfinite(depths)) else "inconclusive"
    return PatternReport(n, mode, depths, verdict)


def _scan_blocks(gen, n, word, trials, cap):
    depths = np.full(trials, np.nan)
    active = np.arange(trials)
    chunk = max(64, 4 * 2 ** (n * n))
    done_blocks = 0
    while active.size and done_blocks * n < cap:
        rows = gen.integers(0, 2**n, size=(active.size, chunk, n))
        hit = np.all(rows == word, axis=2)
        found = hit.any(axis=1)
        first = hit.argmax(axis=1)
        depths[active[found]] = (done_blocks + first[found] + 1) * n
        active = active[~found]
        done_blocks += chunk
    depths[depths > cap] = np.nan
    return depths


def _scan_sliding(gen, n, word, trials, cap):
    depths = np.full(trials, np.nan)
    active = np.arange(trials)
    chunk = max(256, 8 * n * 2 ** (n * n))
    tail = np.empty((trials, 0), dtype=np.int64)
    base = 0  # absolute 0-based row index of column 0 of ``rows``
    while active.size and base < cap:
        rows = np.concatenate((tail, gen.integers(0, 2**n, size=(active.size, chunk))), axis=1)
        starts = rows.shape[1] - n + 1
        hit = np.ones((active.size, starts), dtype=bool)
        for o in range(n):
            hit &= rows[:, o:o + starts] == word[o]
        found = hit.any(axis=1)
        first = hit.argmax(axis=1)
        depths[active[found]] = base + first[found] + n
        keep = ~found
        active = active[keep]
        tail = rows[keep, starts:]
        base += starts
    depths[depths > cap] = np.nan
    return depths
