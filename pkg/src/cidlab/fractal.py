"""Covers and box-counting estimates for the singular directing measure.

Given weights V_1 > V_2 > ... the directing measure is the law of
sum_m V_m Y_m with fair coins Y_m. Fixing the first m' coins pins the point
to within the tail sum of the remaining weights, so the 2^m' subset sums of
V_1..V_m', each widened by that tail, cover the support.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .diagnostics import DiagnosticsSeries
from .measures import MixedMeasure1D
from .models import DIRECTING_ENUM_DEPTH, ModelError, WeightSequence

MAX_COVER_DEPTH = 25
MAX_EXPLICIT_DEPTH = 20
MERGE_RTOL = 1e-15
ENDPOINT_TOL = 1e-15


def tail_sum(v: WeightSequence, m: int) -> tuple[float, float]:
    """(sum_{m<j<=M} V_j, same plus the beyond-truncation bound (M+1)^-M / M)."""
    if not 0 <= m <= v.depth:
        raise ModelError(f"tail index {m} outside [0, {v.depth}]")
    empirical = float(math.fsum(v.values[m:]))
    return empirical, empirical + v.beyond_truncation()


def tail_bound(m: int) -> float:
    """(m+1)^-m / m, the sure bound on sum_{j>m} V_j."""
    return math.inf if m == 0 else (m + 1.0) ** -m / m


def ratio_curve(v: WeightSequence, seed: int = 0) -> DiagnosticsSeries:
    """r_m = V_m / tail_m for m = 1..M-1; passes when r_m > m throughout."""
    if v.depth < 3:
        raise ModelError("ratio_curve needs depth >= 3")
    ms = np.arange(1, v.depth)
    r = np.array([v.values[m - 1] / tail_sum(v, m)[1] for m in ms])
    verdict = "pass" if np.all(r > ms) else "fail"
    return DiagnosticsSeries.exact(
        "ratio_curve", ms, r, verdict=verdict, threshold_used=1.0, seed=seed
    )


@dataclass(frozen=True)
class CoverEstimate:
    depth: int
    interval_count: int
    max_interval_length: float

    @property
    def dim_estimate(self) -> float:
        eps = self.max_interval_length
        if not eps < 1:
            return math.inf
        return math.log(self.interval_count) / math.log(1.0 / eps)

    def rescaled(self, factor: float) -> "CoverEstimate":
        """The same cover after multiplying every weight by ``factor``."""
        return CoverEstimate(self.depth, self.interval_count, self.max_interval_length * factor)


def _superdecreasing(v: WeightSequence, m_prime: int) -> bool:
    vals = v.values[:m_prime]
    tails = np.concatenate((np.cumsum(vals[::-1])[::-1][1:], [0.0]))
    return bool(np.all(vals > tails))


def cover_at_depth(v: WeightSequence, m_prime: int) -> CoverEstimate:
    """Cover of the support by the 2^m' subset sums of V_1..V_m' +/- tail.

    When V_k exceeds the sum of V_{k+1}..V_m' for every k (always the case
    under the sure bounds) the subset sums sorted ascending are the binary
    counting order, and the gap between consecutive sums depends only on the
    most significant flipped coin k: g_k = V_k - sum_{k<j<=m'} V_j. The merged
    cover then follows from a divide-and-conquer over k without ever forming
    the sums themselves, which keeps gaps far below float spacing at 1 exact.
    """
    if not 0 <= m_prime <= min(v.depth, MAX_COVER_DEPTH):
        raise ModelError(f"cover depth {m_prime} outside [0, {min(v.depth, MAX_COVER_DEPTH)}]")
    t = tail_sum(v, m_prime)[1]
    if not _superdecreasing(v, m_prime):
        return _cover_from_intervals(m_prime, cover_intervals(v, m_prime))
    # (count, first run, last run, widest run, span, single run) of center ranges
    seg = (1, 0.0, 0.0, 0.0, 0.0, True)
    for k in range(m_prime, 0, -1):
        gap = v.values[k - 1] - math.fsum(v.values[k:m_prime])
        seg = _join(seg, gap, seg, t)
    count, _, _, widest, _, _ = seg
    return CoverEstimate(m_prime, count, widest + 2 * t)


def _merges(gap: float, t: float) -> bool:
    return gap <= 2 * t * (1 + MERGE_RTOL)


def _join(a, gap, b, t):
    a_n, a_first, a_last, a_max, a_span, a_one = a
    b_n, b_first, b_last, b_max, b_span, b_one = b
    span = a_span + gap + b_span
    if not _merges(gap, t):
        return (a_n + b_n, a_first, b_last, max(a_max, b_max), span, False)
    joined = a_last + gap + b_first
    first = a_span + gap + b_first if a_one else a_first
    last = a_last + gap + b_span if b_one else b_last
    return (a_n + b_n - 1, first, last, max(a_max, b_max, joined), span, a_one and b_one)


def cover_intervals(v: WeightSequence, m_prime: int) -> np.ndarray:
    """Explicit merged cover intervals, shape (N, 2), from float subset sums."""
    if not 0 <= m_prime <= min(v.depth, MAX_EXPLICIT_DEPTH):
        raise ModelError(
            f"explicit cover depth {m_prime} outside [0, {min(v.depth, MAX_EXPLICIT_DEPTH)}]"
        )
    t = tail_sum(v, m_prime)[1]
    centers = np.sort(subset_sums(v.values[:m_prime]))
    out = []
    lo, hi = centers[0] - t, centers[0] + t
    for c in centers[1:]:
        if c - t <= hi + MERGE_RTOL * max(abs(hi), 2 * t):
            hi = c + t
        else:
            out.append((lo, hi))
            lo, hi = c - t, c + t
    out.append((lo, hi))
    return np.array(out)


def _cover_from_intervals(m_prime: int, iv: np.ndarray) -> CoverEstimate:
    return CoverEstimate(m_prime, len(iv), float(np.max(iv[:, 1] - iv[:, 0])))


def subset_sums(values) -> np.ndarray:
    """All 2^k subset sums, index bit j (from the top) selecting values[j]."""
    sums = np.zeros(1)
    for w in values:
        sums = np.concatenate((sums, sums + w))
    return sums


def directing_atoms(v: WeightSequence, depth: int | None = None) -> MixedMeasure1D:
    """The truncated directing measure: 2^d atoms of mass 2^-d at the subset sums."""
    d = min(v.depth, DIRECTING_ENUM_DEPTH) if depth is None else depth
    sums = subset_sums(v.values[:d])
    meta = {"enum_depth": d, "location_error": tail_sum(v, d)[1]}
    return MixedMeasure1D(sums, np.full(sums.size, 2.0**-d), meta=meta)


def cover_mass_check(
    v: WeightSequence, m_prime: int, samples: int, seed: int = 0
) -> float:
    """Fraction of draws from the truncated directing measure inside the cover.

    Containment is a sure fact, so anything but 1.0 is a bug. With no samples
    the fraction is 1 by convention.
    """
    if samples <= 0:
        return 1.0
    iv = cover_intervals(v, m_prime)
    gen = rngmod.stream(seed, rngmod.COVER)
    hits = 0
    for start in range(0, samples, 16384):
        size = min(16384, samples - start)
        coins = gen.integers(0, 2, size=(size, v.depth), dtype=np.int8)
        x = coins @ v.values
        # closed intervals, endpoints widened by the float tolerance
        slack = ENDPOINT_TOL * np.maximum(1.0, np.abs(x))
        i = np.searchsorted(iv[:, 0], x + slack, side="right") - 1
        ok = (i >= 0) & (x <= iv[np.maximum(i, 0), 1] + slack)
        hits += int(ok.sum())
    return hits / samples


def cover_series(v: WeightSequence, depths) -> list[CoverEstimate]:
    return [cover_at_depth(v, int(d)) for d in depths]


def covers_to_csv(covers) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["depth", "N", "epsilon", "dim_estimate"])
    for c in covers:
        w.writerow([c.depth, c.interval_count, "%.17g" % c.max_interval_length,
                    "%.17g" % c.dim_estimate])
    return buf.getvalue()
