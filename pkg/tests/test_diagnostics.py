import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cidlab.calibration import TV_THRESHOLDS
from cidlab.diagnostics import (
    DiagnosticsSeries,
    atom_sup_gap,
    doob_check,
    doob_constant,
    empirical_gap,
    identity_pattern_search,
    lp_curve,
    martingale_residual,
    running_max_growth,
    spearman,
    tv_curve,
)
from cidlab.measures import CompactWindow, MeasureError, tv_distance
from cidlab.models import ModelError, ModelSpec, directing, predictive, sample_trajectory

from oracles import blocks_mean_depth, sliding_mean_depth

CID = ModelSpec("gauss-cid", {"rule": "power", "exponent": 2.0})
SINGULAR = ModelSpec("singular", {"depth": 40})


# series container -----------------------------------------------------------

def test_series_csv_format():
    s = DiagnosticsSeries("x", [1, 10], [0.1, 1 / 3], [0.0, 0.5], verdict="pass")
    assert s.to_csv() == "n,value,stderr\n1,0.10000000000000001,0\n10,0.33333333333333331,0.5\n"
    assert s.final == 1 / 3
    assert set(s.verdict_record()) == {"label", "verdict", "threshold_used", "seed"}


@pytest.mark.parametrize("kw", [
    dict(ns=[2, 1], values=[0, 0], stderrs=[0, 0]),
    dict(ns=[1, 2], values=[0, 0], stderrs=[0, -1]),
    dict(ns=[1, 2], values=[0], stderrs=[0]),
    dict(ns=[1], values=[0], stderrs=[0], verdict="maybe"),
])
def test_series_validation(kw):
    with pytest.raises(ValueError):
        DiagnosticsSeries("x", **kw)


def test_spearman_constant_is_nan():
    assert math.isnan(spearman([1, 2, 3], [1.0, 1.0, 1.0]))
    assert spearman([1, 2, 3], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=20))
def test_running_max_growth_nonnegative(values):
    g = running_max_growth(values)
    assert g >= 0 or math.isinf(g)


# total variation and atoms ----------------------------------------------------

def test_tv_curve_gauss_conj_passes():
    traj = sample_trajectory(ModelSpec("gauss-conj", seed=3), 10_000)
    s = tv_curve(traj)
    assert s.verdict == "pass" and s.threshold_used == TV_THRESHOLDS["gauss-conj"]
    assert s.notes["spearman"] < 0


def test_tv_curve_polya_is_half_sum_of_atom_gaps():
    spec = ModelSpec("polya", {"weights": (1, 2, 1)}, seed=8)
    traj = sample_trajectory(spec, 2000)
    alpha = directing(spec, traj)
    for n in (0, 10, 2000):
        pred = predictive(spec, traj.prefix(n))
        gaps = [abs(pred.atom_at(x) - alpha.atom_at(x)) for x in range(3)]
        assert tv_distance(pred, alpha) == pytest.approx(0.5 * sum(gaps), abs=1e-15)
        assert atom_sup_gap(traj, n, alpha) == max(gaps)


def test_tv_curve_gauss_cid_is_identically_one():
    traj = sample_trajectory(CID.with_seed(2), 1000)
    s = tv_curve(traj, (1, 10, 100, 1000))
    assert np.all(s.values == 1.0) and s.verdict == "fail"
    assert atom_sup_gap(traj, 1000) == 1.0


def test_empirical_gap_shrinks_for_gauss_conj():
    traj = sample_trajectory(ModelSpec("gauss-conj", seed=5), 10_000)
    assert empirical_gap(traj, 10_000) < empirical_gap(traj, 10) or empirical_gap(traj, 10_000) < 0.05


def test_empirical_gap_undefined_for_polya():
    traj = sample_trajectory(ModelSpec("polya"), 20)
    with pytest.raises(MeasureError, match="undefined"):
        empirical_gap(traj, 20)


def test_checkpoints_beyond_trajectory_rejected():
    traj = sample_trajectory(ModelSpec("gauss-conj"), 10)
    with pytest.raises(ModelError):
        tv_curve(traj, (1, 100))


# L^p and Doob ---------------------------------------------------------------

def test_lp_curve_bounded_for_gauss_conj_unbounded_for_cid():
    conj = sample_trajectory(ModelSpec("gauss-conj", seed=1), 10_000)
    assert lp_curve(conj, CompactWindow(-3, 3), 2.0).verdict == "pass"
    cid = sample_trajectory(CID.with_seed(1), 1000)
    v = cid.latent["v_hat"]
    s = lp_curve(cid, CompactWindow(v - 0.5, v + 0.5), 2.0, (10, 100, 1000))
    assert s.verdict == "fail" and s.values[-1] > 10 * s.values[0]


def test_doob_constant():
    assert doob_constant(2.0) == 4.0
    assert doob_constant(3.0) == pytest.approx(3.375)
    with pytest.raises(ValueError):
        doob_check(ModelSpec("gauss-conj"), CompactWindow(-1, 1), 1.0, 5, 5)


def test_doob_check_small_run_is_deterministic():
    spec = ModelSpec("gauss-conj", seed=9)
    a = doob_check(spec, CompactWindow(-3, 3), 2.0, 20, 20)
    b = doob_check(spec, CompactWindow(-3, 3), 2.0, 20, 20)
    assert a.lhs == b.lhs and a.verdict == "pass"
    assert a.lhs <= a.rhs + 3 * math.hypot(a.lhs_stderr, a.rhs_stderr)


# martingale identity -----------------------------------------------------------

def test_polya_martingale_residual_exactly_zero():
    spec = ModelSpec("polya", {"weights": (1, 2, 0.5)}, seed=4)
    traj = sample_trajectory(spec, 30)
    s = martingale_residual(spec, traj.prefix(30), [(0,), (1, 2), (0, 1, 2)])
    assert np.all(s.values == 0.0) and s.verdict == "pass"


@pytest.mark.parametrize("spec", [ModelSpec("gauss-conj", seed=6), CID.with_seed(6)])
def test_gaussian_martingale_residual_within_noise(spec):
    traj = sample_trajectory(spec, 5)
    s = martingale_residual(spec, traj.prefix(5), [0.0, 1.0], trials=4000)
    assert s.verdict == "pass"
    assert np.all(np.abs(s.values) <= 3 * s.stderrs + 1e-12)


def test_martingale_refuses_singular():
    with pytest.raises(ModelError):
        martingale_residual(SINGULAR, [0.1], [0.0])


# identity pattern search -------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2])
def test_pattern_blocks_mean_matches_chain_oracle(n):
    rep = identity_pattern_search(SINGULAR, n, 2000, seed=1)
    assert rep.verdict == "pass" and rep.terminated.all()
    assert abs(rep.mean - blocks_mean_depth(n)) <= 4 * rep.stderr
    assert np.all(rep.depths % n == 0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_pattern_sliding_mean_matches_chain_oracle(n):
    rep = identity_pattern_search(SINGULAR, n, 2000, seed=2, mode="sliding")
    assert rep.terminated.all()
    assert abs(rep.mean - sliding_mean_depth(n)) <= 4 * rep.stderr
    assert rep.depths.min() >= n


def test_pattern_search_cap_makes_verdict_inconclusive():
    rep = identity_pattern_search(SINGULAR, 3, 50, seed=3, cap=30)
    assert rep.verdict == "inconclusive" and not rep.terminated.all()


def test_pattern_search_argument_checks():
    with pytest.raises(ModelError):
        identity_pattern_search(SINGULAR, 4, 10)
    with pytest.raises(ModelError):
        identity_pattern_search(ModelSpec("polya"), 2, 10)
    with pytest.raises(ValueError):
        identity_pattern_search(SINGULAR, 2, 10, mode="diagonal")
