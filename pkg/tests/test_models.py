import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cidlab.measures import GridDensity, tv_distance
from cidlab.models import (
    ModelError,
    ModelSpec,
    Trajectory,
    WeightSequence,
    cid_covariance,
    cid_dense_conditional,
    cid_tails,
    directing,
    fd_density_small_n,
    gaussian_predictive_params,
    joint_covariance,
    joint_density,
    joint_log_density,
    polya_predictive_exact,
    predictive,
    predictive_density_ratio,
    sample_trajectory,
    weight_sequence,
)

seeds = st.integers(0, 2**32 - 1)
CID = ModelSpec("gauss-cid", {"rule": "power", "exponent": 2.0})


def _condition(cov, mean, history):
    """Conditional law of the last coordinate by a plain linear solve."""
    n = len(history)
    c12 = cov[:n, n]
    w = np.linalg.solve(cov[:n, :n], c12)
    return mean[n] + w @ (np.asarray(history) - mean[:n]), cov[n, n] - w @ c12


def _cid_cov_generative(t):
    """Cov of X_i = sum_{k<=i} Z_k + U_i with Var Z_k = t_{k-1}-t_k, Var U_i = t_i."""
    n = t.size - 1
    lower = np.tril(np.ones((n, n)))
    return lower @ np.diag(t[:-1] - t[1:]) @ lower.T + np.diag(t[1:])


# spec and trajectories ----------------------------------------------------

def test_model_spec_defaults_and_validation():
    assert ModelSpec("gauss-cid").params["ratio"] == 0.5
    assert ModelSpec("singular").params["depth"] == 10
    for tag, params in [
        ("polya", {"weights": (1, -1)}),
        ("gauss-conj", {"sigma_sq": 0}),
        ("gauss-cid", {"rule": "power", "exponent": 1.0}),
        ("gauss-cid", {"rule": "nope"}),
        ("singular", {"depth": 41}),
        ("polya", {"bogus": 1}),
    ]:
        with pytest.raises(ModelError):
            ModelSpec(tag, params)
    with pytest.raises(ModelError, match="unknown model tag"):
        ModelSpec("hmm")
    with pytest.raises(ValueError):
        ModelSpec("polya", seed=-1)


def test_spec_dict_round_trip():
    spec = ModelSpec("polya", {"weights": (2, 1, 0.5)}, seed=7)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_default_geometric_tails_match_b_n():
    assert np.array_equal(cid_tails(ModelSpec("gauss-cid"), 5), 0.5 ** np.arange(6))


@pytest.mark.parametrize("tag", ["polya", "gauss-conj", "gauss-cid", "singular"])
def test_trajectory_reproducible_and_round_trips(tag):
    spec = ModelSpec(tag, seed=11) if tag != "gauss-cid" else CID.with_seed(11)
    a, b = sample_trajectory(spec, 50), sample_trajectory(spec, 50)
    assert a.observations.tobytes() == b.observations.tobytes()
    back = Trajectory.from_json(a.to_json())
    assert back.observations.tobytes() == a.observations.tobytes()
    assert a.to_csv().splitlines()[0] == "index,x"
    other = sample_trajectory(spec.with_seed(12), 50)
    assert not np.array_equal(other.observations, a.observations)


def test_trajectory_errors():
    with pytest.raises(ModelError):
        sample_trajectory(ModelSpec("polya"), 0)
    with pytest.raises(ModelError):
        sample_trajectory(CID, 5001)
    with pytest.raises(ModelError, match="missing latent"):
        weight_sequence(sample_trajectory(ModelSpec("polya"), 3))


# polya --------------------------------------------------------------------

def _sequence_probability(weights, seq):
    """Probability of a colour sequence by stepping the urn, exactly."""
    counts = [Fraction(w) for w in weights]
    p = Fraction(1)
    for c in seq:
        p *= counts[c] / sum(counts)
        counts[c] += 1
    return p


def test_polya_predictive_against_urn_enumeration():
    weights = (1, 2, Fraction(1, 2))
    for n in range(4):
        for hist in itertools.product(range(3), repeat=n):
            denom = _sequence_probability(weights, hist)
            ratios = [_sequence_probability(weights, hist + (c,)) / denom for c in range(3)]
            counts = np.bincount(np.array(hist, dtype=int), minlength=3)
            assert polya_predictive_exact(weights, counts) == ratios
            pred = predictive(ModelSpec("polya", {"weights": (1, 2, 0.5)}), hist)
            assert pred.atom_masses.tolist() == pytest.approx([float(r) for r in ratios], abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=7), st.randoms(use_true_random=False))
def test_polya_joint_law_is_exchangeable(seq, rnd):
    perm = list(seq)
    rnd.shuffle(perm)
    assert _sequence_probability((1, 1, 3), seq) == _sequence_probability((1, 1, 3), perm)


def test_polya_proxy_carries_bias_estimate():
    spec = ModelSpec("polya", {"proxy_horizon": 5000}, seed=3)
    traj = sample_trajectory(spec, 100)
    alpha = directing(spec, traj)
    assert alpha.meta["proxy"] and alpha.meta["horizon"] == 5000
    assert 0 <= alpha.meta["bias_estimate"] < 0.1
    assert alpha.is_probability


# gaussian models ------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), max_size=12), st.floats(-2, 2), st.floats(0.1, 4), st.floats(0.1, 4))
def test_conj_predictive_matches_joint_conditioning(hist, m0, tau0_sq, sigma_sq):
    spec = ModelSpec("gauss-conj", {"m0": m0, "tau0_sq": tau0_sq, "sigma_sq": sigma_sq})
    n = len(hist)
    cov = sigma_sq * np.eye(n + 1) + tau0_sq * np.ones((n + 1, n + 1))
    m_ref, v_ref = _condition(cov, np.full(n + 1, m0), hist) if n else (m0, tau0_sq + sigma_sq)
    mean, var = gaussian_predictive_params(spec, hist)
    assert mean == pytest.approx(m_ref, abs=1e-9)
    assert var == pytest.approx(v_ref, rel=1e-9)


def test_conj_bivariate_closed_form():
    # one observation: mean tau0^2 x / (tau0^2 + sigma^2)
    spec = ModelSpec("gauss-conj", {"tau0_sq": 2.0, "sigma_sq": 0.5})
    mean, var = gaussian_predictive_params(spec, [1.5])
    assert mean == pytest.approx(2.0 * 1.5 / 2.5)
    assert var == pytest.approx(0.5 + 2.0 * 0.5 / 2.5)


@pytest.mark.parametrize("rule", [{"rule": "power", "exponent": 2.0}, {"rule": "geometric"},
                                  {"rule": "power", "exponent": 1.5}])
@settings(max_examples=20, deadline=None)
@given(hist=st.lists(st.floats(-3, 3), max_size=25))
def test_cid_filter_matches_dense_and_generative_oracle(rule, hist):
    spec = ModelSpec("gauss-cid", rule)
    n = len(hist)
    t = cid_tails(spec, n + 1)
    cov = _cid_cov_generative(t)
    assert np.allclose(cid_covariance(spec, n + 1), cov, atol=1e-13)
    m_ref, v_ref = _condition(cov, np.zeros(n + 1), hist) if n else (0.0, 1.0)
    m_f, v_f = gaussian_predictive_params(spec, hist)
    m_d, v_d = cid_dense_conditional(spec, hist)
    assert m_f == pytest.approx(m_d, abs=1e-8) and v_f == pytest.approx(v_d, rel=1e-6, abs=1e-13)
    assert m_f == pytest.approx(m_ref, abs=1e-8) and v_f == pytest.approx(v_ref, rel=1e-6, abs=1e-13)


@pytest.mark.parametrize("n", [0, 1, 5, 20])
def test_cid_is_conditionally_identically_distributed(n):
    # (X_1..X_n, X_{n+2}) has the law of (X_1..X_{n+1})
    cov = cid_covariance(CID, n + 2)
    keep = list(range(n)) + [n + 1]
    assert np.array_equal(cov[np.ix_(keep, keep)], cid_covariance(CID, n + 1))


def test_cid_predictive_variance_shrinks_to_point_mass():
    traj = sample_trajectory(CID.with_seed(4), 2000)
    _, v10 = gaussian_predictive_params(CID, traj.prefix(10))
    _, v2000 = gaussian_predictive_params(CID, traj.prefix(2000))
    assert v2000 < v10 / 100
    alpha = directing(CID, traj)
    assert alpha.atom_locs.tolist() == [traj.latent["v_hat"]] and alpha.density is None


def test_cid_geometric_rule_hits_float_resolution():
    spec = ModelSpec("gauss-cid")
    with pytest.raises(ModelError, match="below float resolution"):
        predictive(spec, np.zeros(200))


@pytest.mark.parametrize("spec", [ModelSpec("gauss-conj", {"m0": 0.4}), CID])
@settings(max_examples=15, deadline=None)
@given(hist=st.lists(st.floats(-2, 2), max_size=8))
def test_predictive_density_ratio_matches_predictive(spec, hist):
    pred = predictive(spec, hist)
    grid = pred.density
    ratio = predictive_density_ratio(spec, hist, grid)
    assert np.max(np.abs(ratio.values - grid.values)) <= 1e-8 * max(1.0, grid.values.max())


def test_joint_density_conventions():
    assert joint_log_density(CID, np.zeros(0)) == 0.0
    with pytest.raises(ModelError, match="joint density not exposed"):
        joint_density(ModelSpec("polya"), [0.0])
    with pytest.raises(ModelError):
        joint_covariance(ModelSpec("singular"), 2)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6), st.randoms(use_true_random=False))
def test_conj_joint_density_is_permutation_invariant(point, rnd):
    spec = ModelSpec("gauss-conj")
    perm = list(point)
    rnd.shuffle(perm)
    assert joint_log_density(spec, point) == pytest.approx(joint_log_density(spec, perm), abs=1e-10)


def test_cid_joint_density_is_not_exchangeable():
    a = joint_log_density(CID, [0.0, 0.0, 2.0])
    b = joint_log_density(CID, [2.0, 0.0, 0.0])
    assert abs(a - b) > 1e-3


def test_singular_predictive_refused():
    with pytest.raises(ModelError, match="intractable"):
        predictive(ModelSpec("singular"), [0.1])


# singular model --------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(seeds)
def test_sampled_weights_obey_sure_bounds(seed):
    v = weight_sequence(sample_trajectory(ModelSpec("singular", {"depth": 40}, seed), 1))
    j = np.arange(1, 41, dtype=float)
    assert np.all(((j + 1) ** -j < v.values) & (v.values < j**-j))


def test_weight_sequence_rejects_bound_violations():
    with pytest.raises(ModelError, match="violates"):
        WeightSequence([0.9, 0.3])
    with pytest.raises(ModelError):
        WeightSequence([])


def test_fd_density_depth_one_is_uniform_half():
    # X_1 = V_1 Y_1 with V_1 ~ U(1/2, 1): atom 1/2 at 0, density 1 on (1/2, 1)
    v = WeightSequence([0.75])
    dens, atom = fd_density_small_n(ModelSpec("singular"), v)
    assert atom == 0.5
    assert dens.integral() == pytest.approx(0.5, abs=1e-3)
    inside = (dens.x > 0.5 + 1e-3) & (dens.x < 1 - 1e-3)
    assert np.allclose(dens.values[inside], 1.0, atol=1e-9)


@pytest.mark.parametrize("depth", [2, 5, 10])
def test_fd_density_normalises(depth):
    dens, atom = fd_density_small_n(ModelSpec("singular", {"depth": depth}))
    assert atom == 2.0**-depth
    assert np.all(dens.values >= 0)
    assert dens.integral() + atom == pytest.approx(1.0, abs=1e-3)


def test_fd_density_against_monte_carlo_cdf():
    depth, draws = 6, 200_000
    gen = np.random.default_rng(99)
    m = np.arange(1, depth + 1, dtype=float)
    u = gen.uniform(1 / (m + 1), 1 / m, size=(draws, depth))
    x = np.sum(u**m * gen.integers(0, 2, size=(draws, depth)), axis=1)
    dens, atom = fd_density_small_n(ModelSpec("singular", {"depth": depth}))
    grid_cdf = atom + dens.cumulative()
    probe = np.linspace(0.01, 1.3, 200)
    model_cdf = np.interp(probe, dens.x, grid_cdf)
    ecdf = np.searchsorted(np.sort(x), probe, side="right") / draws
    assert np.max(np.abs(model_cdf - ecdf)) < 1.63 / math.sqrt(draws) + 2e-3


def test_fd_density_on_user_grid():
    step = 2.0**-10
    grid = GridDensity.zeros(0.0, 2.0, 2049)
    dens, atom = fd_density_small_n(ModelSpec("singular", {"depth": 3}), grid=grid)
    assert dens.same_grid(grid) and dens.step == step
    assert dens.integral() + atom == pytest.approx(1.0, abs=5e-3)
    with pytest.raises(ModelError, match="integer multiples"):
        fd_density_small_n(ModelSpec("singular", {"depth": 3}), grid=GridDensity(0.1, step, np.zeros(9)))


def test_fd_density_refuses_large_depth():
    with pytest.raises(ModelError, match="mixture too large"):
        fd_density_small_n(ModelSpec("singular", {"depth": 13}))


def test_singular_directing_is_atomic_probability():
    traj = sample_trajectory(ModelSpec("singular", {"depth": 40}, seed=5), 3)
    alpha = directing(traj.spec, traj)
    assert alpha.density is None and alpha.atom_locs.size == 2**10
    assert alpha.total_mass == pytest.approx(1.0, abs=1e-12)
    assert tv_distance(alpha, predictive(ModelSpec("gauss-conj"), [])) == 1.0
