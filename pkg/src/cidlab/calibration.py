"""Pre-registered calibration constants.

None of these are theorems: the convergence results are asymptotic and
come without rates, so finite-n cut-offs are fixed from oracle runs that
do not share code with the checks they calibrate. Rerun
``python -m cidlab.calibration`` to regenerate the oracle summary.

Oracle for gauss-conj (m0=0, tau0^2=1, sigma^2=1, seeds 0..99, the
package's trajectory sampler): tv(N(m_n, 1 + tau_n^2), N(theta, 1)) by
adaptive quadrature of half the absolute density difference.

    n = 1000   median 0.0097, 95th pct 0.0230, max 0.0327
    n = 10000  median 0.0028, 95th pct 0.0074, max 0.0114
"""

import math

import numpy as np
from scipy import integrate, stats

# final-value cut-offs for tv_curve verdicts, keyed by model tag
TV_THRESHOLDS = {
    "gauss-conj": 0.02,
    "polya": 0.05,
    "gauss-cid": 0.05,
    "singular": 0.05,
}

# median over seeds of tv(alpha_1000, alpha) for gauss-conj
GAUSS_CONJ_MEDIAN_TV_1000 = 0.02

# polya: |alpha_n{x} - alpha_H{x}| at n=1e4, H=1e5
POLYA_ATOM_GAP = 0.02

# gauss-conj: sup_x |F_{alpha_n} - F_{mu_n}| at n=1e4
EMPIRICAL_GAP = 0.05

# lp_curve: admissible relative growth of the running max over the last half
LP_GROWTH_LIMIT = 0.05


def gaussian_tv_quadrature(m1, v1, m2, v2) -> float:
    """Half the L1 distance between two normal densities, by adaptive quadrature."""
    s1, s2 = math.sqrt(v1), math.sqrt(v2)
    lo = min(m1 - 12 * s1, m2 - 12 * s2)
    hi = max(m1 + 12 * s1, m2 + 12 * s2)

    def f(x):
        return abs(stats.norm.pdf(x, m1, s1) - stats.norm.pdf(x, m2, s2))

    pts = sorted({m1, m2})
    val, _ = integrate.quad(f, lo, hi, points=pts, limit=400, epsabs=1e-12)
    return 0.5 * val


def gauss_conj_oracle(seeds=range(100), ns=(1000, 10000)) -> dict:
    from .models import ModelSpec, conj_state, sample_trajectory

    out = {n: [] for n in ns}
    for seed in seeds:
        spec = ModelSpec("gauss-conj", seed=seed)
        traj = sample_trajectory(spec, max(ns))
        theta, s2 = traj.latent["theta"], spec.params["sigma_sq"]
        for n in ns:
            m, v = conj_state(spec, traj.prefix(n))
            out[n].append(gaussian_tv_quadrature(m, s2 + v, theta, s2))
    return {n: np.asarray(v) for n, v in out.items()}


def main():
    res = gauss_conj_oracle()
    for n, v in res.items():
        print(
            f"n = {n:<6d} median {np.median(v):.4f}, 95th pct "
            f"{np.quantile(v, 0.95):.4f}, max {v.max():.4f}"
        )


if __name__ == "__main__":
    main()
