"""Two-sample tests and reproducible RNG plumbing for the experiment drivers."""

from __future__ import annotations

import numpy as np
from scipy import stats as sstats
from scipy.spatial.distance import cdist, pdist


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic with asymptotic p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    res = sstats.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_against_cdf(a, cdf) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against a callable CDF."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise ValueError("sample must be nonempty")
    res = sstats.ks_1samp(a, cdf)
    return float(res.statistic), float(res.pvalue)


def _energy_statistic(a: np.ndarray, b: np.ndarray) -> float:
    ab = cdist(a, b).mean()
    aa = pdist(a).mean() if len(a) > 1 else 0.0
    bb = pdist(b).mean() if len(b) > 1 else 0.0
    return 2.0 * ab - aa - bb


def energy_distance_test(
    a, b, rng: np.random.Generator, n_permutations: int = 200
) -> tuple[float, float]:
    """Permutation test of equality in law via the energy statistic.

    Works for multivariate samples; rows are observations.  The p-value is
    the permutation tail probability with the +1 continuity correction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    stat = _energy_statistic(a, b)
    pooled = np.vstack([a, b])
    na = a.shape[0]
    exceed = 0
    for _ in range(n_permutations):
        perm = rng.permutation(pooled.shape[0])
        sa = pooled[perm[:na]]
        sb = pooled[perm[na:]]
        if _energy_statistic(sa, sb) >= stat:
            exceed += 1
    p = (exceed + 1) / (n_permutations + 1)
    return float(stat), float(p)


def chi2_counts(observed, expected) -> tuple[float, float]:
    """Pearson chi-square of observed counts against expected counts.

    Expected counts are rescaled to the observed total; cells below an
    expected count of 5 are pooled into their neighbor.
    """
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    expected = expected * observed.sum() / expected.sum()
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and obs:
        obs[-1] += acc_o
        exp[-1] += acc_e
    res = sstats.chisquare(obs, exp)
    return float(res.statistic), float(res.pvalue)


def fit_loglog_slope(r, y) -> tuple[float, float]:
    """Least-squares slope and intercept of log y against log r."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(np.log(r), np.log(y), 1)
    return float(slope), float(intercept)


# -- Reproducible splittable RNG ---------------------------------------------


def root_sequence(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; streams split from it are independent."""
    return np.random.Generator(np.random.Philox(root_sequence(seed)))


def spawn_rngs(seed: int, k: int) -> list[np.random.Generator]:
    """k independent streams; stream i is identical no matter how many
    other streams exist or in which order they are consumed."""
    return [
        np.random.Generator(np.random.Philox(child))
        for child in root_sequence(seed).spawn(k)
    ]
