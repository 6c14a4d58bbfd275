"""Estimators and hypothesis tests shared by decryption and detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as st


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int
    null_description: str

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0 or math.isnan(self.p_value):
            raise ValueError(f"p-value {self.p_value!r} outside [0, 1]")
        if self.n < 2:
            raise ValueError("a test needs at least two samples")

    def rejects(self, alpha: float) -> bool:
        return self.p_value < alpha


def _as_samples(samples, minimum: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < minimum:
        raise ValueError(f"need at least {minimum} samples, got {x.size}")
    return x


def _two_sided_chi2(stat: float, dof: int) -> float:
    lo = st.chi2.cdf(stat, dof)
    hi = st.chi2.sf(stat, dof)
    return float(min(1.0, 2.0 * min(lo, hi)))


def sample_variance_ci(samples, confidence: float = 0.95) -> tuple[float, float, float]:
    """Unbiased variance and its chi-square confidence interval under normality."""
    x = _as_samples(samples, 2)
    n = x.size
    v = float(np.var(x, ddof=1))
    a = 1.0 - confidence
    lo = (n - 1) * v / st.chi2.ppf(1.0 - a / 2, n - 1)
    hi = (n - 1) * v / st.chi2.ppf(a / 2, n - 1)
    return v, float(lo), float(hi)


def variance_test(samples, sigma2_0: float, alpha: float = 0.01) -> TestResult:
    """Two-sided chi-square test of ``Var = sigma2_0``.

    ``alpha`` is accepted for symmetry with the rest of the API; the decision is
    left to :meth:`TestResult.rejects`.
    """
    x = _as_samples(samples, 30)
    if sigma2_0 <= 0:
        raise ValueError("null variance must be positive")
    v = float(np.var(x, ddof=1))
    if v == 0.0:
        raise ValueError("degenerate (constant) samples")
    stat = (x.size - 1) * v / sigma2_0
    return TestResult(stat, _two_sided_chi2(stat, x.size - 1), x.size, f"Var = {sigma2_0:.6g}")


def mean_test(samples, mu_0: float = 0.0, alpha: float = 0.01, sigma: float | None = None) -> TestResult:
    """Two-sided z-test of ``mean = mu_0``; the sample deviation is used unless ``sigma`` is known."""
    x = _as_samples(samples, 30)
    s = float(np.std(x, ddof=1)) if sigma is None else float(sigma)
    if s == 0.0:
        raise ValueError("degenerate (constant) samples")
    z = (float(np.mean(x)) - mu_0) / (s / math.sqrt(x.size))
    return TestResult(z, float(2.0 * st.norm.sf(abs(z))), x.size, f"mean = {mu_0:.6g}")


def ks_two_sample(a, b, alpha: float = 0.01) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    Identical inputs give ``D = 0`` and ``p = 1``.
    """
    x = _as_samples(a, 50)
    y = _as_samples(b, 50)
    res = st.ks_2samp(x, y, method="asymp")
    return TestResult(float(res.statistic), float(min(1.0, res.pvalue)), min(x.size, y.size), "same distribution")


def chi2_from_z(z_scores, dof: int | None = None, description: str = "standard normal scores") -> TestResult:
    """Upper-tail test on ``sum z^2`` against chi-square with ``dof`` degrees of freedom."""
    z = np.asarray(z_scores, dtype=float).reshape(-1)
    dof = z.size if dof is None else dof
    stat = float(np.sum(z ** 2))
    p = 1.0 if dof <= 0 else float(st.chi2.sf(stat, dof))
    return TestResult(stat, p, max(2, z.size), description)


def combine_pvalues(p_values, description: str) -> TestResult:
    """Fisher combination of independent p-values; an empty set gives ``p = 1``."""
    p = np.clip(np.asarray(p_values, dtype=float), 1e-300, 1.0)
    if p.size == 0:
        return TestResult(0.0, 1.0, 2, description + " (no data)")
    stat, pv = st.combine_pvalues(p, method="fisher")
    return TestResult(float(stat), float(pv), max(2, p.size), description)


def binomial_acceptance(rate: float, n: int, confidence: float = 0.95) -> tuple[int, int]:
    """Range of counts compatible with ``Binomial(n, rate)`` at the given confidence."""
    lo, hi = st.binom.interval(confidence, n, rate)
    return int(lo), int(hi)
