"""Low-level numerical helpers.

Compensated (Neumaier) summation, sign-tracked log-space evaluation of
alternating series with an extended-precision fallback, and log-domain
combinatorial tables used by the detector model.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .errors import InstabilityError

_EPS = np.finfo(np.float64).eps


def neumaier_sum(values) -> float:
    """Compensated sum of a 1-D float sequence."""
    total = 0.0
    comp = 0.0
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def log_binom(n, k):
    """log of the binomial coefficient, vectorized, valid for real n."""
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def log_poch(a, k):
    """log of the Pochhammer (rising factorial) Gamma(a+k)/Gamma(a)."""
    return gammaln(a + k) - gammaln(a)


def signed_logspace_sum(log_mag, signs):
    """Sum of ``signs * exp(log_mag)`` with scaling and a condition estimate.

    Returns ``(value, condition)`` where ``condition`` is the ratio of the
    sum of magnitudes to the magnitude of the result (inf for a zero result).
    """
    log_mag = np.asarray(log_mag, dtype=float)
    signs = np.asarray(signs, dtype=float)
    finite = np.isfinite(log_mag)
    if not finite.any():
        return 0.0, 1.0
    m = log_mag[finite].max()
    mant = np.where(finite, signs * np.exp(log_mag - m), 0.0)
    total = neumaier_sum(mant)
    abs_total = neumaier_sum(np.abs(mant))
    scale = math.exp(m) if m < 700.0 else math.inf
    value = total * scale
    cond = abs_total / abs(total) if total != 0.0 else math.inf
    return value, cond


def alternating_sum_adaptive(term_fn, n_terms, *, rel_target=1e-9,
                             abs_floor=1e-16, start_dps=30, max_dps=220):
    """Evaluate a cancellation-prone finite sum in extended precision.

    ``term_fn(l)`` must evaluate the l-th term exactly under the active
    mpmath working precision.  Precision is raised until the rounding-error
    estimate (condition number times the working epsilon) meets
    ``rel_target`` relatively or ``abs_floor`` absolutely.
    """
    from mpmath import mp, mpf

    dps = start_dps
    while True:
        with mp.workdps(dps):
            total = mpf(0)
            abs_total = mpf(0)
            for l in range(n_terms):
                t = term_fn(l)
                total += t
                abs_total += abs(t)
            err = float(abs_total) * 10.0 ** (2 - dps)
            val = float(total)
        if err <= max(rel_target * abs(val), abs_floor):
            return val
        if dps >= max_dps:
            raise InstabilityError(
                f"alternating sum needs more than {max_dps} digits "
                f"(|sum|~{val:.3e}, err~{err:.3e})")
        dps = min(2 * dps, max_dps)


def log_stirling2_table(n_max: int, k_max: int) -> np.ndarray:
    """Table of log S2(n, k) (Stirling numbers of the second kind).

    Built with the recurrence S2(n,k) = k S2(n-1,k) + S2(n-1,k-1) carried
    in the log domain, so entries far beyond float range stay usable.
    """
    tab = np.full((n_max + 1, k_max + 1), -np.inf)
    tab[0, 0] = 0.0
    for n in range(1, n_max + 1):
        hi = min(n, k_max)
        if hi < 1:
            continue
        k = np.arange(1, hi + 1)
        tab[n, 1:hi + 1] = np.logaddexp(np.log(k) + tab[n - 1, 1:hi + 1],
                                        tab[n - 1, 0:hi])
    return tab
