"""Photon-number statistics of multimode twin beams and the click-counting
detector model.

Provides the Mandel-Rice (negative-binomial) building block, the joint
twin-beam photon-number distribution, the detection matrix of an array of
on-off macro-pixels with dark counts, forward convolution of photon-number
distributions into photocount histograms, click-count post-selection, and
Monte Carlo oracles for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom as _binom_dist

from ._numerics import log_binom, log_stirling2_table, signed_logspace_sum
from .errors import (DegenerateConditionError, InstabilityError,
                     TruncationError, ValidationError)

DEFAULT_TAIL_TOL = 1e-9

# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwinBeamParams:
    """Six-parameter multimode Gaussian twin-beam model.

    ``m_*`` are effective mode counts (pair, signal-noise, idler-noise) and
    ``b_*`` the mean photons (or photon pairs) per mode.  Non-integer mode
    counts are accepted; everything goes through Gamma functions.
    """

    m_p: float
    m_s: float
    m_i: float
    b_p: float
    b_s: float
    b_i: float

    def __post_init__(self):
        vals = (self.m_p, self.m_s, self.m_i, self.b_p, self.b_s, self.b_i)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("twin-beam parameters must be finite")
        if min(self.m_p, self.m_s, self.m_i) <= 0:
            raise ValidationError("mode counts must be positive")
        if min(self.b_p, self.b_s, self.b_i) < 0:
            raise ValidationError("per-mode means must be nonnegative")

    @property
    def signal_mean(self) -> float:
        return self.m_s * self.b_s + self.m_p * self.b_p

    @property
    def idler_mean(self) -> float:
        return self.m_i * self.b_i + self.m_p * self.b_p


@dataclass(frozen=True)
class DetectorParams:
    """On-off detector array: efficiency, per-pixel dark-count probability
    per frame, and number of macro-pixels."""

    eta: float
    d: float
    n_pix: int

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ValidationError(f"eta={self.eta} outside [0, 1]")
        if not (0.0 <= self.d < 1.0):
            raise ValidationError(f"d={self.d} outside [0, 1)")
        if self.n_pix < 1:
            raise ValidationError("n_pix must be >= 1")


@dataclass
class Distribution:
    """Truncated probability vector over photon or photocount numbers.

    Optionally carries the raw frame counts it was estimated from; all math
    consumes the normalized ``probs``.  Truncated mass is only ever the
    upper tail.
    """

    probs: np.ndarray
    counts: np.ndarray | None = None
    n_frames: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise ValidationError("probs must be a non-empty 1-D array")

    @property
    def cutoff(self) -> int:
        return self.probs.size - 1

    def validate(self, tail_tol: float = DEFAULT_TAIL_TOL) -> "Distribution":
        if np.any(self.probs < 0):
            raise ValidationError("negative probability entry")
        total = float(self.probs.sum())
        if not (1.0 - tail_tol <= total <= 1.0 + 1e-12):
            raise ValidationError(f"probabilities sum to {total!r}, "
                                  f"outside [1 - {tail_tol}, 1]")
        return self

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def second_moment(self) -> float:
        return float((np.arange(self.probs.size) ** 2) @ self.probs)

    def variance(self) -> float:
        m = self.mean()
        return self.second_moment() - m * m

    def fano(self) -> float:
        return self.variance() / self.mean()


@dataclass
class JointDistribution:
    """Joint probability array over (signal, idler) photon numbers."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2:
            raise ValidationError("joint probs must be 2-D")

    @property
    def cutoffs(self) -> tuple[int, int]:
        return self.probs.shape[0] - 1, self.probs.shape[1] - 1

    def validate(self, tail_tol: float = DEFAULT_TAIL_TOL) -> "JointDistribution":
        if np.any(self.probs < 0):
            raise ValidationError("negative probability entry")
        total = float(self.probs.sum())
        if not (1.0 - tail_tol <= total <= 1.0 + 1e-12):
            raise ValidationError(f"joint mass {total!r} outside window")
        return self

    def signal_marginal(self) -> Distribution:
        return Distribution(self.probs.sum(axis=1))

    def idler_marginal(self) -> Distribution:
        return Distribution(self.probs.sum(axis=0))

    def means(self) -> tuple[float, float]:
        return (self.signal_marginal().mean(), self.idler_marginal().mean())

    def covariance(self) -> float:
        ns = np.arange(self.probs.shape[0])
        ni = np.arange(self.probs.shape[1])
        m_s, m_i = self.means()
        return float(ns @ self.probs @ ni) - m_s * m_i


@dataclass
class DetectionMatrix:
    """Probabilities T(c, n) of registering c clicks from n incident photons."""

    entries: np.ndarray
    det: DetectorParams

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2:
            raise ValidationError("detection matrix must be 2-D")

    @property
    def c_max(self) -> int:
        return self.entries.shape[0] - 1

    @property
    def n_max(self) -> int:
        return self.entries.shape[1] - 1

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)


# ---------------------------------------------------------------------------
# Mandel-Rice statistics
# ---------------------------------------------------------------------------


def mandel_rice(n: int, m: float, b: float) -> float:
    """Probability of n photons in an m-mode chaotic field with b mean
    photons per mode (negative binomial; non-integer m allowed)."""
    if m <= 0 or not math.isfinite(m):
        raise ValidationError(f"mode count m={m} must be positive")
    if b < 0 or not math.isfinite(b):
        raise ValidationError(f"per-mode mean b={b} must be nonnegative")
    if n < 0:
        raise ValidationError("n must be nonnegative")
    if b == 0.0:
        return 1.0 if n == 0 else 0.0
    return float(np.exp(gammaln(n + m) - gammaln(m) - gammaln(n + 1)
                        + n * math.log(b) - (n + m) * math.log1p(b)))


def mandel_rice_pmf(m: float, b: float, cutoff: int) -> np.ndarray:
    """Vector of mandel_rice(0..cutoff, m, b)."""
    if m <= 0 or b < 0 or not (math.isfinite(m) and math.isfinite(b)):
        raise ValidationError("invalid Mandel-Rice parameters")
    n = np.arange(cutoff + 1)
    if b == 0.0:
        out = np.zeros(cutoff + 1)
        out[0] = 1.0
        return out
    return np.exp(gammaln(n + m) - gammaln(m) - gammaln(n + 1)
                  + n * math.log(b) - (n + m) * math.log1p(b))


def _compound_pmf(components, cutoff: int) -> np.ndarray:
    """PMF of the sum of independent Mandel-Rice variables, truncated."""
    pmf = None
    for m, b in components:
        part = mandel_rice_pmf(m, b, cutoff)
        pmf = part if pmf is None else np.convolve(pmf, part)[:cutoff + 1]
    return pmf


def compound_cutoff(components, tail_tol: float) -> int:
    """Smallest cutoff whose upper-tail mass is below ``tail_tol``.

    The initial bracket comes from a Gaussian-tail estimate on the compound
    law (mean + 10 sigma); the returned cutoff is then certified by summing
    the actual pmf.
    """
    mu = sum(m * b for m, b in components)
    var = sum(m * b * (1.0 + b) for m, b in components)
    hi = int(math.ceil(mu + 10.0 * math.sqrt(var) + 40.0))
    while True:
        pmf = _compound_pmf(components, hi)
        tail = 1.0 - np.cumsum(pmf)
        ok = np.nonzero(tail < tail_tol)[0]
        if ok.size:
            return int(ok[0])
        if hi > 2_000_000:
            raise TruncationError("cannot certify a finite cutoff")
        hi *= 2


# ---------------------------------------------------------------------------
# twin-beam joint distribution
# ---------------------------------------------------------------------------


def twin_beam_joint(params: TwinBeamParams, cutoffs: tuple[int, int] | None = None,
                    tail_tol: float = DEFAULT_TAIL_TOL) -> JointDistribution:
    """Joint photon-number distribution of the three-component twin beam.

    ``probs[n_s, n_i]`` convolves the shared pair component with the two
    independent noise components.  With ``cutoffs=None`` the truncation is
    auto-sized so each marginal loses less than ``tail_tol / 2``.

    Raises:
        TruncationError: explicit cutoffs leave tail mass above ``tail_tol``.
    """
    if cutoffs is None:
        l_s = compound_cutoff([(params.m_s, params.b_s), (params.m_p, params.b_p)],
                              tail_tol / 2.0)
        l_i = compound_cutoff([(params.m_i, params.b_i), (params.m_p, params.b_p)],
                              tail_tol / 2.0)
    else:
        l_s, l_i = int(cutoffs[0]), int(cutoffs[1])
        if l_s < 0 or l_i < 0:
            raise ValidationError("cutoffs must be nonnegative")
    pp = mandel_rice_pmf(params.m_p, params.b_p, min(l_s, l_i))
    ps = mandel_rice_pmf(params.m_s, params.b_s, l_s)
    pi = mandel_rice_pmf(params.m_i, params.b_i, l_i)
    joint = np.zeros((l_s + 1, l_i + 1))
    for n in range(pp.size):
        if pp[n] == 0.0:
            continue
        joint[n:, n:] += pp[n] * np.outer(ps[:l_s + 1 - n], pi[:l_i + 1 - n])
    total = joint.sum()
    if total < 1.0 - tail_tol:
        raise TruncationError(
            f"cutoffs ({l_s}, {l_i}) keep only {total!r} of the mass")
    return JointDistribution(joint)


# ---------------------------------------------------------------------------
# detection matrix
# ---------------------------------------------------------------------------


def response_cutoff(det: DetectorParams, n: int, tol: float = 1e-12) -> int:
    """Smallest c with P(clicks > c | n photons) < tol.

    Uses the exact stochastic bound  clicks <= Bin(n, eta) + Bin(N, d)
    (registered photons plus dark counts), so it holds for every photon
    number up to ``n``.
    """
    kx = np.arange(n + 1)
    px = _binom_dist.pmf(kx, n, det.eta)
    c = int(math.ceil(n * det.eta + det.n_pix * det.d))
    while c < det.n_pix:
        tail = float(px @ _binom_dist.sf(c - kx, det.n_pix, det.d))
        if tail < tol:
            return c
        c += 1
    return det.n_pix


def _detection_entries(det: DetectorParams, c_max: int, n_max: int) -> np.ndarray:
    """Detection probabilities via the exact occupancy decomposition.

    The click count factorizes as (pixels hit by >= 1 registered photon)
    plus (dark counts on the remaining pixels):

        T(c, n) = sum_k Bin(k; n, eta) sum_h Occ(h; k, N) Bin(c - h; N - h, d)

    with Occ(h; k, N) = C(N, h) h! S2(k, h) / N^k the classical occupancy
    law.  Every term is a probability, so the evaluation is free of the
    catastrophic cancellation that the equivalent alternating-sum form of
    T(c, n) suffers at production pixel counts.
    """
    eta, d, n_pix = det.eta, det.d, det.n_pix
    k_top = n_max
    h_top = min(k_top, c_max, n_pix)

    n = np.arange(n_max + 1)[:, None]
    k = np.arange(k_top + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        lw1 = log_binom(n, k)
        lw1 = lw1 + np.where(k > 0, k * (math.log(eta) if eta > 0 else -np.inf), 0.0)
        lw1 = lw1 + np.where(n - k > 0,
                             (n - k) * (math.log1p(-eta) if eta < 1 else -np.inf),
                             0.0)
    w1 = np.where(k <= n, np.exp(lw1), 0.0)

    log_s2 = log_stirling2_table(k_top, h_top)
    k2 = np.arange(k_top + 1)[:, None]
    h = np.arange(h_top + 1)[None, :]
    lw2 = (log_binom(float(n_pix), h) + gammaln(h + 1.0) + log_s2
           - k2 * math.log(n_pix))
    w2 = np.where(h <= k2, np.exp(lw2), 0.0)
    w2[0, 0] = 1.0  # zero registered photons hit zero pixels

    h2 = np.arange(h_top + 1)[:, None]
    c = np.arange(c_max + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        lw3 = log_binom(n_pix - h2, c - h2)
        lw3 = lw3 + np.where(c - h2 > 0,
                             (c - h2) * (math.log(d) if d > 0 else -np.inf), 0.0)
        lw3 = lw3 + (n_pix - c) * math.log1p(-d)
    w3 = np.where(c >= h2, np.exp(lw3), 0.0)

    return np.ascontiguousarray((w1 @ w2 @ w3).T)


def detection_matrix(det: DetectorParams, c_max: int, n_max: int, *,
                     validate: bool = True, col_tol: float = 1e-9,
                     eps_neg: float = 1e-12) -> DetectionMatrix:
    """Detection matrix T(c, n) for c <= c_max, n <= n_max.

    With ``validate=True`` every column is extended analytically (out to a
    click count whose occupancy tail bound is < 1e-12) and its sum checked
    against 1 within ``col_tol``.

    Raises:
        InstabilityError: a column sum fails its accuracy target.
    """
    if c_max > det.n_pix:
        raise ValidationError(f"c_max={c_max} exceeds n_pix={det.n_pix}")
    if c_max < 0 or n_max < 0:
        raise ValidationError("c_max and n_max must be nonnegative")
    if validate:
        width = min(det.n_pix, max(c_max, response_cutoff(det, n_max, 1e-12)))
    else:
        width = c_max
    entries = _detection_entries(det, width, n_max)
    if validate:
        colsum = entries.sum(axis=0)
        bad = np.abs(colsum - 1.0) > col_tol
        if bad.any():
            n_bad = int(np.nonzero(bad)[0][0])
            raise InstabilityError(
                f"column {n_bad} sums to {colsum[n_bad]!r} (target 1 +- {col_tol})")
    entries = entries[:c_max + 1]
    if entries.min() < -eps_neg:
        raise InstabilityError("detection probabilities below -eps_neg")
    np.clip(entries, 0.0, None, out=entries)
    return DetectionMatrix(entries, det)


def photon_support_cutoff(det: DetectorParams, c: int, tol: float = 1e-22,
                          n_cap: int = 10_000_000) -> int:
    """Photon number beyond which P(clicks <= c | n) is certified < tol.

    Uses the union bound P(<= c distinct hits) <= C(N, c) (1 - eta(1 - c/N))^n,
    which also bounds every entry T(c', n), c' <= c, and their prefix sum.
    For a blind detector (eta = 0) there is no decay and ``n_cap`` is
    returned.
    """
    if c >= det.n_pix or det.eta == 0.0:
        return n_cap
    rate = math.log1p(-det.eta * (1.0 - c / det.n_pix))
    if rate >= 0.0:
        return n_cap
    n = (math.log(tol) - log_binom(float(det.n_pix), float(c))) / rate
    return min(n_cap, int(math.ceil(n)) + 1)


def detection_entry_alternating(det: DetectorParams, c: int, n: int, *,
                                rel_target: float = 1e-9,
                                abs_floor: float = 1e-16) -> float:
    """T(c, n) through the literal alternating inclusion-exclusion sum.

    Sign-tracked log-space terms with compensated accumulation; entries
    whose condition estimate misses ``rel_target`` are re-evaluated in
    adaptive extended precision.  Kept as an independent cross-check of the
    occupancy evaluation (and it is the form that motivates it: at
    thousands of pixels the cancellation here exceeds float64 entirely).
    """
    if c > det.n_pix or c < 0 or n < 0:
        raise ValidationError("invalid (c, n)")
    eta, d, n_pix = det.eta, det.d, det.n_pix
    l = np.arange(c + 1)
    # (1-eta)^n (1 + l/N eta/(1-eta))^n == (1 - eta (1 - l/N))^n, stable at eta=1
    base = 1.0 - eta * (1.0 - l / n_pix)
    with np.errstate(divide="ignore"):
        log_pow = np.where(n > 0, n * np.log(np.maximum(base, 0.0)), 0.0)
    log_mag = (log_binom(float(n_pix), float(c)) + log_binom(float(c), l)
               + (n_pix - l) * math.log1p(-d) + log_pow)
    signs = np.where((c - l) % 2 == 0, 1.0, -1.0)
    value, cond = signed_logspace_sum(log_mag, signs)
    err = cond * max(1.0, np.max(np.abs(log_mag[np.isfinite(log_mag)]),
                                 initial=1.0)) * 8.0 * np.finfo(float).eps
    if math.isfinite(value) and err <= max(rel_target, abs_floor / max(abs(value), 1e-300)):
        return max(value, 0.0) if value > -1e-12 else value

    from ._numerics import alternating_sum_adaptive
    from mpmath import mpf, binomial

    def term(j):
        x = 1 - mpf(eta) * (1 - mpf(j) / n_pix)
        t = (binomial(n_pix, c) * binomial(c, j) * (1 - mpf(d)) ** (n_pix - j)
             * (x ** n if n else mpf(1)))
        return -t if (c - j) % 2 else t

    value = alternating_sum_adaptive(term, c + 1, rel_target=rel_target,
                                     abs_floor=abs_floor)
    return max(value, 0.0) if value > -1e-12 else value


# ---------------------------------------------------------------------------
# forward model, post-selection, sampling
# ---------------------------------------------------------------------------


def forward_histogram(t: DetectionMatrix, p: Distribution,
                      tail_tol: float = DEFAULT_TAIL_TOL) -> Distribution:
    """Photocount distribution f(c) = sum_n T(c, n) p(n).

    Raises:
        ValidationError: matrix does not cover p's support.
        TruncationError: c_max clips the detector response beyond tail_tol.
    """
    if t.n_max < p.cutoff:
        raise ValidationError(f"matrix n_max={t.n_max} < distribution "
                              f"cutoff={p.cutoff}")
    f = t.entries[:, :p.probs.size] @ p.probs
    out = Distribution(f)
    try:
        out.validate(tail_tol)
    except ValidationError as exc:
        raise TruncationError(
            f"photocount window c_max={t.c_max} clips the response: {exc}") from exc
    return out


def conditional_idler_pnd(params: TwinBeamParams, det_s: DetectorParams,
                          c_s: int, cutoff: int | None = None,
                          tail_tol: float = DEFAULT_TAIL_TOL) -> Distribution:
    """Idler photon-number distribution after c_s signal photocounts.

    Normalizes sum_{n_s} T_s(c_s, n_s) p_twb(n_s, n_i); the normalization
    constant (the post-selection probability) lands in ``meta``.

    Raises:
        DegenerateConditionError: post-selection probability < 1e-12.
    """
    if c_s < 0:
        raise ValidationError("c_s must be nonnegative")
    if c_s > det_s.n_pix:
        raise ValidationError("c_s exceeds the signal pixel count")
    # tighten the marginal tails so the conditional bias stays ~1e-12 / P
    joint = twin_beam_joint(params, tail_tol=min(tail_tol, 1e-9) * 1e-3)
    l_s = joint.cutoffs[0]
    t_s = detection_matrix(det_s, c_s, l_s, validate=False)
    weights = t_s.entries[c_s] @ joint.probs
    postselect = float(weights.sum())
    if postselect < 1e-12:
        raise DegenerateConditionError(
            f"c_s={c_s} has post-selection probability {postselect!r}")
    probs = weights / postselect
    if cutoff is not None:
        if cutoff < 0:
            raise ValidationError("cutoff must be nonnegative")
        if cutoff < probs.size - 1:
            kept = probs[:cutoff + 1]
            if kept.sum() < 1.0 - tail_tol:
                raise TruncationError(
                    f"idler cutoff {cutoff} keeps only {kept.sum()!r}")
            probs = kept
        else:
            probs = np.pad(probs, (0, cutoff + 1 - probs.size))
    return Distribution(probs, meta={"postselect_prob": postselect, "c_s": c_s})


def sample_histogram(f: Distribution, n_frames: int, seed: int) -> Distribution:
    """Relative frequencies of a multinomial draw of ``n_frames`` frames."""
    if n_frames < 1:
        raise ValidationError("n_frames must be positive")
    rng = np.random.default_rng(seed)
    pvals = f.probs / f.probs.sum()
    counts = rng.multinomial(n_frames, pvals)
    return Distribution(counts / n_frames, counts=counts, n_frames=n_frames)


def mc_detector_oracle(det: DetectorParams, n: int, trials: int,
                       seed: int) -> Distribution:
    """Brute-force pixel-level simulation of the detector response to n photons.

    Each photon lands on a uniformly random macro-pixel and is registered
    with probability eta; every pixel can additionally fire as a dark count.
    Independent of the analytic detection-matrix evaluation by construction.
    """
    if det.n_pix > 10_000:
        raise ValidationError("pixel-level simulation capped at n_pix <= 1e4")
    if trials < 1:
        raise ValidationError("trials must be positive")
    rng = np.random.default_rng(seed)
    counts = np.zeros(det.n_pix + 1, dtype=np.int64)
    chunk = max(1, min(trials, int(4e6 // max(n, 1))))
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        if n > 0:
            pix = rng.integers(0, det.n_pix, size=(size, n))
            registered = rng.random((size, n)) < det.eta
            marked = np.where(registered, pix, -1)
            marked.sort(axis=1)
            first = marked[:, 0] >= 0
            distinct = ((marked[:, 1:] != marked[:, :-1])
                        & (marked[:, 1:] >= 0)).sum(axis=1) + first
        else:
            distinct = np.zeros(size, dtype=np.int64)
        dark = rng.binomial(det.n_pix - distinct, det.d)
        fired = distinct + dark
        counts += np.bincount(fired, minlength=det.n_pix + 1)
        done += size
    top = int(np.nonzero(counts)[0][-1])
    counts = counts[:top + 1]
    return Distribution(counts / trials, counts=counts, n_frames=trials)
