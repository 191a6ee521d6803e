"""Nonclassicality witnesses and Lee nonclassicality depths.

Intensity (normally ordered) moments, moment- and probability-based
witnesses, the ordering-parameter transforms that progressively conceal
nonclassicality, and the threshold search that turns a witness into a
depth tau = (1 - s_threshold) / 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

from ._numerics import log_binom, log_poch
from .errors import (DegenerateConditionError, InstabilityError,
                     ValidationError)
from .photostats import Distribution

# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentVector:
    """Normally ordered intensity moments <W^k>, k = 0..k_max; entry 0 is 1."""

    moments: tuple

    def __post_init__(self):
        if len(self.moments) < 2:
            raise ValidationError("need at least orders 0 and 1")
        if self.moments[0] != 1.0:
            raise ValidationError("zeroth moment must be exactly 1")

    @property
    def k_max(self) -> int:
        return len(self.moments) - 1

    def __getitem__(self, k: int) -> float:
        return self.moments[k]


@dataclass(frozen=True)
class WitnessIndex:
    """Exponents (k, l, m, n) of one witness <W^k><W^l> - <W^m><W^n>.

    Homogeneity k + l = m + n makes the witness scale-covariant; the two
    unordered pairs must differ or the witness is identically zero.
    """

    k: int
    l: int
    m: int
    n: int

    def __post_init__(self):
        idx = (self.k, self.l, self.m, self.n)
        if any(int(i) != i or i < 0 for i in idx):
            raise ValidationError("indices must be nonnegative integers")
        if self.k + self.l != self.m + self.n:
            raise ValidationError("witness indices must satisfy k + l = m + n")
        if sorted((self.k, self.l)) == sorted((self.m, self.n)):
            raise ValidationError("trivial witness: equal unordered pairs")

    @property
    def max_index(self) -> int:
        return max(self.k, self.l, self.m, self.n)

    def label(self) -> str:
        return f"L[{self.k}{self.l}|{self.m}{self.n}]"


@dataclass(frozen=True)
class OrderingParams:
    """Field-operator ordering parameter and the mode count entering the
    ordering transforms."""

    s: float
    m_eff: float

    def __post_init__(self):
        if not (-1.0 <= self.s <= 1.0):
            raise ValidationError(f"s={self.s} outside [-1, 1]")
        if self.m_eff <= 0 or not math.isfinite(self.m_eff):
            raise ValidationError("m_eff must be a positive real")


@dataclass
class NcdResult:
    """Per-witness depths plus their maximum."""

    per_witness: list  # of (WitnessIndex, tau, s_threshold)
    tau_max: float
    best_witness: WitnessIndex | None
    skipped: list  # of (WitnessIndex, str)


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _stirling_row(k: int) -> tuple:
    if k == 0:
        return (1,)
    prev = _stirling_row(k - 1)
    row = [0] * (k + 1)
    for kp in range(k + 1):
        left = prev[kp - 1] if 1 <= kp <= k else 0
        right = prev[kp] if kp <= k - 1 else 0
        row[kp] = left - (k - 1) * right
    return tuple(row)


def stirling_first_kind(k: int, k_prime: int, max_k: int = 64) -> int:
    """Signed Stirling number of the first kind, exact integer arithmetic.

    Computed from s(k+1, k') = s(k, k'-1) - k s(k, k').  ``max_k`` only
    guards against accidental huge requests; arbitrary-precision integers
    make larger orders legitimate when asked for explicitly.
    """
    if not (0 <= k_prime <= k):
        raise ValidationError("need 0 <= k' <= k")
    if k > max_k:
        raise ValidationError(f"order {k} beyond configured limit {max_k}")
    return _stirling_row(k)[k_prime]


def _probs(p) -> np.ndarray:
    if isinstance(p, Distribution):
        return p.probs
    return np.asarray(p, dtype=float)


def factorial_moments(p, k_max: int, *, tail_warn: float = 1e-9,
                      crosscheck: bool = False) -> MomentVector:
    """Normally ordered moments <W^k> = sum_n n(n-1)...(n-k+1) p(n).

    With ``crosscheck=True`` the result is verified against the independent
    route through raw moments and Stirling numbers of the first kind.

    Warns when the top bins dominate a moment (truncated support is then
    suspect for that order).
    """
    if k_max < 1:
        raise ValidationError("k_max must be >= 1")
    probs = _probs(p)
    n = np.arange(probs.size, dtype=float)
    out = [1.0]
    weights = probs.astype(float).copy()
    for k in range(1, k_max + 1):
        weights = weights * (n - (k - 1))
        mk = float(weights.sum())
        out.append(mk)
        top = float(np.abs(weights[-2:]).sum())
        if mk > 0 and top > tail_warn * mk and probs.size > 4:
            warnings.warn(
                f"order-{k} moment takes {top / mk:.2e} of its value from "
                "the top bins; increase the cutoff", stacklevel=2)
    mv = MomentVector(tuple(out))
    if crosscheck:
        raw = [float((n ** j) @ probs) for j in range(k_max + 1)]
        raw[0] = 1.0
        for k in range(1, k_max + 1):
            alt = sum(stirling_first_kind(k, j) * raw[j] for j in range(k + 1))
            if abs(alt - mv[k]) > 1e-10 * max(1.0, abs(mv[k])):
                raise InstabilityError(
                    f"moment cross-check failed at order {k}: "
                    f"{mv[k]!r} vs {alt!r}")
    return mv


def modified_moments(p, k_max: int) -> MomentVector:
    """Moments n! p(n) / p(0) of the vacuum-normalized quasi-distribution.

    Raises:
        DegenerateConditionError: p(0) = 0 makes the mapping undefined.
    """
    probs = _probs(p)
    if probs[0] <= 0.0:
        raise DegenerateConditionError("p(0) = 0: probability-witness "
                                       "moment mapping undefined")
    if k_max >= 171:
        raise ValidationError("factorials overflow float64 beyond 170")
    vals = np.zeros(k_max + 1)
    for k in range(min(k_max, probs.size - 1) + 1):
        vals[k] = float(math.factorial(k)) * probs[k] / probs[0]
    vals[0] = 1.0
    return MomentVector(tuple(vals))


# ---------------------------------------------------------------------------
# witnesses
# ---------------------------------------------------------------------------


def witness_set(max_order: int) -> list[WitnessIndex]:
    """All inequivalent witnesses with indices up to ``max_order``.

    Within each pair the indices are sorted ascending, the pair holding the
    larger maximum supplies the positive product (that orientation is the
    one that is nonnegative for classical fields), and each unordered pair
    of pairs appears once.
    """
    if max_order < 2:
        raise ValidationError("max_order must be >= 2")
    out = []
    for total in range(2, 2 * max_order + 1):
        pairs = [(a, total - a) for a in range(total // 2 + 1)
                 if total - a <= max_order]
        pairs.sort(key=lambda t: t[1], reverse=True)
        for i in range(len(pairs)):
            for j in range(i + 1, len(pairs)):
                out.append(WitnessIndex(k=pairs[i][0], l=pairs[i][1],
                                        m=pairs[j][0], n=pairs[j][1]))
    return out


def intensity_witness(mv: MomentVector, idx: WitnessIndex) -> float:
    """<W^k><W^l> - <W^m><W^n>; negative values certify nonclassicality."""
    if idx.max_index > mv.k_max:
        raise ValidationError("witness order exceeds available moments")
    return mv[idx.k] * mv[idx.l] - mv[idx.m] * mv[idx.n]


_PROB_FLOOR = 1e-12  # probabilities below this are floating-point dust


def probability_witness(p, idx: WitnessIndex) -> float:
    """k! l! p(k) p(l) - m! n! p(m) p(n) on a (possibly transformed) vector."""
    probs = _probs(p)
    if idx.max_index > probs.size - 1:
        raise ValidationError("witness index outside the support range")

    def q(i: int) -> float:
        v = probs[i]
        return v if abs(v) >= _PROB_FLOOR else 0.0

    return (math.factorial(idx.k) * math.factorial(idx.l) * q(idx.k) * q(idx.l)
            - math.factorial(idx.m) * math.factorial(idx.n) * q(idx.m) * q(idx.n))


# ---------------------------------------------------------------------------
# ordering transforms
# ---------------------------------------------------------------------------


def s_ordered_moments(mv: MomentVector, ord: OrderingParams) -> MomentVector:
    """Intensity moments at ordering parameter s.

    <W^k>_s = sum_{k'=0}^{k} C(k,k') Gamma(k+M)/Gamma(k'+M) ((1-s)/2)^(k-k') <W^k'>
    including the constant k' = 0 term, which makes s = 1 the exact identity.
    """
    t = (1.0 - ord.s) / 2.0
    out = [1.0]
    for k in range(1, mv.k_max + 1):
        if t == 0.0:
            out.append(mv[k])
            continue
        acc = 0.0
        for kp in range(k + 1):
            acc += (math.comb(k, kp)
                    * math.exp(log_poch(kp + ord.m_eff, k - kp))
                    * t ** (k - kp) * mv[kp])
        out.append(acc)
    return MomentVector(tuple(out))


def _s_pnd_rows(probs: np.ndarray, s: float, m_eff: float,
                n_rows: int) -> np.ndarray:
    """First ``n_rows`` entries of the s-ordered counterpart of ``probs``.

    Uses the hypergeometric rewrite of the ordering kernel,

      K(n, n') = (2/(3-s))^M C^(n+n') C(n+M-1, n)
                 sum_l C(n',l) n!/(n-l)! / poch(M,l) y^l,

    C = (1-s)/(3-s), y = 4/(1-s)^2, whose terms are all positive: it is
    mathematically identical to the alternating-sum form but immune to its
    cancellation, and regular on the whole interval -1 <= s < 1.
    """
    if s >= 1.0:
        raise ValidationError("ordering kernel is singular at s = 1")
    if s < -1.0:
        raise ValidationError("s below -1")
    n_in = probs.size
    c = (1.0 - s) / (3.0 - s)
    log_c = math.log(c)
    log_y = math.log(4.0) - 2.0 * math.log1p(-s)
    log_a = m_eff * (math.log(2.0) - math.log(3.0 - s))

    out = np.empty(n_rows)
    npr = np.arange(n_in)[:, None, None]               # (N', 1, 1)
    block = max(1, int(4e6) // max(1, n_in * n_in))
    for start in range(0, n_rows, block):
        stop = min(n_rows, start + block)
        n = np.arange(start, stop)[None, :, None]      # (1, R, 1)
        l_top = min(n_in - 1, stop - 1)
        l = np.arange(l_top + 1)[None, None, :]        # (1, 1, L)
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = (log_binom(npr, l) + gammaln(n + 1.0) - gammaln(n - l + 1.0)
                  - log_poch(m_eff, l) + l * log_y)
        lt = np.where(l <= np.minimum(n, npr), lt, -np.inf)
        inner = logsumexp(lt, axis=2)                  # (N', R)
        log_k = (log_a + (n[:, :, 0] + npr[:, :, 0]) * log_c
                 + log_binom(n[:, :, 0] + m_eff - 1.0, n[:, :, 0]) + inner)
        out[start:stop] = probs @ np.exp(log_k)
    return out


def s_ordered_pnd(p, ord: OrderingParams, *, sum_tol: float = 1e-6,
                  max_cutoff: int = 100_000) -> np.ndarray:
    """s-ordered counterpart of a photon-number distribution.

    The output length is extended until the retained mass is within
    ``sum_tol`` of 1.  Entries are quasi-probabilities; treat them as a
    signed vector (for s in [-1, 1) this kernel is in fact nonnegative).

    Raises:
        ValidationError: s = 1 (singular kernel).
        InstabilityError: the mass criterion cannot be met below
            ``max_cutoff`` output bins.
    """
    probs = _probs(p)
    n_rows = max(2 * probs.size, probs.size + 30)
    while True:
        out = _s_pnd_rows(probs, ord.s, ord.m_eff, n_rows)
        if abs(out.sum() - 1.0) <= 0.5 * sum_tol:
            return out
        if n_rows >= max_cutoff:
            raise InstabilityError(
                f"s-ordered distribution mass {out.sum()!r} with "
                f"{n_rows} bins (s={ord.s}, M={ord.m_eff})")
        n_rows = min(max_cutoff, 2 * n_rows)


def effective_mode_count(source, fallback: float) -> float:
    """Mode count <W>^2 / (<W^2> - <W>^2) when positive, else ``fallback``."""
    mv = source if isinstance(source, MomentVector) else \
        factorial_moments(source, 2)
    den = mv[2] - mv[1] ** 2
    if den > 0 and mv[1] > 0:
        return mv[1] ** 2 / den
    return fallback


# ---------------------------------------------------------------------------
# Lee depth search
# ---------------------------------------------------------------------------

_GRID_POINTS = 201
_BISECT_TOL = 1e-6
_NEG_TOL = 1e-12


class _TransformCache:
    """Shares s-transformed rows between witnesses during a depth scan."""

    def __init__(self, probs: np.ndarray, m_eff: float, n_rows: int):
        self.probs = probs
        self.m_eff = m_eff
        self.n_rows = n_rows
        self._store: dict[float, np.ndarray] = {}

    def __call__(self, s: float) -> np.ndarray:
        if s == 1.0:
            out = np.zeros(self.n_rows)
            m = min(self.n_rows, self.probs.size)
            out[:m] = self.probs[:m]
            return out
        hit = self._store.get(s)
        if hit is None:
            hit = _s_pnd_rows(self.probs, s, self.m_eff, self.n_rows)
            self._store[s] = hit
        return hit


def _witness_curve(source, idx: WitnessIndex, m_eff: float, kind: str,
                   cache: _TransformCache | None = None):
    if kind == "intensity":
        if isinstance(source, MomentVector):
            mv = source
        else:
            mv = factorial_moments(source, max(2, idx.max_index))
        if idx.max_index > mv.k_max:
            raise ValidationError("witness order exceeds available moments")

        def curve(s: float) -> float:
            return intensity_witness(
                s_ordered_moments(mv, OrderingParams(s=s, m_eff=m_eff)), idx)

        def scale() -> float:
            return abs(mv[idx.k] * mv[idx.l]) + abs(mv[idx.m] * mv[idx.n])

        return curve, scale
    if kind == "probability":
        if isinstance(source, MomentVector):
            raise ValidationError("probability witnesses need a distribution")
        probs = _probs(source)
        local = cache or _TransformCache(probs, m_eff, idx.max_index + 1)

        def curve(s: float) -> float:
            return probability_witness(local(s), idx)

        def scale() -> float:
            a = math.factorial(idx.k) * math.factorial(idx.l) \
                * probs[idx.k] * probs[idx.l]
            b = math.factorial(idx.m) * math.factorial(idx.n) \
                * probs[idx.m] * probs[idx.n]
            return abs(a) + abs(b)

        return curve, scale
    raise ValidationError(f"unknown witness kind {kind!r}")


def ncd_for_witness(source, idx: WitnessIndex, m_eff: float, kind: str,
                    *, _cache: _TransformCache | None = None) -> tuple[float, float]:
    """Lee depth (tau, s_threshold) of one witness.

    The witness is evaluated at s = 1 first; nonnegative means tau = 0.  A
    uniform 201-point scan down from s = 1 brackets the first sign change,
    which is bisected to |delta s| < 1e-6; a witness negative all the way
    to s = -1 has tau = 1.
    """
    curve, scale = _witness_curve(source, idx, m_eff, kind, _cache)
    w1 = curve(1.0)
    if w1 >= -_NEG_TOL * max(1.0, scale()):
        return 0.0, 1.0
    grid = np.linspace(1.0, -1.0, _GRID_POINTS)
    s_neg = 1.0
    bracket = None
    for s in grid[1:]:
        w = curve(float(s))
        if w >= 0.0:
            bracket = (s_neg, float(s))
            break
        s_neg = float(s)
    if bracket is None:
        return 1.0, -1.0
    a, b = bracket  # witness < 0 at a, >= 0 at b, with b < a
    while a - b > _BISECT_TOL:
        mid = 0.5 * (a + b)
        if curve(mid) < 0.0:
            a = mid
        else:
            b = mid
    s_th = 0.5 * (a + b)
    return (1.0 - s_th) / 2.0, s_th


def ncd_max(source, witness_list, m_eff: float, kind: str) -> NcdResult:
    """Depths of every witness in the list and their maximum.

    Failed witnesses are skipped and reported; the call only raises when
    every witness fails.
    """
    if not witness_list:
        raise ValidationError("witness list is empty")
    cache = None
    if kind == "probability" and not isinstance(source, MomentVector):
        rows = max(w.max_index for w in witness_list) + 1
        cache = _TransformCache(_probs(source), m_eff, rows)
    per, skipped = [], []
    for idx in witness_list:
        try:
            tau, s_th = ncd_for_witness(source, idx, m_eff, kind, _cache=cache)
            per.append((idx, tau, s_th))
        except (InstabilityError, ValidationError, DegenerateConditionError) as exc:
            skipped.append((idx, str(exc)))
    if not per:
        raise InstabilityError(f"all witnesses failed: {skipped!r}")
    best = max(per, key=lambda row: row[1])
    return NcdResult(per_witness=per, tau_max=best[1],
                     best_witness=best[0] if best[1] > 0 else None,
                     skipped=skipped)
