"""Recovery of photon-number distributions from photocount histograms.

Implements the multiplicative EM/MLE inversion of the detector convolution
and a derivative-free maximum-likelihood fit of the six-parameter Gaussian
twin-beam model to joint photocount histograms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ValidationError
from .photostats import (DetectionMatrix, DetectorParams, Distribution,
                         JointDistribution, TwinBeamParams, twin_beam_joint)

# ---------------------------------------------------------------------------
# EM deconvolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmConfig:
    """Stopping rule and initialization for the EM iteration.

    ``init`` is "uniform", "histogram" (copy of the data, floored so no
    component starts at zero), or a custom strictly positive Distribution.
    """

    max_iter: int = 100_000
    rel_tol: float = 1e-10
    init: object = "uniform"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.rel_tol <= 0:
            raise ValidationError("rel_tol must be positive")


@dataclass
class EmResult:
    distribution: Distribution
    converged: bool
    n_iter: int
    rel_change: float
    log_likelihood: float


def log_likelihood(f: Distribution, t: DetectionMatrix, p: Distribution) -> float:
    """sum_c f(c) log(sum_n T(c,n) p(n)), with 0 log 0 = 0.

    Returns -inf when some observed bin has zero model probability.
    """
    if t.n_max < p.cutoff or t.c_max < f.cutoff:
        raise ValidationError("detection matrix does not cover the data")
    model = t.entries[:f.probs.size, :p.probs.size] @ p.probs
    mask = f.probs > 0
    if np.any(model[mask] <= 0.0):
        return -math.inf
    return float(f.probs[mask] @ np.log(model[mask]))


def _initial_iterate(cfg: EmConfig, f: Distribution, n_bins: int) -> np.ndarray:
    if isinstance(cfg.init, Distribution):
        p0 = np.array(cfg.init.probs, dtype=float)
        if p0.size != n_bins:
            raise ValidationError("custom init has the wrong length")
        if np.any(p0 <= 0):
            raise ValidationError("custom init must be strictly positive")
    elif cfg.init == "uniform":
        p0 = np.full(n_bins, 1.0 / n_bins)
    elif cfg.init == "histogram":
        p0 = np.zeros(n_bins)
        m = min(n_bins, f.probs.size)
        p0[:m] = f.probs[:m]
        p0 = np.maximum(p0, 1e-12)  # EM cannot revive exact zeros
    else:
        raise ValidationError(f"unknown init {cfg.init!r}")
    return p0 / p0.sum()


def em_iterate(f: Distribution, t: DetectionMatrix,
               cfg: EmConfig = EmConfig(), *, debug: bool = False) -> EmResult:
    """Iterate p <- p * T^T (f / T p) to the maximum-likelihood distribution.

    Requires a column-normalized matrix (each column must capture the full
    detector response); columns are renormalized exactly before iterating.
    Stops when the largest relative per-element change (on elements above
    1e-15) drops below ``cfg.rel_tol``.  With ``debug=True`` nonnegativity,
    normalization, and monotone log-likelihood are asserted every step.
    """
    f.validate()
    if t.c_max < f.cutoff:
        raise ValidationError("histogram extends beyond the matrix rows")
    colsum = t.column_sums()
    if np.max(np.abs(colsum - 1.0)) > 1e-6:
        raise ValidationError(
            "matrix columns are not normalized; enlarge c_max so every "
            "column captures the detector response")
    entries = t.entries / colsum
    fv = f.probs
    obs = entries[:fv.size]

    p = _initial_iterate(cfg, f, t.n_max + 1)
    ll_prev = -math.inf
    rel = math.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        model = obs @ p
        ratio = np.divide(fv, model, out=np.zeros_like(fv), where=fv > 0)
        p_new = p * (ratio @ obs)
        total = p_new.sum()
        if total > 0:
            p_new /= total
        active = p > 1e-15
        rel = float(np.max(np.abs(p_new[active] - p[active]) / p[active],
                           initial=0.0))
        if debug:
            assert np.all(p_new >= 0.0)
            assert abs(p_new.sum() - 1.0) < 1e-9
            ll_now = _ll(fv, obs, p_new)
            assert ll_now >= ll_prev - 1e-12, (ll_now, ll_prev)
            ll_prev = ll_now
        p = p_new
        if rel < cfg.rel_tol:
            break
    dist = Distribution(p).validate()
    return EmResult(distribution=dist, converged=rel < cfg.rel_tol,
                    n_iter=it, rel_change=rel,
                    log_likelihood=_ll(fv, obs, p))


def _ll(fv: np.ndarray, obs: np.ndarray, p: np.ndarray) -> float:
    model = obs @ p
    mask = fv > 0
    if np.any(model[mask] <= 0):
        return -math.inf
    return float(fv[mask] @ np.log(model[mask]))


# ---------------------------------------------------------------------------
# twin-beam model fit
# ---------------------------------------------------------------------------

_M_BOUNDS = (1e-3, 1e4)
_B_BOUNDS = (0.0, 1e3)


@dataclass(frozen=True)
class FitConfig:
    """Settings for the simplex likelihood fit.

    ``pinned_means`` fixes the signal/idler beam means: the noise means are
    eliminated through them, leaving (m_p, b_p, m_s, m_i) free.  Restarts
    draw extra starting points inside the bounds from per-restart seeds.
    """

    restarts: int = 10
    seed: int = 0
    max_iter: int = 4000
    xatol: float = 1e-6
    fatol: float = 1e-10
    pinned_means: tuple[float, float] | None = None
    photon_cutoffs: tuple[int, int] | None = None


@dataclass
class FitResult:
    params: TwinBeamParams
    objective_value: float
    converged: bool
    n_evals: int
    message: str = ""


def _model_histogram(params: TwinBeamParams, t_s: DetectionMatrix,
                     t_i: DetectionMatrix, cutoffs: tuple[int, int]) -> np.ndarray:
    joint = twin_beam_joint(params, cutoffs=cutoffs, tail_tol=1.0)
    pj = joint.probs
    model = t_s.entries[:, :pj.shape[0]] @ pj @ t_i.entries[:, :pj.shape[1]].T
    total = model.sum()
    return model / total if total > 0 else model


def _default_cutoffs(h: JointDistribution, det_s: DetectorParams,
                     det_i: DetectorParams) -> tuple[int, int]:
    # invert measured click means through the linear response to size the
    # photon window generously
    mean_cs, mean_ci = h.means()
    mean_ns = max(1.0, (mean_cs - det_s.n_pix * det_s.d) / max(det_s.eta, 1e-6))
    mean_ni = max(1.0, (mean_ci - det_i.n_pix * det_i.d) / max(det_i.eta, 1e-6))
    l_s = int(math.ceil(mean_ns + 12.0 * math.sqrt(mean_ns + 1.0) + 30.0))
    l_i = int(math.ceil(mean_ni + 12.0 * math.sqrt(mean_ni + 1.0) + 30.0))
    return l_s, l_i


def fit_twin_beam(h: JointDistribution, det_s: DetectorParams,
                  det_i: DetectorParams, init: TwinBeamParams,
                  cfg: FitConfig = FitConfig()) -> FitResult:
    """Maximum-likelihood twin-beam parameters for a joint click histogram.

    Minimizes the multinomial negative log-likelihood of ``h`` under the
    model forward-mapped through both detection matrices, by Nelder-Mead
    simplex search with random restarts inside the bounds.

    Raises:
        ValidationError: ``init`` outside the admissible box.
    """
    from .photostats import detection_matrix, response_cutoff

    h.validate(tail_tol=1e-6)
    for m in (init.m_p, init.m_s, init.m_i):
        if not (_M_BOUNDS[0] <= m <= _M_BOUNDS[1]):
            raise ValidationError(f"init mode count {m} outside {_M_BOUNDS}")
    for b in (init.b_p, init.b_s, init.b_i):
        if not (_B_BOUNDS[0] <= b <= _B_BOUNDS[1]):
            raise ValidationError(f"init per-mode mean {b} outside {_B_BOUNDS}")

    cutoffs = cfg.photon_cutoffs or _default_cutoffs(h, det_s, det_i)
    c_s_max, c_i_max = h.cutoffs
    t_s = detection_matrix(det_s, min(det_s.n_pix, max(
        c_s_max, response_cutoff(det_s, cutoffs[0], 1e-10))), cutoffs[0])
    t_i = detection_matrix(det_i, min(det_i.n_pix, max(
        c_i_max, response_cutoff(det_i, cutoffs[1], 1e-10))), cutoffs[1])
    hw = h.probs
    n_evals = 0

    pinned = cfg.pinned_means

    def unpack(x) -> TwinBeamParams | None:
        if pinned is None:
            m_p, b_p, m_s, b_s, m_i, b_i = x
        else:
            m_p, b_p, m_s, m_i = x
            b_s = (pinned[0] - m_p * b_p) / m_s
            b_i = (pinned[1] - m_p * b_p) / m_i
            if b_s < 0 or b_i < 0 or b_s > _B_BOUNDS[1] or b_i > _B_BOUNDS[1]:
                return None
        try:
            return TwinBeamParams(m_p=m_p, m_s=m_s, m_i=m_i,
                                  b_p=b_p, b_s=b_s, b_i=b_i)
        except ValidationError:
            return None

    def objective(x) -> float:
        nonlocal n_evals
        n_evals += 1
        params = unpack(x)
        if params is None:
            return 1e15
        model = _model_histogram(params, t_s, t_i,
                                 cutoffs)[:c_s_max + 1, :c_i_max + 1]
        with np.errstate(divide="ignore"):
            logm = np.log(np.maximum(model, 1e-300))
        return float(-(hw * logm).sum())

    if pinned is None:
        x0 = np.array([init.m_p, init.b_p, init.m_s, init.b_s,
                       init.m_i, init.b_i])
        bounds = [_M_BOUNDS, _B_BOUNDS, _M_BOUNDS, _B_BOUNDS,
                  _M_BOUNDS, _B_BOUNDS]
    else:
        x0 = np.array([init.m_p, init.b_p, init.m_s, init.m_i])
        bounds = [_M_BOUNDS, _B_BOUNDS, _M_BOUNDS, _M_BOUNDS]

    starts = [x0]
    rng_streams = np.random.SeedSequence(cfg.seed).spawn(max(cfg.restarts - 1, 0))
    for ss in rng_streams:
        rng = np.random.default_rng(ss)
        x = x0.copy()
        for i, (lo, hi) in enumerate(bounds):
            if x0[i] > 0 and lo > 0:
                x[i] = math.exp(rng.uniform(math.log(max(lo, x0[i] / 10.0)),
                                            math.log(min(hi, x0[i] * 10.0))))
            else:
                x[i] = rng.uniform(lo, min(hi, max(1.0, x0[i] * 10.0)))
        starts.append(x)

    best = None
    for x_start in starts:
        res = minimize(objective, x_start, method="Nelder-Mead", bounds=bounds,
                       options={"maxiter": cfg.max_iter, "xatol": cfg.xatol,
                                "fatol": cfg.fatol, "adaptive": True})
        if best is None or res.fun < best.fun:
            best = res
    params = unpack(best.x)
    message = ""
    if params is not None and max(params.b_p, params.b_s, params.b_i) < 1e-3:
        message = "degenerate: per-mode means at the zero bound"
    if params is None:  # should not happen: the first start is feasible
        params = init
        message = "fit failed to produce feasible parameters"
    return FitResult(params=params, objective_value=float(best.fun),
                     converged=bool(best.success), n_evals=n_evals,
                     message=message)
