# gauss_kernel.py
# Gaussian numerics shared by the filters: factorization, univariate normal
# tails, doubly truncated moments and mixture collapse.
# Every function is pure; inputs are never modified.

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from errors import DegenerateMass, EmptyMixture, NonPositiveVariance, NotPositiveDefinite

CHOL_RTOL = 1e-12        # pivot threshold, relative to the largest diagonal entry
EPS_MASS = 1e-300        # smallest probability mass treated as non-zero
LOG_EPS_MASS = math.log(EPS_MASS)
TAIL_SWITCH = 8.0        # |lambda| beyond which truncated moments use erfcx ratios

_LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT_HALF = math.sqrt(0.5)
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class Interval:
    """Truncation limits; the open/closed distinction has no measure and is ignored."""
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi) or not lo < hi:
            raise ValueError(f"interval needs lo < hi, got ({self.lo}, {self.hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def unbounded(self) -> bool:
        return self.lo == -math.inf and self.hi == math.inf


class WeightedGaussian(NamedTuple):
    weight: float
    mean: np.ndarray
    cov: np.ndarray


class TruncatedMoments(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    mass: float


def as_interval(iv) -> Interval:
    if isinstance(iv, Interval):
        return iv
    lo, hi = iv
    return Interval(lo, hi)


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


# ─────────────────────────────────────────────────────────────
# Factorizations
# ─────────────────────────────────────────────────────────────

def cholesky_lower(S) -> np.ndarray:
    """Lower Cholesky factor with a scale-relative positive-definiteness test.

    Raises NotPositiveDefinite when any squared pivot is at or below
    CHOL_RTOL times the largest diagonal entry of S.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {S.shape}")
    if S.shape[0] == 0:
        return S.copy()
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite("matrix has non-finite entries")

    tol = CHOL_RTOL * float(np.max(np.diag(S)))
    if tol <= 0.0:
        raise NotPositiveDefinite("largest diagonal entry is not positive")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(str(e)) from e

    pivots = np.diag(L) ** 2
    if np.any(pivots <= tol):
        raise NotPositiveDefinite(
            f"smallest pivot {pivots.min():.3e} is below tolerance {tol:.3e}")
    return L


def psd_factor(cov) -> np.ndarray:
    """Return A with A A^T == cov for a PSD cov; an all-zero cov gives zeros.

    Used for drawing noise, where Q or R may legitimately be singular.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.any(cov):
        return np.zeros_like(cov)
    cov = symmetrize(cov)
    try:
        return cholesky_lower(cov)
    except NotPositiveDefinite:
        w, v = np.linalg.eigh(cov)
        if w.min() < -1e-9 * max(w.max(), 1.0):
            raise NotPositiveDefinite("covariance has a negative eigenvalue")
        return v * np.sqrt(np.clip(w, 0.0, None))


# ─────────────────────────────────────────────────────────────
# Univariate standard normal
# ─────────────────────────────────────────────────────────────

def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) * _INV_SQRT_2PI


def std_normal_cdf(x):
    # ndtr is (1 + erf(x/sqrt 2)) / 2 without the cancellation for negative x
    return special.ndtr(x)


def _xpdf(x: float) -> float:
    """x * phi(x), with the limit 0 at infinite x."""
    if math.isinf(x):
        return 0.0
    return x * float(std_normal_pdf(x))


def log_std_interval_mass(a: float, b: float) -> float:
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    if a + b > 0:
        a, b = -b, -a
    # now the interval leans to the lower half, where Phi is small and exact
    if b <= 0.0:
        lb = float(special.log_ndtr(b))
        la = float(special.log_ndtr(a))
        if la == -math.inf:
            return lb
        return lb + math.log1p(-math.exp(la - lb)) if la < lb else -math.inf
    with np.errstate(divide="ignore"):
        return float(np.log(special.ndtr(b) - special.ndtr(a)))


def gaussian_interval_prob(mean: float, var: float, iv) -> float:
    """Probability that N(mean, var) falls in iv."""
    if not var > 0:
        raise NonPositiveVariance(f"variance must be positive, got {var}")
    iv = as_interval(iv)
    if iv.unbounded:
        return 1.0
    sd = math.sqrt(var)
    a = (iv.lo - mean) / sd
    b = (iv.hi - mean) / sd
    return min(max(math.exp(log_std_interval_mass(a, b)), 0.0), 1.0)


# ─────────────────────────────────────────────────────────────
# Multivariate density
# ─────────────────────────────────────────────────────────────

def logpdf_from_cholesky(resid: np.ndarray, L: np.ndarray) -> float:
    """log N(resid; 0, L L^T) given the lower Cholesky factor L."""
    z = solve_triangular(L, resid, lower=True, check_finite=False)
    n = resid.shape[0]
    return float(-0.5 * (z @ z) - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI)


def gaussian_logpdf(x, mean, cov) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky_lower(np.atleast_2d(cov))
    return logpdf_from_cholesky(x - mean, L)


# ─────────────────────────────────────────────────────────────
# Doubly truncated normal
# ─────────────────────────────────────────────────────────────

def _lower_tail_moments(a: float, b: float):
    """Moments of N(0,1) on [a, b] with b <= -TAIL_SWITCH.

    Works with ratios to Phi(b) built from erfcx so nothing underflows:
    phi(b)/Phi(b) = sqrt(2/pi) / erfcx(-b/sqrt 2).
    """
    erfcx_b = float(special.erfcx(-b * _SQRT_HALF))
    r_b = _SQRT_2_OVER_PI / erfcx_b
    if a == -math.inf:
        decay = 0.0     # phi(a) / phi(b)
        rho = 0.0       # Phi(a) / Phi(b)
    else:
        decay = math.exp(-0.5 * (a - b) * (a + b))
        rho = float(special.erfcx(-a * _SQRT_HALF)) / erfcx_b * decay
    if rho >= 1.0:
        return 0.0, _TINY, -math.inf

    p_b = r_b / (1.0 - rho)          # phi(b) / Z
    p_a = p_b * decay                # phi(a) / Z
    m = p_a - p_b
    a_term = 0.0 if a == -math.inf else a * p_a
    s = 1.0 + a_term - b * p_b - m * m
    log_z = float(special.log_ndtr(b)) + math.log1p(-rho)
    return m, s, log_z


def truncated_std_moments(a: float, b: float):
    """Mean m*, variance s* and log mass of N(0,1) truncated to [a, b]."""
    if a == -math.inf and b == math.inf:
        return 0.0, 1.0, 0.0

    flip = a + b > 0
    if flip:
        a, b = -b, -a

    if b <= -TAIL_SWITCH:
        m, s, log_z = _lower_tail_moments(a, b)
    else:
        log_z = log_std_interval_mass(a, b)
        if log_z == -math.inf:
            return 0.0, _TINY, log_z
        z = math.exp(log_z)
        pdf_a = 0.0 if a == -math.inf else float(std_normal_pdf(a))
        pdf_b = float(std_normal_pdf(b))
        m = (pdf_a - pdf_b) / z
        s = 1.0 + (_xpdf(a) - _xpdf(b)) / z - m * m

    s = min(max(s, _TINY), 1.0)
    return (-m if flip else m), s, log_z


def dtmnd_moments(mu, cov, iv) -> TruncatedMoments:
    """Mean and covariance of N(mu, cov) with its FIRST component truncated to iv.

    Returns (mean, cov, mass) where mass is the untruncated probability of iv.
    Raises DegenerateMass when that mass is below EPS_MASS.

    Only the first column of the Cholesky factor enters, so cov may be singular
    PSD. A first component with no variance is a point mass at mu[0].
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    iv = as_interval(iv)
    if cov.shape != (len(mu), len(mu)) or not np.all(np.isfinite(cov)):
        raise NotPositiveDefinite(f"covariance of shape {cov.shape} is not a finite {len(mu)}x{len(mu)} matrix")
    if iv.unbounded:
        return TruncatedMoments(mu.copy(), cov.copy(), 1.0)

    s11 = float(cov[0, 0])
    scale = max(float(np.max(np.diag(cov))), 0.0)
    if s11 < -1e-9 * max(scale, 1.0):
        raise NotPositiveDefinite(f"first variance {s11:.3e} is negative")
    if s11 <= CHOL_RTOL * scale:
        if iv.lo < mu[0] <= iv.hi:
            return TruncatedMoments(mu.copy(), cov.copy(), 1.0)
        raise DegenerateMass(f"point mass at {mu[0]:.6g} lies outside ({iv.lo}, {iv.hi}]")

    l11 = math.sqrt(s11)
    lam1 = (iv.lo - mu[0]) / l11
    lam2 = (iv.hi - mu[0]) / l11
    m_star, s_star, log_z = truncated_std_moments(lam1, lam2)
    if log_z < LOG_EPS_MASS:
        raise DegenerateMass(
            f"interval ({iv.lo}, {iv.hi}] has log mass {log_z:.1f} under N({mu[0]:.4g}, {l11 ** 2:.4g})")

    # Lambda diag(s*, I) Lambda^T == cov + (s* - 1) l l^T with l the first column of Lambda
    col = cov[:, 0] / l11
    mean = mu + m_star * col
    out = cov + (s_star - 1.0) * np.outer(col, col)
    return TruncatedMoments(mean, symmetrize(out), math.exp(log_z))


# ─────────────────────────────────────────────────────────────
# Mixture collapse
# ─────────────────────────────────────────────────────────────

def moment_match(components: Sequence[WeightedGaussian]):
    """Collapse a weighted Gaussian mixture to one Gaussian with the same first two moments.

    Weights need not sum to one. Raises EmptyMixture if no weight exceeds EPS_MASS.
    """
    if not components:
        raise EmptyMixture("no mixture components")
    weights = np.array([float(c.weight) for c in components])
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("mixture weights must be finite and non-negative")
    if not np.any(weights > EPS_MASS):
        raise EmptyMixture("all mixture weights are below the mass threshold")

    w = weights / weights.sum()
    means = np.stack([np.atleast_1d(np.asarray(c.mean, dtype=float)) for c in components])
    covs = np.stack([np.atleast_2d(np.asarray(c.cov, dtype=float)) for c in components])

    mean = w @ means
    d = means - mean
    cov = np.einsum("i,ijk->jk", w, covs) + np.einsum("i,ij,ik->jk", w, d, d)
    return mean, symmetrize(cov)
