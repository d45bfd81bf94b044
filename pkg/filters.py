# filters.py
# Filtering recursions for PWASS models.
#   pakf  - per-region Kalman updates, truncated moments, one-Gaussian collapse
#   ekf   - the same Kalman update using only the region of the current mean
#   pf    - bootstrap particle filter, the asymptotically exact reference
# One step consumes u_t and y_{t+1} and moves the belief from t|t to t+1|t+1.

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from errors import AllRegionsDegenerate, AllWeightsZero, DegenerateMass, DimensionMismatch
from gauss_kernel import (
    WeightedGaussian, cholesky_lower, dtmnd_moments, logpdf_from_cholesky,
    moment_match, psd_factor, symmetrize,
)
from pwass_model import PwassModel, Trajectory, propagate, region_index, region_matrices

logger = logging.getLogger(__name__)

# Available filters, key -> display name
FILTERS = {
    "pakf": "PAKF",
    "ekf":  "EKF",
    "pf":   "PF",
}


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (len(mean), len(mean)):
            raise DimensionMismatch(f"belief cov {cov.shape} does not match mean of length {len(mean)}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True, eq=False)
class RegionJoint:
    """Joint Gaussian of ([x_t; x_{t+1}], y_{t+1}) under one region's dynamics."""
    mu1: np.ndarray   # (2 n_x,)
    mu2: np.ndarray   # (n_y,)
    S11: np.ndarray   # (2 n_x, 2 n_x)
    S21: np.ndarray   # (n_y, 2 n_x)
    S22: np.ndarray   # (n_y, n_y)


class Conditioned(NamedTuple):
    mu_tilde: np.ndarray
    Sigma_tilde: np.ndarray
    loglik: float


@dataclass(frozen=True, eq=False)
class StepDiagnostics:
    region_probs: np.ndarray   # Pr(x_t in R_i | y_{1:t+1}); 0 for dropped regions
    log_normalizer: float      # log Z_t
    dropped_regions: int


@dataclass(eq=False)
class ParticleEnsemble:
    particles: np.ndarray      # (N, n_x)
    weights: np.ndarray        # (N,), sums to one
    rng: np.random.Generator

    @property
    def size(self) -> int:
        return len(self.weights)

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


class FilterOutput(NamedTuple):
    beliefs: List[GaussianBelief]
    diagnostics: Optional[List[StepDiagnostics]]


def _check_step_inputs(model: PwassModel, mean, u, y=None):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if len(mean) != model.n_x or u.shape != (model.n_u,):
        raise DimensionMismatch(
            f"expected state {model.n_x} and input {model.n_u}, got {len(mean)} and {u.shape}")
    if y is None:
        return u, None
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (model.n_y,):
        raise DimensionMismatch(f"expected a measurement of length {model.n_y}, got {y.shape}")
    return u, y


# ─────────────────────────────────────────────────────────────
# Kalman building blocks
# ─────────────────────────────────────────────────────────────

def predict_joint(model: PwassModel, belief: GaussianBelief, i: int, u) -> RegionJoint:
    """Kalman prediction of (x_t, x_{t+1}, y_{t+1}) assuming region i is active."""
    m, P = belief.mean, belief.cov
    u, _ = _check_step_inputs(model, m, u)
    A, b = region_matrices(model, i)
    C = model.C

    pred = A @ m + model.B @ u + b
    AP = A @ P
    P_pred = symmetrize(AP @ A.T + model.Q)
    return RegionJoint(
        mu1=np.concatenate((m, pred)),
        mu2=C @ pred,
        S11=np.block([[P, AP.T], [AP, P_pred]]),
        S21=np.hstack((C @ AP, C @ P_pred)),
        S22=symmetrize(C @ P_pred @ C.T + model.R),
    )


def condition_on_measurement(j: RegionJoint, y) -> Conditioned:
    """Condition the joint on y; loglik is log N(y; mu2, S22)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    L = cholesky_lower(j.S22)
    resid = y - j.mu2
    G = solve_triangular(L, j.S21, lower=True, check_finite=False)   # L^-1 S21
    z = solve_triangular(L, resid, lower=True, check_finite=False)
    mu_tilde = j.mu1 + G.T @ z
    Sigma_tilde = symmetrize(j.S11 - G.T @ G)
    return Conditioned(mu_tilde, Sigma_tilde, logpdf_from_cholesky(resid, L))


def measurement_update(model: PwassModel, prior: GaussianBelief, y) -> GaussianBelief:
    """Plain Kalman update with C and R; absorbs y_1 into the prior."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m, P = prior.mean, prior.cov
    L = cholesky_lower(symmetrize(model.C @ P @ model.C.T + model.R))
    G = solve_triangular(L, model.C @ P, lower=True, check_finite=False)
    z = solve_triangular(L, y - model.C @ m, lower=True, check_finite=False)
    return GaussianBelief(m + G.T @ z, symmetrize(P - G.T @ G))


def _next_marginal(mean: np.ndarray, cov: np.ndarray, n_x: int) -> GaussianBelief:
    return GaussianBelief(mean[n_x:].copy(), symmetrize(cov[n_x:, n_x:]))


# ─────────────────────────────────────────────────────────────
# PAKF / EKF
# ─────────────────────────────────────────────────────────────

def pakf_step(model: PwassModel, belief: GaussianBelief, u, y):
    """One PAKF recursion. Returns (GaussianBelief, StepDiagnostics).

    Regions whose truncation mass underflows, or whose moments come out
    non-finite, are dropped and the remaining weights renormalized.
    """
    u, y = _check_step_inputs(model, belief.mean, u, y)
    n_x, n_r = model.n_x, model.n_regions

    kept, log_w = [], []
    for i in range(n_r):
        joint = predict_joint(model, belief, i, u)
        mu_tilde, Sigma_tilde, loglik = condition_on_measurement(joint, y)
        try:
            trunc = dtmnd_moments(mu_tilde, Sigma_tilde, model.f.interval(i))
        except DegenerateMass as e:
            logger.debug("region %d dropped: %s", i, e)
            continue
        if not (math.isfinite(loglik) and np.all(np.isfinite(trunc.mean)) and np.all(np.isfinite(trunc.cov))):
            logger.debug("region %d dropped: non-finite moments", i)
            continue
        kept.append((i, trunc))
        log_w.append(loglik + math.log(trunc.mass))

    if not kept:
        raise AllRegionsDegenerate(f"all {n_r} regions have negligible posterior mass for y = {y}")

    log_w = np.asarray(log_w)
    log_z = float(special.logsumexp(log_w))
    weights = np.exp(log_w - log_z)

    mean, cov = moment_match([WeightedGaussian(w, t.mean, t.cov) for w, (_, t) in zip(weights, kept)])

    probs = np.zeros(n_r)
    for w, (i, _) in zip(weights, kept):
        probs[i] = w
    diag = StepDiagnostics(probs / probs.sum(), log_z, n_r - len(kept))
    return _next_marginal(mean, cov, n_x), diag


def ekf_step(model: PwassModel, belief: GaussianBelief, u, y) -> GaussianBelief:
    """Kalman step with the affine piece active at the current mean."""
    u, y = _check_step_inputs(model, belief.mean, u, y)
    i = region_index(model.f, belief.mean[0])
    joint = predict_joint(model, belief, i, u)
    mu_tilde, Sigma_tilde, _ = condition_on_measurement(joint, y)
    return _next_marginal(mu_tilde, Sigma_tilde, model.n_x)


# ─────────────────────────────────────────────────────────────
# Bootstrap particle filter
# ─────────────────────────────────────────────────────────────

def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(weights), positions, side="right")
    return np.minimum(idx, n - 1)


def _measurement_loglik(model: PwassModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    L = cholesky_lower(model.R)
    Z = solve_triangular(L, (y - X @ model.C.T).T, lower=True, check_finite=False)
    return -0.5 * np.sum(Z * Z, axis=0) - np.sum(np.log(np.diag(L)))


def _reweight(model, X, weights, y, rng, resample_threshold) -> ParticleEnsemble:
    with np.errstate(divide="ignore"):
        log_w = np.log(weights) + _measurement_loglik(model, X, y)
    if not np.any(np.isfinite(log_w)):
        raise AllWeightsZero(f"every particle has zero likelihood for y = {y}")
    ens = ParticleEnsemble(X, np.exp(log_w - special.logsumexp(log_w)), rng)

    n, ess = ens.size, ens.ess()
    if ess < resample_threshold * n:
        idx = systematic_resample(ens.weights, rng)
        ens = ParticleEnsemble(X[idx], np.full(n, 1.0 / n), rng)
        logger.debug("resampled %d particles (ESS %.1f)", n, ess)
    return ens


def pf_initialize(model: PwassModel, prior: GaussianBelief, n: int, rng: np.random.Generator,
                  y1=None, resample_threshold: float = 0.5) -> ParticleEnsemble:
    """Draw n particles from the prior; if y1 is given, weight them by it."""
    if n < 1:
        raise ValueError(f"particle count must be at least 1, got {n}")
    X = prior.mean + rng.standard_normal((n, model.n_x)) @ psd_factor(prior.cov).T
    weights = np.full(n, 1.0 / n)
    if y1 is None:
        return ParticleEnsemble(X, weights, rng)
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    return _reweight(model, X, weights, y1, rng, resample_threshold)


def pf_step(model: PwassModel, ens: ParticleEnsemble, u, y,
            resample_threshold: float = 0.5) -> ParticleEnsemble:
    """Propagate through the dynamics with fresh process noise, weight by N(y; Cx, R),
    resample systematically when the effective sample size drops below the threshold."""
    u, y = _check_step_inputs(model, ens.particles[0], u, y)
    W = ens.rng.standard_normal(ens.particles.shape) @ psd_factor(model.Q).T
    X = propagate(model, ens.particles, u, W)
    return _reweight(model, X, ens.weights, y, ens.rng, resample_threshold)


def estimate(ens: ParticleEnsemble) -> GaussianBelief:
    """Weighted sample mean and (population) covariance."""
    w = ens.weights
    mean = w @ ens.particles
    d = ens.particles - mean
    return GaussianBelief(mean, symmetrize((d * w[:, None]).T @ d))


# ─────────────────────────────────────────────────────────────
# Whole-trajectory runners
# ─────────────────────────────────────────────────────────────

def run_pakf(model: PwassModel, prior: GaussianBelief, traj: Trajectory) -> FilterOutput:
    belief = measurement_update(model, prior, traj.measurements[0])
    beliefs, diags = [belief], []
    for t in range(traj.T - 1):
        belief, diag = pakf_step(model, belief, traj.inputs[t], traj.measurements[t + 1])
        if diag.dropped_regions:
            logger.debug("t=%d: %d region(s) dropped", t + 1, diag.dropped_regions)
        beliefs.append(belief)
        diags.append(diag)
    return FilterOutput(beliefs, diags)


def run_ekf(model: PwassModel, prior: GaussianBelief, traj: Trajectory) -> FilterOutput:
    belief = measurement_update(model, prior, traj.measurements[0])
    beliefs = [belief]
    for t in range(traj.T - 1):
        belief = ekf_step(model, belief, traj.inputs[t], traj.measurements[t + 1])
        beliefs.append(belief)
    return FilterOutput(beliefs, None)


def run_pf(model: PwassModel, prior: GaussianBelief, traj: Trajectory, particles: int,
           rng: np.random.Generator, resample_threshold: float = 0.5) -> FilterOutput:
    ens = pf_initialize(model, prior, particles, rng, traj.measurements[0], resample_threshold)
    beliefs = [estimate(ens)]
    for t in range(traj.T - 1):
        ens = pf_step(model, ens, traj.inputs[t], traj.measurements[t + 1], resample_threshold)
        beliefs.append(estimate(ens))
    return FilterOutput(beliefs, None)


def run_filter(name: str, model: PwassModel, prior: GaussianBelief, traj: Trajectory, *,
               particles: int = 1000, rng=None, resample_threshold: float = 0.5) -> FilterOutput:
    if name == "pakf":
        return run_pakf(model, prior, traj)
    if name == "ekf":
        return run_ekf(model, prior, traj)
    if name == "pf":
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        return run_pf(model, prior, traj, particles, rng, resample_threshold)
    raise ValueError(f"unknown filter {name!r}; choose from {', '.join(FILTERS)}")
