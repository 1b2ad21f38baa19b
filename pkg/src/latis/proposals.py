"""Importance-sampling proposals and log-domain integrand evaluation.

Proposal families share a mean mu and covariance Sigma = L L^T:

  prior      (mu0, Sigma0)
  odis       (mu*, Sigma0)         drift to the potential minimizer
  lapis      (mu*, (m/n) Sigma*)   curvature-matched, classic scale m = 1
  newis      (mu*, Sigma*/(delta n))  lower-bound-adjusted scale
  custom     caller-supplied (mu, Sigma)

The Gaussian log likelihood ratio against the prior is

  log W(x) = 1/2 log|Sigma| - 1/2 log|Sigma0|
           + 1/2 ||x-mu||^2_Sigma - 1/2 ||x-mu0||^2_Sigma0,

and for a proposal built from iid Student-t marginals pushed through
x = mu + L z,

  log Wt = 1/2 log|Sigma| - (s/2) log(2 pi) - 1/2 log|Sigma0|
         - 1/2 ||x-mu0||^2_Sigma0
         + sum_i [ log(sqrt(nu pi) Gamma(nu/2)/Gamma((nu+1)/2))
                   + ((nu+1)/2) log(1 + z_i^2/nu) ].

Everything is evaluated in the log domain; exponentiation is deferred to
the estimator accumulators.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .models import psi_batch
from .numerics import (DEFAULT_TOL, NonConvergenceError, SpdMatrix,
                       fd_gradient, fd_hessian, minimize)


class ProposalError(Exception):
    pass


@dataclass(frozen=True)
class Proposal:
    family: str  # "gaussian" | "student"
    mu: np.ndarray
    sigma: SpdMatrix
    kind_label: str = "custom"
    nu: float = None
    m: float = None
    delta: float = None

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        if self.family not in ("gaussian", "student"):
            raise ProposalError(f"unknown proposal family {self.family!r}")
        if self.family == "student" and (self.nu is None or self.nu <= 0):
            raise ProposalError("student proposals need a positive dof nu")
        if self.mu.shape != (self.sigma.dim,):
            raise ProposalError("proposal mean and covariance dimensions disagree")

    @property
    def s(self):
        return self.sigma.dim

    @property
    def L(self):
        return self.sigma.chol


def build_proposal(kind, model, mu_star=None, sigma_star=None, delta=None,
                   m=1.0, nu=None, family="gaussian", mu=None, sigma=None):
    """Resolve a proposal of the given kind for a model.

    mu_star / sigma_star come from find_map; delta is required (positive)
    for newis; m rescales the lapis covariance (1 = classic). A student
    family reuses the selected (mu, Sigma) and adds dof nu.
    """
    n = model.noise.n
    if kind == "prior":
        mu_, sig = model.prior.mean, model.prior.cov
    elif kind == "odis":
        _need(mu_star, "odis", "mu_star")
        mu_, sig = mu_star, model.prior.cov
    elif kind == "lapis":
        _need(mu_star, "lapis", "mu_star")
        _need(sigma_star, "lapis", "sigma_star")
        if not m > 0:
            raise ProposalError("lapis scale m must be positive")
        mu_, sig = mu_star, SpdMatrix(sigma_star.entries * (m / n))
    elif kind == "newis":
        _need(mu_star, "newis", "mu_star")
        _need(sigma_star, "newis", "sigma_star")
        if delta is None or not delta > 0:
            raise ProposalError("newis requires delta > 0")
        mu_, sig = mu_star, SpdMatrix(sigma_star.entries / (delta * n))
    elif kind == "custom":
        _need(mu, "custom", "mu")
        _need(sigma, "custom", "sigma")
        mu_, sig = mu, sigma
    else:
        raise ProposalError(f"unknown proposal kind {kind!r}")
    label = kind if kind in ("prior", "odis", "custom") else (
        f"lapis(m={m})" if kind == "lapis" else f"newis(delta={delta})")
    return Proposal(family=family, mu=mu_, sigma=sig, kind_label=label,
                    nu=nu, m=(m if kind == "lapis" else None),
                    delta=(delta if kind == "newis" else None))


def _need(value, kind, name):
    if value is None:
        raise ProposalError(f"{kind} proposal requires {name}")


# ---------------------------------------------------------------------------
# log likelihood ratios
# ---------------------------------------------------------------------------

def log_weight_gaussian(prop, prior, X):
    """log of the prior/proposal density ratio at rows of X."""
    if prop.family != "gaussian":
        raise ProposalError("gaussian log weight requires a gaussian proposal")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q_prop = prop.sigma.mahalanobis_sq(X, center=prop.mu)
    q_prior = prior.cov.mahalanobis_sq(X, center=prior.mean)
    return 0.5 * (prop.sigma.logdet - prior.cov.logdet) \
        + 0.5 * q_prop - 0.5 * q_prior


def log_weight_student(prop, prior, X, Z):
    """log of the prior/proposal ratio for the Student-t family.

    X = mu + L Z with Z the pre-transform points (iid t_nu marginals).
    """
    if prop.family != "student":
        raise ProposalError("student log weight requires a student proposal")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    nu = prop.nu
    s = prop.s
    q_prior = prior.cov.mahalanobis_sq(X, center=prior.mean)
    t_const = 0.5 * math.log(nu * math.pi) + math.lgamma(0.5 * nu) \
        - math.lgamma(0.5 * (nu + 1.0))
    t_terms = np.sum(t_const + 0.5 * (nu + 1.0) * np.log1p(Z * Z / nu), axis=1)
    return 0.5 * prop.sigma.logdet - 0.5 * s * math.log(2.0 * math.pi) \
        - 0.5 * prior.cov.logdet - 0.5 * q_prior + t_terms


def log_weight(prop, prior, X, Z=None):
    if prop.family == "gaussian":
        return log_weight_gaussian(prop, prior, X)
    if Z is None:
        raise ProposalError("student log weight needs the pre-transform points")
    return log_weight_student(prop, prior, X, Z)


def log_integrand(model, prop, f, Z):
    """Signed log of f(x) exp(-n psi(x)) W(x) at x = mu + L z, per row of Z.

    Returns (signs, logs); a zero of f yields sign 0 and log -inf.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    X = prop.mu[None, :] + Z @ prop.L.T
    fx = np.asarray(f(X), dtype=np.float64)
    signs = np.sign(fx)
    with np.errstate(divide="ignore"):
        logabsf = np.log(np.abs(fx))
    lw = log_weight(prop, model.prior, X, Z)
    logs = logabsf - model.noise.n * psi_batch(model, X) + lw
    return signs, logs


# ---------------------------------------------------------------------------
# MAP point and curvature
# ---------------------------------------------------------------------------

def find_map(model, tol=DEFAULT_TOL, extra_starts=(), recenter=True):
    """Minimize the potential over a small multistart set and invert the
    curvature at the minimizer.

    Returns (mu_star, sigma_star) with sigma_star the inverse of the
    (regularized) Hessian of the potential at mu_star. With recenter=True
    the model's potential offset is updated so psi(mu_star) = 0.
    """
    def f(z):
        return float(psi_batch(model, z, raw=True)[0])

    grad = model.psi_grad if model.psi_grad is not None else \
        (lambda z: fd_gradient(f, z))
    starts = [np.asarray(model.prior.mean, dtype=np.float64),
              np.zeros(model.s)]
    starts.extend(np.asarray(x, dtype=np.float64) for x in extra_starts)
    best, best_val = None, math.inf
    failures = []
    for x0 in starts:
        try:
            x = minimize(f, grad, x0, tol=tol,
                         hess=model.psi_hess)
        except NonConvergenceError as exc:
            failures.append(exc)
            x = exc.last_iterate
            if x is None:
                continue
        val = f(x)
        if val < best_val:
            best, best_val = x, val
    if best is None:
        raise NonConvergenceError(
            f"MAP search failed from all {len(starts)} starts") from failures[-1]
    mu_star = best
    H = model.psi_hess(mu_star) if model.psi_hess is not None \
        else fd_hessian(f, mu_star)
    sigma_star = invert_curvature(H)
    if recenter:
        model.psi_offset = float(psi_batch(model, mu_star, raw=True)[0])
    return mu_star, sigma_star


def invert_curvature(H, floor=1e-8, warn_below=1e-10):
    """Inverse of a symmetric curvature matrix with eigenvalue flooring.

    Finite-difference Hessians of flat misfits can carry tiny or slightly
    negative eigenvalues; anything below the floor is clipped (with a
    warning below warn_below) so the inverse stays SPD.
    """
    H = 0.5 * (np.asarray(H, dtype=np.float64) + np.asarray(H).T)
    vals, vecs = np.linalg.eigh(H)
    if np.any(vals < warn_below):
        warnings.warn(
            f"curvature eigenvalues as low as {vals.min():.3e}; clipping to "
            f"{floor:.0e} before inversion (flat or noisy Hessian)")
    clipped = np.maximum(vals, floor)
    inv = (vecs / clipped[None, :]) @ vecs.T
    return SpdMatrix(0.5 * (inv + inv.T))
