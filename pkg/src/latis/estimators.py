"""Quadrature engines for posterior expectations: plain Monte Carlo and
randomly shifted lattice rules, combined with the importance-sampling
proposals; replication studies, theoretical rate predictors, and a
Laplace leading-order checker.

Estimand conventions (noise level n, test function f, potential psi):

  numerator    T1_hat = (1/N) sum_i f(x_i) exp(-n psi(x_i)) W(x_i)
  denominator  T2_hat = same with f = 1
  ratio        T1_hat / T2_hat with both sums sharing the same points

All accumulation happens in the log domain through a signed log-sum-exp,
so extreme noise levels neither overflow nor poison the ratio.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .lattice import (GeneratingVector, ShiftedLattice, default_generating_vector,
                      lattice_points, random_shift)
from .models import psi_batch
from .numerics import DEFAULT_TOL, Tolerances, fd_hessian, integrate_1d
from .proposals import ProposalError, find_map, log_integrand
from .wce import DistributionPairing


class EstimatorError(Exception):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    method: str  # "mc" | "rqmc"
    N: int
    reps: int
    master_seed: int = 0
    pairing: DistributionPairing = None
    gen: GeneratingVector = None

    def __post_init__(self):
        if self.method not in ("mc", "rqmc"):
            raise EstimatorError(f"unknown method {self.method!r}")
        if self.N < 1 or self.reps < 1:
            raise EstimatorError("N and reps must be >= 1")
        if self.method == "rqmc":
            gen = self.gen if self.gen is not None else default_generating_vector()
            object.__setattr__(self, "gen", gen)
            if gen.base2_embedded and self.N & (self.N - 1):
                raise EstimatorError(
                    "base-2 embedded generating vectors require N to be a "
                    f"power of two, got N={self.N}")


@dataclass(frozen=True)
class EstimateStats:
    per_rep_values: np.ndarray
    mean: float
    stderr: float
    nan_reps: int = 0
    underflow_reps: int = 0

    @classmethod
    def from_values(cls, values):
        values = np.asarray(values, dtype=np.float64)
        good = values[~np.isnan(values)]
        nan_reps = int(values.size - good.size)
        mean = float(np.mean(good)) if good.size else math.nan
        stderr = float(np.std(good, ddof=1) / math.sqrt(good.size)) \
            if good.size > 1 else 0.0
        return cls(per_rep_values=values, mean=mean, stderr=stderr,
                   nan_reps=nan_reps,
                   underflow_reps=int(np.sum(good == 0.0)))

    @property
    def std(self):
        good = self.per_rep_values[~np.isnan(self.per_rep_values)]
        return float(np.std(good, ddof=1)) if good.size > 1 else 0.0


def signed_logsumexp(logs, signs):
    """(log |sum_i s_i exp(l_i)|, sign of the sum); (-inf, 0) for empty mass."""
    finite = np.isfinite(logs)
    if not np.any(finite):
        return -math.inf, 0.0
    m = float(np.max(logs[finite]))
    total = float(np.sum(signs[finite] * np.exp(logs[finite] - m)))
    if total == 0.0:
        return -math.inf, 0.0
    return math.log(abs(total)) + m, math.copysign(1.0, total)


# ---------------------------------------------------------------------------
# point sets and transforms
# ---------------------------------------------------------------------------

def replication_points(cfg, rep, s):
    """Uniform points in (0,1)^s for one replication.

    mc: counter-based generator keyed by (master_seed, rep) for exact
    replayability; rqmc: lattice with the shift seeded master_seed + rep.
    """
    if cfg.method == "mc":
        key = np.array([np.uint64(cfg.master_seed & (2**64 - 1)),
                        np.uint64(((rep & 0xFFFFFFFF) << 16) | 0x4D43)],
                       dtype=np.uint64)
        U = np.random.Generator(np.random.Philox(key=key)).random((cfg.N, s))
        return np.clip(U, _kernels.TINY_U, _kernels.BELOW_ONE)
    lat = ShiftedLattice(gen=cfg.gen, N=cfg.N, s=s,
                         shift=random_shift(s, cfg.master_seed + rep),
                         seed=cfg.master_seed + rep)
    return lattice_points(lat)


def _marginal_quantile(U, pairing, prop):
    if pairing is None:
        if prop.family == "gaussian":
            return _kernels.norm_ppf(U)
        return _kernels.t_ppf(U, prop.nu)
    if prop.family == "gaussian":
        if pairing.phi_family != "gaussian" or pairing.phi_param != 1.0:
            raise ProposalError(
                "gaussian proposals require the standard gaussian marginal "
                f"(pairing has {pairing.phi_family}({pairing.phi_param}))")
    else:
        if pairing.phi_family != "student" or pairing.phi_param != prop.nu:
            raise ProposalError(
                "student proposals require a student marginal with matching "
                f"dof (proposal nu={prop.nu}, pairing {pairing.phi_family}"
                f"({pairing.phi_param}))")
    return pairing.quantile(np.clip(U, _kernels.TINY_U, _kernels.BELOW_ONE))


def transform_to_domain(U, pairing, prop):
    """Map uniform points to (pre-transform Z, proposal-space X = mu + L Z)."""
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    Z = _marginal_quantile(U, pairing, prop)
    X = prop.mu[None, :] + Z @ prop.L.T
    return Z, X


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _rep_log_M(model, prop, f, cfg, rep):
    U = replication_points(cfg, rep, model.s)
    Z = _marginal_quantile(U, cfg.pairing, prop)
    signs, logs = log_integrand(model, prop, f, Z)
    return signs, logs


def estimate_numerator(model, prop, f, cfg):
    """Per-replication importance-sampling averages of f exp(-n psi) W."""
    values = np.empty(cfg.reps)
    logN = math.log(cfg.N)
    for rep in range(cfg.reps):
        signs, logs = _rep_log_M(model, prop, f, cfg, rep)
        lse, sign = signed_logsumexp(logs, signs)
        values[rep] = sign * math.exp(lse - logN) if sign != 0.0 else 0.0
    return EstimateStats.from_values(values)


def estimate_denominator(model, prop, cfg):
    return estimate_numerator(model, prop, lambda X: np.ones(X.shape[0]), cfg)


def estimate_ratio(model, prop, f, cfg):
    """Self-normalized estimator; numerator and denominator share points.

    A replication whose denominator carries no mass yields NaN; more than
    10 percent NaN replications raises EstimatorError.
    """
    values = np.empty(cfg.reps)
    for rep in range(cfg.reps):
        U = replication_points(cfg, rep, model.s)
        Z = _marginal_quantile(U, cfg.pairing, prop)
        signs, logs_num = log_integrand(model, prop, f, Z)
        ones = np.ones(Z.shape[0])
        _, logs_den = log_integrand(model, prop, lambda X: ones, Z)
        lse_num, sign_num = signed_logsumexp(logs_num, signs)
        lse_den, sign_den = signed_logsumexp(logs_den, ones)
        if sign_den == 0.0:
            values[rep] = math.nan
        elif sign_num == 0.0:
            values[rep] = 0.0
        else:
            values[rep] = sign_num * math.exp(lse_num - lse_den)
    stats = EstimateStats.from_values(values)
    if stats.nan_reps > 0.1 * cfg.reps:
        raise EstimatorError(
            f"{stats.nan_reps}/{cfg.reps} replications lost all denominator "
            "mass; the proposal places no points near the posterior")
    return stats


def pilot_reference(model, prop, f, N=2**18, shifts=100, seed=990_000,
                    gen=None):
    """High-resolution lattice pilot used as the numerical reference value.

    This is a numerical reference (mean over many independent shifts), not
    ground truth; returns (value, metadata).
    """
    cfg = EstimatorConfig(method="rqmc", N=N, reps=shifts, master_seed=seed,
                          gen=gen)
    stats = estimate_numerator(model, prop, f, cfg)
    meta = {"kind": "rqmc-pilot", "N": N, "shifts": shifts, "seed": seed,
            "stderr": stats.stderr}
    return stats.mean, meta


def rmse_study(model, proposal, f, cfg, reference, scale=1.0, N_list=None,
               estimand="numerator"):
    """Replication RMSE against a supplied reference, optionally over a
    sample-size sweep; rmse = sqrt(mean over reps of (estimate-reference)^2),
    scaled_rmse = scale * rmse.
    """
    rows = []
    for N in (N_list if N_list is not None else [cfg.N]):
        c = replace(cfg, N=int(N))
        if estimand == "numerator":
            stats = estimate_numerator(model, proposal, f, c)
        elif estimand == "ratio":
            stats = estimate_ratio(model, proposal, f, c)
        else:
            raise EstimatorError(f"unknown estimand {estimand!r}")
        good = stats.per_rep_values[~np.isnan(stats.per_rep_values)]
        rmse = float(np.sqrt(np.mean((good - reference) ** 2)))
        rows.append({
            "N": int(N), "n": model.noise.n, "estimate": stats.mean,
            "stderr": stats.stderr, "std": stats.std, "rmse": rmse,
            "scaled_rmse": scale * rmse, "nan_reps": stats.nan_reps,
        })
    return rows


# ---------------------------------------------------------------------------
# theoretical rate predictors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoryParams:
    """User-supplied growth/geometry constants entering the rate formulas.

    M bounds the mixed derivatives of the full integrand; M_f and M_psi
    bound those of the test function and the potential. delta is the
    quadratic-lower-bound constant, m the curvature rescale of the
    proposal. The eigenvalue fields describe the proposal covariance
    (lam_min_sigma), the prior (lam_max_sigma0) and the inverse curvature
    at the minimizer (lam_*_sigma_star).
    """

    s: int
    M: float = 0.0
    M_f: float = 0.0
    M_psi: float = 0.0
    delta: float = 0.0
    m: float = 1.0
    lam_min_sigma: float = 1.0
    lam_max_sigma0: float = 1.0
    lam_max_sigma_star: float = 1.0
    lam_min_sigma_star: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError("delta must lie in [0, 1]")
        for name in ("lam_min_sigma", "lam_max_sigma0", "lam_max_sigma_star",
                     "lam_min_sigma_star"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def predicted_rate(tp, n, kind):
    """Rate constant gamma and RMSE exponent min(gamma, 1) for a proposal.

    kind selects the formula:
      "gamma"     fixed proposal, direct growth bound:
                  lam_min(Sigma) (1/lam_max(Sigma0) - 2M)
      "gamma_n"   curvature proposal scaled 1/n with the same bound
      "gamma_n1"  n-independent (mu, Sigma), lower-bound-aware:
                  n delta lam_min(Sigma)/lam_max(Sigma*)
                  + lam_min(Sigma)/lam_max(Sigma0)
                  - 2 (M_f + s M_psi) lam_min(Sigma)
      "gamma_n2"  Sigma = (m/n) Sigma*:
                  1 + delta - 1/m + lam_max(Sigma*)/(n lam_max(Sigma0))
                  - 2 lam_max(Sigma*) (M_f + s M_psi)/n

    gamma <= 1/2 is flagged as outside the theory's reach.
    """
    n = float(n)
    if kind == "gamma":
        g = tp.lam_min_sigma * (1.0 / tp.lam_max_sigma0 - 2.0 * tp.M)
    elif kind == "gamma_n":
        g = (tp.lam_min_sigma_star / n) * (1.0 / tp.lam_max_sigma0 - 2.0 * tp.M)
    elif kind == "gamma_n1":
        mixed = tp.M_f + tp.s * tp.M_psi
        g = n * tp.delta * tp.lam_min_sigma / tp.lam_max_sigma_star \
            + tp.lam_min_sigma / tp.lam_max_sigma0 \
            - 2.0 * mixed * tp.lam_min_sigma
    elif kind == "gamma_n2":
        mixed = tp.M_f + tp.s * tp.M_psi
        g = 1.0 + tp.delta - 1.0 / tp.m \
            + tp.lam_max_sigma_star / (n * tp.lam_max_sigma0) \
            - 2.0 * tp.lam_max_sigma_star * mixed / n
    else:
        raise ValueError(f"unknown rate kind {kind!r}")
    return {"gamma": float(g), "rate_exponent": min(float(g), 1.0),
            "applicable": bool(g > 0.5)}


# ---------------------------------------------------------------------------
# Laplace leading order
# ---------------------------------------------------------------------------

def laplace_leading(model, Q, n, tol=None, gh_nodes=48):
    """Compare int Q exp(-n F) dz against its Laplace leading term,
    F = 2 psi with minimizer c*.

    leading = exp(-n F(c*)) (2 pi / n)^(s/2) det(grad^2 F(c*))^(-1/2) Q(c*);
    the numeric integral uses adaptive quadrature for s = 1 and a
    Gauss-Hermite tensor grid (after curvature rescaling) for s in {2, 3}.
    """
    tol = tol or Tolerances(quad_abs_tol=1e-13, quad_rel_tol=1e-10)
    s = model.s
    if s > 3:
        raise EstimatorError("numeric Laplace check supports s <= 3")
    n = float(n)
    mu_star, _ = find_map(model)

    def F_batch(Z):
        return 2.0 * psi_batch(model, Z)

    HF = 2.0 * (model.psi_hess(mu_star) if model.psi_hess is not None
                else fd_hessian(lambda z: float(psi_batch(model, z)[0]), mu_star))
    F_star = float(F_batch(mu_star[None, :])[0])
    det = float(np.linalg.det(HF))
    Q_star = float(np.asarray(Q(mu_star[None, :]), dtype=np.float64)[0])
    leading = math.exp(-n * F_star) * (2.0 * math.pi / n) ** (0.5 * s) \
        * det ** -0.5 * Q_star

    if s == 1:
        def integrand(t):
            Z = np.asarray(t, dtype=np.float64).reshape(-1, 1)
            vals = np.asarray(Q(Z), dtype=np.float64) * np.exp(-n * F_batch(Z))
            return vals
        numeric = integrate_1d(integrand, -math.inf, math.inf, tol=tol)
    else:
        # curvature-standardized Gauss-Hermite tensor rule: substitute
        # z = c* + Lc t with Lc Lc^T = (n HF)^{-1}
        nodes, weights = np.polynomial.hermite_e.hermegauss(gh_nodes)
        Lc = np.linalg.cholesky(np.linalg.inv(n * HF))
        grids = np.meshgrid(*([nodes] * s), indexing="ij")
        T = np.stack([g.ravel() for g in grids], axis=1)
        W = np.ones(T.shape[0])
        for g in np.meshgrid(*([weights] * s), indexing="ij"):
            W = W * g.ravel()
        Z = mu_star[None, :] + T @ Lc.T
        vals = np.asarray(Q(Z), dtype=np.float64) \
            * np.exp(-n * F_batch(Z) + 0.5 * np.sum(T * T, axis=1))
        numeric = float(np.sum(W * vals)) * abs(np.linalg.det(Lc))
    ratio = numeric / leading if leading != 0.0 else math.nan
    return {"J_n_numeric": float(numeric), "leading_order": float(leading),
            "ratio": float(ratio)}
