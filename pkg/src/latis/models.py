"""Bayesian inverse problem models: Gaussian prior, scaled observation noise,
forward maps (nonlinearly perturbed identity and a 1-D lognormal diffusion
equation), the misfit potential, and an empirical quadratic-lower-bound
checker for the potential.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels
from .lattice import default_generating_vector, ShiftedLattice, lattice_points, random_shift
from .numerics import SpdMatrix


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        if self.mean.shape != (self.cov.dim,):
            raise ValueError("prior mean and covariance dimensions disagree")

    def log_density(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        s = self.cov.dim
        q = self.cov.mahalanobis_sq(X, center=self.mean)
        return -0.5 * q - 0.5 * s * math.log(2.0 * math.pi) - 0.5 * self.cov.logdet


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise with covariance gamma / n; n is the noise-level scale."""

    n: float
    gamma: SpdMatrix

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("noise level n must be positive")


@dataclass
class BipModel:
    """Inverse problem: infer z from y = forward(z) + noise.

    forward_batch maps a (B, s) array of parameters to (B, J) outputs;
    psi_grad / psi_hess are optional analytic derivatives of the potential.
    psi_offset recenters the potential so that psi equals zero at the MAP
    point (set by proposals.find_map).
    """

    prior: GaussianPrior
    noise: NoiseSpec
    y: np.ndarray
    forward_batch: callable
    s: int
    J: int
    name: str = "model"
    psi_grad: callable = None
    psi_hess: callable = None
    psi_offset: float = 0.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.shape != (self.J,):
            raise ValueError(f"data must have {self.J} entries")
        if self.prior.cov.dim != self.s:
            raise ValueError("prior dimension does not match parameter dimension")

    def forward(self, z):
        return self.forward_batch(np.atleast_2d(z))[0]

    def with_noise_level(self, n):
        return replace_model(self, n)


def replace_model(model, n):
    """Copy of the model with a different noise-level scale n."""
    out = BipModel(prior=model.prior,
                   noise=NoiseSpec(n=float(n), gamma=model.noise.gamma),
                   y=model.y, forward_batch=model.forward_batch, s=model.s,
                   J=model.J, name=model.name, psi_grad=model.psi_grad,
                   psi_hess=model.psi_hess, psi_offset=model.psi_offset)
    return out


def psi_batch(model, Z, raw=False):
    """Potential 0.5 ||y - forward(z)||^2 in the noise norm, per row of Z.

    With raw=False the stored recentering offset is subtracted so that the
    potential vanishes at the MAP point.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    G = model.forward_batch(Z)
    R = model.y[None, :] - G
    W = solve_triangular(model.noise.gamma.chol, R.T, lower=True)
    vals = 0.5 * np.sum(W * W, axis=0)
    if not raw:
        vals = vals - model.psi_offset
    return vals


def psi(model, z, raw=False):
    return float(psi_batch(model, z, raw=raw)[0])


def test_function_norm(z):
    """Euclidean norm, batched over rows when given a matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return float(np.linalg.norm(z))
    return np.linalg.norm(z, axis=1)


# ---------------------------------------------------------------------------
# nonlinearly perturbed identity ("toy") forward map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyModelSpec:
    """Forward map A z + tau F(z) with F_i(z) = z_i exp(-z_i^2) and A = I."""

    tau: float
    s: int

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("perturbation size tau must be >= 0")

    @property
    def delta(self):
        """Quadratic-lower-bound constant (1 + tau)^-2 of the potential."""
        return (1.0 + self.tau) ** -2


def toy_forward(spec, z):
    z = np.asarray(z, dtype=np.float64)
    return z * (1.0 + spec.tau * np.exp(-z * z))


def toy_psi_grad(spec, z, y=None):
    """Analytic gradient of 0.5 ||toy_forward(z) - y||^2 (identity noise)."""
    z = np.asarray(z, dtype=np.float64)
    y = np.zeros_like(z) if y is None else np.asarray(y, dtype=np.float64)
    e = np.exp(-z * z)
    g = z * (1.0 + spec.tau * e)
    gp = 1.0 + spec.tau * e * (1.0 - 2.0 * z * z)
    return (g - y) * gp


def toy_psi_hess(spec, z, y=None):
    """Analytic (diagonal) Hessian of the toy potential."""
    z = np.asarray(z, dtype=np.float64)
    y = np.zeros_like(z) if y is None else np.asarray(y, dtype=np.float64)
    e = np.exp(-z * z)
    g = z * (1.0 + spec.tau * e)
    gp = 1.0 + spec.tau * e * (1.0 - 2.0 * z * z)
    gpp = -2.0 * spec.tau * z * e * (3.0 - 2.0 * z * z)
    return np.diag(gp * gp + (g - y) * gpp)


def brownian_min_covariance(s):
    """SPD matrix with entries min(i, j), i, j = 1..s."""
    idx = np.arange(1, s + 1)
    return SpdMatrix(np.minimum.outer(idx, idx).astype(np.float64))


def make_toy_model(s, tau, n, y=None, mu0=None, sigma0=None, gamma=None):
    """Toy inverse problem; defaults: y = 0, mu0 = 1-vector, Sigma0 = min(i,j)."""
    spec = ToyModelSpec(tau=float(tau), s=int(s))
    y = np.zeros(s) if y is None else np.asarray(y, dtype=np.float64)
    mu0 = np.ones(s) if mu0 is None else np.asarray(mu0, dtype=np.float64)
    sigma0 = brownian_min_covariance(s) if sigma0 is None else sigma0
    gamma = SpdMatrix(np.eye(s)) if gamma is None else gamma
    identity_noise = np.allclose(gamma.entries, np.eye(s))

    def forward_batch(Z):
        return toy_forward(spec, np.atleast_2d(Z))

    model = BipModel(
        prior=GaussianPrior(mean=mu0, cov=sigma0),
        noise=NoiseSpec(n=float(n), gamma=gamma),
        y=y, forward_batch=forward_batch, s=s, J=s, name=f"toy(tau={tau})",
        psi_grad=(lambda z: toy_psi_grad(spec, z, y)) if identity_noise else None,
        psi_hess=(lambda z: toy_psi_hess(spec, z, y)) if identity_noise else None,
    )
    model.toy_spec = spec
    return model


# ---------------------------------------------------------------------------
# 1-D lognormal diffusion forward map
# ---------------------------------------------------------------------------

DEFAULT_OBS_POINTS = (0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875)


@dataclass(frozen=True)
class PdeModelSpec:
    """-(a(x,z) u')' = amplitude * x on (0,1), u(0) = u(1) = 0, with
    log a(x,z) = sum_j z_j (0.1/j) sin(j pi x); observations at the seven
    interior eighth-points.
    """

    s: int
    h: float
    obs_points: tuple = DEFAULT_OBS_POINTS
    amplitude: float = 100.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        m = round(1.0 / self.h)
        if abs(m * self.h - 1.0) > 1e-12 or m < 4:
            raise ValueError("mesh width h must equal 1/m for an integer m >= 4")
        for t in self.obs_points:
            if abs(round(t * m) - t * m) > 1e-9 or not 0 < t < 1:
                raise ValueError(
                    f"observation point {t} is not an interior mesh node at h=1/{m}")

    @property
    def m(self):
        return round(1.0 / self.h)

    def _grids(self):
        if "xi_mid" not in self._cache:
            m = self.m
            x_mid = (np.arange(m) + 0.5) * self.h
            j = np.arange(1, self.s + 1, dtype=np.float64)
            self._cache["xi_mid"] = np.ascontiguousarray(
                (0.1 / j)[None, :] * np.sin(j[None, :] * math.pi * x_mid[:, None]))
            x_int = np.arange(1, m) * self.h
            self._cache["rhs"] = np.ascontiguousarray(self.amplitude * x_int)
            self._cache["obs_idx"] = np.array(
                [round(t * m) - 1 for t in self.obs_points], dtype=np.int64)
        return self._cache["xi_mid"], self._cache["rhs"], self._cache["obs_idx"]


def pde_solve_interior_batch(spec, Z):
    """Interior mesh values of the diffusion solution per row of Z."""
    xi_mid, rhs, _ = spec._grids()
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != spec.s:
        raise ValueError(f"parameter dimension must be {spec.s}")
    return _kernels.pde_solve_batch(Z, xi_mid, rhs, spec.h)


def pde_solve(spec, z):
    """Full mesh solution (boundary zeros included) for one parameter vector."""
    interior = pde_solve_interior_batch(spec, z)[0]
    u = np.zeros(spec.m + 1)
    u[1:-1] = interior
    return u


def pde_forward(spec, z):
    """Solution values at the observation points."""
    return pde_forward_batch(spec, np.atleast_2d(z))[0]


def pde_forward_batch(spec, Z):
    _, _, obs_idx = spec._grids()
    return pde_solve_interior_batch(spec, Z)[:, obs_idx]


def pde_solution_on_grid(spec, z, xs):
    """Piecewise-linear interpolant of the mesh solution at query points."""
    u = pde_solve(spec, z)
    nodes = np.arange(spec.m + 1) * spec.h
    return np.interp(np.asarray(xs, dtype=np.float64), nodes, u)


def pde_reference_solution(xs, amplitude=100.0):
    """Closed-form solution for unit coefficient: u = (amplitude/6) x (1 - x^2)."""
    xs = np.asarray(xs, dtype=np.float64)
    return amplitude / 6.0 * xs * (1.0 - xs * xs)


def make_pde_model(s, h=1.0 / 64, n=2000.0, data_parameter=None):
    """Lognormal diffusion inverse problem with N(0, I) prior and unit noise
    covariance; observation data generated from data_parameter (default: the
    all-ones vector) on the same mesh.
    """
    spec = PdeModelSpec(s=int(s), h=float(h))
    if spec.m % 8 != 0:
        raise ValueError("mesh must resolve the eighth-point observations: "
                         "1/h must be a multiple of 8")
    data_parameter = np.ones(s) if data_parameter is None else \
        np.asarray(data_parameter, dtype=np.float64)
    y = pde_forward(spec, data_parameter)
    J = len(spec.obs_points)

    def forward_batch(Z):
        return pde_forward_batch(spec, Z)

    model = BipModel(
        prior=GaussianPrior(mean=np.zeros(s), cov=SpdMatrix(np.eye(s))),
        noise=NoiseSpec(n=float(n), gamma=SpdMatrix(np.eye(J))),
        y=y, forward_batch=forward_batch, s=s, J=J,
        name=f"pde(s={s}, m={spec.m})")
    model.pde_spec = spec
    model.data_parameter = data_parameter
    return model


# ---------------------------------------------------------------------------
# quadratic lower bound verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LowerBoundReport:
    holds: bool
    worst_ratio: float
    witness: np.ndarray
    delta: float
    n_samples: int
    radius: float


def verify_lower_bound(model, mu_star, sigma_star, delta, n_samples=4096,
                       radius=10.0, seed=202):
    """Empirically check psi(z) >= (delta/2) ||z - mu*||^2 in the sigma* norm.

    Deterministic low-discrepancy points fill a Euclidean ball of the given
    radius around mu*; the report carries the smallest observed ratio
    psi(z) / (0.5 ||z - mu*||^2) and a witness point. delta = 0 always holds.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    mu_star = np.asarray(mu_star, dtype=np.float64)
    s = model.s
    gen = default_generating_vector()
    lat = ShiftedLattice(gen=gen, N=int(n_samples), s=s + 1,
                         shift=random_shift(s + 1, seed), seed=seed)
    U = lattice_points(lat)
    directions = _kernels.norm_ppf(U[:, :s])
    norms = np.linalg.norm(directions, axis=1)
    keep = norms > 1e-12
    directions = directions[keep] / norms[keep, None]
    radii = radius * U[keep, s] ** (1.0 / s)
    Z = mu_star[None, :] + radii[:, None] * directions
    psis = psi_batch(model, Z)
    half_norm = 0.5 * sigma_star.mahalanobis_sq(Z, center=mu_star)
    # guard the degenerate center point
    ok = half_norm > 1e-300
    ratios = psis[ok] / half_norm[ok]
    i = int(np.argmin(ratios))
    worst = float(ratios[i])
    return LowerBoundReport(holds=bool(worst >= delta), worst_ratio=worst,
                            witness=Z[ok][i], delta=delta,
                            n_samples=int(n_samples), radius=float(radius))
