"""Shift-averaged worst-case error machinery for rank-1 lattices on R^s.

The quadrature error of a randomly shifted lattice rule in a weighted
space of functions on R^s is controlled by the kernel

    theta(c) = int_{q(c)}^{inf} (F(t)-c)/psi^2(t) dt
             + int_{q(1-c)}^{inf} (F(t)-1+c)/psi^2(t) dt
             - int_R F(t)^2/psi^2(t) dt,

where F is the CDF of the sampling marginal phi, q its quantile, and psi
the tail weight function. The three pieces diverge individually but
combine into the single convergent integral

    theta(c) = int_0^1 [ (u-c)_+ + (u-1+c)_+ - u^2 ] E(u) du,
    E(u) = 1 / ( psi^2(q(u)) phi(q(u)) ),

which is what this module evaluates. Its Fourier coefficients

    theta_hat(h) = 1/(pi^2 h^2) int_R psi^-2(t) sin^2(pi h F(t)) dt

decay like |h|^(-2r) with the exponent r fixed by the (phi, psi) pairing.

The squared shift-averaged worst-case error of a generating vector z* is

    e_sh^2 = sum_{nonempty u} (gamma_u / N) sum_k prod_{j in u} theta({k z*_j / N}),

computed here in factorized form for product weights and by the
elementary-symmetric-polynomial recursion for product-and-order weights.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import GeneratingVector
from .numerics import (DEFAULT_TOL, Tolerances, euler_totient, integrate_1d,
                       riemann_zeta)

_LOG_2PI = math.log(2.0 * math.pi)


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class DistributionPairing:
    """Sampling marginal phi paired with a tail weight function psi.

    phi_family: "gaussian" (variance phi_param) or "student" (dof phi_param).
    psi_family: "gaussian_decay" with psi(t) = exp(-t^2/(2 alpha)), or
                "polynomial_decay" with psi(t) = (1+|t|)^-alpha.
    delta_psi:  decay-exponent parameter for the gaussian/polynomial row.
    """

    phi_family: str
    phi_param: float
    psi_family: str
    psi_alpha: float
    delta_psi: float | None = None

    def __post_init__(self):
        if self.phi_family not in ("gaussian", "student"):
            raise PairingError(f"unknown phi family {self.phi_family!r}")
        if self.psi_family not in ("gaussian_decay", "polynomial_decay"):
            raise PairingError(f"unknown psi family {self.psi_family!r}")
        if self.phi_param <= 0 or self.psi_alpha <= 0:
            raise PairingError("phi parameter and psi alpha must be positive")
        nu, alpha = self.phi_param, self.psi_alpha
        if self.phi_family == "gaussian" and self.psi_family == "gaussian_decay":
            if not alpha > 2.0 * nu:
                raise PairingError(
                    f"gaussian/gaussian pairing needs alpha > 2 nu, got "
                    f"alpha={alpha}, nu={nu}")
        elif self.phi_family == "gaussian" and self.psi_family == "polynomial_decay":
            hi = min(0.5, 1.125 * alpha * nu)
            if self.delta_psi is None or not (0.0 < self.delta_psi < hi):
                raise PairingError(
                    f"gaussian/polynomial pairing needs delta_psi in (0, {hi}), "
                    f"got {self.delta_psi}")
        elif self.phi_family == "student" and self.psi_family == "polynomial_decay":
            if not 2.0 * alpha + 1.0 < nu:
                raise PairingError(
                    f"student/polynomial pairing needs 2 alpha + 1 < nu, got "
                    f"alpha={alpha}, nu={nu}")
        else:
            raise PairingError("student phi with gaussian-decay psi is not a "
                               "supported pairing")

    @property
    def r(self):
        """Decay exponent: theta_hat(h) = O(|h|^(-2r)), r in (1/2, 1)."""
        nu, alpha = self.phi_param, self.psi_alpha
        if self.phi_family == "gaussian" and self.psi_family == "gaussian_decay":
            return 1.0 - nu / alpha
        if self.phi_family == "gaussian":
            return 1.0 - self.delta_psi
        return 1.0 - (2.0 * alpha + 1.0) / (2.0 * nu)

    # -- marginal distribution -------------------------------------------
    def cdf(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.phi_family == "gaussian":
            return _kernels.norm_cdf(t / math.sqrt(self.phi_param))
        return _kernels.t_cdf(t, self.phi_param)

    def quantile(self, u):
        if self.phi_family == "gaussian":
            return math.sqrt(self.phi_param) * _kernels.norm_ppf(u)
        return _kernels.t_ppf(u, self.phi_param)

    def log_phi(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.phi_family == "gaussian":
            nu = self.phi_param
            return -0.5 * t * t / nu - 0.5 * math.log(2.0 * math.pi * nu)
        nu = self.phi_param
        lognorm = math.lgamma(0.5 * (nu + 1)) - math.lgamma(0.5 * nu) \
            - 0.5 * math.log(nu * math.pi)
        return lognorm - 0.5 * (nu + 1) * np.log1p(t * t / nu)

    def log_psi2(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.psi_family == "gaussian_decay":
            return -t * t / self.psi_alpha
        return -2.0 * self.psi_alpha * np.log1p(np.abs(t))

    def survival(self, t):
        """1 - cdf(t), computed accurately in the right tail via symmetry."""
        return self.cdf(-np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class WeightScheme:
    """Coordinate weights gamma_u: product form or product-and-order form."""

    kind: str
    product_weights: np.ndarray
    order_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("product", "pod"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        pw = np.asarray(self.product_weights, dtype=np.float64)
        if pw.ndim != 1 or np.any(pw <= 0):
            raise ValueError("product weights must be positive")
        object.__setattr__(self, "product_weights", pw)
        if self.kind == "pod":
            if self.order_weights is None:
                raise ValueError("pod weights require order weights")
            ow = np.asarray(self.order_weights, dtype=np.float64)
            if ow.ndim != 1 or np.any(ow <= 0):
                raise ValueError("order weights must be positive")
            object.__setattr__(self, "order_weights", ow)

    def gamma_vector(self, s):
        if s > self.product_weights.size:
            raise ValueError(f"need {s} product weights, have "
                             f"{self.product_weights.size}")
        return self.product_weights[:s]

    def order_vector(self, s):
        if self.kind != "pod":
            raise ValueError("order weights only exist for pod schemes")
        if s > self.order_weights.size:
            raise ValueError(f"need {s} order weights, have "
                             f"{self.order_weights.size}")
        return self.order_weights[:s]

    def subset_weight(self, u):
        """gamma_u for an explicit index subset (1-based coordinates)."""
        idx = np.asarray(sorted(u), dtype=int)
        if idx.size == 0:
            return 1.0
        g = float(np.prod(self.product_weights[idx - 1]))
        if self.kind == "pod":
            g *= float(self.order_weights[idx.size - 1])
        return g


def product_weights(gammas):
    return WeightScheme("product", np.asarray(gammas, dtype=np.float64))


def pod_weights(gammas, orders):
    return WeightScheme("pod", np.asarray(gammas, dtype=np.float64),
                        np.asarray(orders, dtype=np.float64))


def default_weights(s_max=32, c=0.9, p=2.0):
    """Product-and-order weights Gamma_l = l!, gamma_j = c / j^p."""
    j = np.arange(1, s_max + 1, dtype=np.float64)
    orders = np.array([math.factorial(m) for m in range(1, s_max + 1)],
                      dtype=np.float64)
    return pod_weights(c / j ** p, orders)


# ---------------------------------------------------------------------------
# theta kernel and its Fourier coefficients
# ---------------------------------------------------------------------------

_THETA_TOL = Tolerances(quad_abs_tol=1e-11, quad_rel_tol=1e-11)
_FOURIER_TOL = Tolerances(quad_abs_tol=1e-12, quad_rel_tol=1e-9)


def theta(c, pairing, tol=_THETA_TOL):
    """Kernel value theta(c) for c in [0, 1), to quadrature tolerance.

    Evaluated over the real line with tail-stable piecewise forms: the
    combined integrand equals -F^2/psi^2 left of q(cmin), (F Fbar - cmin)/psi^2
    in the middle and -Fbar^2/psi^2 right of q(1-cmin), cmin = min(c, 1-c).
    """
    c = float(c)
    if not 0.0 <= c < 1.0:
        raise ValueError(f"theta argument must lie in [0, 1), got {c}")
    cmin = min(c, 1.0 - c)
    if cmin > 0.0:
        t_lo = float(pairing.quantile(cmin))
        t_hi = -t_lo
        bps = [t_lo, t_hi]
    else:
        t_lo, t_hi = -math.inf, math.inf
        bps = None

    def f(t):
        t = np.asarray(t, dtype=np.float64)
        F = pairing.cdf(t)
        Fbar = pairing.survival(t)
        g = np.where(t < t_lo, -F * F,
                     np.where(t > t_hi, -Fbar * Fbar, F * Fbar - cmin))
        with np.errstate(divide="ignore"):
            logg = np.log(np.abs(g))
        return np.sign(g) * np.exp(logg - pairing.log_psi2(t))

    try:
        return integrate_1d(f, -math.inf, math.inf, tol=tol, breakpoints=bps)
    except Exception as exc:
        raise RuntimeError(f"theta quadrature failed at c={c}") from exc


def theta_fourier(h, pairing, tol=_FOURIER_TOL):
    """Fourier coefficient theta_hat(h) >= 0; symmetric in +-h."""
    h = int(h)
    if h == 0:
        raise ValueError("Fourier index h must be nonzero")
    h = abs(h)

    def f(t):
        t = np.asarray(t, dtype=np.float64)
        # |sin(pi h F)| = |sin(pi h (1-F))| for integer h; evaluating with the
        # smaller of CDF/survival keeps the phase accurate in both tails
        m = np.where(t > 0, pairing.survival(t), pairing.cdf(t))
        s = np.sin(math.pi * h * m)
        with np.errstate(divide="ignore"):
            logs2 = 2.0 * np.log(np.abs(s))
        return np.exp(logs2 - pairing.log_psi2(t))

    # seed the subdivision at quantiles of a uniform grid so every initial
    # segment holds a bounded number of oscillations of sin^2(pi h F(t))
    m = min(4 * h, 4096)
    bps = list(pairing.quantile(np.linspace(0.0, 1.0, m + 1)[1:-1])) if m > 1 \
        else None
    integral = integrate_1d(f, -math.inf, math.inf, tol=tol, breakpoints=bps)
    return integral / (math.pi ** 2 * h ** 2)


def embedding_tail_integrals(pairing, tol=_THETA_TOL):
    """The two tail integrals int_-inf^0 F/psi^2 dt and int_0^inf (1-F)/psi^2 dt.

    Both must be finite for the weighted space to embed into L2(phi).
    """
    def f_lower(t):
        t = np.asarray(t, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logF = np.log(pairing.cdf(t))
        return np.exp(logF - pairing.log_psi2(t))

    def f_upper(t):
        t = np.asarray(t, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logFbar = np.log(pairing.survival(t))
        return np.exp(logFbar - pairing.log_psi2(t))

    lo = integrate_1d(f_lower, -math.inf, 0.0, tol=tol)
    hi = integrate_1d(f_upper, 0.0, math.inf, tol=tol)
    return lo, hi


@dataclass(frozen=True)
class ThetaTable:
    """theta(k/N) for k = 0..N-1, exploiting the symmetry theta(c)=theta(1-c)."""

    N: int
    pairing: DistributionPairing
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.N,):
            raise ValueError("table must hold one value per k = 0..N-1")
        if not np.all(np.isfinite(vals)):
            raise ValueError("theta table contains non-finite values")
        object.__setattr__(self, "values", vals)


def build_theta_table(N, pairing, tol=_THETA_TOL):
    if N < 1:
        raise ValueError("N must be >= 1")
    vals = np.empty(N, dtype=np.float64)
    half = N // 2
    for k in range(half + 1):
        vals[k] = theta(k / N, pairing, tol=tol)
    for k in range(half + 1, N):
        vals[k] = vals[N - k]
    return ThetaTable(N=N, pairing=pairing, values=vals)


# ---------------------------------------------------------------------------
# shift-averaged worst-case error
# ---------------------------------------------------------------------------

def _theta_rows(table, zred, s):
    k = np.arange(table.N, dtype=np.int64)
    return [table.values[(k * int(zred[j])) % table.N] for j in range(s)]


def shift_avg_wce(gen, N, s, weights, table):
    """Squared shift-averaged worst-case error e_sh^2 of gen at modulus N."""
    if table.N != N:
        raise ValueError(f"theta table was built for N={table.N}, need N={N}")
    zred = gen.reduced(N, s)
    rows = _theta_rows(table, zred, s)
    gamma = weights.gamma_vector(s)
    if weights.kind == "product":
        acc = np.ones(N)
        for j in range(s):
            acc *= 1.0 + gamma[j] * rows[j]
        return float(np.mean(acc - 1.0))
    orders = weights.order_vector(s)
    E = np.zeros((N, s + 1))
    E[:, 0] = 1.0
    for j in range(s):
        x = gamma[j] * rows[j]
        for level in range(j + 1, 0, -1):
            E[:, level] += x * E[:, level - 1]
    return float(np.mean(E[:, 1:] @ orders))


def cbc_construct(N, s, weights, pairing, tol=_THETA_TOL, table=None):
    """Greedy component-by-component construction of a generating vector.

    The first component is 1; each further component minimizes the squared
    shift-averaged worst-case error over candidates coprime to N, ties
    broken by the smallest candidate.
    """
    if N < 2:
        raise ValueError("CBC needs N >= 2")
    if table is None:
        table = build_theta_table(N, pairing, tol=tol)
    cands = np.array([z for z in range(1, N) if math.gcd(z, N) == 1],
                     dtype=np.int64)
    if cands.size == 0:
        raise RuntimeError(f"no candidate coprime to N={N}")
    k = np.arange(N, dtype=np.int64)
    gamma = weights.gamma_vector(s)
    zstar = [1]
    row1 = table.values[(k * 1) % N]
    if weights.kind == "product":
        P = 1.0 + gamma[0] * row1
        for d in range(2, s + 1):
            gd = gamma[d - 1]
            scores = _kernels.cbc_scan(table.values, np.ascontiguousarray(P),
                                       cands, N)
            zd = int(cands[int(np.argmin(scores))])
            zstar.append(zd)
            P = P * (1.0 + gd * table.values[(k * zd) % N])
    else:
        orders = weights.order_vector(s)
        E = np.zeros((N, s + 1))
        E[:, 0] = 1.0
        E[:, 1] = gamma[0] * row1
        for d in range(2, s + 1):
            gd = gamma[d - 1]
            B = E[:, :d] @ orders[:d]
            scores = _kernels.cbc_scan(table.values, np.ascontiguousarray(B),
                                       cands, N)
            zd = int(cands[int(np.argmin(scores))])
            zstar.append(zd)
            x = gd * table.values[(k * zd) % N]
            for level in range(d, 0, -1):
                E[:, level] += x * E[:, level - 1]
    return GeneratingVector(np.asarray(zstar, dtype=np.int64), source="cbc",
                            base2_embedded=False)


# ---------------------------------------------------------------------------
# convergence-rate bound and slope fitting
# ---------------------------------------------------------------------------

def rmse_bound(N, s, weights, C, r, lam, normF):
    """Evaluate the CBC root-mean-square error bound at exponent lam.

    bound = ( (1/phi(N)) * sum_{nonempty u} gamma_u^(1/(2 lam))
              * (2 C^(1/(2 lam)) zeta(r/lam))^|u| )^lam * normF
    """
    if not (0.5 <= lam < r):
        raise ValueError(f"lambda must lie in [1/2, r)={[0.5, r]}, got {lam}")
    if C <= 0:
        raise ValueError("decay constant C must be positive")
    expo = 1.0 / (2.0 * lam)
    A = 2.0 * C ** expo * riemann_zeta(r / lam)
    gamma = weights.gamma_vector(s) ** expo
    if weights.kind == "product":
        subset_sum = float(np.prod(1.0 + gamma * A)) - 1.0
    else:
        orders = weights.order_vector(s) ** expo
        esym = np.zeros(s + 1)
        esym[0] = 1.0
        for j in range(s):
            for level in range(j + 1, 0, -1):
                esym[level] += gamma[j] * esym[level - 1]
        subset_sum = float(np.sum(orders * (A ** np.arange(1, s + 1)) * esym[1:]))
    return (subset_sum / euler_totient(N)) ** lam * normF


def estimate_decay_constant(pairing, hs=(4, 8, 16, 32, 64, 128, 256, 512),
                            tol=_FOURIER_TOL):
    """Empirical constant C with theta_hat(h) <= C |h|^(-2r) on sampled h."""
    r = pairing.r
    return max(theta_fourier(h, pairing, tol=tol) * h ** (2.0 * r) for h in hs)


def fit_decay_rate(xs, ys):
    """Least-squares slope of log y against log x."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size != ys.size or xs.size < 3:
        raise ValueError("need at least 3 paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("slope fit requires strictly positive data")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
