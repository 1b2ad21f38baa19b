"""Scalar special functions, dense linear algebra, adaptive 1-D quadrature,
finite-difference derivatives and a damped-Newton minimizer.

All operations are pure functions; nothing here holds mutable state.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sp
from scipy.linalg import solve_triangular

from . import _kernels


class NumericsError(Exception):
    pass


class FactorizationError(NumericsError):
    pass


class QuadratureError(NumericsError):
    def __init__(self, msg, best_estimate=None, error_estimate=None):
        super().__init__(msg)
        self.best_estimate = best_estimate
        self.error_estimate = error_estimate


class NonConvergenceError(NumericsError):
    def __init__(self, msg, last_iterate=None):
        super().__init__(msg)
        self.last_iterate = last_iterate


_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Tolerances:
    quad_abs_tol: float = 1e-11
    quad_rel_tol: float = 1e-11
    opt_grad_tol: float = 1e-8
    fd_step: float = 1e-5

    def __post_init__(self):
        for name in ("quad_abs_tol", "quad_rel_tol", "opt_grad_tol", "fd_step"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.fd_step ** 2 <= 100.0 * _EPS:
            raise ValueError("fd_step^2 must sit above machine-epsilon scale")


DEFAULT_TOL = Tolerances()


# ---------------------------------------------------------------------------
# distribution functions (dispatching to the selected kernel backend)
# ---------------------------------------------------------------------------

def normal_cdf(t):
    """Standard normal CDF; accepts scalars or arrays."""
    out = _kernels.norm_cdf(t)
    return float(out) if np.isscalar(t) else out


def normal_quantile(u):
    """Inverse standard normal CDF on (0, 1)."""
    _check_unit_open(u)
    out = _kernels.norm_ppf(u)
    return float(out) if np.isscalar(u) else out


def t_cdf(t, nu):
    """Student-t CDF with nu > 0 degrees of freedom."""
    if not nu > 0:
        raise ValueError(f"degrees of freedom must be positive, got {nu}")
    out = _kernels.t_cdf(t, nu)
    return float(out) if np.isscalar(t) else out


def t_quantile(u, nu):
    """Inverse Student-t CDF on (0, 1)."""
    if not nu > 0:
        raise ValueError(f"degrees of freedom must be positive, got {nu}")
    _check_unit_open(u)
    out = _kernels.t_ppf(u, nu)
    return float(out) if np.isscalar(u) else out


def _check_unit_open(u):
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("probability argument must lie strictly inside (0, 1)")


# ---------------------------------------------------------------------------
# dense SPD linear algebra
# ---------------------------------------------------------------------------

def cholesky(sigma):
    """Lower-triangular L with L L^T = sigma; raises naming the failing pivot."""
    m = np.array(getattr(sigma, "entries", sigma), dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise FactorizationError("matrix must be square")
    n = m.shape[0]
    L = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - L[j, :j] @ L[j, :j]
        if not (d > 0.0) or not np.isfinite(d):
            raise FactorizationError(
                f"matrix is not positive definite: pivot {j} is {d:.6g}")
        L[j, j] = math.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (m[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


@dataclass
class SpdMatrix:
    """Symmetric positive definite matrix with a lazily computed Cholesky factor."""

    entries: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.entries = np.array(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("SpdMatrix must be square")
        scale = np.max(np.abs(self.entries))
        if scale > 0 and np.max(np.abs(self.entries - self.entries.T)) > 1e-12 * scale:
            raise ValueError("SpdMatrix must be symmetric to 1e-12 relative")
        self.entries = 0.5 * (self.entries + self.entries.T)

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def chol(self):
        if self._chol is None:
            self._chol = cholesky(self.entries)
        return self._chol

    def solve(self, b):
        """Solve sigma x = b via the Cholesky factor."""
        L = self.chol
        z = solve_triangular(L, b, lower=True)
        return solve_triangular(L.T, z, lower=False)

    def mahalanobis_sq(self, X, center=None):
        """Row-wise squared norms x^T sigma^{-1} x (optionally recentered)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if center is not None:
            X = X - center
        W = solve_triangular(self.chol, X.T, lower=True)
        return np.sum(W * W, axis=0)

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def inverse(self):
        Linv = solve_triangular(self.chol, np.eye(self.dim), lower=True)
        return SpdMatrix(Linv.T @ Linv)


# ---------------------------------------------------------------------------
# adaptive Gauss-Kronrod quadrature
# ---------------------------------------------------------------------------

# 15-point Kronrod extension of 7-point Gauss on [-1, 1]
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529,
])
_G_IDX = np.array([1, 3, 5, 7, 9, 11, 13])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
    0.381830050505119, 0.279705391489277, 0.129484966168870,
])

_MAX_SEGMENTS = 400_000
_MAX_PASSES = 200


def _eval_gk15(f, a, b):
    c = 0.5 * (a + b)
    hw = 0.5 * (b - a)
    nodes = c[:, None] + hw[:, None] * _XK[None, :]
    y = np.asarray(f(nodes.ravel()), dtype=np.float64)
    y = np.broadcast_to(y, nodes.ravel().shape).reshape(nodes.shape)
    ik = hw * (y @ _WK)
    ig = hw * (y[:, _G_IDX] @ _WG)
    return ik, np.abs(ik - ig)


def _adaptive_gk(f, lo, hi, abs_tol, rel_tol, breakpoints=None):
    # globally adaptive: each pass bisects the segments carrying the error
    # mass until the summed error estimate meets the tolerance
    pts = [lo, hi]
    if breakpoints is not None:
        pts = sorted({lo, hi, *(p for p in breakpoints if lo < p < hi)})
    n_sub = 8 if len(pts) <= 16 else 1
    a = []
    b = []
    for left, right in zip(pts[:-1], pts[1:]):
        edges = np.linspace(left, right, n_sub + 1)
        a.extend(edges[:-1])
        b.extend(edges[1:])
    a = np.asarray(a)
    b = np.asarray(b)
    width_total = hi - lo
    ik, err = _eval_gk15(f, a, b)
    for _ in range(_MAX_PASSES):
        estimate = float(np.sum(ik))
        total_err = float(np.sum(err))
        tol = max(abs_tol, rel_tol * abs(estimate))
        if total_err <= tol:
            return estimate, total_err
        refinable = (b - a) > 1e-15 * width_total
        bad = (err > tol / (2.0 * err.size)) & refinable
        if not np.any(bad) or a.size + np.count_nonzero(bad) > _MAX_SEGMENTS:
            break
        a_bad, b_bad = a[bad], b[bad]
        mid = 0.5 * (a_bad + b_bad)
        na = np.concatenate([a_bad, mid])
        nb = np.concatenate([mid, b_bad])
        nik, nerr = _eval_gk15(f, na, nb)
        a = np.concatenate([a[~bad], na])
        b = np.concatenate([b[~bad], nb])
        ik = np.concatenate([ik[~bad], nik])
        err = np.concatenate([err[~bad], nerr])
    raise QuadratureError(
        "quadrature did not converge after maximum refinement",
        best_estimate=float(np.sum(ik)), error_estimate=float(np.sum(err)))


def integrate_1d(f, a, b, tol=DEFAULT_TOL, breakpoints=None):
    """Adaptive quadrature of a vectorized integrand over (a, b).

    Infinite endpoints are mapped to a finite interval with the smooth
    substitution t = u / (1 - u^2) (both ends infinite) or t = a + u/(1-u)
    (one end infinite); f must accept numpy arrays.
    """
    a = float(a)
    b = float(b)
    if a >= b:
        raise ValueError("integration requires a < b")
    inf_a = math.isinf(a)
    inf_b = math.isinf(b)
    if inf_a and inf_b:
        def g(u):
            d = 1.0 - u * u
            t = u / d
            return f(t) * (1.0 + u * u) / (d * d)
        lo, hi, bp = -1.0, 1.0, None
        if breakpoints is not None:
            bp = [_inv_double_inf(p) for p in breakpoints]
        value, _ = _adaptive_gk(g, lo, hi, tol.quad_abs_tol, tol.quad_rel_tol, bp)
        return value
    if inf_b:
        def g(u):
            d = 1.0 - u
            return f(a + u / d) / (d * d)
        bp = None
        if breakpoints is not None:
            bp = [(p - a) / (1.0 + (p - a)) for p in breakpoints if p > a]
        value, _ = _adaptive_gk(g, 0.0, 1.0, tol.quad_abs_tol, tol.quad_rel_tol, bp)
        return value
    if inf_a:
        def g(u):
            d = 1.0 - u
            return f(b - u / d) / (d * d)
        bp = None
        if breakpoints is not None:
            bp = [(b - p) / (1.0 + (b - p)) for p in breakpoints if p < b]
        value, _ = _adaptive_gk(g, 0.0, 1.0, tol.quad_abs_tol, tol.quad_rel_tol, bp)
        return value
    value, _ = _adaptive_gk(f, a, b, tol.quad_abs_tol, tol.quad_rel_tol, breakpoints)
    return value


def _inv_double_inf(t):
    # inverse of t = u/(1-u^2) on (-1, 1)
    if t == 0.0:
        return 0.0
    u = (math.sqrt(1.0 + 4.0 * t * t) - 1.0) / (2.0 * t)
    return u


# ---------------------------------------------------------------------------
# number-theoretic helpers
# ---------------------------------------------------------------------------

def riemann_zeta(x):
    """zeta(x) = sum_{k>=1} k^-x for x > 1."""
    if not x > 1.0:
        raise ValueError(f"zeta argument must exceed 1, got {x}")
    return float(_sp.zeta(float(x), 1))


def euler_totient(N):
    """Count of 1 <= i <= N-1 coprime to N (1 for N = 1)."""
    N = int(N)
    if N < 1:
        raise ValueError("totient argument must be a positive integer")
    result = N
    n = N
    p = 2
    while p * p <= n:
        if n % p == 0:
            while n % p == 0:
                n //= p
            result -= result // p
        p += 1 if p == 2 else 2
    if n > 1:
        result -= result // n
    return result


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def default_fd_step(x, tol=DEFAULT_TOL):
    return tol.fd_step * (1.0 + float(np.linalg.norm(x)))


def fd_gradient(f, x, step=None):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    h = default_fd_step(x) if step is None else float(step)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp = f(x + e)
        fm = f(x - e)
        _check_fd_values(fp, fm)
        g[i] = (fp - fm) / (2.0 * h)
    return g


def fd_hessian(f, x, step=None):
    """Central-difference Hessian, symmetrized as (H + H^T)/2."""
    x = np.asarray(x, dtype=np.float64)
    h = default_fd_step(x) if step is None else float(step)
    n = x.size
    H = np.empty((n, n))
    f0 = f(x)
    _check_fd_values(f0)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        fpp = f(x + ei)
        fmm = f(x - ei)
        _check_fd_values(fpp, fmm)
        H[i, i] = (fpp - 2.0 * f0 + fmm) / (h * h)
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            fa = f(x + ei + ej)
            fb = f(x + ei - ej)
            fc = f(x - ei + ej)
            fd = f(x - ei - ej)
            _check_fd_values(fa, fb, fc, fd)
            H[i, j] = H[j, i] = (fa - fb - fc + fd) / (4.0 * h * h)
    return 0.5 * (H + H.T)


def _check_fd_values(*vals):
    for v in vals:
        if not np.isfinite(v):
            raise NumericsError("finite-difference stencil hit a non-finite value")


# ---------------------------------------------------------------------------
# smooth unconstrained minimization
# ---------------------------------------------------------------------------

def minimize(f, grad, x0, tol=DEFAULT_TOL, hess=None, max_iter=200):
    """Damped Newton with backtracking; gradient-descent fallback on bad Hessians.

    Stops when the gradient norm drops below tol.opt_grad_tol; raises
    NonConvergenceError (carrying the last iterate) at the iteration cap.
    """
    x = np.array(x0, dtype=np.float64)
    fx = float(f(x))
    g = np.asarray(grad(x), dtype=np.float64)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol.opt_grad_tol:
            return x
        H = hess(x) if hess is not None else _hess_from_grad(grad, x, tol)
        try:
            L = cholesky(H)
            y = solve_triangular(L, -g, lower=True)
            p = solve_triangular(L.T, y, lower=False)
        except FactorizationError:
            p = -g
        if float(p @ g) >= 0.0:
            p = -g
        t_step = 1.0
        gTp = float(g @ p)
        while t_step > 1e-14:
            x_new = x + t_step * p
            f_new = float(f(x_new))
            if np.isfinite(f_new) and f_new <= fx + 1e-4 * t_step * gTp:
                break
            t_step *= 0.5
        else:
            raise NonConvergenceError("line search failed", last_iterate=x)
        x = x + t_step * p
        fx = float(f(x))
        g = np.asarray(grad(x), dtype=np.float64)
    if np.linalg.norm(g) <= tol.opt_grad_tol:
        return x
    raise NonConvergenceError(
        f"no convergence within {max_iter} iterations "
        f"(|grad| = {np.linalg.norm(g):.3e})", last_iterate=x)


def _hess_from_grad(grad, x, tol):
    h = default_fd_step(x, tol)
    n = x.size
    H = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        H[:, j] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2.0 * h)
    return 0.5 * (H + H.T)
