"""Hot numeric kernels, in two flavors.

Every kernel exists as a pure-numpy/scipy implementation (``*_np``) and,
when numba is importable, as an @njit-compiled implementation (``*_nb``).
The unsuffixed names dispatch according to latis._backend.USE_NUMBA.

Kernels:
  norm_cdf / norm_ppf      standard normal CDF and quantile
  t_cdf / t_ppf            Student-t CDF and quantile (any real dof > 0)
  lattice_points_raw       rank-1 lattice points frac(k z / N + shift)
  cbc_scan                 per-candidate gather-dot used by CBC search
  pde_solve_batch          batched tridiagonal solve for the 1-D lognormal
                           diffusion forward map

The quantile kernels clamp their argument into the open interval (0, 1) so
that downstream transforms never see infinities from u = 0 or u = 1.
"""

import math

import numpy as np
from scipy import special as _sp

from ._backend import HAVE_NUMBA, USE_NUMBA

# largest double strictly below 1; lattice points and quantile inputs are
# clamped here so transforms never receive u >= 1
BELOW_ONE = np.nextafter(1.0, 0.0)
TINY_U = 1e-300

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy / scipy implementations
# ---------------------------------------------------------------------------

def _clamp_u_np(u):
    return np.clip(np.asarray(u, dtype=np.float64), TINY_U, BELOW_ONE)


def norm_cdf_np(x):
    return _sp.ndtr(np.asarray(x, dtype=np.float64))


def norm_ppf_np(u):
    return _sp.ndtri(_clamp_u_np(u))


def t_cdf_np(t, nu):
    return _sp.stdtr(nu, np.asarray(t, dtype=np.float64))


def t_ppf_np(u, nu):
    return _sp.stdtrit(nu, _clamp_u_np(u))


def t_pdf_np(t, nu):
    t = np.asarray(t, dtype=np.float64)
    lognorm = math.lgamma(0.5 * (nu + 1)) - math.lgamma(0.5 * nu) \
        - 0.5 * math.log(nu * math.pi)
    return np.exp(lognorm - 0.5 * (nu + 1) * np.log1p(t * t / nu))


def lattice_points_np(zred, N, shift):
    k = np.arange(N, dtype=np.int64)
    pts = ((k[:, None] * zred[None, :]) % N) / float(N) + shift[None, :]
    pts -= np.floor(pts)
    np.clip(pts, 0.0, BELOW_ONE, out=pts)
    return pts


def cbc_scan_np(table, w, cands, N):
    k = np.arange(N, dtype=np.int64)
    out = np.empty(cands.shape[0], dtype=np.float64)
    for i in range(cands.shape[0]):
        idx = (k * int(cands[i])) % N
        out[i] = np.dot(table[idx], w)
    return out


def pde_solve_batch_np(Z, xi_mid, rhs, h):
    """Solve -(a u')' = rhs with a = exp(xi_mid @ z) per row of Z.

    Z: (B, s) parameters; xi_mid: (m, s) basis values at cell midpoints;
    rhs: (m-1,) source at interior nodes. Returns (B, m-1) interior values.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    A = np.exp(Z @ xi_mid.T)  # (B, m) coefficient at midpoints
    inv_h2 = 1.0 / (h * h)
    diag = (A[:, :-1] + A[:, 1:]) * inv_h2          # (B, m-1)
    off = -A[:, 1:-1] * inv_h2                      # (B, m-2)
    n_int = diag.shape[1]
    cp = np.empty((A.shape[0], max(n_int - 1, 0)))
    dp = np.empty((A.shape[0], n_int))
    denom = diag[:, 0].copy()
    if n_int > 1:
        cp[:, 0] = off[:, 0] / denom
    dp[:, 0] = rhs[0] / denom
    for p in range(1, n_int):
        denom = diag[:, p] - off[:, p - 1] * cp[:, p - 1]
        if p < n_int - 1:
            cp[:, p] = off[:, p] / denom
        dp[:, p] = (rhs[p] - off[:, p - 1] * dp[:, p - 1]) / denom
    u = np.empty_like(dp)
    u[:, n_int - 1] = dp[:, n_int - 1]
    for p in range(n_int - 2, -1, -1):
        u[:, p] = dp[:, p] - cp[:, p] * u[:, p + 1]
    return u


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _ndtr_s(x):
        return 0.5 * math.erfc(-x / _SQRT2)

    @njit(cache=True)
    def _ndtri_s(p):
        # rational initial approximation, then two Halley refinements on the
        # CDF; the refinement keeps the round-trip error at machine precision
        if p <= TINY_U:
            p = TINY_U
        if p >= BELOW_ONE:
            p = BELOW_ONE
        p_low = 0.02425
        if p < p_low:
            q = math.sqrt(-2.0 * math.log(p))
            x = (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
                    - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
                  + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
                ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
                   + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
        elif p <= 1.0 - p_low:
            q = p - 0.5
            r = q * q
            x = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r
                    - 2.759285104469687e+02) * r + 1.383577518672690e+02) * r
                  - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / \
                (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r
                    - 1.556989798598866e+02) * r + 6.680131188771972e+01) * r
                  - 1.328068155288572e+01) * r + 1.0)
        else:
            q = math.sqrt(-2.0 * math.log(1.0 - p))
            x = -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
                     - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
                   + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
                ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
                   + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
        for _ in range(2):
            e = _ndtr_s(x) - p
            u = e * _SQRT_2PI * math.exp(0.5 * x * x)
            x = x - u / (1.0 + 0.5 * x * u)
        return x

    @njit(cache=True)
    def _betacf(a, b, x):
        # continued fraction for the regularized incomplete beta (Lentz)
        MAXIT = 300
        EPS = 3.0e-16
        FPMIN = 1.0e-300
        qab = a + b
        qap = a + 1.0
        qam = a - 1.0
        c = 1.0
        d = 1.0 - qab * x / qap
        if abs(d) < FPMIN:
            d = FPMIN
        d = 1.0 / d
        h = d
        for m in range(1, MAXIT + 1):
            m2 = 2 * m
            aa = m * (b - m) * x / ((qam + m2) * (a + m2))
            d = 1.0 + aa * d
            if abs(d) < FPMIN:
                d = FPMIN
            c = 1.0 + aa / c
            if abs(c) < FPMIN:
                c = FPMIN
            d = 1.0 / d
            h *= d * c
            aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
            d = 1.0 + aa * d
            if abs(d) < FPMIN:
                d = FPMIN
            c = 1.0 + aa / c
            if abs(c) < FPMIN:
                c = FPMIN
            d = 1.0 / d
            delta = d * c
            h *= delta
            if abs(delta - 1.0) <= EPS:
                break
        return h

    @njit(cache=True)
    def _betainc(a, b, x):
        if x <= 0.0:
            return 0.0
        if x >= 1.0:
            return 1.0
        ln_bt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) \
            + a * math.log(x) + b * math.log(1.0 - x)
        bt = math.exp(ln_bt)
        if x < (a + 1.0) / (a + b + 2.0):
            return bt * _betacf(a, b, x) / a
        return 1.0 - bt * _betacf(b, a, 1.0 - x) / b

    @njit(cache=True)
    def _t_cdf_s(t, nu):
        x = nu / (nu + t * t)
        p = 0.5 * _betainc(0.5 * nu, 0.5, x)
        if t <= 0.0:
            return p
        return 1.0 - p

    @njit(cache=True)
    def _t_pdf_s(t, nu):
        lognorm = math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu) \
            - 0.5 * math.log(nu * math.pi)
        return math.exp(lognorm - 0.5 * (nu + 1.0) * math.log1p(t * t / nu))

    @njit(cache=True)
    def _t_ppf_s(u, nu):
        if u <= TINY_U:
            u = TINY_U
        if u >= BELOW_ONE:
            u = BELOW_ONE
        if u == 0.5:
            return 0.0
        flip = u > 0.5
        p = 1.0 - u if flip else u
        # bracket the root: normal approximation and the polynomial-tail
        # asymptote p ~ k nu^((nu-1)/2) |t|^-nu jointly cover all dof
        x0 = _ndtri_s(p)
        logk = math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu) \
            - 0.5 * math.log(nu * math.pi)
        log_tail = (logk + 0.5 * (nu - 1.0) * math.log(nu) - math.log(p)) / nu
        t_tail = -math.exp(min(log_tail, 690.0))
        lo = 2.0 * min(x0, t_tail, -1.0)
        it = 0
        while _t_cdf_s(lo, nu) > p and it < 300:
            lo *= 2.0
            it += 1
        hi = 0.0
        x = x0 if lo < x0 < hi else 0.5 * (lo + hi)
        for _ in range(200):
            fx = _t_cdf_s(x, nu) - p
            if fx > 0.0:
                hi = x
            else:
                lo = x
            dfx = _t_pdf_s(x, nu)
            if dfx > 0.0:
                xn = x - fx / dfx
                if xn <= lo or xn >= hi:
                    xn = 0.5 * (lo + hi)
            else:
                xn = 0.5 * (lo + hi)
            if abs(xn - x) <= 1e-15 * (1.0 + abs(xn)):
                x = xn
                break
            x = xn
        return -x if flip else x

    @njit(cache=True)
    def norm_cdf_nb(x):
        x = np.ascontiguousarray(x)
        out = np.empty(x.size, dtype=np.float64)
        flat = x.ravel()
        for i in range(flat.size):
            out[i] = _ndtr_s(flat[i])
        return out.reshape(x.shape)

    @njit(cache=True)
    def norm_ppf_nb(u):
        u = np.ascontiguousarray(u)
        out = np.empty(u.size, dtype=np.float64)
        flat = u.ravel()
        for i in range(flat.size):
            out[i] = _ndtri_s(flat[i])
        return out.reshape(u.shape)

    @njit(cache=True)
    def t_cdf_nb(t, nu):
        t = np.ascontiguousarray(t)
        out = np.empty(t.size, dtype=np.float64)
        flat = t.ravel()
        for i in range(flat.size):
            out[i] = _t_cdf_s(flat[i], nu)
        return out.reshape(t.shape)

    @njit(cache=True)
    def t_ppf_nb(u, nu):
        u = np.ascontiguousarray(u)
        out = np.empty(u.size, dtype=np.float64)
        flat = u.ravel()
        for i in range(flat.size):
            out[i] = _t_ppf_s(flat[i], nu)
        return out.reshape(u.shape)

    @njit(cache=True)
    def lattice_points_nb(zred, N, shift):
        s = zred.shape[0]
        out = np.empty((N, s), dtype=np.float64)
        for k in range(N):
            for j in range(s):
                v = (k * zred[j]) % N
                x = v / N + shift[j]
                x = x - math.floor(x)
                if x >= 1.0:
                    x = BELOW_ONE
                out[k, j] = x
        return out

    @njit(cache=True)
    def cbc_scan_nb(table, w, cands, N):
        out = np.empty(cands.shape[0], dtype=np.float64)
        for i in range(cands.shape[0]):
            z = cands[i]
            acc = 0.0
            for k in range(N):
                acc += table[(k * z) % N] * w[k]
            out[i] = acc
        return out

    @njit(cache=True)
    def pde_solve_batch_nb(Z, xi_mid, rhs, h):
        B = Z.shape[0]
        s = Z.shape[1]
        m = xi_mid.shape[0]
        n_int = m - 1
        inv_h2 = 1.0 / (h * h)
        out = np.empty((B, n_int), dtype=np.float64)
        a = np.empty(m, dtype=np.float64)
        cp = np.empty(n_int, dtype=np.float64)
        dp = np.empty(n_int, dtype=np.float64)
        for b in range(B):
            for i in range(m):
                acc = 0.0
                for j in range(s):
                    acc += xi_mid[i, j] * Z[b, j]
                a[i] = math.exp(acc)
            denom = (a[0] + a[1]) * inv_h2
            if n_int > 1:
                cp[0] = -a[1] * inv_h2 / denom
            dp[0] = rhs[0] / denom
            for p in range(1, n_int):
                sub = -a[p] * inv_h2
                denom = (a[p] + a[p + 1]) * inv_h2 - sub * cp[p - 1]
                if p < n_int - 1:
                    cp[p] = -a[p + 1] * inv_h2 / denom
                dp[p] = (rhs[p] - sub * dp[p - 1]) / denom
            out[b, n_int - 1] = dp[n_int - 1]
            for p in range(n_int - 2, -1, -1):
                out[b, p] = dp[p] - cp[p] * out[b, p + 1]
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    def norm_cdf(x):
        return norm_cdf_nb(np.asarray(x, dtype=np.float64))

    def norm_ppf(u):
        return norm_ppf_nb(np.asarray(u, dtype=np.float64))

    def t_cdf(t, nu):
        return t_cdf_nb(np.asarray(t, dtype=np.float64), float(nu))

    def t_ppf(u, nu):
        return t_ppf_nb(np.asarray(u, dtype=np.float64), float(nu))

    def lattice_points_raw(zred, N, shift):
        return lattice_points_nb(zred, N, shift)

    cbc_scan = cbc_scan_nb

    def pde_solve_batch(Z, xi_mid, rhs, h):
        return pde_solve_batch_nb(np.atleast_2d(np.asarray(Z, dtype=np.float64)),
                                  xi_mid, rhs, h)
else:
    norm_cdf = norm_cdf_np
    norm_ppf = norm_ppf_np
    t_cdf = t_cdf_np
    t_ppf = t_ppf_np
    lattice_points_raw = lattice_points_np
    cbc_scan = cbc_scan_np
    pde_solve_batch = pde_solve_batch_np

t_pdf = t_pdf_np
