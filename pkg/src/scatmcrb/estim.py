"""Pseudo-true parameters and mismatched ML estimates via nonlinear least squares.

The objective is ``||y - mu(theta)||^2`` with ``mu`` the delay model. It is
minimised with a BFGS implementation working in scaled coordinates
(positions / lambda0, amplitudes / |initial amplitude|, phases as-is).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteError, RankError
from .forward import delay_cube, delay_jacobian
from .model import AssumedParams, _as_vector

__all__ = [
    "OptimizerOptions", "EstimateResult", "OptimizeResult", "ls_amplitudes", "nls_objective",
    "nls_gradient", "bfgs_minimize", "pseudo_true_parameter", "mmle", "default_scaling",
    "initial_guess",
]


@dataclass(frozen=True)
class OptimizerOptions:
    """BFGS settings. ``grad_tol=None`` means ``1e-8 * (1 + |f(x0)|)``."""

    max_iters: int = 500
    grad_tol: float = None
    c1: float = 1e-4
    c2: float = 0.1
    backtrack: float = 0.5
    max_line_steps: int = 40
    scaling: np.ndarray = None

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not 0.0 < self.c1 < 1.0:
            raise ValueError("sufficient-decrease constant must lie in (0, 1)")
        if not self.c1 < self.c2 < 1.0:
            raise ValueError("curvature constant must lie in (c1, 1)")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str
    n_evals: int


@dataclass(frozen=True, eq=False)
class EstimateResult:
    theta_hat: AssumedParams
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str = ""
    warnings: tuple = field(default_factory=tuple)


class _Counted:
    def __init__(self, fun, grad, scale):
        self.fun = fun
        self.grad = grad
        self.scale = scale
        self.n = 0

    def __call__(self, z):
        self.n += 1
        x = z * self.scale
        f = float(self.fun(x))
        g = np.asarray(self.grad(x), dtype=float) * self.scale
        return f, g


def _wolfe_search(evalfg, z, f0, g0, p, opts):
    """Bracketing line search for the strong Wolfe conditions.

    Returns ``(alpha, f, g, ok)``. Changes in f below ``eps_f`` are treated
    as roundoff: such steps count as sufficient decrease (approximate Wolfe)
    and the bracket is then driven by the directional derivative alone.
    """
    d0 = float(g0 @ p)
    eps_f = 1e-12 * abs(f0) + 1e-300
    count = [0]

    def phi(alpha):
        count[0] += 1
        f1, g1 = evalfg(z + alpha * p)
        if not np.isfinite(f1) or not np.all(np.isfinite(g1)):
            return None
        return f1, g1, float(g1 @ p)

    def sufficient(alpha, f1):
        return f1 <= f0 + opts.c1 * alpha * d0 or f1 <= f0 + eps_f

    def wolfe(alpha, f1, d1):
        if abs(d1) <= opts.c2 * abs(d0) and f1 <= f0 + opts.c1 * alpha * d0:
            return True
        return f1 <= f0 + eps_f and opts.c2 * d0 <= d1 <= (2 * opts.c1 - 1) * d0

    def zoom(lo, hi):
        # lo = (alpha, f, g, d) satisfies sufficient decrease; hi brackets a minimiser
        while count[0] < opts.max_line_steps:
            a_lo, f_lo, _, d_lo = lo
            a_hi, f_hi, _, d_hi = hi
            width = a_hi - a_lo
            if abs(f_hi - f_lo) <= eps_f and d_hi != d_lo:
                trial = a_lo - d_lo * width / (d_hi - d_lo)
            else:
                denom = 2.0 * (f_hi - f_lo - d_lo * width)
                trial = a_lo - d_lo * width * width / denom if denom > 0 else a_lo + 0.5 * width
            lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            trial = min(max(trial, lo_b), hi_b) if np.isfinite(trial) else a_lo + 0.5 * width
            res = phi(trial)
            if res is None:
                hi = (trial, np.inf, None, 0.0)
                continue
            f1, g1, d1 = res
            if wolfe(trial, f1, d1):
                return trial, f1, g1, True
            if not sufficient(trial, f1) or f1 > f_lo + eps_f:
                hi = (trial, f1, g1, d1)
            else:
                if d1 * width >= 0:
                    hi = lo
                lo = (trial, f1, g1, d1)
            if abs(hi[0] - lo[0]) <= 1e-14 * max(lo[0], hi[0]):
                break
        return (lo[0], lo[1], lo[2], True) if lo[0] > 0 else (0.0, None, None, False)

    prev = (0.0, f0, g0, d0)
    alpha = 1.0
    while count[0] < opts.max_line_steps:
        res = phi(alpha)
        if res is None:
            alpha = prev[0] + opts.backtrack * (alpha - prev[0])
            continue
        f1, g1, d1 = res
        if wolfe(alpha, f1, d1):
            return alpha, f1, g1, True
        cur = (alpha, f1, g1, d1)
        if not sufficient(alpha, f1) or (prev[0] > 0 and f1 > prev[1] + eps_f):
            return zoom(prev, cur)
        if d1 >= 0:
            return zoom(cur, prev)
        prev = cur
        alpha *= 2.0
    if prev[0] > 0:
        return prev[0], prev[1], prev[2], True
    return 0.0, None, None, False


def _line_search(evalfg, z, f0, g0, p, opts):
    """Wolfe search followed by secant steps on phi' (exact on quadratics)."""
    alpha, f1, g1, ok = _wolfe_search(evalfg, z, f0, g0, p, opts)
    if not ok:
        return alpha, f1, g1, ok
    d0 = float(g0 @ p)
    a_prev, d_prev = 0.0, d0
    for _ in range(3):
        d1 = float(g1 @ p)
        if d1 == 0 or d1 == d_prev:
            break
        a_new = alpha - d1 * (alpha - a_prev) / (d1 - d_prev)
        if not np.isfinite(a_new) or a_new <= 0 or abs(a_new - alpha) <= 1e-10 * alpha:
            break
        fn, gn = evalfg(z + a_new * p)
        if not np.isfinite(fn) or not np.all(np.isfinite(gn)) or fn > f1:
            break
        a_prev, d_prev = alpha, d1
        alpha, f1, g1 = a_new, fn, gn
    return alpha, f1, g1, True


def bfgs_minimize(objective, gradient, x0, options=None):
    """Minimise ``objective`` with BFGS (inverse-Hessian form).

    ``options.scaling`` divides the variables, ``z = x / scaling``; the
    stopping test is on the scaled gradient norm. The best iterate is
    returned; line-search failure sets ``converged=False`` but is not fatal.
    """
    opts = options or OptimizerOptions()
    x0 = np.asarray(x0, dtype=float).copy()
    scale = np.ones_like(x0) if opts.scaling is None else np.asarray(opts.scaling, dtype=float)
    if scale.shape != x0.shape or np.any(scale <= 0):
        raise ValueError("scaling must be positive with the shape of x0")
    evalfg = _Counted(objective, gradient, scale)
    z = x0 / scale
    f, g = evalfg(z)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError(f"objective or gradient not finite at the initial point (f={f})")
    tol = opts.grad_tol if opts.grad_tol is not None else 1e-8 * (1.0 + abs(f))
    n = z.size
    h0 = 1.0  # scale of the identity used at (re)starts
    hinv = np.eye(n)
    fresh = True
    gnorm = float(np.linalg.norm(g))
    best = (f, z, g, gnorm)
    it = 0
    message = "gradient tolerance met"
    while gnorm > tol:
        if it >= opts.max_iters:
            message = "maximum iterations reached"
            break
        p = -hinv @ g
        pnorm = float(np.linalg.norm(p))
        if not fresh and -float(g @ p) <= 1e-8 * gnorm * pnorm:
            # quasi-Newton direction lost descent to roundoff: restart
            hinv = h0 * np.eye(n)
            fresh = True
            p = -hinv @ g
        alpha, f_new, g_new, ok = _line_search(evalfg, z, f, g, p, opts)
        s = alpha * p if ok else None
        if not ok or np.all(z + s == z):
            if fresh:
                message = "line search failed"
                break
            hinv = h0 * np.eye(n)
            fresh = True
            continue
        y = g_new - g
        sy = float(s @ y)
        z = z + s
        f, g = f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        if f < best[0] or (f <= best[0] and gnorm < best[3]):
            best = (f, z, g, gnorm)
        yy = float(y @ y)
        if sy > 1e-10 * np.sqrt(float(s @ s) * yy):
            if fresh:
                h0 = sy / yy
                hinv = h0 * np.eye(n)
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = (hinv - rho * (np.outer(s, hy) + np.outer(hy, s))
                    + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
            fresh = False
    if gnorm > tol and best[3] <= tol:
        f, z, g, gnorm = best
    converged = gnorm <= tol
    if converged:
        message = "gradient tolerance met"
    return OptimizeResult(z * scale, f, gnorm, it, converged, message, evalfg.n)


def ls_amplitudes(y, locations, scenario):
    """Least-squares scattering coefficients for fixed locations (dictionary pseudoinverse)."""
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    n_u = locations.shape[0]
    dictionary = np.empty((scenario.n_data, n_u), dtype=complex)
    for u in range(n_u):
        single = AssumedParams(locations[u:u + 1], [1.0], [0.0])
        dictionary[:, u] = delay_cube(scenario, single).reshape(-1)
    s = np.linalg.svd(dictionary, compute_uv=False)
    if s[-1] <= max(dictionary.shape) * np.finfo(float).eps * s[0]:
        raise RankError("delay dictionary is rank deficient (coincident locations?)")
    q, *_ = np.linalg.lstsq(dictionary, _as_vector(y), rcond=None)
    return q


def nls_objective(y, theta, scenario):
    """Squared residual norm ``||y - mu(theta)||^2``."""
    r = _as_vector(y) - delay_cube(scenario, theta).reshape(-1)
    return float(np.vdot(r, r).real)


def nls_gradient(y, theta, scenario):
    """Gradient ``-2 Re{J^H (y - mu)}`` of :func:`nls_objective`."""
    r = _as_vector(y) - delay_cube(scenario, theta).reshape(-1)
    jac = delay_jacobian(scenario, theta)
    return -2.0 * (jac.conj().T @ r).real


def default_scaling(theta_init, wavelength):
    n_u = theta_init.n_scatterers
    amp = np.abs(theta_init.amplitudes)
    amp = np.where(amp > 0, amp, 1.0)
    return np.concatenate([np.full(2 * n_u, wavelength), amp, np.ones(n_u)])


def _fit(y, scenario, theta_init, options):
    y = _as_vector(y)

    def fg_cache():
        cache = {}

        def compute(x):
            key = x.tobytes()
            if key not in cache:
                cache.clear()
                theta = AssumedParams.from_vector(x)
                mu = delay_cube(scenario, theta).reshape(-1)
                r = y - mu
                f = float(np.vdot(r, r).real)
                jac = delay_jacobian(scenario, theta)
                cache[key] = (f, -2.0 * (jac.conj().T @ r).real)
            return cache[key]
        return (lambda x: compute(x)[0]), (lambda x: compute(x)[1])

    fun, grad = fg_cache()
    opts = options or OptimizerOptions()
    if opts.scaling is None:
        opts = replace(opts, scaling=default_scaling(theta_init, scenario.wavelength))
    res = bfgs_minimize(fun, grad, theta_init.to_vector(), opts)
    theta = AssumedParams.from_vector(res.x).canonical()
    warnings = []
    if np.all(theta.amplitudes == 0):
        warnings.append("zero-amplitude fit: locations are not identifiable (non-unique optimum)")
    elif np.any(theta.amplitudes <= 1e-12 * max(np.max(theta.amplitudes), 1e-300)):
        warnings.append("a scatterer amplitude vanished: its location is not identifiable")
    return EstimateResult(theta, res.fun, res.grad_norm, res.iterations, res.converged,
                          res.message, tuple(warnings))


def pseudo_true_parameter(s, scenario, theta_init, options=None):
    """Minimise the KLD (equivalently ``||s - mu(theta)||^2``) over the delay model."""
    return _fit(s, scenario, theta_init, options)


def mmle(y, scenario, theta_init, options=None):
    """Mismatched ML estimate from noisy data (same machinery as the PTP)."""
    return _fit(y, scenario, theta_init, options)


def initial_guess(y, locations, scenario):
    """True locations with least-squares coefficients, as used for every fit."""
    q = ls_amplitudes(y, locations, scenario)
    return AssumedParams.from_coefficients(locations, q)
