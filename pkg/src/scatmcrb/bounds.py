"""KLD, Slepian matrices, MCRB/CRB and empirical error statistics.

Sign convention: ``A`` is the expected Hessian of the misspecified
log-likelihood (negative definite near the PTP) and ``MCRB = A^-1 B A^-1``,
so a matched model gives ``B = -A``.

Noise covariance is white: ``noise_var`` is either a scalar sigma^2 or a
length-N vector holding a diagonal covariance.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RegularityError
from .forward import delay_cube, delay_hessian_contract, delay_jacobian
from .model import _as_vector, parameter_difference

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class BoundMatrices:
    A: np.ndarray
    B: np.ndarray
    mcrb: np.ndarray
    crb: np.ndarray
    cond_A: float

    def q_mcrb(self, indices):
        return q_value(self.mcrb, indices)

    def q_crb(self, indices):
        return q_value(self.crb, indices)


@dataclass(frozen=True, eq=False)
class ErrorStats:
    emmse: np.ndarray
    empirical_mean: np.ndarray
    bias: np.ndarray
    covariance: np.ndarray
    n_realizations: int


def _inv_noise(scenario, noise_var=None):
    var = scenario.noise_var if noise_var is None else noise_var
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise DomainError("noise variance must be positive for likelihood quantities")
    if var.ndim == 0:
        return float(1.0 / var)
    if var.shape != (scenario.n_data,):
        raise ValueError("diagonal noise covariance must have one entry per datum")
    return 1.0 / var


def _sym(m):
    return 0.5 * (m + m.T)


def kld(s, theta, scenario, noise_var=None):
    """``(s - mu)^H Sigma^-1 (s - mu)``; constant terms of the Gaussian KLD are omitted."""
    w = _inv_noise(scenario, noise_var)
    r = _as_vector(s) - delay_cube(scenario, theta).reshape(-1)
    return float(np.sum(w * np.abs(r) ** 2))


def fim(scenario, theta, noise_var=None, jacobian=None):
    """Fisher information ``2 Re{J^H Sigma^-1 J}`` of the delay model."""
    w = _inv_noise(scenario, noise_var)
    jac = delay_jacobian(scenario, theta) if jacobian is None else jacobian
    return _sym(2.0 * (jac.conj().T @ (np.reshape(w, (-1, 1)) * jac)).real)


def slepian_matrices(scenario, theta0, s, noise_var=None):
    """Return ``(A, B)`` from the generalized Slepian formulae at ``theta0``."""
    w = _inv_noise(scenario, noise_var)
    wv = np.broadcast_to(w, (scenario.n_data,))
    jac = delay_jacobian(scenario, theta0)
    delta = _as_vector(s) - delay_cube(scenario, theta0).reshape(-1)
    wdelta = wv * delta
    info = (jac.conj().T @ (wv[:, None] * jac))
    curv = delay_hessian_contract(scenario, theta0, wdelta)
    a_mat = 2.0 * (-info + curv).real
    g = jac.conj().T @ wdelta  # g_i = J_i^H Sigma^-1 Delta
    # 2 Re{conj(g) conj(g)^T + g g^H} = 4 Re(g) Re(g)^T; the product form avoids
    # cancelling the Im(g) parts, which dominate at low noise
    b_mat = 4.0 * np.outer(g.real, g.real) + 2.0 * info.real
    return _sym(a_mat), _sym(b_mat)


def slepian_A(scenario, theta0, s, noise_var=None):
    return slepian_matrices(scenario, theta0, s, noise_var)[0]


def slepian_B(scenario, theta0, s, noise_var=None):
    return slepian_matrices(scenario, theta0, s, noise_var)[1]


def _equilibrated_inverse(mat, what):
    """Inverse via symmetric diagonal scaling; returns (inverse, scaled condition number)."""
    diag = np.abs(np.diag(mat))
    if np.any(diag == 0) or not np.all(np.isfinite(mat)):
        raise RegularityError(f"{what} has a zero diagonal entry; bound undefined")
    d = 1.0 / np.sqrt(diag)
    scaled = mat * d[:, None] * d[None, :]
    cond = float(np.linalg.cond(scaled))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RegularityError(f"{what} is singular to working precision (cond={cond:.3g})")
    inv = np.linalg.inv(scaled) * d[:, None] * d[None, :]
    return _sym(inv), cond


def mcrb(A, B):
    """Sandwich ``A^-1 B A^-1`` (symmetrized)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    ainv, _ = _equilibrated_inverse(A, "Slepian matrix A")
    return _check_psd(_sym(ainv @ B @ ainv), "MCRB")


def _check_psd(m, what):
    ev = np.linalg.eigvalsh(m)
    top = max(float(np.max(np.abs(ev))), np.finfo(float).tiny)
    if ev[0] < -1e-10 * top:
        raise RegularityError(f"{what} is not positive semidefinite (min eigenvalue {ev[0]:.3g})")
    return m


def crb_at(scenario, theta0, noise_var=None, jacobian=None):
    """Classical CRB of the delay model evaluated at ``theta0``."""
    inv, _ = _equilibrated_inverse(fim(scenario, theta0, noise_var, jacobian), "Fisher information")
    return inv


def bound_matrices(scenario, theta0, s, noise_var=None):
    A, B = slepian_matrices(scenario, theta0, s, noise_var)
    ainv, cond = _equilibrated_inverse(A, "Slepian matrix A")
    m = _check_psd(_sym(ainv @ B @ ainv), "MCRB")
    return BoundMatrices(A, B, m, crb_at(scenario, theta0, noise_var), cond)


def q_value(matrix, indices):
    """Sum of square roots of selected diagonal entries."""
    diag = np.diag(np.asarray(matrix, dtype=float))[list(indices)]
    if np.any(~np.isfinite(diag)):
        raise DomainError("non-finite diagonal entry in Q-value")
    if np.any(diag < -1e-12):
        raise DomainError(f"negative diagonal entry {diag.min():.3g} in Q-value")
    return float(np.sum(np.sqrt(np.clip(diag, 0.0, None))))


def _estimate_matrix(estimates):
    rows = [e.to_vector() if hasattr(e, "to_vector") else np.asarray(e, dtype=float)
            for e in estimates]
    return np.vstack(rows)


def error_stats(estimates, theta0):
    """EMMSE about ``theta0`` with its bias/covariance decomposition (1/(N-1) scaling)."""
    x = _estimate_matrix(estimates)
    n = x.shape[0]
    if n < 2:
        raise ValueError("error statistics need at least two estimates")
    t0 = theta0.to_vector() if hasattr(theta0, "to_vector") else np.asarray(theta0, dtype=float)
    err = np.vstack([parameter_difference(row, t0) for row in x])
    emmse = err.T @ err / (n - 1)
    mean_err = err.mean(axis=0)
    centred = err - mean_err
    scatter = centred.T @ centred
    bias = -mean_err
    # same 1/(N-1) for both so that emmse = covariance + b b^T holds exactly
    covariance = (scatter + n * np.outer(mean_err, mean_err)) / (n - 1) - np.outer(bias, bias)
    return ErrorStats(_sym(emmse), t0 + mean_err, bias, _sym(covariance), n)


def mse_vs_mcrb(estimates, theta0, phi, mcrb_matrix):
    """Location-subspace MSE about ``phi``, ``MSE - MCRB`` and ``r r^T`` with ``r = phi - theta0``."""
    x = _estimate_matrix(estimates)
    n = x.shape[0]
    if n < 2:
        raise ValueError("error statistics need at least two estimates")
    t0 = theta0.to_vector() if hasattr(theta0, "to_vector") else np.asarray(theta0, dtype=float)
    loc = 2 * (t0.size // 4)
    phi_loc = (phi.positions.reshape(-1) if hasattr(phi, "positions")
               else np.asarray(phi, dtype=float)[:loc])
    err = x[:, :loc] - phi_loc[None, :]
    mse = err.T @ err / (n - 1)
    r = phi_loc - t0[:loc]
    diff = mse - np.asarray(mcrb_matrix)[:loc, :loc]
    return _sym(mse), _sym(diff), np.outer(r, r)


def mse_standard_error(estimates, phi):
    """Entrywise Monte Carlo standard error of the location MSE about ``phi``."""
    x = _estimate_matrix(estimates)
    loc = 2 * (x.shape[1] // 4)
    phi_loc = (phi.positions.reshape(-1) if hasattr(phi, "positions")
               else np.asarray(phi, dtype=float)[:loc])
    err = x[:, :loc] - phi_loc[None, :]
    prods = err[:, :, None] * err[:, None, :]
    return prods.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
