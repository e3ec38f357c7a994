"""Scattered-field generators (Foldy-Lax, Born, delay) and delay-model derivatives.

Arrays inside this module use the cube layout ``(freq, tx, rx)``; public
functions return :class:`FieldData` (or flattened matrices) in the linear
ordering of ``model.FieldData``.

Point scatterers carry a quadrature weight ``scenario.cell_area`` in the
contrast-source integral, so the interaction matrix is
``M[u, v] = omega^2 * w * gamma_v * Ghat(x_u, x_v)`` and the receiver leg is
``omega^2 * w * G(x_r, x_v) * gamma_v``.
"""

import numpy as np

from .errors import GeometryError, ResonanceError, SingularityError
from .model import FieldData
from .specialfn import green2d

COND_LIMIT = 1e12
RESIDUAL_LIMIT = 1e-12

# relative distance below which two points are treated as coincident
_COINCIDENT = 1e-12


def _positions(params):
    return np.asarray(params.positions, dtype=float).reshape(-1, 2)


def _distances(points, sources):
    """``D[u, m] = |points[u] - sources[m]|`` and the unit vectors from sources to points."""
    diff = points[:, None, :] - sources[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    return dist, diff


def _check_clear_of_ring(points, scenario):
    dist, _ = _distances(points, scenario.ring.positions)
    if np.any(dist <= _COINCIDENT * scenario.ring.radius):
        raise SingularityError("scatterer coincides with a transducer element")
    return dist


def check_distinct(points, scale):
    """Raise :class:`GeometryError` if two points coincide (relative to ``scale``)."""
    if len(points) < 2:
        return
    dist, _ = _distances(points, points)
    iu = np.triu_indices(len(points), 1)
    if np.any(dist[iu] <= _COINCIDENT * scale):
        raise GeometryError("two scatterers share the same location")


def incident_at_points(omega, tx_index, points, scenario):
    """Incident field of transmitter ``tx_index`` at ``points``: ``P(omega) G(k0, |x - x_t|)``."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    xt = scenario.ring.positions[tx_index]
    d = np.sqrt(np.sum((points - xt) ** 2, axis=1))
    if np.any(d == 0.0):
        raise SingularityError("evaluation point coincides with the transmitter")
    k0 = scenario.medium.wavenumber(omega)
    amp = scenario.pulse.spectrum(omega / (2.0 * np.pi))
    return amp * green2d(k0, d)


def _ring_green(scenario, dist):
    """``G[k, u, m]`` between scatterers and ring elements for every frequency."""
    k0 = scenario.medium.wavenumber(scenario.freqs.omegas)
    return green2d(k0[:, None, None], dist[None, :, :])


def smoothed_green(k0, xi, xj, dx, dz):
    """Four-corner trapezoid average of G between ``xi`` and the cell around ``xj``.

    ``xi`` and ``xj`` are ``(U, 2)`` arrays; returns ``(len(k0), U, U)``.
    """
    k0 = np.atleast_1d(np.asarray(k0, dtype=float))
    out = np.zeros((k0.size, len(xi), len(xj)), dtype=complex)
    for sx in (-0.5, 0.5):
        for sz in (-0.5, 0.5):
            shifted = xj + np.array([sx * dx, sz * dz])
            d, _ = _distances(xi, shifted)
            out += green2d(k0[:, None, None], d[None, :, :])
    return 0.25 * out


def interaction_matrices(scenario, phi):
    """Foldy-Lax matrices ``M[k, u, v] = omega_k^2 w gamma_v Ghat(x_u, x_v)``."""
    pos = _positions(phi)
    omega = scenario.freqs.omegas
    k0 = scenario.medium.wavenumber(omega)
    ghat = smoothed_green(k0, pos, pos, scenario.grid.dx, scenario.grid.dz)
    scale = (omega ** 2 * scenario.cell_area)[:, None, None]
    return scale * ghat * np.asarray(phi.gamma)[None, None, :]


def _incident_cube(scenario, green_ring):
    """Incident field at scatterers, ``(K, U, M_T)``."""
    amp = scenario.pulse.spectrum(scenario.freqs.frequencies)
    return amp[:, None, None] * green_ring


def _receive(scenario, phi, green_ring, psi):
    """Propagate scatterer fields ``psi[k, v, t]`` to receivers; returns (K, T, R)."""
    omega = scenario.freqs.omegas
    weight = (omega ** 2 * scenario.cell_area)[:, None]
    src = weight[:, :, None] * np.asarray(phi.gamma)[None, :, None] * psi  # (K, V, T)
    # out[k, t, r] = sum_v G[k, v, r] src[k, v, t]
    return np.einsum("kvr,kvt->ktr", green_ring, src)


def foldy_total_field(scenario, phi, check=True):
    """Total field at the scatterers, ``(K, U, M_T)``, solved with the Foldy-Lax system."""
    pos = _positions(phi)
    check_distinct(pos, scenario.wavelength)
    dist = _check_clear_of_ring(pos, scenario)
    green_ring = _ring_green(scenario, dist)
    psi_inc = _incident_cube(scenario, green_ring)
    mats = interaction_matrices(scenario, phi)
    n_u = pos.shape[0]
    eye = np.eye(n_u)
    psi = np.empty_like(psi_inc)
    for k in range(mats.shape[0]):
        system = eye - mats[k]
        if check:
            sv = np.linalg.svd(system, compute_uv=False)
            cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
            # cond alone is blind for U = 1, so also measure against the scale of I and M
            scale = max(1.0, float(np.linalg.norm(mats[k], 2)))
            if not np.isfinite(cond) or cond > COND_LIMIT or sv[-1] < scale / COND_LIMIT:
                raise ResonanceError(
                    f"Foldy-Lax system ill-conditioned (cond={cond:.3g}) at frequency index {k}",
                    freq_index=k)
        try:
            psi[k] = np.linalg.solve(system, psi_inc[k])
        except np.linalg.LinAlgError as exc:
            raise ResonanceError(f"singular Foldy-Lax system at frequency index {k}",
                                 freq_index=k) from exc
        if check:
            res = system @ psi[k] - psi_inc[k]
            num = np.linalg.norm(res, axis=0)
            den = np.linalg.norm(psi_inc[k], axis=0)
            bad = num > RESIDUAL_LIMIT * np.maximum(den, np.finfo(float).tiny)
            bad &= den > 0
            if np.any(bad):
                t = int(np.argmax(bad))
                raise ResonanceError(
                    f"Foldy-Lax residual {num[t] / den[t]:.3g} at frequency index {k}",
                    freq_index=k, tx_index=t)
    return psi, green_ring


def helmholtz_scattered(scenario, phi):
    """Multiple-scattering (Foldy-Lax) field at all receivers."""
    psi, green_ring = foldy_total_field(scenario, phi)
    return FieldData.from_cube(_receive(scenario, phi, green_ring, psi))


def born_scattered(scenario, phi):
    """First-order Born field: the total field at scatterers is replaced by the incident one."""
    pos = _positions(phi)
    check_distinct(pos, scenario.wavelength)
    dist = _check_clear_of_ring(pos, scenario)
    green_ring = _ring_green(scenario, dist)
    psi_inc = _incident_cube(scenario, green_ring)
    return FieldData.from_cube(_receive(scenario, phi, green_ring, psi_inc))


def delay_time(xu, xt, xr, c0):
    """Two-way travel time transmitter -> scatterer -> receiver."""
    xu, xt, xr = (np.asarray(v, dtype=float) for v in (xu, xt, xr))
    return (np.linalg.norm(xt - xu) + np.linalg.norm(xu - xr)) / c0


class _DelayTerms:
    """Per-scatterer pieces of the delay model shared by mu, J and d2mu."""

    def __init__(self, scenario, theta, need_unit=False):
        self.scenario = scenario
        self.pos = _positions(theta)
        self.q = np.asarray(theta.q, dtype=complex)
        self.c0 = scenario.medium.c0
        self.omega = scenario.freqs.omegas
        self.pulse = scenario.pulse.spectrum(scenario.freqs.frequencies)
        self.dist, diff = _distances(self.pos, scenario.ring.positions)  # (U, M)
        if need_unit:
            if np.any(self.dist == 0.0):
                raise SingularityError("delay derivative undefined at a transducer position")
            self.unit = diff / self.dist[:, :, None]  # (U, M, 2), from element to scatterer
        phase = np.exp(-1j * self.omega[:, None, None] * self.dist[None, :, :] / self.c0)
        self.phase = phase  # (K, U, M)

    def basis(self, u):
        """Unit-coefficient response ``P e^{-j omega tau_u}`` as a (K, T, R) cube."""
        e = self.phase[:, u, :]
        return self.pulse[:, None, None] * e[:, :, None] * e[:, None, :]

    def tau_grad(self, u):
        """``d tau_u / d x_u`` as (T, R, 2)."""
        n = self.unit[u]
        return (n[:, None, :] + n[None, :, :]) / self.c0

    def tau_hess(self, u):
        """``d^2 tau_u / dx dx^T`` as (T, R, 2, 2)."""
        n = self.unit[u]
        proj = (np.eye(2)[None, :, :] - n[:, :, None] * n[:, None, :]) / self.dist[u][:, None, None]
        return (proj[:, None, :, :] + proj[None, :, :, :]) / self.c0


def delay_cube(scenario, theta):
    terms = _DelayTerms(scenario, theta)
    e = terms.phase * terms.q[None, :, None]
    # mu[k, t, r] = P_k sum_u q_u E[k,u,t] E[k,u,r]
    mu = np.einsum("kut,kur->ktr", e, terms.phase)
    return terms.pulse[:, None, None] * mu


def delay_scattered(scenario, theta):
    """Delay-model mean: scaled, delayed copies of the pulse, no geometric spreading."""
    return FieldData.from_cube(delay_cube(scenario, theta))


def _param_kind(index, n_u):
    """Map a parameter index to (kind, scatterer, component)."""
    if index < 2 * n_u:
        return "pos", index // 2, index % 2
    if index < 3 * n_u:
        return "amp", index - 2 * n_u, None
    if index < 4 * n_u:
        return "phase", index - 3 * n_u, None
    raise IndexError(f"parameter index {index} out of range for {n_u} scatterers")


def delay_jacobian(scenario, theta):
    """Complex Jacobian ``d mu / d theta`` with shape (N, 4U)."""
    terms = _DelayTerms(scenario, theta, need_unit=True)
    n_u = terms.pos.shape[0]
    cols = np.empty((scenario.n_data, 4 * n_u), dtype=complex)
    w = terms.omega[:, None, None]
    for u in range(n_u):
        base = terms.basis(u)
        amp_col = base * np.exp(1j * theta.phases[u])
        mu_u = base * terms.q[u]
        grad = terms.tau_grad(u)
        for c in range(2):
            cols[:, 2 * u + c] = (-1j * w * grad[None, :, :, c] * mu_u).reshape(-1)
        cols[:, 2 * n_u + u] = amp_col.reshape(-1)
        cols[:, 3 * n_u + u] = (1j * mu_u).reshape(-1)
    return cols


def _second_cube(terms, theta, i, j, n_u):
    ki, ui, ci = _param_kind(i, n_u)
    kj, uj, cj = _param_kind(j, n_u)
    shape = (terms.omega.size, terms.dist.shape[1], terms.dist.shape[1])
    if ui != uj:
        return np.zeros(shape, dtype=complex)
    u = ui
    order = {"pos": 0, "amp": 1, "phase": 2}
    if order[ki] > order[kj]:
        ki, kj, ci, cj = kj, ki, cj, ci
    w = terms.omega[:, None, None]
    base = terms.basis(u)
    expj = np.exp(1j * theta.phases[u])
    mu_u = base * terms.q[u]
    if ki == "pos":
        grad = terms.tau_grad(u)
        gi = grad[None, :, :, ci]
        if kj == "pos":
            hess = terms.tau_hess(u)[None, :, :, ci, cj]
            gj = grad[None, :, :, cj]
            return (-1j * w * hess - w ** 2 * gi * gj) * mu_u
        if kj == "amp":
            return -1j * w * gi * base * expj
        return w * gi * mu_u
    if ki == "amp":
        if kj == "amp":
            return np.zeros(shape, dtype=complex)
        return 1j * base * expj
    return -mu_u


def delay_second_derivative(scenario, theta, i, j):
    """``d^2 mu / d theta_i d theta_j`` as a length-N complex vector."""
    terms = _DelayTerms(scenario, theta, need_unit=True)
    return _second_cube(terms, theta, i, j, terms.pos.shape[0]).reshape(-1)


def delay_hessian_contract(scenario, theta, vec):
    """Matrix ``H[i, j] = (d^2 mu / d theta_i d theta_j)^H vec``, shape (4U, 4U).

    Only same-scatterer blocks are nonzero, so the cost is 10 N per scatterer.
    """
    terms = _DelayTerms(scenario, theta, need_unit=True)
    n_u = terms.pos.shape[0]
    d = 4 * n_u
    vec = np.asarray(vec, dtype=complex).reshape(-1)
    out = np.zeros((d, d), dtype=complex)
    for u in range(n_u):
        idx = [2 * u, 2 * u + 1, 2 * n_u + u, 3 * n_u + u]
        for a, i in enumerate(idx):
            for j in idx[a:]:
                val = np.vdot(_second_cube(terms, theta, i, j, n_u).reshape(-1), vec)
                out[i, j] = val
                out[j, i] = val
    return out


def _embed_spectrum(field_slice, scenario):
    field_slice = np.asarray(field_slice, dtype=complex).reshape(-1)
    if field_slice.size != scenario.n_freq:
        raise ValueError(f"slice has {field_slice.size} bins, scenario has {scenario.n_freq}")
    half = np.zeros(scenario.pulse.nt // 2 + 1, dtype=complex)
    half[scenario.freqs.k_min:scenario.freqs.k_max + 1] = field_slice
    return half


def time_domain_synthesis(field_slice, scenario):
    """Real time trace from one (tx, rx) spectrum: conjugate-symmetric inverse DFT, 1/nt scaling."""
    half = _embed_spectrum(field_slice, scenario)
    return np.fft.irfft(half, n=scenario.pulse.nt)


def envelope(field_slice, scenario):
    """Magnitude of the analytic signal of :func:`time_domain_synthesis`."""
    half = _embed_spectrum(field_slice, scenario)
    nt = scenario.pulse.nt
    full = np.zeros(nt, dtype=complex)
    full[:half.size] = 2.0 * half
    full[0] = half[0]
    if nt % 2 == 0:
        full[nt // 2] = half[-1]
    return np.abs(np.fft.ifft(full))
