import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scatmcrb import bounds as bd, estim, forward as fw
from scatmcrb.errors import DomainError, RegularityError
from scatmcrb.model import (AssumedParams, FrequencyGrid, Scatterer, Scenario, TrueParams,
                            noise_sample)


@pytest.fixture(scope="module")
def small():
    return Scenario.reference(n_transducers=8, n_bins=9, f_min=4.2e6)


THETA = AssumedParams([(2.1e-3, -0.7e-3), (0.0, 0.0)], [1.3, 0.6], [0.4, -2.0])


def helmholtz_ptp(sc, c=1500):
    pos = sc.grid.pixel_position(56, 36)
    phi = TrueParams.from_scatterers([Scatterer(pos, c), Scatterer((0, 0), c)], sc.medium)
    s = fw.helmholtz_scattered(sc, phi)
    th = estim.pseudo_true_parameter(s, sc, estim.initial_guess(s, phi.positions, sc)).theta_hat
    return phi, s, th


# --- KLD ---------------------------------------------------------------------

def test_kld_examples(small):
    mu = fw.delay_scattered(small, THETA).values
    assert bd.kld(mu, THETA, small) == 0
    e = np.zeros(small.n_data, dtype=complex)
    e[:3] = 1.0  # ||s - mu||^2 = 3
    assert bd.kld(mu + e, THETA, small, noise_var=3.0) == pytest.approx(1.0, rel=1e-14)


def test_kld_zero_noise(small):
    with pytest.raises(DomainError):
        bd.kld(np.zeros(small.n_data), THETA, small, noise_var=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_kld_nonnegative(seed):
    sc = Scenario.reference(n_transducers=4, n_bins=3, f_min=4.4e6)
    s = noise_sample(sc.n_data, 2.0, seed)
    assert bd.kld(s, THETA, sc) >= 0


# --- Slepian matrices ---------------------------------------------------------

def test_matched_triple_identity(small):
    s = fw.delay_scattered(small, THETA)
    A, B = bd.slepian_matrices(small, THETA, s)
    jac = fw.delay_jacobian(small, THETA)
    assert np.allclose(A, -(2 / small.noise_var) * (jac.conj().T @ jac).real, rtol=1e-12,
                       atol=1e-13 * np.linalg.norm(A))
    assert np.array_equal(B, -A)
    m = bd.mcrb(A, B)
    crb = bd.crb_at(small, THETA)
    neg_inv = np.linalg.inv(-A)
    assert np.all(np.abs(m - crb) <= 1e-10 * np.abs(crb))
    assert np.all(np.abs(m - neg_inv) <= 1e-10 * np.abs(neg_inv))


def test_slepian_symmetry_and_psd(small):
    _, s, th = helmholtz_ptp(small)
    A, B = bd.slepian_matrices(small, th, s)
    assert np.linalg.norm(A - A.T) <= 1e-12 * np.linalg.norm(A)
    ev = np.linalg.eigvalsh(B)
    assert ev[0] >= -1e-10 * ev[-1]
    bm = bd.bound_matrices(small, th, s)
    ev = np.linalg.eigvalsh(bm.mcrb)
    assert ev[0] >= -1e-10 * ev[-1]
    assert bm.cond_A >= 1


def test_mismatch_changes_A(small):
    _, s, th = helmholtz_ptp(small)
    A, B = bd.slepian_matrices(small, th, s)
    assert np.linalg.norm(A + B) > 1e-3 * np.linalg.norm(A)


def test_B_equals_information_at_stationary_point(small):
    # at the PTP Re{J^H Delta} = 0, so the two Delta terms of B cancel
    _, s, th = helmholtz_ptp(small)
    B = bd.slepian_B(small, th, s)
    assert np.allclose(B, bd.fim(small, th), rtol=1e-6, atol=1e-9 * np.linalg.norm(B))


# --- MCRB / CRB --------------------------------------------------------------

def test_mcrb_examples():
    assert np.allclose(bd.mcrb(-np.eye(4), np.eye(4)), np.eye(4))
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 4))
    A = -(a @ a.T + 4 * np.eye(4))
    b = rng.standard_normal((4, 4))
    B = b @ b.T + np.eye(4)
    assert np.allclose(bd.mcrb(2.5 * A, B), bd.mcrb(A, B) / 2.5 ** 2, rtol=1e-12)
    assert np.allclose(bd.mcrb(A, -A), np.linalg.inv(-A), rtol=1e-12)


def test_mcrb_singular():
    A = -np.ones((4, 4)) - np.diag([1.0, 1.0, 0.0, 0.0])  # rows 3 and 4 coincide
    with pytest.raises(RegularityError):
        bd.mcrb(A, np.eye(4))


def test_crb_linear_in_noise(small):
    c1 = bd.crb_at(small, THETA, noise_var=1.0)
    c3 = bd.crb_at(small, THETA, noise_var=3.0)
    assert np.allclose(c3, 3 * c1, rtol=1e-12)


def test_crb_single_observation_singular():
    fs, nt = 40e6, 601
    base = Scenario.reference(n_transducers=4)
    freqs = FrequencyGrid(68, 68, fs, nt)
    sc = Scenario(base.medium, base.ring, base.pulse, freqs, 3.0, base.grid)
    th = AssumedParams([(1e-3, 2e-3)], [1.0], [0.3])
    # one (t, r) pair: restrict the data to a single sample via a diagonal covariance
    var = np.full(sc.n_data, 1e30)
    var[sc.linear_index(0, 1, 2)] = 3.0
    with pytest.raises(RegularityError):
        bd.crb_at(sc, th, noise_var=var)


def test_diagonal_noise_matches_scalar(small):
    a = bd.crb_at(small, THETA, noise_var=np.full(small.n_data, 3.0))
    assert np.allclose(a, bd.crb_at(small, THETA), rtol=1e-12)


# --- Q-value -----------------------------------------------------------------

def test_q_value_examples():
    assert bd.q_value(np.eye(4), range(4)) == 4
    assert bd.q_value(np.diag([4.0, 9, 16, 25]), range(4)) == 14
    assert bd.q_value(np.zeros((4, 4)), range(4)) == 0
    assert bd.q_value(np.diag([-1e-13, 1.0]), [0, 1]) == 1
    with pytest.raises(DomainError):
        bd.q_value(np.diag([-1e-6, 1.0]), [0, 1])


# --- error statistics --------------------------------------------------------

def test_error_stats_all_equal():
    st_ = bd.error_stats([THETA, THETA, THETA], THETA)
    assert np.all(st_.emmse == 0) and np.all(st_.bias == 0)


def test_error_stats_two_symmetric():
    v = np.array([1e-5, -2e-5, 3e-5, 4e-5, 0.1, -0.2, 0.05, 0.01])
    t0 = THETA.to_vector()
    st_ = bd.error_stats([t0 + v, t0 - v], THETA)
    assert np.allclose(st_.emmse, 2 * np.outer(v, v), rtol=1e-9, atol=1e-25)
    assert np.allclose(st_.bias, 0, atol=1e-15)


def test_error_stats_needs_two():
    with pytest.raises(ValueError):
        bd.error_stats([THETA], THETA)


def test_error_stats_wraps_phase():
    t0 = THETA.to_vector()
    a, b = t0.copy(), t0.copy()
    t0[6] = np.pi - 0.01
    a[6] = -np.pi + 0.01  # 0.02 across the branch cut
    b[6] = np.pi - 0.03
    st_ = bd.error_stats([a, b], t0)
    assert st_.emmse[6, 6] == pytest.approx(0.02 ** 2 + 0.02 ** 2, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40))
def test_error_stats_decomposition(seed, n):
    rng = np.random.default_rng(seed)
    t0 = THETA.to_vector()
    est = [t0 + rng.normal(0.3, 1.0, 8) * np.r_[[1e-5] * 4, [0.1] * 4] for _ in range(n)]
    st_ = bd.error_stats(est, t0)
    lhs = st_.covariance + np.outer(st_.bias, st_.bias)
    assert np.allclose(lhs, st_.emmse, rtol=1e-9, atol=1e-9 * np.max(np.abs(st_.emmse)))
    assert np.allclose(st_.bias, t0 - st_.empirical_mean, atol=1e-15)


def test_mse_vs_mcrb_trivial():
    phi = TrueParams(THETA.positions, [1e-7, 1e-7])
    st_loc = [THETA, THETA]
    mse, diff, rr = bd.mse_vs_mcrb(st_loc, THETA, phi, np.zeros((8, 8)))
    assert np.all(mse == 0) and np.all(diff == 0) and np.all(rr == 0)
    assert mse.shape == (4, 4)


@pytest.mark.slow
def test_mse_minus_mcrb_dominates_rr():
    sc = Scenario.reference(n_transducers=8, n_bins=9, f_min=4.2e6, noise_var=1e-9)
    phi, s, th = helmholtz_ptp(sc)
    bm = bd.bound_matrices(sc, th, s)
    ests = []
    for i in range(500):
        y = s.values + noise_sample(sc.n_data, sc.noise_var, 1000 + i)
        res = estim.mmle(y, sc, estim.initial_guess(y, phi.positions, sc))
        assert res.converged
        ests.append(res.theta_hat)
    _, diff, rr = bd.mse_vs_mcrb(ests, th, phi, bm.mcrb)
    se = bd.mse_standard_error(ests, phi)
    gap = np.linalg.eigvalsh(diff - rr)[0]
    assert gap >= -3 * np.linalg.norm(se, 2)
