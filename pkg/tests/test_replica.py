import numpy as np
import pytest

from susyclust.replica import (
    berezin_determinant, check_pd_hermitian_part, fermionic_gaussian, replica_inverse, tilde_matrix,
)
from susyclust.superfn import Integrator


def random_pd_part(rng, n, shift=0.3):
    """Random complex matrix whose Hermitian part is positive definite."""
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    C = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return B @ B.conj().T / n + shift * np.eye(n) + (C - C.conj().T) / 2


def test_fermionic_gaussian_examples():
    assert fermionic_gaussian(np.array([[2.0]]), 0, 0) == pytest.approx(0.5)
    for n in range(1, 5):
        assert np.allclose(fermionic_gaussian(np.eye(n)), np.eye(n), atol=1e-14)
    rng = np.random.default_rng(0)
    A = random_pd_part(rng, 3)
    assert np.max(np.abs(fermionic_gaussian(A) - np.linalg.inv(A))) <= 1e-10


def test_fermionic_gaussian_general_invertible_and_singular():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.max(np.abs(fermionic_gaussian(A) - np.linalg.inv(A))) <= 1e-10
    with pytest.raises(np.linalg.LinAlgError):
        fermionic_gaussian(np.array([[1.0, 2.0], [2.0, 4.0]]))


@pytest.mark.parametrize("n", range(1, 7))
def test_berezin_determinant(n):
    rng = np.random.default_rng(n)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    assert abs(berezin_determinant(A) - np.linalg.det(A)) <= 1e-10 * max(1, abs(np.linalg.det(A)))


def test_tilde_matrix_properties():
    rng = np.random.default_rng(2)
    assert np.allclose(tilde_matrix(np.eye(3)), np.eye(6))
    S = rng.normal(size=(3, 3))
    S = S + S.T
    assert np.allclose(tilde_matrix(S), np.block([[S, 0 * S], [0 * S, S]]))
    H = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    H = H + H.conj().T
    At = tilde_matrix(H)
    assert np.allclose(At, At.T)
    a = (H - H.T) / 2
    assert np.allclose(At[:3, 3:], -1j * a) and np.allclose(At[3:, :3], 1j * a)
    for _ in range(100):
        p1, p2 = rng.normal(size=3), rng.normal(size=3)
        x = np.concatenate([p1, p2])
        phi = p1 + 1j * p2
        assert np.isclose(x @ At @ x, phi @ H @ np.conj(phi))


def test_tilde_real_part_psd_iff_hermitian_part_psd():
    rng = np.random.default_rng(3)
    for _ in range(50):
        A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        herm = np.linalg.eigvalsh((A + A.conj().T) / 2).min()
        real = np.linalg.eigvalsh(tilde_matrix(A).real).min()
        assert (herm >= 0) == (real >= -1e-12)


def test_replica_inverse_examples():
    assert abs(replica_inverse(np.array([[1 + 1j]]), 0, 0) - 1 / (1 + 1j)) < 1e-12
    rng = np.random.default_rng(4)
    A = random_pd_part(rng, 2)
    val, err = replica_inverse(A, 0, 1, Integrator(n_theta=24), return_error=True)
    assert abs(val - np.linalg.inv(A)[0, 1]) <= max(err, 1e-9)
    mc, se = replica_inverse(A, 1, 0, Integrator(kind="importance", n_samples=200_000, seed=5), return_error=True)
    assert abs(mc - np.linalg.inv(A)[1, 0]) <= 4 * np.sqrt(2) * se


def test_replica_green_function_of_sampled_chain():
    rng = np.random.default_rng(6)
    H = 2 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1) + np.diag(rng.normal(size=3))
    E, eps = 0.7, 0.2
    for sign in (1, -1):
        A = sign * 1j * (H - E * np.eye(3)) + eps * np.eye(3)
        G = np.linalg.inv(H - (E + sign * 1j * eps) * np.eye(3))
        for x in range(3):
            for y in range(3):
                assert abs(replica_inverse(A, x, y) - (-sign * 1j) * G[x, y]) < 1e-9


def test_rescaling_invariance():
    rng = np.random.default_rng(7)
    A = random_pd_part(rng, 3)
    for gamma in (0.1, 3.0, 25.0):
        assert abs(gamma * replica_inverse(gamma * A, 0, 2) - replica_inverse(A, 0, 2)) < 1e-9


def test_pd_check():
    with pytest.raises(ValueError):
        check_pd_hermitian_part(np.array([[1.0, 0], [0, -1e-13]]))
    with pytest.raises(ValueError):
        replica_inverse(np.array([[0.0 + 1j]]), 0, 0)


def test_twenty_random_matrices_deterministic_path():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        A = random_pd_part(rng, n)
        inv = np.linalg.inv(A)
        for x in range(n):
            for y in range(n):
                worst = max(worst, abs(replica_inverse(A, x, y) - inv[x, y]))
    assert worst <= 1e-8
