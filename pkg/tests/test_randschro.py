import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from susyclust.disorder import DisorderModel
from susyclust.randschro import (
    ClusterOptions, LatticeModel, SpectralPoint, build_hamiltonian, clean_ldos, cluster_green,
    direct_cluster_term, direct_term_literal, dual_cluster_term, dual_taylor_terms, dual_term_literal, ldos,
    mc_green, mc_green_extrapolated, mc_green_matrix, write_cluster_csv,
)

GAUSS = DisorderModel("gaussian", 1.0)


def one_site_oracle(gamma, w, h=2.0, sigma=1.0):
    """E (h + gamma omega - w)^-1 for omega ~ N(0, sigma^2), by adaptive quadrature."""
    dens = lambda t: np.exp(-t * t / (2 * sigma ** 2)) / np.sqrt(2 * np.pi * sigma ** 2)
    f = lambda t: dens(t) / (h + gamma * t - w)
    re = integrate.quad(lambda t: f(t).real, -12, 12, limit=400, epsabs=1e-13)[0]
    im = integrate.quad(lambda t: f(t).imag, -12, 12, limit=400, epsabs=1e-13)[0]
    return re + 1j * im


def test_laplacian_stencil():
    H = build_hamiltonian(LatticeModel((4,)))
    assert np.array_equal(H.real, 2 * np.eye(4) - np.eye(4, k=1) - np.eye(4, k=-1))
    H2 = build_hamiltonian(LatticeModel((3, 3), colours=2))
    assert H2.shape == (18, 18) and np.allclose(np.diag(H2), 4)


def test_exponential_kernel_and_hermiticity():
    m = LatticeModel((3,), hopping="exponential", hop_C=0.5, hop_alpha=2.0)
    H = build_hamiltonian(m)
    assert abs(H[0, 2] - 0.5 * np.exp(-4.0)) < 1e-16
    with pytest.raises(ValueError):
        build_hamiltonian(LatticeModel((2,), colours=2, hopping="exponential", block=((0, 1), (0, 0))))
    with pytest.raises(ValueError):
        build_hamiltonian(LatticeModel((70,), colours=60))


def test_spectral_point_branches():
    p = SpectralPoint(0.3, 0.1, 0.2, 1)
    assert p.z == 0.3 - 0.2j and p.w == 0.3 - 0.1j
    assert p.conjugate().w == np.conj(p.w)
    with pytest.raises(ValueError):
        SpectralPoint(0.0, -1.0)


def test_mc_vanishing_disorder_is_clean_resolvent():
    m = LatticeModel((4,), gamma=1e-12)
    p = SpectralPoint(0.7, 0.3)
    H = build_hamiltonian(m)
    res = mc_green_matrix(m, GAUSS, p, n_samples=50)
    assert np.allclose(res.mean, np.linalg.inv(H - p.w * np.eye(4)), atol=1e-10)


def test_mc_thread_independence_and_extrapolation():
    m = LatticeModel((3,), gamma=0.5)
    p = SpectralPoint(-0.5, 0.05)
    a = mc_green_matrix(m, GAUSS, p, 3000, seed=4, threads=1, chunk=1000)
    b = mc_green_matrix(m, GAUSS, p, 3000, seed=4, threads=3, chunk=1000)
    assert np.array_equal(a.mean, b.mean)
    ex = mc_green_extrapolated(m, GAUSS, SpectralPoint(-0.5, 0.0), n_samples=20000, seed=1)
    G, err = mc_green(m, GAUSS, SpectralPoint(-0.5, 1e-3), 0, 0, n_samples=20000, seed=1)
    assert abs(ex.block(m, 0, 0)[0][0, 0] - G[0, 0]) < 5 * ex.block(m, 0, 0)[1][0, 0] + 2e-3


@pytest.mark.parametrize("branch", [1, -1])
def test_direct_single_site_matches_oracle(branch):
    m = LatticeModel((1,), gamma=2.0)
    p = SpectralPoint(0.4, 0.3, 0.0, branch)
    t = direct_cluster_term(m, GAUSS, p, 0, 0, 0, ClusterOptions(n_omega=24))
    assert abs(t.contribution[0, 0] - one_site_oracle(2.0, p.w)) < 1e-8
    assert np.sign(t.contribution[0, 0].imag) == branch


def test_dual_single_site_matches_direct():
    m = LatticeModel((1,), gamma=0.3)
    p = SpectralPoint(-1.0)
    d = dual_cluster_term(m, GAUSS, p, 0, 0, 0, ClusterOptions(n_omega=24))
    assert abs(d.contribution[0, 0] - one_site_oracle(0.3, -1.0)) < 1e-7


def test_direct_offdiagonal_zero_without_coupling():
    m = LatticeModel((4,), gamma=5.0)
    p = SpectralPoint(0.0, 0.2)
    # sites 0 and 2 are not nearest neighbours: no N = 0 tree connects them
    assert np.max(np.abs(direct_cluster_term(m, GAUSS, p, 0, 2, 0).contribution)) == 0


def test_dual_small_gamma_limit_is_free_covariance():
    m = LatticeModel((3,), gamma=1e-4)
    p = SpectralPoint(-1.0)
    C = np.linalg.inv(build_hamiltonian(m) + np.eye(3))
    for x, y in [(0, 0), (0, 1), (0, 2)]:
        d = dual_cluster_term(m, GAUSS, p, x, y, 0, ClusterOptions(n_omega=6, n_s=3))
        assert abs(d.contribution[0, 0] - C[x, y]) < 1e-3 * abs(C[0, 0])


def test_branch_conjugation_symmetry():
    m = LatticeModel((3,), gamma=4.0)
    p = SpectralPoint(0.2, 0.3)
    opts = ClusterOptions(n_omega=10, n_s=3)
    for N in (0, 1):
        a = direct_cluster_term(m, GAUSS, p, 0, 1, N, opts).contribution
        b = direct_cluster_term(m, GAUSS, p.conjugate(), 1, 0, N, opts).contribution
        assert np.allclose(a, np.conj(b).T, atol=1e-9)


def test_literal_direct_path_agrees():
    m = LatticeModel((2,), gamma=2.0)
    p = SpectralPoint(0.3, 0.2)
    d = direct_cluster_term(m, GAUSS, p, 0, 0, 0, ClusterOptions(n_omega=24))
    assert abs(direct_term_literal(m, GAUSS, p, 0, 0) - d.value[0, 0]) < 1e-7


def test_literal_dual_path_both_realizations_agree():
    m = LatticeModel((1,), gamma=0.3)
    p = SpectralPoint(-1.0)
    d = dual_cluster_term(m, GAUSS, p, 0, 0, 0, ClusterOptions(n_omega=24)).value[0, 0]
    a = dual_term_literal(m, GAUSS, p, 0, realization="differentiate")
    b = dual_term_literal(m, GAUSS, p, 0, realization="transform")
    assert abs(a - b) < 1e-12
    assert abs(a - d) < 1e-7
    with pytest.raises(ValueError):
        dual_term_literal(m, GAUSS, p, 0, realization="other")


def test_dual_requires_regularisation():
    m = LatticeModel((2,), gamma=0.3)
    with pytest.raises(ValueError):
        dual_cluster_term(m, GAUSS, SpectralPoint(1.0), 0, 0, 0)  # eigenvalue of the 2-site chain


def test_order_budget_enforced():
    m = LatticeModel((4,), gamma=5.0)
    with pytest.raises(ValueError):
        direct_cluster_term(m, GAUSS, SpectralPoint(0.0, 0.1), 0, 0, 3, ClusterOptions(max_order=2))


def test_strong_partial_sum_against_mc():
    m = LatticeModel((3,), gamma=20.0)
    p = SpectralPoint(0.0, 0.1)
    opts = ClusterOptions(n_omega=12, n_s=4)
    mc = mc_green_matrix(m, GAUSS, p, 100_000, seed=3)
    for x, y in [(0, 0), (0, 1), (1, 2)]:
        g = cluster_green(m, GAUSS, p, x, y, 1, options=opts)
        G, se = mc.block(m, x, y)
        tail = abs(direct_cluster_term(m, GAUSS, p, x, y, 2, opts).contribution[0, 0])
        assert abs(g.value[0, 0] - G[0, 0]) < 4 * se[0, 0] + tail + g.error


def test_cutoff_bounded_by_certified_tail():
    m = LatticeModel((5,), gamma=20.0)
    p = SpectralPoint(0.0, 0.1)
    full = direct_cluster_term(m, GAUSS, p, 1, 1, 1, ClusterOptions(n_omega=10, n_s=3))
    cut = direct_cluster_term(m, GAUSS, p, 1, 1, 1, ClusterOptions(n_omega=10, n_s=3, cutoff=0.5))
    diff = abs(full.contribution[0, 0] - cut.contribution[0, 0])
    assert diff <= cut.cutoff_tail + 1e-12 and cut.cutoff_tail < np.inf


def test_lifshitz_parity_even_terms_vanish():
    m = LatticeModel((5,), gamma=0.05)
    p = SpectralPoint(-0.5)
    for N in (0, 1):
        T = dual_taylor_terms(m, GAUSS, p, N, 3, options=ClusterOptions(n_omega=4, n_s=3))
        for l in range(4):
            if (l + N) % 2 == 0:
                assert np.max(np.abs(((1j * m.gamma) ** N * T[l]).real)) < 1e-10


def test_clean_ldos_and_symmetry():
    m = LatticeModel((9,))
    H = build_hamiltonian(m).real
    lam, U = np.linalg.eigh(H)
    E, eps = 1.3, 0.05
    ref = np.sum(U[4] ** 2 * eps / ((lam - E) ** 2 + eps ** 2)) / np.pi
    assert abs(clean_ldos(m, E, eps) - ref) < 1e-13
    # bipartite Laplacian: spectrum symmetric about 2
    assert abs(clean_ldos(m, E, eps) - clean_ldos(m, 4 - E, eps)) < 1e-12


def test_mc_ldos_reflection_symmetry_and_tail():
    m = LatticeModel((5,), gamma=0.5)
    a, ea = ldos(m, GAUSS, 1.0, 0.2, n_samples=40000, seed=1)
    b, eb = ldos(m, GAUSS, 3.0, 0.2, n_samples=40000, seed=2)
    assert abs(a - b) < 4 * np.hypot(ea, eb)
    big, _ = ldos(m, GAUSS, 0.0, 1e4, n_samples=200)
    assert abs(big * np.pi * 1e4 - 1) < 1e-3
    with pytest.raises(ValueError):
        ldos(m, GAUSS, 0.0, 0.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.05, 1.0))
def test_single_site_imaginary_part_sign(E, eps):
    m = LatticeModel((1,), gamma=3.0)
    t = direct_cluster_term(m, GAUSS, SpectralPoint(E, eps), 0, 0, 0, ClusterOptions(n_omega=16))
    assert t.contribution[0, 0].imag > 0


def test_csv_writer(tmp_path):
    m = LatticeModel((2,), gamma=10.0)
    g = cluster_green(m, GAUSS, SpectralPoint(0.0, 0.1), 0, 1, 1, options=ClusterOptions(n_omega=8, n_s=3),
                      bound=lambda n: (0.5, False))
    write_cluster_csv(tmp_path / "t.csv", g)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["order", "tree_count", "value_re", "value_im", "quad_err", "mc_err", "bound"]
    assert len(rows) == 3 and complex(float(rows[2][2]), float(rows[2][3])) == g.table[1].contribution[0, 0]
    assert len(rows[1][2].split("e")[0].replace("-", "").replace(".", "")) == 18
