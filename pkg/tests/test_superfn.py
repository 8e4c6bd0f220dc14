import numpy as np
import pytest

from susyclust.disorder import DisorderModel, f_z
from susyclust.grassmann import GrassmannContext, GrassmannElement, gen, grassmann_fourier, norm
from susyclust.superfn import (
    Integrator, SuperFunction, localization_check, phase_rotate, plancherel, product,
    q_component_residual, scalar_superfunction, super_fourier, super_integrate, susy_residual,
)


def gaussian_factor(site, a, c0, c1):
    """exp(-a |phi|^2) (c0 + c1 psi+ psi-) on one site."""
    ctx = GrassmannContext.build([site], 1)
    base = GrassmannElement.scalar(ctx, c0) + GrassmannElement.product(
        ctx, [gen("psi", site, 0, 1), gen("psi", site, 0, -1)], c1)
    return SuperFunction([(site, 0)], ctx, lambda phi: base.scale(np.exp(-a * np.abs(phi[:, 0]) ** 2)),
                         lambda u: (abs(c0) + abs(c1)) * np.exp(-np.real(a) * u[:, 0]), radial=True)


def quad_form(A):
    lam = np.linalg.eigvalsh((A + A.conj().T) / 2).min()
    return scalar_superfunction([(i, 0) for i in range(len(A))],
                                lambda phi: np.exp(-np.einsum("bi,ij,bj->b", phi, A, np.conj(phi))),
                                envelope=lambda u: np.exp(-lam * u.sum(1)))


def test_pure_bosonic_gaussian_is_one():
    f = scalar_superfunction([(0, 0)], lambda phi: np.exp(-np.abs(phi[:, 0]) ** 2),
                             envelope=lambda u: np.exp(-u[:, 0]), radial=True)
    r = super_integrate(f)
    assert abs(r.scalar - 1) < 1e-9
    assert abs(r.scalar) <= r.l1 * (1 + 1e-12)


def test_complex_quadratic_form_gives_inverse_determinant():
    A = np.array([[2.0, 0.3 + 0.5j], [-0.2, 1.5]])
    r = super_integrate(quad_form(A), Integrator(n_theta=24))
    assert abs(r.scalar - 1 / np.linalg.det(A)) < 1e-9
    assert abs(r.scalar - 1 / np.linalg.det(A)) <= r.error


def test_gauss_rule_refinement_within_reported_error():
    A = np.array([[1.4, 0.2j], [0.1, 1.1]])
    f = quad_form(A)
    r1 = super_integrate(f, Integrator(n_nodes=12, n_theta=12))
    r2 = super_integrate(f, Integrator(n_nodes=24, n_theta=12))
    assert abs(r1.scalar - r2.scalar) <= r1.error


def test_monte_carlo_unbiased_over_seeds():
    A = np.array([[1.5, 0.4], [0.4, 1.2 + 0.3j]])
    exact = 1 / np.linalg.det(A)
    f = quad_form(A)
    hits = 0
    for seed in range(100):
        r = super_integrate(f, Integrator(kind="importance", n_samples=4000, seed=seed))
        hits += abs(r.scalar - exact) <= 3 * r.error * np.sqrt(2)
    assert hits >= 99


def test_monte_carlo_deterministic_and_thread_independent():
    f = quad_form(np.array([[1.2, 0.1], [0.1, 1.0]]))
    a = super_integrate(f, Integrator(kind="mc", n_samples=20000, seed=3, chunk=4096, threads=1))
    b = super_integrate(f, Integrator(kind="mc", n_samples=20000, seed=3, chunk=4096, threads=4))
    assert a.scalar == b.scalar and a.error == b.error


def test_refusals():
    bad = scalar_superfunction([(0, 0)], lambda phi: np.ones(len(phi)), envelope=lambda u: np.ones(len(u)))
    with pytest.raises(ValueError, match="not integrable"):
        super_integrate(bad)
    big = quad_form(np.eye(3))
    with pytest.raises(ValueError, match="Monte Carlo|importance"):
        super_integrate(big, Integrator(n_nodes=32, n_theta=16))


@pytest.mark.parametrize("kind", ["gaussian", "bump"])
@pytest.mark.parametrize("colours", [1, 2])
def test_envelope_dominates_norm(kind, colours):
    rng = np.random.default_rng(0)
    for z in (0.0, 0.3j - 0.1):
        f = f_z(DisorderModel(kind), z, 1.0, colours)
        phi = (rng.normal(size=(300, colours)) + 1j * rng.normal(size=(300, colours))) * rng.uniform(0, 6, (300, 1))
        assert np.all(f.envelope(np.abs(phi) ** 2) >= norm(f.evaluator(phi)) * (1 - 1e-12))


def test_bump_derivative_majorant():
    d = DisorderModel("bump")
    t = np.linspace(0, 800, 8001)
    for k in range(4):
        v = np.abs(d.nuhat(t, k))
        assert np.all(v <= np.minimum(1.0, 4 * np.exp(-np.sqrt(t))) * (1 + 1e-12))


@pytest.mark.parametrize("kind", ["gaussian", "bump"])
def test_localization_f0_and_product(kind):
    integ = Integrator(n_panels=16 if kind == "bump" else 4)
    r = localization_check(f_z(DisorderModel(kind), 0.0, 1.0, 1), integ)
    assert abs(r.value_at_zero - 1) < 1e-14
    assert r.discrepancy < 1e-7
    two = product(f_z(DisorderModel(kind), 0.0, 1.0, 1, site=0), f_z(DisorderModel(kind), 0.0, 1.0, 1, site=1))
    assert abs(localization_check(two, integ).integral - 1) < 1e-7


def test_localization_small_energy_against_radial_oracle():
    # independent oracle: for |S| = 1 the Berezin integral leaves -g'(u), so the
    # superintegral is -int_0^inf g'(u) du computed here by scipy quad
    from scipy.integrate import quad
    d = DisorderModel("gaussian")
    z = 0.05j - 0.1
    a = z
    gp = lambda u: np.exp(a * u) * (a * d.nuhat(u) + d.nuhat(u, 1))
    re = quad(lambda u: -gp(u).real, 0, np.inf, epsabs=1e-13)[0]
    im = quad(lambda u: -gp(u).imag, 0, np.inf, epsabs=1e-13)[0]
    r = localization_check(f_z(d, z, 1.0, 1))
    assert abs(r.integral - (re + 1j * im)) < 1e-8
    assert abs(r.integral - 1) < 1e-8


def test_fourier_zero_frequency_is_transformed_bosonic_integral():
    f = f_z(DisorderModel("gaussian"), 0.0, 1.0, 1)
    fh = super_fourier(f)
    at0 = fh(np.zeros(1))
    bos = super_integrate(f, fermionic=False).value
    want = grassmann_fourier(bos)
    assert norm(at0 - want) < 1e-9


def test_fourier_sup_bounded_by_l1():
    ctx = GrassmannContext.build([0], 1)
    p, m = gen("psi", 0, 0, 1), gen("psi", 0, 0, -1)

    def ev(phi):
        e = np.exp(-np.abs(phi[:, 0]) ** 2)
        return (GrassmannElement.scalar(ctx, 1.0).scale(e) + GrassmannElement.generator(ctx, p).scale(phi[:, 0] * e)
                + GrassmannElement.product(ctx, [p, m], 0.5j).scale(np.abs(phi[:, 0]) ** 2 * e))

    f = SuperFunction([(0, 0)], ctx, ev, lambda u: (1 + np.sqrt(u[:, 0]) + 0.5 * u[:, 0]) * np.exp(-u[:, 0]))
    integ = Integrator(n_theta=64)
    l1 = super_integrate(f, integ).l1
    fh = super_fourier(f, integ)
    rng = np.random.default_rng(1)
    kap = (rng.normal(size=(100, 1)) + 1j * rng.normal(size=(100, 1))) * 0.8
    assert np.all(norm(fh.evaluator(kap)) <= l1 * (1 + 1e-9))
    # closed form of the odd coefficient: int dphi e^{-2i Re(kbar phi)} phi e^{-u} = -i k e^{-|k|^2}
    odd = fh.evaluator(kap)
    eta_p = gen("eta", 0, 0, 1)
    ref = grassmann_fourier(GrassmannElement.generator(ctx, p))
    (mask, c), = ref.coeffs.items()
    want = c * (-1j) * kap[:, 0] * np.exp(-np.abs(kap[:, 0]) ** 2)
    assert np.max(np.abs(odd.coeffs[mask] - want)) < 1e-9
    assert eta_p in fh.ctx


def test_plancherel_factorized_pairs():
    f = product(gaussian_factor(0, 1.0, 1.0, 0.5), gaussian_factor(1, 0.7 + 0.2j, 0.3, -1.2j))
    g = product(gaussian_factor(0, 1.3, 0.4, 2.0), gaussian_factor(1, 0.9, 1.0, 0.25))
    env = lambda u: 10 * np.exp(-u.sum(1) / 1.5)
    lhs, rhs = plancherel(f, g, fhat_envelope=env, ghat_envelope=env)
    assert abs(lhs.scalar - rhs.scalar) <= 1e-6 * abs(lhs.scalar)


def test_plancherel_single_site_with_odd_parts_numeric_transform():
    ctx = GrassmannContext.build([0], 1)
    p, m = gen("psi", 0, 0, 1), gen("psi", 0, 0, -1)
    A = GrassmannElement.scalar(ctx, 0.7) + GrassmannElement.product(ctx, [p, m], 1.3)
    B = GrassmannElement.scalar(ctx, -0.2j) + GrassmannElement.product(ctx, [p, m], 0.9)
    f = SuperFunction([(0, 0)], ctx, lambda phi: A.scale(np.exp(-1.1 * np.abs(phi[:, 0]) ** 2)),
                      lambda u: 2 * np.exp(-1.1 * u[:, 0]), radial=False)
    g = SuperFunction([(0, 0)], ctx, lambda phi: B.scale(np.exp(-0.8 * np.abs(phi[:, 0]) ** 2)),
                      lambda u: 2 * np.exp(-0.8 * u[:, 0]), radial=False)
    env = lambda u: 4 * np.exp(-u[:, 0] / 1.1)
    integ = Integrator(n_theta=48, n_panels=6)
    lhs, rhs = plancherel(f, g, integ, Integrator(n_theta=8), fhat_envelope=env, ghat_envelope=env)
    assert abs(lhs.scalar - rhs.scalar) <= 1e-6 * abs(lhs.scalar)


def test_susy_residual_second_order():
    f = f_z(DisorderModel("gaussian"), 0.3j - 0.1, 1.0, 2)
    rng = np.random.default_rng(2)
    for _ in range(5):
        pt = rng.normal(size=2) + 1j * rng.normal(size=2)
        r1 = susy_residual(f, pt, 1e-3)
        r2 = susy_residual(f, pt, 5e-4)
        assert r1 < 1e-4
        assert r2 < r1 / 3  # O(h^2)


def test_susy_residual_detects_non_susy_and_accepts_full_pair():
    ctx = GrassmannContext.build([0], 1)
    p, m = gen("psi", 0, 0, 1), gen("psi", 0, 0, -1)
    bos = SuperFunction([(0, 0)], ctx, lambda phi: GrassmannElement.scalar(ctx, np.abs(phi[:, 0]) ** 2))
    full = SuperFunction([(0, 0)], ctx, lambda phi: GrassmannElement.scalar(ctx, np.abs(phi[:, 0]) ** 2)
                         + GrassmannElement.product(ctx, [p, m]))
    pt = np.array([0.4 - 0.7j])
    assert susy_residual(bos, pt) > 0.1
    assert susy_residual(full, pt) < 1e-8


def test_u1_invariance_and_q_decomposition():
    f = f_z(DisorderModel("bump"), 0.3j - 0.1, 1.0, 2)
    rng = np.random.default_rng(3)
    pt = rng.normal(size=2) + 1j * rng.normal(size=2)
    F = f(pt)
    theta = {((0,), 0): 0.7, ((0,), 1): -2.1}
    assert norm(phase_rotate(F, theta) - F) < 1e-14
    for j in range(2):
        for eps in (1, -1):
            assert q_component_residual(f, pt, j, eps, 1e-4) < 1e-6
