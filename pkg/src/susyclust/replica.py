"""Gaussian superintegrals: fermionic Gaussians, the doubled real form, and matrix inverses."""
from __future__ import annotations

import numpy as np

from ._util import gl_panels
from .grassmann import GrassmannContext, GrassmannElement, berezin, exp_even, gen, mul, norm
from .superfn import Integrator, SuperFunction, super_integrate

PD_TOL = 1e-12


def _as_matrix(A):
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    if A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    return A


def check_pd_hermitian_part(A, tol: float = PD_TOL):
    """Smallest eigenvalue of (A + A*)/2; raises if it is not above tol."""
    A = _as_matrix(A)
    lam = float(np.linalg.eigvalsh((A + A.conj().T) / 2).min())
    if lam <= tol:
        raise ValueError(f"Hermitian part is not positive definite (smallest eigenvalue {lam:.3e})")
    return lam


def _context(n):
    return GrassmannContext.build(range(n), 1)


def _quadratic(ctx, A):
    """-sum_ij A_ij psi^+_i psi^-_j as an even element."""
    out = GrassmannElement.zero(ctx)
    n = len(A)
    for i in range(n):
        for j in range(n):
            if A[i, j] != 0:
                out = out + GrassmannElement.product(ctx, [gen("psi", i, 0, 1), gen("psi", j, 0, -1)], -A[i, j])
    return out


def fermionic_weight(A):
    """exp(-psi^+ A psi^-) as an exact Grassmann element over sites 0..n-1."""
    A = _as_matrix(A)
    ctx = _context(len(A))
    return exp_even(_quadratic(ctx, A))


def berezin_determinant(A) -> complex:
    """int dpsi exp(-psi^+ A psi^-), which equals det A."""
    return complex(berezin(fermionic_weight(A)).scalar_part())


def fermionic_gaussian(A, x: int | None = None, y: int | None = None):
    """(det A)^-1 int dpsi exp(-psi^+ A psi^-) psi^-_x psi^+_y, exactly.

    With x, y omitted the full matrix of such entries is returned.
    """
    A = _as_matrix(A)
    n = len(A)
    w = fermionic_weight(A)
    ctx = w.ctx
    det = complex(berezin(w).scalar_part())
    scale = max(1.0, float(np.abs(A).max())) ** n
    if abs(det) <= 1e-13 * scale:
        raise np.linalg.LinAlgError("matrix is singular to working precision")

    def entry(i, j):
        src = GrassmannElement.product(ctx, [gen("psi", i, 0, -1), gen("psi", j, 0, 1)])
        return complex(berezin(mul(w, src)).scalar_part()) / det

    if x is not None:
        return entry(x, y)
    return np.array([[entry(i, j) for j in range(n)] for i in range(n)])


def tilde_matrix(A):
    """Doubled real form: phi^+ A phi^- = (phi1, phi2)^T Atilde (phi1, phi2)."""
    A = _as_matrix(A)
    s = (A + A.T) / 2
    a = (A - A.T) / 2
    return np.block([[s, -1j * a], [1j * a, s]])


def _bosonic_gaussian(A, n_nodes: int = 20, cut: float = 6.5):
    """int dphi exp(-phi^+ A phi^-) by Gauss-Legendre quadrature after a Gaussian change of variables.

    With x = (phi1, phi2) the exponent is x^T At x, At = R + iJ (R real PD).
    Substituting x = R^-1/2 U v, with U diagonalising R^-1/2 J R^-1/2 = U diag(lam) U^T,
    the integrand becomes the tensor product of 1D factors exp(-(1 + i lam_k) v^2).
    Each factor is integrated on [-cut, cut] by composite Gauss-Legendre with
    enough panels to resolve the oscillation; a second rule with half the
    nodes gives the error estimate.  Returns (value, error estimate).
    """
    At = tilde_matrix(A)
    R, J = At.real, At.imag
    ev, V = np.linalg.eigh(R)
    if ev.min() <= 0:
        raise ValueError("real part of the doubled form is not positive definite")
    Rm = V @ np.diag(ev ** -0.5) @ V.T
    lam = np.linalg.eigvalsh(Rm @ J @ Rm)
    n = len(A)
    pref = np.pi ** (-n) * np.prod(ev) ** -0.5

    def rule(m):
        out = pref
        for l in lam:
            panels = max(8, int(np.ceil(abs(l) * cut ** 2 / np.pi)))
            v, w = gl_panels(0.0, cut, panels, m, grading=1.0)
            out *= 2 * np.sum(w * np.exp(-(1 + 1j * l) * v ** 2))
        return out

    val = rule(n_nodes)
    tail = 2 * n * np.exp(-cut ** 2) * abs(pref) * np.pi ** n
    return complex(val), float(abs(val - rule(n_nodes // 2)) + tail)


def replica_superfunction(A, x: int, y: int) -> SuperFunction:
    """Phi -> exp(-sum Phi^+ A Phi^-) psi^-_x psi^+_y over sites 0..n-1 (one colour)."""
    A = _as_matrix(A)
    lam = check_pd_hermitian_part(A)
    ctx = _context(len(A))
    ferm = mul(fermionic_weight(A), GrassmannElement.product(ctx, [gen("psi", x, 0, -1), gen("psi", y, 0, 1)]))
    nf = norm(ferm)

    def ev(phi):
        return ferm.scale(np.exp(-np.einsum("bi,ij,bj->b", phi, A, np.conj(phi))))

    return SuperFunction([(i, 0) for i in range(len(A))], ctx, ev, lambda u: nf * np.exp(-lam * u.sum(1)))


def replica_inverse(A, x: int, y: int, integrator: Integrator | None = None, return_error: bool = False):
    """Full superintegral int dPhi exp(-Phi^+ A Phi^-) psi^-_x psi^+_y.

    Without an integrator the deterministic path is used: the fermionic part
    is integrated exactly and the bosonic part by separable Gauss-Legendre
    quadrature after a Gaussian change of variables.  With an integrator the
    superfunction is integrated as a whole by ``super_integrate``.
    """
    A = _as_matrix(A)
    check_pd_hermitian_part(A)
    if integrator is not None:
        r = super_integrate(replica_superfunction(A, x, y), integrator)
        return (r.scalar, r.error) if return_error else r.scalar
    w = fermionic_weight(A)
    src = GrassmannElement.product(w.ctx, [gen("psi", x, 0, -1), gen("psi", y, 0, 1)])
    ferm = complex(berezin(mul(w, src)).scalar_part())
    bos, err = _bosonic_gaussian(A)
    val = bos * ferm
    return (val, abs(ferm) * err) if return_error else val
