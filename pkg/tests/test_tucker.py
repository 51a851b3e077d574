import numpy as np
import pytest
from scipy.linalg import expm

from ttnbug import tree as tr
from ttnbug.integrator import StepConfig, step
from ttnbug.ode import OdeConfig
from ttnbug.operators import KroneckerSumOp, schrodinger
from ttnbug.tensor_core import matricize, multi_mode_product, qr_thin
from ttnbug.ttn import TTN, to_full
from ttnbug.tucker import TuckerState, phi_basis, phi_zero, phi_zero_is_trivial, psi_core, tucker_step

from conftest import crandn


def zero_rhs(t, a):
    return np.zeros_like(a)


def random_state(rng, dims, ranks, extended_rank=0):
    bases = tuple(np.linalg.qr(crandn(rng, n, r))[0] for n, r in zip(dims, ranks))
    shape = ((extended_rank,) if extended_rank else ()) + tuple(ranks)
    core = crandn(rng, *shape)
    core /= np.linalg.norm(core)
    return TuckerState(core, bases, extended=bool(extended_rank))


def hermitian(rng, n, scale=1.0):
    a = crandn(rng, n, n)
    return scale * (a + a.conj().T)


def proj(u):
    return u @ u.conj().T


def test_phi_basis_zero_field(rng):
    s = random_state(rng, (5, 4, 3), (2, 2, 2))
    for i in range(3):
        u_hat, m_hat = phi_basis(s, i, zero_rhs, 0.0, 0.1)
        assert u_hat.shape[1] == 2
        assert np.allclose(proj(u_hat), proj(s.bases[i]), atol=1e-12)
        assert np.allclose(m_hat.conj().T @ m_hat, np.identity(2), atol=1e-12)


def test_phi_basis_range_inclusion(rng):
    s = random_state(rng, (6, 5, 4), (2, 3, 2))
    h = [hermitian(rng, n) for n in (6, 5, 4)]
    op = KroneckerSumOp({0: 6, 1: 5, 2: 4}, [(1.0, {k: h[k]}) for k in range(3)])
    rhs = schrodinger(op)
    for i in range(3):
        u_hat, m_hat = phi_basis(s, i, rhs, 0.0, 0.05)
        u0 = s.bases[i]
        assert u_hat.shape[1] <= 2 * u0.shape[1]
        assert np.linalg.norm(u0 - u_hat @ (u_hat.conj().T @ u0), 2) <= 1e-11
        assert np.allclose(m_hat, u_hat.conj().T @ u0)


def test_phi_basis_matrix_case_matches_dense_subproblem(rng):
    n1, n2, r = 5, 4, 2
    s = random_state(rng, (n1, n2), (r, r))
    a1, a2 = hermitian(rng, n1), hermitian(rng, n2)
    rhs = lambda t, y: a1 @ y + y @ a2.T
    h = 0.1
    q, s_t = qr_thin(matricize(s.core, 0).T)
    v = s.bases[1] @ q
    # K' = A1 K + K (V^T A2^T conj(V)), solved with the matrix exponential
    b = v.T @ a2.T @ v.conj()
    gen = np.kron(np.identity(r), a1) + np.kron(b.T, np.identity(n1))
    k0 = s.bases[0] @ s_t.T
    k1 = np.reshape(expm(h * gen) @ np.reshape(k0, -1, order="F"), (n1, r), order="F")
    u_hat, _ = phi_basis(s, 0, rhs, 0.0, h, OdeConfig("rk4", 50))
    assert np.linalg.norm(k1 - proj(u_hat) @ k1) <= 1e-9 * np.linalg.norm(k1)


def test_psi_core_zero_field_reproduces_start(rng):
    s = random_state(rng, (4, 5, 3), (2, 2, 2))
    pairs = [phi_basis(s, i, zero_rhs, 0.0, 0.1) for i in range(3)]
    u_hats = [p[0] for p in pairs]
    c1, c0 = psi_core(s.core, u_hats, [p[1] for p in pairs], zero_rhs, 0.0, 0.1)
    assert np.array_equal(c1, c0)
    assert np.allclose(multi_mode_product(c1, dict(enumerate(u_hats))), s.full(), atol=1e-12)


def test_psi_core_schrodinger_norm_and_start_value(rng):
    s = random_state(rng, (4, 3, 5), (2, 2, 3))
    h = [hermitian(rng, n) for n in (4, 3, 5)]
    op = KroneckerSumOp({0: 4, 1: 3, 2: 5}, [(0.7, {0: h[0], 1: h[1]}), (1.0, {2: h[2]})])
    rhs = schrodinger(op)
    pairs = [phi_basis(s, i, rhs, 0.0, 0.01) for i in range(3)]
    u_hats = [p[0] for p in pairs]
    c1, c0 = psi_core(s.core, u_hats, [p[1] for p in pairs], rhs, 0.0, 0.01, OdeConfig("rk4", 2))
    assert np.linalg.norm(multi_mode_product(c0, dict(enumerate(u_hats))) - s.full()) <= 1e-11
    assert abs(np.linalg.norm(c1) - np.linalg.norm(c0)) <= 1e-9


def test_psi_core_matrix_case_matches_dense_galerkin(rng):
    s = random_state(rng, (5, 4), (2, 2))
    a1, a2 = hermitian(rng, 5, 0.25), hermitian(rng, 4, 0.25)
    rhs = lambda t, y: -1j * (a1 @ y + y @ a2.T)
    pairs = [phi_basis(s, i, rhs, 0.0, 0.1, OdeConfig("rk4", 40)) for i in range(2)]
    u1, u2 = pairs[0][0], pairs[1][0]
    c1, c0 = psi_core(s.core, [u1, u2], [pairs[0][1], pairs[1][1]], rhs, 0.0, 0.1, OdeConfig("rk4", 40))
    g1, g2 = u1.conj().T @ a1 @ u1, u2.conj().T @ a2 @ u2
    # C' = -i (G1 C + C G2^T)
    gen = -1j * (np.kron(np.identity(u2.shape[1]), g1) + np.kron(g2, np.identity(u1.shape[1])))
    ref = np.reshape(expm(0.1 * gen) @ np.reshape(c0, -1, order="F"), c0.shape, order="F")
    assert np.linalg.norm(c1 - ref) <= 1e-9


def test_psi_core_dimension_mismatch(rng):
    s = random_state(rng, (4, 4), (2, 2))
    with pytest.raises(ValueError):
        psi_core(s.core, [s.bases[0]], [np.identity(2)], zero_rhs, 0.0, 0.1)


def test_phi_zero_trivial(rng):
    s = random_state(rng, (3, 4), (2, 2), extended_rank=2)
    assert phi_zero_is_trivial(s)
    h = [hermitian(rng, n) for n in (3, 4)]
    rhs = lambda t, y: -1j * multi_mode_product(y, {1: h[0]}) - 1j * multi_mode_product(y, {2: h[1]})
    u, m, rank = phi_zero(s, rhs, 0.0, 0.1)
    assert rank == 2 and np.array_equal(u, np.identity(2)) and np.array_equal(m, np.identity(2))
    one = random_state(rng, (3, 4), (2, 2), extended_rank=1)
    assert phi_zero_is_trivial(one, rhs, 0.0, 0.1)
    assert phi_zero(one, rhs, 0.0, 0.1)[0].shape == (1, 1)
    with pytest.raises(ValueError):
        phi_zero(random_state(rng, (3, 4), (2, 2)), rhs, 0.0, 0.1)


def test_tucker_step_zero_field(rng):
    s = random_state(rng, (4, 5, 3), (2, 3, 2))
    s1, rep = tucker_step(s, zero_rhs, 0.0, 0.1, 1e-10)
    assert np.linalg.norm(s1.full() - s.full()) <= 1e-11
    assert s1.ranks == s.ranks
    assert s1.is_orthonormal()


def test_tucker_step_extended_form(rng):
    s = random_state(rng, (3, 4), (2, 2), extended_rank=2)
    h = hermitian(rng, 3, 0.25)
    rhs = lambda t, y: -1j * multi_mode_product(y, {1: h})
    s1, _ = tucker_step(s, rhs, 0.0, 0.05, 1e-12, OdeConfig("rk4", 10))
    ref = multi_mode_product(s.full(), {1: expm(-0.05j * h)})
    assert np.linalg.norm(s1.full() - ref) <= 1e-9


def test_matrix_case_equals_two_leaf_ttn(rng):
    s = random_state(rng, (4, 5), (2, 2))
    op = KroneckerSumOp({0: 4, 1: 5}, [(1.0, {0: hermitian(rng, 4)}), (0.5, {0: hermitian(rng, 4), 1: hermitian(rng, 5)})])
    rhs = schrodinger(op)
    s1, _ = tucker_step(s, rhs, 0.0, 0.05, 1e-8)
    t = tr.Node((tr.Leaf(0, 4), tr.Leaf(1, 5)))
    x = TTN(t, s.core[np.newaxis], (TTN(t.children[0], s.bases[0]), TTN(t.children[1], s.bases[1])))
    y, _ = step(x, rhs, 0.0, 0.05, StepConfig(h=0.05, theta=1e-8))
    assert np.linalg.norm(to_full(y) - s1.full()) <= 1e-11


def test_exactness_on_fixed_rank_path(rng):
    n, r = (5, 4, 3), (2, 2, 2)
    u0 = [np.linalg.qr(crandn(rng, k, q))[0] for k, q in zip(n, r)]
    gens = [hermitian(rng, k, 0.25) * 1j for k in n]  # skew-Hermitian generators
    c0, c1 = crandn(rng, *r), crandn(rng, *r)

    def path(t):
        return multi_mode_product(c0 + t * c1, {i: expm(t * g) @ u for i, (g, u) in enumerate(zip(gens, u0))})

    def deriv(t, _y):
        us = [expm(t * g) @ u for g, u in zip(gens, u0)]
        out = multi_mode_product(c1, dict(enumerate(us)))
        for i, g in enumerate(gens):
            mats = dict(enumerate(us))
            mats[i] = g @ us[i]
            out = out + multi_mode_product(c0 + t * c1, mats)
        return out

    s = TuckerState(c0, tuple(u0))
    s1, _ = tucker_step(s, deriv, 0.0, 0.1, 1e-12, OdeConfig("rk4", 20))
    assert np.linalg.norm(s1.full() - path(0.1)) <= 1e-8
