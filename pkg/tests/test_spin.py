import numpy as np
import pytest

from ttnbug import tree as tr
from ttnbug.integrator import StepConfig, integrate
from ttnbug.operators import schrodinger
from ttnbug.spin import (SIGMA_X, SIGMA_Z, IsingSpec, all_up_state, dense_hamiltonian, dense_magnetization,
                         exact_reference, gradient_shift, ising_hamiltonian, magnetization, write_reference_csv)
from ttnbug.ttn import norm, random_ttn, to_full


def test_hamiltonian_small_cases():
    h0 = ising_hamiltonian(IsingSpec(2, 0.0))
    assert len(h0) == 3
    assert np.array_equal(h0.dense_matrix(), np.diag([-1, 1, 1, -1]).astype(complex))
    h1 = ising_hamiltonian(IsingSpec(2, 1.0)).dense_matrix()
    i2 = np.identity(2)
    hand = -(np.kron(SIGMA_X, i2) + np.kron(i2, SIGMA_X)) - np.kron(SIGMA_Z, SIGMA_Z)
    assert np.allclose(h1, hand)
    assert np.array_equal(h1, h1.conj().T)
    assert len(ising_hamiltonian(IsingSpec(10, 1.0))) == 19


def test_dense_hamiltonian_is_hermitian_and_matches():
    spec = IsingSpec(6, 0.9)
    h = dense_hamiltonian(spec)
    assert np.array_equal(h, h.conj().T)
    assert np.allclose(h, ising_hamiltonian(spec).dense_matrix())


def test_spec_validation():
    with pytest.raises(ValueError):
        IsingSpec(1, 1.0)
    with pytest.raises(ValueError):
        IsingSpec(4, -0.1)


def test_all_up_state():
    for t in (tr.build_balanced_binary(2, 5), tr.build_tt_tree(2, 5), tr.parse_tree("((1,2,3),4)", 2)):
        x = all_up_state(t)
        assert norm(x) == 1
        assert magnetization(x) == 1
    full = to_full(all_up_state(tr.build_balanced_binary(2, 3))).reshape(-1)
    assert np.array_equal(full, np.eye(8)[0])
    with pytest.raises(ValueError):
        all_up_state(tr.build_balanced_binary(3, 3))


def test_energy_of_all_up_state():
    from ttnbug.operators import energy
    for d in (2, 3, 10):
        for omega in (0.0, 1.0, 3.5):
            assert energy(ising_hamiltonian(IsingSpec(d, omega)), all_up_state(tr.build_tt_tree(2, d))) == -(d - 1)


def test_magnetization_random_state():
    t = tr.build_balanced_binary(2, 3)
    x = random_ttn(t, 2, seed=1)
    psi = to_full(x).reshape(-1)
    mz = np.zeros(8)
    for k in range(3):
        ops = [np.identity(2)] * 3
        ops[k] = SIGMA_Z
        mz = mz + np.real(np.diag(np.kron(np.kron(ops[0], ops[1]), ops[2])))
    ref = float(np.vdot(psi, mz * psi).real) / 3
    assert abs(magnetization(x) - ref) <= 1e-11
    assert abs(dense_magnetization(psi, 3) - ref) <= 1e-12


def test_stationary_two_site_trajectory():
    t = tr.build_balanced_binary(2, 2)
    h = ising_hamiltonian(IsingSpec(2, 0.0))
    mags = []
    integrate(all_up_state(t), schrodinger(h), 0.0, 0.5, StepConfig(h=0.05, theta=1e-6),
              callback=lambda k, y, rep: mags.append(magnetization(y)))
    assert len(mags) == 10
    assert np.allclose(mags, 1.0, atol=1e-12)


def test_exact_reference():
    spec = IsingSpec(4, 0.0)
    rng = np.random.default_rng(0)
    psi0 = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    psi0 /= np.linalg.norm(psi0)
    ref = exact_reference(spec, psi0, 0.1, 1.0)
    assert np.allclose(np.abs(ref.states), np.abs(psi0)[None, :], atol=1e-12)
    spec = IsingSpec(5, 1.0)
    psi0 = np.eye(32)[0]
    ref = exact_reference(spec, psi0, 0.01, 5.0)
    assert len(ref.times) == 501
    assert np.max(np.abs(np.linalg.norm(ref.states, axis=1) - 1)) <= 1e-12
    # one step forward and one step back
    w, v = np.linalg.eigh(dense_hamiltonian(spec))
    back = v @ (np.exp(1j * 0.01 * w) * (v.conj().T @ ref.states[1]))
    assert np.allclose(back, psi0, atol=1e-12)
    assert ref.magnetization[0] == 1
    assert np.allclose(ref.energy, -(spec.d - 1), atol=1e-11)


def test_reference_csv(tmp_path):
    ref = exact_reference(IsingSpec(3, 1.0), np.eye(8)[0], 0.1, 0.2)
    p = tmp_path / "ref.csv"
    write_reference_csv(ref, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,magnetization,energy" and len(lines) == 4


def test_gradient_shift_is_psd():
    for d in (2, 4, 6):
        for omega in (0.0, 1.0, 2.5):
            spec = IsingSpec(d, omega)
            w = np.linalg.eigvalsh(dense_hamiltonian(spec))
            assert w[0] + gradient_shift(spec) >= -1e-12
