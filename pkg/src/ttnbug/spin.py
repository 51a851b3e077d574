"""Transverse-field Ising chain, magnetization, and exact-diagonalization reference."""

from dataclasses import dataclass

import numpy as np

from . import tree as tr
from .operators import KroneckerSumOp, expectation
from .tensor_core import DTYPE
from .ttn import TTN, norm, product_state

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=DTYPE)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=DTYPE)
UP = np.array([1, 0], dtype=DTYPE)

MAX_DENSE_SITES = 16


@dataclass(frozen=True)
class IsingSpec:
    d: int
    omega: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError("d must be an integer >= 2")
        if not np.isfinite(self.omega) or self.omega < 0:
            raise ValueError("omega must be finite and nonnegative")


def ising_hamiltonian(spec: IsingSpec) -> KroneckerSumOp:
    """
    ``H = -omega sum_k X_k - sum_k Z_k Z_{k+1}`` on sites 1..d.
    """
    sites = range(1, spec.d + 1)
    dims = {k: 2 for k in sites}
    terms = [(-spec.omega, {k: SIGMA_X}) for k in sites]
    terms += [(-1.0, {k: SIGMA_Z, k + 1: SIGMA_Z}) for k in sites if k < spec.d]
    return KroneckerSumOp(dims, terms)


def magnetization_operator(d: int) -> KroneckerSumOp:
    sites = range(1, d + 1)
    return KroneckerSumOp({k: 2 for k in sites}, [(1.0 / d, {k: SIGMA_Z}) for k in sites])


def gradient_shift(spec: IsingSpec) -> float:
    """
    Shift making ``H + shift * I`` positive semidefinite (Gershgorin bound on the spectrum).
    """
    return spec.omega * spec.d + (spec.d - 1)


def all_up_state(t: tr.Tree) -> TTN:
    for leaf in tr.leaves(t):
        if leaf.dim != 2:
            raise ValueError("spin states need leaf dimension 2")
    return product_state(t, {l: UP for l in tr.leaf_labels(t)})


def magnetization(x: TTN) -> float:
    """
    Mean z-spin ``(1/d) sum_k <x|Z_k|x> / <x|x>``.
    """
    d = len(tr.leaves(x.tree))
    val = expectation(magnetization_operator(d), x) / norm(x) ** 2
    return float(val.real)


# ----------------------------------------------------------------------------
# dense reference

def dense_hamiltonian(spec: IsingSpec):
    """
    Dense H in the site-1-slowest (C-order) basis, assembled from Kronecker products.
    """
    if spec.d > MAX_DENSE_SITES:
        raise MemoryError(f"dense path limited to {MAX_DENSE_SITES} sites")
    eye = np.identity(2, dtype=DTYPE)

    def chain(ops):
        m = np.ones((1, 1), dtype=DTYPE)
        for k in range(spec.d):
            m = np.kron(m, ops.get(k, eye))
        return m

    h = np.zeros((2 ** spec.d, 2 ** spec.d), dtype=DTYPE)
    for k in range(spec.d):
        h -= spec.omega * chain({k: SIGMA_X})
    for k in range(spec.d - 1):
        h -= chain({k: SIGMA_Z, k + 1: SIGMA_Z})
    return h


def dense_magnetization(psi, d: int) -> float:
    """
    Magnetization of a dense state vector (C-order over sites).
    """
    p = np.abs(np.reshape(psi, (2,) * d)) ** 2
    total = 0.0
    for k in range(d):
        marg = np.sum(p, axis=tuple(j for j in range(d) if j != k))
        total += marg[0] - marg[1]
    return float(total / d / np.sum(p))


@dataclass
class ReferenceTrajectory:
    times: np.ndarray
    states: np.ndarray
    magnetization: np.ndarray
    energy: np.ndarray


def exact_reference(spec: IsingSpec, psi0, h: float, t_end: float, keep_states: bool = True) -> ReferenceTrajectory:
    """
    Propagate ``psi' = -i H psi`` with the exact step ``exp(-i h H)`` built from
    one eigendecomposition of the dense Hamiltonian.
    """
    if spec.d > MAX_DENSE_SITES:
        raise MemoryError(f"dense path limited to {MAX_DENSE_SITES} sites")
    n = int(round(t_end / h))
    if n < 0 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a whole number of steps")
    hm = dense_hamiltonian(spec)
    w, v = np.linalg.eigh(hm)
    phase = np.exp(-1j * h * w)
    c = v.conj().T @ np.reshape(np.asarray(psi0, dtype=DTYPE), (-1,))
    states, mags, ens = [], [], []
    for k in range(n + 1):
        psi = v @ c
        if keep_states:
            states.append(psi)
        mags.append(dense_magnetization(psi, spec.d))
        ens.append(float(np.real(np.vdot(c, w * c))))
        c = phase * c
    return ReferenceTrajectory(np.arange(n + 1) * h, np.array(states), np.array(mags), np.array(ens))


def write_reference_csv(ref: ReferenceTrajectory, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,magnetization,energy\n")
        for t, m, e in zip(ref.times, ref.magnetization, ref.energy):
            f.write(f"{t:.17g},{m:.17g},{e:.17g}\n")
