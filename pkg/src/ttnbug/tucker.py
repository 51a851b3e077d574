"""
Rank-adaptive BUG integrator for Tucker tensors, written with dense full-tensor
evaluations of the right-hand side. Serves as the height-1 reference.

A state is ``core x_1 U_1 ... x_d U_d``. In the extended form the core carries
an extra leading mode with identity basis, so the represented tensor has shape
``(r_0, n_1, ..., n_d)`` and the right-hand side must act on that shape.
"""

from dataclasses import dataclass

import numpy as np

from . import tree as tr
from .ode import OdeConfig, solve
from .tensor_core import (DTYPE, is_isometry, matricize, multi_mode_product, orthonormal_range, qr_thin,
                          tensorize)
from .ttn import TTN
from .integrator import truncate


@dataclass(frozen=True)
class TuckerState:
    core: np.ndarray
    bases: tuple
    extended: bool = False

    def __post_init__(self):
        off = int(self.extended)
        if self.core.ndim != len(self.bases) + off:
            raise ValueError("core order does not match the number of bases")
        for i, u in enumerate(self.bases):
            if u.shape[1] != self.core.shape[i + off]:
                raise ValueError(f"basis {i} has {u.shape[1]} columns, core expects {self.core.shape[i + off]}")

    @property
    def offset(self) -> int:
        return int(self.extended)

    @property
    def ranks(self) -> tuple:
        return tuple(u.shape[1] for u in self.bases)

    def full(self):
        return multi_mode_product(self.core, {i + self.offset: u for i, u in enumerate(self.bases)})

    def is_orthonormal(self, tol: float = 1e-10) -> bool:
        return all(is_isometry(u, tol) for u in self.bases)


def _sibling_kron(state: TuckerState, i: int):
    """
    Kronecker product of the other bases matching `tucker_matricization` column order
    (mode 0 identity included for the extended form).
    """
    mats = list(state.bases)
    if state.extended:
        mats = [np.identity(state.core.shape[0], dtype=DTYPE)] + mats
    j0 = i + state.offset
    k = np.ones((1, 1), dtype=DTYPE)
    for j, u in enumerate(mats):
        if j != j0:
            k = np.kron(u, k)
    return k


def phi_basis(state: TuckerState, i: int, rhs, t0: float, t1: float, cfg: OdeConfig = OdeConfig()):
    """
    Update and augment basis `i`. Returns (U_hat, M_hat).
    """
    mode = i + state.offset
    q, s_t = qr_thin(matricize(state.core, mode).T)
    v = _sibling_kron(state, i) @ q
    dims = list(state.full().shape)

    def f(t, k):
        y = tensorize(k @ v.T, mode, dims)
        return matricize(rhs(t, y), mode) @ v.conj()

    u0 = state.bases[i]
    k1 = solve(f, u0 @ s_t.T, t0, t1, cfg)
    u_hat = orthonormal_range(np.hstack([k1, u0]))
    return u_hat, u_hat.conj().T @ u0


def psi_core(core0, u_hats, m_hats, rhs, t0: float, t1: float, cfg: OdeConfig = OdeConfig(),
             extended: bool = False):
    """
    Galerkin core update in the augmented bases. Returns (C_hat_1, C_hat_0).
    """
    off = int(extended)
    if len(u_hats) != len(m_hats) or core0.ndim != len(u_hats) + off:
        raise ValueError("dimension mismatch between core and bases")
    c0 = multi_mode_product(core0, {i + off: m for i, m in enumerate(m_hats)})
    up = {i + off: u for i, u in enumerate(u_hats)}
    down = {i + off: u.conj().T for i, u in enumerate(u_hats)}

    def f(t, c):
        return multi_mode_product(rhs(t, multi_mode_product(c, up)), down)

    return solve(f, c0, t0, t1, cfg), c0


def phi_zero(state: TuckerState, rhs, t0: float, t1: float, cfg: OdeConfig = OdeConfig()):
    """
    Mode-0 subflow of the extended form, solved explicitly.

    Returns (U_hat_0, M_hat_0, rank of [K_0(t1), I]). The augmented range is all
    of C^{r_0}, so the identity is chosen as its basis.
    """
    if not state.extended:
        raise ValueError("mode 0 exists only in the extended form")
    r0 = state.core.shape[0]
    q, s_t = qr_thin(matricize(state.core, 0).T)
    v = _sibling_kron(state, -1) @ q
    dims = list(state.full().shape)

    def f(t, k):
        return matricize(rhs(t, tensorize(k @ v.T, 0, dims)), 0) @ v.conj()

    k1 = solve(f, s_t.T, t0, t1, cfg)
    rank = np.linalg.matrix_rank(np.hstack([k1, np.identity(r0)]))
    eye = np.identity(r0, dtype=DTYPE)
    return eye, eye, int(rank)


def phi_zero_is_trivial(state: TuckerState, rhs=None, t0: float = 0.0, t1: float = 0.0,
                        cfg: OdeConfig = OdeConfig()) -> bool:
    """
    Check that the mode-0 subflow returns ([I, I]), so it can be skipped.
    """
    if rhs is None:
        rhs = lambda t, y: np.zeros_like(y)
    u, m, rank = phi_zero(state, rhs, t0, t1, cfg)
    r0 = state.core.shape[0]
    return rank == r0 and np.array_equal(u, np.identity(r0)) and np.array_equal(m, np.identity(r0))


def _as_ttn(core, bases, extended: bool) -> TTN:
    t = tr.Node(tuple(tr.Leaf(i, u.shape[0]) for i, u in enumerate(bases)))
    data = core if extended else core[np.newaxis]
    return TTN(t, data, tuple(TTN(leaf, u) for leaf, u in zip(t.children, bases)))


def tucker_step(state: TuckerState, rhs, t0: float, t1: float, theta: float,
                cfg: OdeConfig = OdeConfig(), rank_cap: int = 0):
    """
    One rank-adaptive step. Returns (TuckerState, TruncationReport).
    """
    pairs = [phi_basis(state, i, rhs, t0, t1, cfg) for i in range(len(state.bases))]
    u_hats = [p[0] for p in pairs]
    c1, _ = psi_core(state.core, u_hats, [p[1] for p in pairs], rhs, t0, t1, cfg, state.extended)
    x, report = truncate(_as_ttn(c1, u_hats, state.extended), theta, rank_cap)
    core = x.data if state.extended else x.data[0]
    return TuckerState(core, tuple(c.data for c in x.children), state.extended), report
