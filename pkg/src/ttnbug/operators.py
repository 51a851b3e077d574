"""
Linear operators as sums of Kronecker products of single-site matrices,
right-hand sides built from them, and their reduction to subtrees.

A reduced operator on a subtree tau acts on tensors of shape
``(r_tau, N_1, ..., N_m)``, where ``N_k`` is the physical dimension of the
k-th child (flattened in reverse-lexicographic order). Each term is
``coeff * (Y x_0 env x_leaves ops)``; site operators outside tau have been
contracted into the mode-0 environment matrix ``env``.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import tree as tr
from .tensor_core import DTYPE, matricize, mode_product, qr_thin, tensorize
from .ttn import DENSE_CAP, TTN, dense_basis


@dataclass
class KroneckerSumOp:
    """
    ``sum_p coeff_p * kron_l A_{p,l}``; site matrices absent from a term are identities.
    """
    dims: dict
    terms: list = field(default_factory=list)

    def __post_init__(self):
        terms = []
        for coeff, ops in self.terms:
            ops = {l: np.asarray(a, dtype=DTYPE) for l, a in ops.items()}
            for l, a in ops.items():
                if l not in self.dims:
                    raise ValueError(f"operator acts on unknown site {l}")
                if a.shape != (self.dims[l], self.dims[l]):
                    raise ValueError(f"site matrix for {l} has shape {a.shape}, expected square of size {self.dims[l]}")
            terms.append((complex(coeff), ops))
        self.terms = terms

    @property
    def labels(self) -> list:
        return sorted(self.dims)

    def add_term(self, coeff, ops: dict) -> "KroneckerSumOp":
        return KroneckerSumOp(dict(self.dims), self.terms + [(coeff, ops)])

    def shifted(self, shift: float) -> "KroneckerSumOp":
        """
        ``self + shift * identity``.
        """
        return self.add_term(shift, {})

    def scaled(self, c) -> "KroneckerSumOp":
        return KroneckerSumOp(dict(self.dims), [(c * coeff, ops) for coeff, ops in self.terms])

    def compose(self, other: "KroneckerSumOp") -> "KroneckerSumOp":
        """
        Operator product ``self @ other`` as a Kronecker sum with ``len(self) * len(other)`` terms.
        """
        terms = []
        for c1, o1 in self.terms:
            for c2, o2 in other.terms:
                ops = {}
                for l in set(o1) | set(o2):
                    a = o1.get(l)
                    b = o2.get(l)
                    ops[l] = a @ b if a is not None and b is not None else (a if b is None else b)
                terms.append((c1 * c2, ops))
        return KroneckerSumOp(dict(self.dims), terms)

    def adjoint(self) -> "KroneckerSumOp":
        return KroneckerSumOp(dict(self.dims),
                              [(np.conj(c), {l: a.conj().T for l, a in ops.items()}) for c, ops in self.terms])

    def __len__(self):
        return len(self.terms)

    def dense_matrix(self, cap: int = DENSE_CAP):
        """
        Dense matrix acting on C-order vectorizations with sites ordered by label.
        """
        n = int(np.prod([self.dims[l] for l in self.labels], dtype=int))
        if n * n > cap * 64:
            raise MemoryError(f"dense operator of size {n} exceeds cap")
        h = np.zeros((n, n), dtype=DTYPE)
        for coeff, ops in self.terms:
            m = np.ones((1, 1), dtype=DTYPE)
            for l in self.labels:
                m = np.kron(m, ops.get(l, np.identity(self.dims[l], dtype=DTYPE)))
            h += coeff * m
        return h

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        h = self.dense_matrix()
        return np.allclose(h, h.conj().T, rtol=0, atol=tol)


def apply_dense(op: KroneckerSumOp, psi, cap: int = DENSE_CAP):
    """
    Apply `op` to a dense tensor with one mode per site, ordered by label.
    """
    psi = np.asarray(psi)
    labels = op.labels
    if psi.shape != tuple(op.dims[l] for l in labels):
        raise ValueError(f"tensor of shape {psi.shape} does not match operator dimensions")
    if psi.size > cap:
        raise MemoryError(f"dense tensor with {psi.size} entries exceeds cap {cap}")
    out = np.zeros(psi.shape, dtype=DTYPE)
    for coeff, ops in op.terms:
        t = psi
        for l, a in ops.items():
            t = mode_product(t, labels.index(l), a)
        out += coeff * t
    return out


class RhsKind(Enum):
    SCHRODINGER = "schrodinger"
    GRADIENT = "gradient"
    EXPLICIT = "explicit"
    ZERO = "zero"


@dataclass(frozen=True)
class Rhs:
    """
    Right-hand side ``F(t, Y)`` of the tensor differential equation.

    SCHRODINGER: ``F = -i H[Y]``; GRADIENT: ``F = -2 H[Y]`` (gradient of ``<Y, H[Y]>``
    for Hermitian H); EXPLICIT: ``F = func(t, Y)`` on dense tensors; ZERO: ``F = 0``.
    """
    kind: RhsKind
    op: Optional[KroneckerSumOp] = None
    func: Optional[Callable] = None

    @property
    def prefactor(self) -> complex:
        return {RhsKind.SCHRODINGER: -1j, RhsKind.GRADIENT: -2.0}.get(self.kind, 1.0)

    def __call__(self, t, a):
        """
        Evaluate on a dense tensor with modes ordered by leaf label.
        """
        if self.kind == RhsKind.ZERO:
            return np.zeros_like(a, dtype=DTYPE)
        if self.kind == RhsKind.EXPLICIT:
            return np.asarray(self.func(t, a), dtype=DTYPE)
        return self.prefactor * apply_dense(self.op, a)


def schrodinger(op: KroneckerSumOp, check: bool = False) -> Rhs:
    if check and not op.is_hermitian():
        raise ValueError("Schrodinger right-hand side requires a self-adjoint operator")
    return Rhs(RhsKind.SCHRODINGER, op=op)


def gradient(op: KroneckerSumOp) -> Rhs:
    return Rhs(RhsKind.GRADIENT, op=op)


def explicit(func: Callable) -> Rhs:
    return Rhs(RhsKind.EXPLICIT, func=func)


def zero() -> Rhs:
    return Rhs(RhsKind.ZERO)


# ----------------------------------------------------------------------------
# dense layout helpers

_LABELS = {}


def _label_set(t: tr.Tree) -> frozenset:
    key = id(t)
    hit = _LABELS.get(key)
    if hit is None or hit[0] is not t:
        hit = (t, frozenset(tr.leaf_labels(t)))
        _LABELS[key] = hit
    return hit[1]


def v_shape(t: tr.Tree, r: int) -> tuple:
    """
    Shape of the ambient space V_tau for top rank `r`.
    """
    if tr.is_leaf(t):
        return (r, t.dim)
    return (r,) + tuple(tr.physical_dim(c) for c in t.children)


def v_to_full(y, t: tr.Tree):
    """
    Convert a root-level tensor of shape ``(1, N_1, ..., N_m)`` into a full tensor
    with modes ordered by leaf label.
    """
    lv = tr.leaves(t)
    vec = np.reshape(y, (-1,), order="F")
    a = np.reshape(vec, tuple(l.dim for l in lv), order="F")
    return np.transpose(a, np.argsort([l.label for l in lv]))


def full_to_v(a, t: tr.Tree):
    """
    Inverse of `v_to_full`.
    """
    lv = tr.leaves(t)
    labels = sorted(l.label for l in lv)
    a = np.transpose(a, [labels.index(l.label) for l in lv])
    vec = np.reshape(a, (-1,), order="F")
    return np.reshape(vec, v_shape(t, 1), order="F")


def subtree_operator_matrix(t: tr.Tree, ops: dict):
    """
    Dense Kronecker product of the site matrices on the leaves of `t`,
    matching reverse-lexicographic row order.
    """
    m = np.ones((1, 1), dtype=DTYPE)
    for l in tr.leaves(t):
        m = np.kron(ops.get(l.label, np.identity(l.dim, dtype=DTYPE)), m)
    return m


# ----------------------------------------------------------------------------
# environment blocks

def _ops_key(ops: dict) -> tuple:
    return tuple(sorted((l, id(a)) for l, a in ops.items()))


def _split_ops(ops: dict, children) -> list:
    parts = [dict() for _ in children]
    for l, a in ops.items():
        for k, c in enumerate(children):
            if l in _label_set(c):
                parts[k][l] = a
                break
    return parts


class EnvBundle:
    """
    Cache of projected operator blocks ``<X_sigma | A | Y_sigma>`` (r x r matrices),
    built bottom-up from the children's blocks.

    With ``orthonormal=True`` the block of an identity operator between a network
    and itself is taken to be the identity (returned as `None`).
    """

    def __init__(self, orthonormal: bool = True):
        self.orthonormal = orthonormal
        self._cache = {}

    def block(self, bra: TTN, ket: TTN, ops: dict):
        if not ops and bra is ket and self.orthonormal:
            return None
        key = (id(bra), id(ket), _ops_key(ops))
        hit = self._cache.get(key)
        if hit is not None:
            return hit[0]
        if bra.is_leaf:
            a = ops.get(bra.tree.label)
            kd = ket.data if a is None else a @ ket.data
            b = bra.data.conj().T @ kd
        else:
            t = ket.data
            for k, part in enumerate(_split_ops(ops, bra.tree.children)):
                bk = self.block(bra.children[k], ket.children[k], part)
                if bk is not None:
                    t = mode_product(t, k + 1, bk)
            b = matricize(bra.data, 0).conj() @ matricize(t, 0).T
        # keep the networks alive so that their ids stay unique
        self._cache[key] = (b, bra, ket)
        return b


def expectation(op: KroneckerSumOp, x: TTN, y: Optional[TTN] = None) -> complex:
    """
    ``<x, op[y]>`` (with ``y = x`` by default) without forming dense tensors.
    """
    y = x if y is None else y
    bundle = EnvBundle(orthonormal=False)
    val = 0j
    for coeff, ops in op.terms:
        b = bundle.block(x, y, ops)
        val += coeff * b[0, 0]
    return val


def energy(op: KroneckerSumOp, x: TTN) -> float:
    """
    Energy ``<x, H[x]>`` of a self-adjoint operator.
    """
    return float(expectation(op, x).real)


# ----------------------------------------------------------------------------
# prolongation, restriction and reduced operators

@dataclass(frozen=True)
class Term:
    coeff: complex
    env: Optional[np.ndarray]
    ops: dict


@dataclass
class ReducedOp:
    """
    Reduced right-hand side on a subtree.

    Linear kinds store `terms`; the explicit kind stores `dense_func` acting on
    dense tensors of the subtree's ambient space.
    """
    tree: tr.Tree
    prefactor: complex = 1.0
    terms: list = field(default_factory=list)
    dense_func: Optional[Callable] = None
    address: tuple = ()

    @property
    def is_dense(self) -> bool:
        return self.dense_func is not None


def root_operator(rhs: Rhs, t: tr.Tree) -> ReducedOp:
    if rhs.op is not None:
        dims = {l.label: l.dim for l in tr.leaves(t)}
        for l, n in rhs.op.dims.items():
            if dims.get(l) != n:
                raise ValueError(f"operator site {l} (dimension {n}) does not match the tree")
    if rhs.kind == RhsKind.ZERO:
        return ReducedOp(t, 1.0, [])
    if rhs.kind == RhsKind.EXPLICIT:
        if tr.physical_dim(t) > DENSE_CAP:
            raise MemoryError("explicit right-hand sides need the dense path, which exceeds the cap")
        return ReducedOp(t, 1.0, [], dense_func=lambda s, y: full_to_v(rhs(s, v_to_full(y, t)), t))
    return ReducedOp(t, rhs.prefactor, [Term(c, None, ops) for c, ops in rhs.op.terms])


@dataclass(frozen=True)
class ParentContext:
    """
    Starting-value data at node tau needed to move between V_tau and V_{tau_i}:
    the QR factors of ``mat_i(C_tau)^T = Q R`` and ``W = ten_i(Q^T)``.
    """
    x: TTN
    i: int
    q: np.ndarray
    r: np.ndarray
    w: np.ndarray


def parent_context(x: TTN, i: int) -> ParentContext:
    if x.is_leaf:
        raise ValueError("a leaf has no children")
    q, r = qr_thin(matricize(x.data, i + 1).T)
    dims = list(x.data.shape)
    dims[i + 1] = q.shape[1]
    w = tensorize(q.T, i + 1, dims)
    return ParentContext(x, i, q, r, w)


def _sibling_embedding(ctx: ParentContext, cap: int):
    """
    ``W x_{j != i} U_j`` with dense sibling bases.
    """
    t = ctx.w
    for j, c in enumerate(ctx.x.children):
        if j != ctx.i:
            t = mode_product(t, j + 1, dense_basis(c, cap))
    return t


def prolong(z, ctx: ParentContext, cap: int = DENSE_CAP):
    """
    Prolongation V_{tau_i} -> V_tau relative to the starting value in `ctx`.
    """
    z = np.asarray(z)
    t = _sibling_embedding(ctx, cap)
    return mode_product(t, ctx.i + 1, matricize(z, 0).T)


def restrict(y, ctx: ParentContext, cap: int = DENSE_CAP):
    """
    Restriction V_tau -> V_{tau_i}; adjoint and left inverse of `prolong`.
    """
    y = np.asarray(y)
    t = _sibling_embedding(ctx, cap)
    m = matricize(y, ctx.i + 1) @ matricize(t, ctx.i + 1).conj().T
    child = ctx.x.children[ctx.i].tree
    return tensorize(m.T, 0, v_shape(child, m.shape[1]))


def _merge_terms(terms: list) -> list:
    groups = {}
    for term in terms:
        groups.setdefault(_ops_key(term.ops), []).append(term)
    merged = []
    for group in groups.values():
        if len(group) == 1:
            merged.append(group[0])
            continue
        if all(g.env is None for g in group):
            merged.append(Term(sum(g.coeff for g in group), None, group[0].ops))
            continue
        n = next(g.env.shape[0] for g in group if g.env is not None)
        env = np.zeros((n, n), dtype=DTYPE)
        for g in group:
            if g.env is None:
                env[np.diag_indices(n)] += g.coeff
            else:
                env += g.coeff * g.env
        merged.append(Term(1.0, env, group[0].ops))
    return merged


def reduce_operator(op: ReducedOp, ctx: ParentContext, bundle: Optional[EnvBundle] = None,
                    cap: int = DENSE_CAP) -> ReducedOp:
    """
    Reduced operator on child `ctx.i`: ``restrict o op o prolong``.

    Site operators outside the child are contracted through the starting value
    into a mode-0 environment matrix; sibling blocks come from `bundle`.
    """
    x, i = ctx.x, ctx.i
    child = x.children[i].tree
    address = op.address + (i,)
    if op.is_dense:
        parent_func = op.dense_func
        return ReducedOp(child, 1.0, [],
                         dense_func=lambda s, z: restrict(parent_func(s, prolong(z, ctx, cap)), ctx, cap),
                         address=address)
    bundle = EnvBundle() if bundle is None else bundle
    wi = matricize(ctx.w, i + 1).conj()
    terms = []
    for term in op.terms:
        parts = _split_ops(term.ops, x.tree.children)
        inside = parts[i]
        if term.env is None and len(inside) == len(term.ops):
            terms.append(Term(term.coeff, None, inside))
            continue
        t = ctx.w
        if term.env is not None:
            t = mode_product(t, 0, term.env)
        for j, part in enumerate(parts):
            if j == i or not part:
                continue
            b = bundle.block(x.children[j], x.children[j], part)
            if b is not None:
                t = mode_product(t, j + 1, b)
        env = wi @ matricize(t, i + 1).T
        terms.append(Term(term.coeff, env, inside))
    return ReducedOp(child, op.prefactor, _merge_terms(terms), address=address)


def apply_reduced(op: ReducedOp, t, y, cap: int = DENSE_CAP):
    """
    Apply a reduced operator to a dense tensor of its ambient space (reference path).
    """
    y = np.asarray(y, dtype=DTYPE)
    if op.is_dense:
        return op.dense_func(t, y)
    out = np.zeros_like(y)
    if y.size > cap:
        raise MemoryError("dense application exceeds the cap")
    children = [op.tree] if tr.is_leaf(op.tree) else list(op.tree.children)
    for term in op.terms:
        z = y
        if term.env is not None:
            z = mode_product(z, 0, term.env)
        for k, c in enumerate(children):
            part = {l: a for l, a in term.ops.items() if l in _label_set(c)}
            if part:
                z = mode_product(z, k + 1, subtree_operator_matrix(c, part))
        out += term.coeff * z
    return op.prefactor * out


# ----------------------------------------------------------------------------
# operators for the small ODEs

def _add_env(acc, coeff, env):
    """
    Accumulate ``coeff * env`` where `None` stands for the identity; stays scalar while possible.
    """
    if env is None:
        if acc is None:
            return coeff
        if np.ndim(acc) == 0:
            return acc + coeff
        return acc + coeff * np.identity(acc.shape[0], dtype=DTYPE)
    e = coeff * env
    if acc is None:
        return e
    if np.ndim(acc) == 0:
        return e + acc * np.identity(e.shape[0], dtype=DTYPE)
    return acc + e

class LeafOperator:
    """
    Right-hand side of the leaf ODE, acting on ``Y_l`` of shape (r_l, n_l).
    """

    def __init__(self, op: ReducedOp):
        self.op = op
        if op.is_dense:
            return
        self.prefactor = op.prefactor
        self.left = None
        self.pairs = []
        for term in op.terms:
            a = term.ops.get(op.tree.label)
            if a is None:
                self.left = _add_env(self.left, term.coeff, term.env)
            else:
                self.pairs.append((term.coeff if term.env is None else term.coeff * term.env, a.T))

    def __call__(self, t, y):
        if self.op.is_dense:
            return self.op.dense_func(t, y)
        out = np.zeros_like(y)
        if self.left is not None:
            out += self.left * y if np.ndim(self.left) == 0 else self.left @ y
        for e, at in self.pairs:
            if np.ndim(e) == 0:
                out += e * (y @ at)
            else:
                out += e @ (y @ at)
        return self.prefactor * out


class NodeOperator:
    """
    Galerkin-projected right-hand side for a connection tensor,
    ``F_tau(t, C x_k U_k) x_k U_k^*`` with orthonormal child bases ``U_k``.
    """

    def __init__(self, op: ReducedOp, children: list, bundle: EnvBundle, cap: int = DENSE_CAP):
        self.op = op
        if op.is_dense:
            self.bases = [dense_basis(c, cap) for c in children]
            return
        self.prefactor = op.prefactor
        self.env0 = None
        self.single = {}
        self.multi = []
        parts_of = [_split_ops(term.ops, op.tree.children) for term in op.terms]
        for term, parts in zip(op.terms, parts_of):
            blocks = {}
            for k, part in enumerate(parts):
                if part:
                    b = bundle.block(children[k], children[k], part)
                    if b is not None:
                        blocks[k] = b
            if not blocks:
                self.env0 = _add_env(self.env0, term.coeff, term.env)
            elif term.env is None and len(blocks) == 1:
                (k, b), = blocks.items()
                self.single[k] = term.coeff * b if k not in self.single else self.single[k] + term.coeff * b
            else:
                self.multi.append((term.coeff, term.env, blocks))

    def __call__(self, t, c):
        if self.op.is_dense:
            y = c
            for k, u in enumerate(self.bases):
                y = mode_product(y, k + 1, u)
            f = self.op.dense_func(t, y)
            for k, u in enumerate(self.bases):
                f = mode_product(f, k + 1, u.conj().T)
            return f
        out = np.zeros_like(c)
        if self.env0 is not None:
            out += self.env0 * c if np.ndim(self.env0) == 0 else mode_product(c, 0, self.env0)
        for k, b in self.single.items():
            out += mode_product(c, k + 1, b)
        for coeff, env, blocks in self.multi:
            z = c if env is None else mode_product(c, 0, env)
            for k, b in blocks.items():
                z = mode_product(z, k + 1, b)
            out += coeff * z
        return self.prefactor * out


def galerkin_rhs(op: ReducedOp, c, children: list, t: float = 0.0, bundle: Optional[EnvBundle] = None):
    """
    Projected right-hand side for the connection tensor `c` with augmented
    orthonormal child networks `children`.
    """
    for k, ch in enumerate(children):
        if ch.rank != c.shape[k + 1]:
            raise ValueError(f"child {k} has rank {ch.rank}, core expects {c.shape[k + 1]}")
    return NodeOperator(op, children, EnvBundle() if bundle is None else bundle)(t, c)
