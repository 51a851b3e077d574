"""
Dense-arithmetic reference implementation of one rank-adaptive step.

Reduced operators are formed as explicit matrices ``P^H F P`` from explicit
prolongation matrices, every subflow is solved on vectorized dense arrays and
the truncation works on explicit unfoldings. Only usable for small trees; used
to cross-check the structured implementation.

Networks are nested tuples: a leaf is ``("leaf", U)``, an internal node is
``("node", core, [children])``. Vectorization is column-major throughout.
"""

import numpy as np
import scipy.sparse as sp

from . import tree as tr

MAX_ENTRIES = 4096


def _vec(a):
    return np.reshape(a, (-1,), order="F")


def _unvec(v, shape):
    return np.reshape(v, shape, order="F")


def _unfold(a, i):
    return np.reshape(np.moveaxis(a, i, 0), (a.shape[i], -1), order="F")


def _fold(m, i, shape):
    rest = [s for k, s in enumerate(shape) if k != i]
    return np.moveaxis(np.reshape(m, [shape[i]] + rest, order="F"), 0, i)


def _kron_all(mats):
    """``mats[-1] x ... x mats[0]`` so that the first factor varies fastest."""
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(m, out)
    return out


def _range(m, rel_tol=1e-12):
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return u[:, :1]
    return u[:, : max(1, int(np.sum(s > rel_tol * s[0])))]


def _rk4(a, y, h, substeps):
    dt = h / substeps
    for _ in range(substeps):
        k1 = a @ y
        k2 = a @ (y + 0.5 * dt * k1)
        k3 = a @ (y + 0.5 * dt * k2)
        k4 = a @ (y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def from_ttn(x):
    if x.is_leaf:
        return ("leaf", np.array(x.data))
    return ("node", np.array(x.data), [from_ttn(c) for c in x.children])


def basis(node):
    """Dense basis matrix (physical dimension x rank)."""
    if node[0] == "leaf":
        return node[1]
    core, children = node[1], node[2]
    return _kron_all([basis(c) for c in children]) @ _unfold(core, 0).T


def root_vector_order(t):
    """
    Index map: entry p of the row-major full vector over ascending labels is
    entry ``order[p]`` of the column-major root vector (first leaf fastest, tree order).
    """
    lv = tr.leaves(t)
    dims = [l.dim for l in lv]
    idx = np.reshape(np.arange(int(np.prod(dims))), dims, order="F")
    order = np.argsort([l.label for l in lv])
    return np.reshape(np.transpose(idx, order), (-1,))


def sparse_operator(op, labels):
    """Sparse matrix of a Kronecker-sum operator (row-major over `labels`)."""
    total = None
    for coeff, ops in op.terms:
        m = sp.identity(1, dtype=complex, format="csr")
        for l in labels:
            a = ops.get(l)
            m = sp.kron(m, sp.csr_matrix(a) if a is not None else sp.identity(op.dims[l], dtype=complex),
                        format="csr")
        total = coeff * m if total is None else total + coeff * m
    return total


def prolongation_matrix(core, child_bases, i):
    """
    Matrix of the prolongation from the i-th child's space into the node space,
    both column-major vectorized. Also returns the triangular QR factor.
    """
    q, r = np.linalg.qr(_unfold(core, i + 1).T)
    shape = list(core.shape)
    shape[i + 1] = q.shape[1]
    w = _fold(q.T, i + 1, shape)
    mats = [np.identity(core.shape[0])] + [
        np.identity(q.shape[1]) if j == i else b for j, b in enumerate(child_bases)]
    wp_shape = [m.shape[0] for m in mats]
    wp = _unvec(_kron_all(mats) @ _vec(w), wp_shape)
    n_i = child_bases[i].shape[0]
    k = q.shape[1]
    # vec(mat_i(Y)) = (mat_i(W')^T kron I) vec(B) with B = mat_0(Z)^T of shape (n_i, k)
    m = np.kron(_unfold(wp, i + 1).T, np.identity(n_i))
    out_shape = list(wp_shape)
    out_shape[i + 1] = n_i
    idx = _unfold(np.reshape(np.arange(int(np.prod(out_shape))), out_shape, order="F"), i + 1)
    rows = np.empty(m.shape[0], dtype=int)
    rows[_vec(idx)] = np.arange(m.shape[0])
    m = m[rows]  # reorder from unfolding order to natural order
    bidx = np.reshape(np.arange(n_i * k), (n_i, k), order="F").T  # B^T = mat_0(Z)
    cols = _vec(bidx)
    perm = np.empty_like(cols)
    perm[cols] = np.arange(cols.size)
    return m[:, cols], r


def _augment(node, f_mat, h, substeps, trace):
    core, children = node[1], node[2]
    bases0 = [basis(c) for c in children]
    new_children, m_hats = [], []
    for i, child in enumerate(children):
        p, r = prolongation_matrix(core, bases0, i)
        f_child = p.conj().T @ (f_mat @ p)
        if child[0] == "leaf":
            u0 = child[1]
            y0 = r @ u0.T
            y1 = _unvec(_rk4(f_child, _vec(y0), h, substeps), y0.shape)
            u_hat = _range(np.hstack([y1.T, u0]))
            new_children.append(("leaf", u_hat))
            m_hats.append(u_hat.conj().T @ u0)
        else:
            c_child = child[1]
            start = ("node", _fold(r @ _unfold(c_child, 0), 0, (r.shape[0],) + c_child.shape[1:]), child[2])
            aug, c_hat_0 = _augment(start, f_child, h, substeps, trace)
            c_hat_1 = aug[1]
            q_hat = _range(np.hstack([_unfold(c_hat_1, 0).T, _unfold(c_hat_0, 0).T]))
            new = ("node", _fold(q_hat.T, 0, (q_hat.shape[1],) + c_hat_1.shape[1:]), aug[2])
            new_children.append(new)
            m_hats.append(basis(new).conj().T @ basis(child))
    c_hat_0 = _unvec(_kron_all([np.identity(core.shape[0])] + m_hats) @ _vec(core),
                     (core.shape[0],) + tuple(m.shape[0] for m in m_hats))
    b = _kron_all([np.identity(core.shape[0])] + [basis(c) for c in new_children])
    galerkin = b.conj().T @ (f_mat @ b)
    c_hat_1 = _unvec(_rk4(galerkin, _vec(c_hat_0), h, substeps), c_hat_0.shape)
    if trace is not None:
        old = _kron_all([np.identity(core.shape[0])] + bases0) @ _vec(core)
        trace.append(float(np.linalg.norm(b @ _vec(c_hat_0) - old)))
    return ("node", c_hat_1, new_children), c_hat_0


def _cut(node, theta, tails):
    core, children = node[1], node[2]
    ps, out = [], []
    for i, child in enumerate(children):
        u, s, _ = np.linalg.svd(_unfold(core, i + 1), full_matrices=False)
        r = len(s)
        while r > 1 and np.sqrt(np.sum(s[r - 1:] ** 2)) <= theta:
            r -= 1
        tails.append(float(np.sqrt(np.sum(s[r:] ** 2))))
        p = u[:, :r]
        ps.append(p.conj().T)
        if child[0] == "leaf":
            out.append(("leaf", child[1] @ p))
        else:
            c = child[1]
            out.append(_cut(("node", _fold(p.T @ _unfold(c, 0), 0, (r,) + c.shape[1:]), child[2]), theta, tails))
    new_core = _unvec(_kron_all([np.identity(core.shape[0])] + ps) @ _vec(core),
                      (core.shape[0],) + tuple(p.shape[0] for p in ps))
    return ("node", new_core, out)


def reference_step(x, op, prefactor, h, theta, substeps=1, start_trace=None):
    """
    One adaptive step of ``Y' = prefactor * op[Y]`` from the network `x`.

    Returns the full tensor at the end of the step (ascending-label modes)
    and the list of discarded tails.
    """
    t = x.tree
    n = tr.physical_dim(t)
    if n > MAX_ENTRIES:
        raise MemoryError("reference step limited to small trees")
    labels = sorted(tr.leaf_labels(t))
    order = root_vector_order(t)
    h_mat = sparse_operator(op, labels)
    # full = s @ natural, with natural the column-major tree-order vector
    s = sp.csr_matrix((np.ones(n), (np.arange(n), order)), shape=(n, n))
    f_root = (prefactor * (s.T @ h_mat @ s)).toarray()
    aug, _ = _augment(from_ttn(x), f_root, h, substeps, start_trace)
    tails = []
    out = _cut(aug, theta, tails)
    vec = basis(out)[:, 0]
    full = vec[order]
    return np.reshape(full, tuple(l.dim for l in sorted(tr.leaves(t), key=lambda l: l.label))), tails
