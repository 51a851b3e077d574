"""
Tree tensor networks: a basis matrix at every leaf and a connection tensor
at every internal node, with the parent-facing mode stored as mode 0.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import tree as tr
from .tensor_core import DTYPE, matricize, mode_product, qr_thin, tensorize

DENSE_CAP = 2**20
DEFLATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TTN:
    """
    Tree tensor network on `tree`.

    For a leaf, `data` is the basis matrix U_l of shape (n_l, r_l).
    For an internal node, `data` is the connection tensor of shape
    (r_tau, r_tau_1, ..., r_tau_m) and `children` holds one sub-network per child.
    Instances hash by identity, which the integrator uses for caching.
    """
    tree: tr.Tree
    data: np.ndarray
    children: tuple = field(default=())

    def __post_init__(self):
        if tr.is_leaf(self.tree):
            if self.children:
                raise ValueError("a leaf carries no children")
            if self.data.ndim != 2 or self.data.shape[0] != self.tree.dim:
                raise ValueError(f"leaf {self.tree.label}: basis shape {self.data.shape} "
                                 f"does not match physical dimension {self.tree.dim}")
            return
        if len(self.children) != len(self.tree.children):
            raise ValueError("number of children does not match the tree")
        if self.data.ndim != len(self.children) + 1:
            raise ValueError(f"connection tensor of order {self.data.ndim} for {len(self.children)} children")
        for k, c in enumerate(self.children):
            if c.tree != self.tree.children[k]:
                raise ValueError("child network does not match the tree")
            if c.rank != self.data.shape[k + 1]:
                raise ValueError(f"child {k} has rank {c.rank} but the connection tensor expects {self.data.shape[k + 1]}")

    @property
    def is_leaf(self) -> bool:
        return tr.is_leaf(self.tree)

    @property
    def rank(self) -> int:
        return self.data.shape[1] if self.is_leaf else self.data.shape[0]

    def replace(self, data=None, children=None) -> "TTN":
        return TTN(self.tree,
                   self.data if data is None else data,
                   self.children if children is None else tuple(children))

    def sub(self, address: tuple) -> "TTN":
        x = self
        for k in address:
            x = x.children[k]
        return x


def ranks(x: TTN, prefix: tuple = ()) -> dict:
    """
    Tree rank as a mapping from subtree address to rank.
    """
    out = {prefix: x.rank}
    for k, c in enumerate(x.children):
        out.update(ranks(c, prefix + (k,)))
    return out


def max_rank(x: TTN) -> int:
    return max(ranks(x).values())


def param_count(x: TTN) -> int:
    """
    Total number of entries in all basis matrices and connection tensors.
    """
    return int(x.data.size) + sum(param_count(c) for c in x.children)


def scale(x: TTN, c) -> TTN:
    """
    Multiply the represented tensor by the scalar `c` (absorbed in the top tensor).
    """
    return x.replace(data=c * x.data)


def dense_basis(x: TTN, cap: int = DENSE_CAP):
    """
    Dense basis matrix ``U_tau = mat_0(X_tau)^T`` of shape (n_tau, r_tau).

    Rows follow reverse-lexicographic order over the leaves of the subtree
    in left-to-right order.
    """
    if tr.physical_dim(x.tree) * x.rank > cap:
        raise MemoryError(f"dense basis with {tr.physical_dim(x.tree) * x.rank} entries exceeds cap {cap}")
    if x.is_leaf:
        return x.data
    t = x.data
    for k, c in enumerate(x.children):
        t = mode_product(t, k + 1, dense_basis(c, cap))
    return matricize(t, 0).T


def to_full(x: TTN, cap: int = DENSE_CAP):
    """
    Contract the network into a dense tensor with one mode per leaf,
    modes ordered by ascending leaf label. A leading mode of size r is kept if r > 1.
    """
    lv = tr.leaves(x.tree)
    n = tr.physical_dim(x.tree)
    if n * x.rank > cap:
        raise MemoryError(f"full tensor with {n * x.rank} entries exceeds cap {cap}")
    u = dense_basis(x, cap)
    t = np.reshape(u.T, (x.rank,) + tuple(l.dim for l in lv), order="F")
    perm = np.argsort([l.label for l in lv])
    t = np.transpose(t, (0,) + tuple(1 + p for p in perm))
    return t[0] if x.rank == 1 else t


def _factor(m):
    """
    QR factorization ``m = q @ r`` that drops numerically dependent directions.
    """
    q, r = qr_thin(m)
    s = np.linalg.svd(r, compute_uv=False)
    if s.size and s[0] > 0 and s[-1] >= DEFLATION_TOL * s[0] and r.shape[0] == min(m.shape):
        return q, r
    p, s, vh = np.linalg.svd(m, full_matrices=False)
    k = max(1, int(np.count_nonzero(s > DEFLATION_TOL * (s[0] if s.size else 0))))
    return p[:, :k], s[:k, None] * vh[:k]


def _orthonormalize(x: TTN, is_root: bool):
    if x.is_leaf:
        q, r = _factor(x.data)
        return x.replace(data=q), r
    children = []
    c = x.data
    for k, ch in enumerate(x.children):
        ch_new, r = _orthonormalize(ch, False)
        children.append(ch_new)
        c = mode_product(c, k + 1, r)
    if is_root:
        return x.replace(data=c, children=children), None
    q, r = _factor(matricize(c, 0).T)
    dims = (q.shape[1],) + c.shape[1:]
    return x.replace(data=tensorize(q.T, 0, dims), children=children), r


def orthonormalize(x: TTN) -> TTN:
    """
    Leaves-to-root QR sweep; the represented tensor is unchanged.

    Numerically rank-deficient factors (relative singular value below 1e-12)
    reduce the corresponding rank.
    """
    y, _ = _orthonormalize(x, True)
    return y


def is_orthonormal(x: TTN, tol: float = 1e-10, is_root: bool = True) -> bool:
    """
    Check orthonormality of all basis matrices and of ``mat_0(C)^T`` below the root.
    """
    if x.is_leaf:
        m = x.data
    else:
        if not all(is_orthonormal(c, tol, False) for c in x.children):
            return False
        if is_root:
            return True
        m = matricize(x.data, 0).T
    return np.allclose(m.conj().T @ m, np.identity(m.shape[1]), rtol=0, atol=tol)


def inner(x: TTN, y: TTN):
    """
    Contraction product ``<X, Y> = (mat_0(X)^T)^* mat_0(Y)^T`` computed recursively.
    """
    if x.tree != y.tree:
        raise ValueError("tree tensor networks live on different trees")
    if x.is_leaf:
        return x.data.conj().T @ y.data
    t = y.data
    for k in range(len(x.children)):
        t = mode_product(t, k + 1, inner(x.children[k], y.children[k]))
    return matricize(x.data, 0).conj() @ matricize(t, 0).T


def inner_at(x: TTN, y: TTN, address: tuple):
    return inner(x.sub(address), y.sub(address))


def norm(x: TTN) -> float:
    """
    Euclidean norm of the represented tensor.
    """
    g = inner(x, x)
    if g.shape != (1, 1):
        raise ValueError("norm is defined for networks with top rank 1")
    return float(np.sqrt(max(g[0, 0].real, 0.0)))


def compatible_ranks(t: tr.Tree, r: int) -> dict:
    """
    Largest tree rank with all entries at most `r` that satisfies the compatibility conditions.
    """
    rk = {}
    for a in reversed(list(tr.addresses(t))):
        s = tr.subtree(t, a)
        if tr.is_leaf(s):
            rk[a] = min(r, s.dim)
        else:
            rk[a] = min(r, int(np.prod([rk[a + (k,)] for k in range(len(s.children))])))
    rk[()] = 1
    changed = True
    while changed:
        changed = False
        for a in tr.addresses(t):
            s = tr.subtree(t, a)
            if tr.is_leaf(s):
                continue
            dims = [rk[a]] + [rk[a + (k,)] for k in range(len(s.children))]
            for k in range(len(s.children)):
                bound = int(np.prod(dims)) // dims[k + 1]
                if dims[k + 1] > bound:
                    rk[a + (k,)] = bound
                    dims[k + 1] = bound
                    changed = True
    return rk


def random_ttn(t: tr.Tree, rank, seed=None, decay: float = 0.0, orthonormal: bool = True) -> TTN:
    """
    Random complex tree tensor network.

    `rank` is an integer (clipped to compatible values) or a mapping address -> rank.
    With ``decay > 0`` the entries of every connection tensor are weighted by
    ``exp(-decay * k)`` along each child mode index `k`, producing graded singular values.
    """
    rng = np.random.default_rng(seed)
    rk = compatible_ranks(t, rank) if isinstance(rank, int) else dict(rank)
    tr.check_rank_compatibility(t, rk)

    def build(s, a):
        r = rk[a]
        if tr.is_leaf(s):
            data = rng.standard_normal((s.dim, r)) + 1j * rng.standard_normal((s.dim, r))
            return TTN(s, data.astype(DTYPE))
        children = [build(c, a + (k,)) for k, c in enumerate(s.children)]
        dims = (r,) + tuple(c.rank for c in children)
        data = rng.standard_normal(dims) + 1j * rng.standard_normal(dims)
        if decay > 0:
            for k in range(1, len(dims)):
                w = np.exp(-decay * np.arange(dims[k]) * rng.uniform(0.5, 1.5))
                data = mode_product(data, k, np.diag(w))
        return TTN(s, data.astype(DTYPE), tuple(children))

    x = build(t, ())
    if orthonormal:
        x = orthonormalize(x)
        x = scale(x, 1.0 / norm(x))
    return x


def product_state(t: tr.Tree, vectors: dict) -> TTN:
    """
    Rank-1 network of the tensor product of `vectors[label]` over all leaves.
    """
    def build(s):
        if tr.is_leaf(s):
            v = np.asarray(vectors[s.label], dtype=DTYPE).reshape(s.dim, 1)
            return TTN(s, v)
        return TTN(s, np.ones((1,) * (len(s.children) + 1), dtype=DTYPE),
                   tuple(build(c) for c in s.children))
    return build(t)


def from_full(a, t: tr.Tree, tol: float = 1e-14) -> TTN:
    """
    Exact (up to `tol`) network of a dense tensor with modes ordered by leaf label,
    built by successive truncated SVDs from the leaves upward.
    """
    lv = tr.leaves(t)
    labels = sorted(l.label for l in lv)
    a = np.asarray(a, dtype=DTYPE)
    if a.shape != tuple(l.dim for l in sorted(lv, key=lambda l: l.label)):
        raise ValueError("tensor shape does not match the leaf dimensions")
    order = [labels.index(l.label) for l in lv]
    # columns of `vec` hold the tensor in reverse-lexicographic order over leaves in tree order
    vec = np.reshape(np.transpose(a, order), (-1, 1), order="F")

    def basis(s, offset):
        """Orthonormal basis for the span of the subtree's fibers; returns (ttn, n_s)."""
        n_s = tr.physical_dim(s)
        n_before = int(np.prod([l.dim for l in lv[:offset]], dtype=int))
        m = np.reshape(vec[:, 0], (n_before, n_s, -1), order="F")
        m = np.transpose(m, (1, 0, 2)).reshape(n_s, -1)
        p, sig, _ = np.linalg.svd(m, full_matrices=False)
        k = max(1, int(np.count_nonzero(sig > tol * max(sig[0], 1e-300))))
        u = p[:, :k]
        if tr.is_leaf(s):
            return TTN(s, u)
        children = []
        off = offset
        for c in s.children:
            children.append(basis(c, off))
            off += len(tr.leaves(c))
        ub = _kron_bases([dense_basis(c) for c in children])
        core = (ub.conj().T @ u).T
        dims = (k,) + tuple(c.rank for c in children)
        return TTN(s, tensorize(core, 0, dims), tuple(children))

    if tr.is_leaf(t):
        raise ValueError("from_full needs an internal root")
    children = []
    off = 0
    for c in t.children:
        children.append(basis(c, off))
        off += len(tr.leaves(c))
    ub = _kron_bases([dense_basis(c) for c in children])
    core = (ub.conj().T @ vec).T
    dims = (1,) + tuple(c.rank for c in children)
    return TTN(t, tensorize(core, 0, dims), tuple(children))


def _kron_bases(us):
    """
    Kronecker product matching reverse-lexicographic row order (first factor fastest).
    """
    out = np.ones((1, 1), dtype=DTYPE)
    for u in us:
        out = np.kron(u, out)
    return out


MAGIC = b"TTNBUG1\n"


def save_ttn(x: TTN, path):
    """
    Write `x` as a header line (JSON) followed by little-endian complex128 arrays in pre-order.
    """
    nodes = []

    def collect(y):
        nodes.append(y)
        for c in y.children:
            collect(c)
    collect(x)
    header = {
        "tree": tr.format_tree(x.tree),
        "dims": {str(l.label): l.dim for l in tr.leaves(x.tree)},
        "ranks": {",".join(map(str, a)): r for a, r in ranks(x).items()},
        "shapes": [list(y.data.shape) for y in nodes],
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header).encode() + b"\n")
        for y in nodes:
            f.write(np.ascontiguousarray(y.data, dtype="<c16").tobytes())


def load_ttn(path) -> TTN:
    with open(path, "rb") as f:
        if f.readline() != MAGIC:
            raise ValueError(f"{path} is not a TTN checkpoint")
        header = json.loads(f.readline())
        payload = f.read()
    dims = {int(k): v for k, v in header["dims"].items()}
    t = tr.parse_tree(header["tree"], dims)
    shapes = [tuple(s) for s in header["shapes"]]
    arrays = []
    offset = 0
    for s in shapes:
        nbytes = 16 * int(np.prod(s, dtype=int))
        arrays.append(np.frombuffer(payload[offset:offset + nbytes], dtype="<c16").reshape(s).astype(DTYPE))
        offset += nbytes
    if offset != len(payload):
        raise ValueError("checkpoint payload size does not match the header")
    it = iter(arrays)

    def build(s):
        data = next(it)
        if tr.is_leaf(s):
            return TTN(s, data)
        return TTN(s, data, tuple(build(c) for c in s.children))
    return build(t)
