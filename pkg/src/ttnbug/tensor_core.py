"""
Dense tensor primitives: matricization, tensorization, mode products and
the small factorizations used throughout the integrator.

Tensors are plain numpy arrays. Matricization uses reverse-lexicographic
column ordering (the first remaining index runs fastest), i.e. Fortran order.
"""

import numpy as np

DTYPE = np.complex128


def _check_mode(a, i: int):
    if not 0 <= i < a.ndim:
        raise ValueError(f"invalid mode index {i} for tensor of order {a.ndim}")


def matricize(a, i: int):
    """
    Compute the `i`-th matricization of `a`, of shape ``(n_i, prod(n_j, j != i))``.
    """
    a = np.asarray(a)
    _check_mode(a, i)
    return np.reshape(np.moveaxis(a, i, 0), (a.shape[i], -1), order="F")


def tensorize(m, i: int, dims):
    """
    Inverse of `matricize`: fold the matrix `m` back into a tensor of shape `dims`.
    """
    m = np.asarray(m)
    dims = tuple(int(n) for n in dims)
    if not 0 <= i < len(dims):
        raise ValueError(f"invalid mode index {i} for shape {dims}")
    rest = dims[:i] + dims[i+1:]
    if m.shape != (dims[i], int(np.prod(rest, dtype=int))):
        raise ValueError(f"matrix of shape {m.shape} cannot be tensorized to {dims} along mode {i}")
    t = np.reshape(m, (dims[i],) + rest, order="F")
    return np.moveaxis(t, 0, i)


def mode_product(a, i: int, m):
    """
    Mode-`i` product ``a x_i m``, replacing dimension ``n_i`` by ``rows(m)``.
    """
    a = np.asarray(a)
    m = np.asarray(m)
    _check_mode(a, i)
    if m.ndim != 2 or m.shape[1] != a.shape[i]:
        raise ValueError(f"matrix of shape {m.shape} does not match mode {i} of dimension {a.shape[i]}")
    t = np.tensordot(m, a, axes=(1, i))
    return np.moveaxis(t, 0, i)


def multi_mode_product(a, mats: dict):
    """
    Apply ``a x_i mats[i]`` for every mode `i` in `mats`; `None` entries are skipped.
    """
    for i, m in mats.items():
        if m is not None:
            a = mode_product(a, i, m)
    return a


def tucker_to_full(core, bases):
    """
    Contract a Tucker core with one basis matrix per mode.
    """
    if len(bases) != np.ndim(core):
        raise ValueError("need one basis matrix per core mode")
    return multi_mode_product(core, dict(enumerate(bases)))


def tucker_matricization(core, bases, i: int):
    """
    Matricization of a Tucker tensor without forming it,
    ``U_i mat_i(C) (U_{d} kron ... kron U_{1})^T`` with mode `i` left out of the Kronecker product.
    """
    core = np.asarray(core)
    _check_mode(core, i)
    if len(bases) != core.ndim:
        raise ValueError("need one basis matrix per core mode")
    for j, u in enumerate(bases):
        if u.shape[1] != core.shape[j]:
            raise ValueError(f"basis {j} of shape {u.shape} does not match core dimension {core.shape[j]}")
    kron = np.ones((1, 1), dtype=np.result_type(core, *bases))
    # reverse-lexicographic columns: first remaining index fastest, so it goes rightmost
    for j in range(core.ndim):
        if j != i:
            kron = np.kron(bases[j], kron)
    return bases[i] @ matricize(core, i) @ kron.T


def qr_thin(m):
    """
    Thin QR decomposition; `q` has ``min(rows, cols)`` orthonormal columns.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError("qr_thin expects a matrix with at least one row")
    q, r = np.linalg.qr(m, mode="reduced")
    return q, r


def svd_reduced(m):
    """
    Reduced SVD ``m = p @ diag(sigma) @ vh`` with `sigma` sorted descending.
    """
    p, sigma, vh = np.linalg.svd(np.asarray(m), full_matrices=False)
    return p, sigma, vh


def orthonormal_range(m, rel_tol: float = 1e-12):
    """
    Orthonormal basis of the numerical range of `m`.

    Left singular vectors belonging to singular values below ``rel_tol * sigma_max``
    are dropped; at least one column is always returned.
    """
    if rel_tol < 0:
        raise ValueError("rel_tol must be nonnegative")
    p, sigma, _ = svd_reduced(m)
    if sigma.size == 0 or sigma[0] == 0:
        return p[:, :1]
    k = max(1, int(np.count_nonzero(sigma > rel_tol * sigma[0])))
    return p[:, :k]


def is_isometry(a, tol: float = 1e-10) -> bool:
    """
    Whether the matrix `a` has orthonormal columns.
    """
    a = np.asarray(a)
    return np.allclose(a.conj().T @ a, np.identity(a.shape[1]), rtol=0, atol=tol)
