"""Khatri-Rao products and unfoldings of the M x 6N x L observation tensor.

Ordering convention, used everywhere in the package: in ``khatri_rao(A, B)``
the row index of ``A`` varies slowest, so column ``k`` equals
``np.kron(A[:, k], B[:, k])``.  With a tensor ``Z[m, i, l]`` built from
factors ``V`` (M x K), ``C`` (6N x K) and ``U`` (L x K) the three unfoldings
are

    Z1 = (C kr U) V^T,  shape (6N*L, M),  row i*L + l
    Z2 = (U kr V) C^T,  shape (L*M, 6N),  row l*M + m
    Z3 = (V kr C) U^T,  shape (M*6N, L),  row m*6N + i
"""

import numpy as np

# mode -> axis permutation applied before flattening rows
_PERM = {1: (1, 2, 0), 2: (2, 0, 1), 3: (0, 1, 2)}


def khatri_rao(A, B):
    """Column-wise Kronecker product of ``A`` (I x K) and ``B`` (J x K)."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("khatri_rao expects two 2-D arrays")
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"column count mismatch: {A.shape[1]} vs {B.shape[1]}")
    I, K = A.shape
    J = B.shape[0]
    return (A[:, None, :] * B[None, :, :]).reshape(I * J, K)


def unfold(Z, mode):
    """Matrix unfolding of a third-order array; see module docstring."""
    Z = np.asarray(Z)
    if mode not in _PERM:
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    if Z.ndim != 3:
        raise ValueError("unfold expects a third-order array")
    P = np.transpose(Z, _PERM[mode])
    return P.reshape(-1, P.shape[-1])


def fold(Zn, mode, shape):
    """Inverse of :func:`unfold` for a tensor of the given ``(M, 6N, L)`` shape."""
    if mode not in _PERM:
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    perm = _PERM[mode]
    permuted_shape = tuple(shape[p] for p in perm)
    P = np.asarray(Zn).reshape(permuted_shape)
    return np.transpose(P, np.argsort(perm))


def cp_to_tensor(V, C, U):
    """Assemble ``sum_k V[:, k] o C[:, k] o U[:, k]`` as an (M, 6N, L) array."""
    return np.einsum("mk,ik,lk->mil", V, C, U)
