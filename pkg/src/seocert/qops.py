"""Dense operator algebra on tensor-product spaces.

Operators are plain ``numpy`` complex arrays of shape ``(n, n)``; a factor
shape is a sequence of local dimensions whose product is ``n``.  Besides the
operator-level functions there are sparse "superoperator" builders that return
the matrix of a linear map acting on row-major vectorized operators, which is
what the SDP encoder consumes.
"""

from __future__ import annotations

from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

TOL_HERM = 1e-10
TOL_PSD = 1e-8
RANK_TOL = 1e-8


class ShapeError(ValueError):
    pass


class NotPSDError(ValueError):
    pass


def _check_shape(x: np.ndarray, dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ShapeError(f"local dimensions must be positive, got {dims}")
    n = int(np.prod(dims))
    if x.ndim != 2 or x.shape != (n, n):
        raise ShapeError(f"operator of shape {x.shape} does not match factor dims {dims}")
    return dims


def _check_subset(subset: Iterable[int], nfac: int) -> list[int]:
    s = sorted(set(int(i) for i in subset))
    if s and (s[0] < 0 or s[-1] >= nfac):
        raise ShapeError(f"factor indices {s} out of range for {nfac} factors")
    return s


def is_hermitian(x: np.ndarray, tol: float = TOL_HERM) -> bool:
    x = np.asarray(x)
    return x.ndim == 2 and x.shape[0] == x.shape[1] and np.abs(x - x.conj().T).max(initial=0.0) <= tol


def is_psd(x: np.ndarray, tol: float = TOL_PSD) -> bool:
    if not is_hermitian(x, max(tol, TOL_HERM)):
        return False
    return min_eig(x) >= -tol


def hermitize(x: np.ndarray) -> np.ndarray:
    return (x + x.conj().T) / 2


def min_eig(x: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitize(np.asarray(x)))[0])


def kron(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of any number of operators (left to right)."""
    if not ops:
        return np.ones((1, 1), dtype=complex)
    return reduce(np.kron, ops)


def embed(op: np.ndarray, pos: int, dims: Sequence[int]) -> np.ndarray:
    """``I ⊗ … ⊗ op ⊗ … ⊗ I`` with ``op`` acting on factor ``pos``."""
    return kron(*[op if i == pos else np.eye(d) for i, d in enumerate(dims)])


def partial_trace(x: np.ndarray, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Trace out every factor not listed in ``keep``.

    Kept factors appear in their original order in the result.
    """
    x = np.asarray(x)
    dims = _check_shape(x, dims)
    keep = _check_subset(keep, len(dims))
    nf = len(dims)
    traced = [i for i in range(nf) if i not in keep]
    t = x.reshape(dims + dims)
    perm = keep + traced + [nf + i for i in keep] + [nf + i for i in traced]
    nk = int(np.prod([dims[i] for i in keep]))
    nt = int(np.prod([dims[i] for i in traced])) if traced else 1
    t = t.transpose(perm).reshape(nk, nt, nk, nt)
    return np.einsum("ijkj->ik", t)


def partial_transpose(x: np.ndarray, dims: Sequence[int], subset: Iterable[int]) -> np.ndarray:
    """Transpose the factors in ``subset``; all factors gives the plain transpose."""
    x = np.asarray(x)
    dims = _check_shape(x, dims)
    subset = _check_subset(subset, len(dims))
    nf = len(dims)
    axes = list(range(2 * nf))
    for i in subset:
        axes[i], axes[nf + i] = nf + i, i
    n = x.shape[0]
    return x.reshape(dims + dims).transpose(axes).reshape(n, n)


def permute_factors(x: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: factor ``perm[i]`` of ``x`` becomes factor ``i``."""
    x = np.asarray(x)
    dims = _check_shape(x, dims)
    perm = list(perm)
    if sorted(perm) != list(range(len(dims))):
        raise ShapeError(f"{perm} is not a permutation of {len(dims)} factors")
    nf = len(dims)
    n = x.shape[0]
    return x.reshape(dims + dims).transpose(perm + [nf + p for p in perm]).reshape(n, n)


def factor_permutation_indices(dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Basis-index permutation ``p`` with ``permute_factors(x)[i, j] == x[p[i], p[j]]``."""
    dims = tuple(int(d) for d in dims)
    idx = np.arange(int(np.prod(dims))).reshape(dims)
    return idx.transpose(list(perm)).reshape(-1)


def support(x: np.ndarray, rank_tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues above ``rank_tol * λ_max`` and an isometry (columns) onto their span."""
    w, v = np.linalg.eigh(hermitize(np.asarray(x)))
    cut = rank_tol * max(float(w[-1]), 0.0)
    mask = w > cut
    return w[mask], v[:, mask]


def psd_sqrt_pinv(x: np.ndarray, rank_tol: float = RANK_TOL, tol_psd: float = TOL_PSD
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Π, x^{-1/2})``: the range projector and the pseudo-inverse square root."""
    x = np.asarray(x)
    if not is_psd(x, tol_psd):
        raise NotPSDError("psd_sqrt_pinv needs a positive semidefinite operator")
    w, v = support(x, rank_tol)
    proj = v @ v.conj().T
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    return proj, inv_sqrt


# ---------------------------------------------------------------------------
# Superoperator matrices on row-major vec: vec(X)[i * n + j] = X[i, j].

def _index_grid(dims: Sequence[int]) -> np.ndarray:
    return np.arange(int(np.prod(dims))).reshape(tuple(dims))


def ptrace_map(dims: Sequence[int], keep: Iterable[int]) -> sp.csr_matrix:
    """Sparse matrix of ``X -> partial_trace(X, dims, keep)`` on vec(X)."""
    dims = tuple(int(d) for d in dims)
    keep = _check_subset(keep, len(dims))
    traced = [i for i in range(len(dims)) if i not in keep]
    n = int(np.prod(dims))
    nk = int(np.prod([dims[i] for i in keep]))
    nt = n // nk
    # full[iK, t] = full-space index with kept digits iK and traced digits t
    full = _index_grid(dims).transpose(keep + traced).reshape(nk, nt)
    ik, jk, t = np.meshgrid(np.arange(nk), np.arange(nk), np.arange(nt), indexing="ij")
    rows = (ik * nk + jk).ravel()
    cols = (full[ik, t] * n + full[jk, t]).ravel()
    data = np.ones(rows.size)
    return sp.csr_matrix((data, (rows, cols)), shape=(nk * nk, n * n))


def ptranspose_map(dims: Sequence[int], subset: Iterable[int]) -> sp.csr_matrix:
    """Sparse permutation matrix of ``X -> partial_transpose(X, dims, subset)``."""
    dims = tuple(int(d) for d in dims)
    subset = _check_subset(subset, len(dims))
    nf = len(dims)
    n = int(np.prod(dims))
    axes = list(range(2 * nf))
    for i in subset:
        axes[i], axes[nf + i] = nf + i, i
    src = np.arange(n * n).reshape(dims + dims).transpose(axes).reshape(-1)
    return sp.csr_matrix((np.ones(n * n), (np.arange(n * n), src)), shape=(n * n, n * n))


def conj_map(a: np.ndarray | sp.spmatrix) -> sp.csr_matrix:
    """Sparse matrix of ``X -> A X A^†`` (``A`` may be rectangular)."""
    a = sp.csr_matrix(a)
    return sp.kron(a, a.conj(), format="csr")
