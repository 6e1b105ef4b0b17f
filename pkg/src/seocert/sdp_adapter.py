"""Real conic encoding of Hermitian SDP feasibility problems and the solver boundary.

A problem is described by Hermitian matrix variables ("blocks"), operator
equalities ``Σ L_i(X_i) [- t C] = R`` and PSD constraints ``L(X_i) ⪰ 0`` where
every ``L`` is a sparse complex matrix acting on row-major ``vec(X)``.

Each block is parametrized by real coefficients ``c`` with ``vec(X) = T c``;
``T`` may be restricted to operators invariant under a group of basis
permutations.  Operator equalities become ``n_out²`` real equations on the
coefficients, and a PSD constraint on an ``n``-dimensional Hermitian image is
imposed through its real ``2n`` embedding ``[[Re, -Im], [Im, Re]]``.

The result is the standard form used by Clarabel and SCS::

    minimize  q·x   subject to  A x + s = b,  s ∈ {0}^z × S_+^{n_1} × …

with PSD slacks stored as scaled upper triangles in column-major order.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)

CERTIFICATE_TOL = 1e-6
DROP_TOL = 1e-13          # entries below this are round-off from composing maps
RANK_REL_TOL = 1e-10
DENSE_REDUCE_LIMIT = 4e7  # equality rows × variables for the dense rank reduction
SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# Problem description


@dataclass(frozen=True, eq=False)
class HermitianParam:
    """Real parametrization ``vec(X) = basis @ c`` of (possibly invariant) Hermitian matrices."""

    dim: int
    basis: sp.csc_matrix
    key: tuple

    @property
    def size(self) -> int:
        return self.basis.shape[1]

    def to_matrix(self, coef: np.ndarray) -> np.ndarray:
        x = (self.basis @ np.asarray(coef, dtype=float)).reshape(self.dim, self.dim)
        return (x + x.conj().T) / 2

    def from_matrix(self, x: np.ndarray) -> np.ndarray:
        """Least-squares coefficients of ``x`` (exact for operators in the span)."""
        b = self.basis
        v = np.asarray(x, dtype=complex).reshape(-1)
        # columns are HS-orthogonal with real norms
        norms = np.asarray(abs(b.multiply(b.conj())).sum(axis=0)).ravel()
        return np.real(b.conj().T @ v) / norms


@lru_cache(maxsize=64)
def _hermitian_param(n: int, perms: tuple[tuple[int, ...], ...]) -> HermitianParam:
    npairs = n * n
    pair = np.arange(npairs)
    if perms:
        rows, cols = [], []
        i, j = np.divmod(pair, n)
        for p in perms:
            p = np.asarray(p)
            rows.append(pair)
            cols.append(p[i] * n + p[j])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        graph = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(npairs, npairs))
        _, orbit = connected_components(graph, directed=False)
    else:
        orbit = pair
    i, j = np.divmod(pair, n)
    # canonical labels in order of first appearance
    _, first, orbit = np.unique(orbit, return_index=True, return_inverse=True)
    orbit_t = orbit[j * n + i]
    norb = first.size
    partner = np.empty(norb, dtype=int)
    partner[orbit] = orbit_t
    real_orb = partner == np.arange(norb)
    lead = (~real_orb) & (np.arange(norb) < partner)
    # parameter columns: one per self-transposed orbit, two per transposed pair
    col_re = np.full(norb, -1)
    col_im = np.full(norb, -1)
    ncol = 0
    for o in range(norb):
        if real_orb[o]:
            col_re[o] = ncol
            ncol += 1
        elif lead[o]:
            col_re[o] = ncol
            col_im[o] = ncol + 1
            col_re[partner[o]] = ncol
            col_im[partner[o]] = ncol + 1
            ncol += 2
    rows = [pair]
    cols = [col_re[orbit]]
    vals = [np.ones(npairs, dtype=complex)]
    has_im = col_im[orbit] >= 0
    sign = np.where(lead[orbit], 1.0, -1.0)
    rows.append(pair[has_im])
    cols.append(col_im[orbit][has_im])
    vals.append(1j * sign[has_im])
    basis = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(npairs, ncol)
    )
    return HermitianParam(n, basis, ("herm", n, perms))


def hermitian_param(n: int, perms: Sequence[Sequence[int]] = ()) -> HermitianParam:
    """Parametrize Hermitian ``n×n`` matrices invariant under ``X[p[i], p[j]] = X[i, j]``."""
    return _hermitian_param(int(n), tuple(tuple(int(v) for v in p) for p in perms))


@dataclass(frozen=True, eq=False)
class LinOp:
    """Sparse complex matrix of a Hermiticity-preserving map, acting on row-major vec."""

    key: str
    matrix: sp.csr_matrix
    out_dim: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = (self.matrix @ np.asarray(x, dtype=complex).reshape(-1)).reshape(self.out_dim, self.out_dim)
        return (y + y.conj().T) / 2


def identity_op(n: int) -> LinOp:
    return LinOp(f"id{n}", sp.identity(n * n, dtype=complex, format="csr"), n)


@dataclass(frozen=True)
class Block:
    name: str
    param: HermitianParam


@dataclass(frozen=True)
class Term:
    block: int
    op: LinOp
    scale: float = 1.0


@dataclass(frozen=True)
class Equality:
    """``Σ scale·op(X_block) = rhs + t·slope`` (``slope`` only in visibility mode)."""

    label: str
    terms: tuple[Term, ...]
    rhs: np.ndarray
    slope: np.ndarray | None = None


@dataclass(frozen=True)
class PsdConstraint:
    label: str
    block: int
    op: LinOp


@dataclass
class SdpData:
    blocks: list[Block] = field(default_factory=list)
    equalities: list[Equality] = field(default_factory=list)
    psd: list[PsdConstraint] = field(default_factory=list)
    maximize_t: bool = False
    x_bound: float = 1.0

    def add_block(self, name: str, param: HermitianParam) -> int:
        self.blocks.append(Block(name, param))
        return len(self.blocks) - 1


# ---------------------------------------------------------------------------
# Encoding


@dataclass
class ConicProgram:
    A: sp.csc_matrix
    b: np.ndarray
    q: np.ndarray
    n_zero: int
    psd_sizes: list[int]
    block_slices: list[slice]
    t_index: int | None
    x_bound: float
    row_labels: list[tuple[str, int, int]]  # (label, first row, n rows)

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


@lru_cache(maxsize=64)
def coef_extractor(n: int) -> sp.csr_matrix:
    """Complex ``R`` with ``Re(R vec(X))`` = full-parametrization coefficients of Hermitian X."""
    p = hermitian_param(n)
    b = p.basis.tocsc()
    # each column has entries 1 (re part) or ±1j (im part); the inverse picks the upper entry
    rows, cols, vals = [], [], []
    for c in range(b.shape[1]):
        lo, hi = b.indptr[c], b.indptr[c + 1]
        idx = b.indices[lo:hi]
        v = b.data[lo:hi]
        k = int(np.argmin(idx))
        i, j = divmod(int(idx[k]), n)
        rows.append(c)
        cols.append(idx[k])
        vals.append(1.0 if v[k].imag == 0 else np.conj(v[k]))
    return sp.csr_matrix((vals, (rows, cols)), shape=(b.shape[1], n * n))


def svec_size(n: int) -> int:
    return n * (n + 1) // 2


@lru_cache(maxsize=64)
def svec_embed_map(n: int) -> sp.csr_matrix:
    """Complex ``E`` with ``Re(E vec(Y))`` = scaled upper-triangle (col-major) of the 2n embedding."""
    m = 2 * n
    jj, ii = [], []
    for j in range(m):
        ii.extend(range(j + 1))
        jj.extend([j] * (j + 1))
    ii = np.array(ii)
    jj = np.array(jj)
    scale = np.where(ii == jj, 1.0, SQRT2)
    rows = np.arange(ii.size)
    vals = np.empty(ii.size, dtype=complex)
    cols = np.empty(ii.size, dtype=int)
    tl = (ii < n) & (jj < n)
    tr = (ii < n) & (jj >= n)
    br = ii >= n
    cols[tl] = ii[tl] * n + jj[tl]
    vals[tl] = 1.0
    cols[tr] = ii[tr] * n + (jj[tr] - n)
    vals[tr] = 1j  # Re(i·Y) = -Im(Y)
    cols[br] = (ii[br] - n) * n + (jj[br] - n)
    vals[br] = 1.0
    return sp.csr_matrix((vals * scale, (rows, cols)), shape=(ii.size, n * n))


def smat(v: np.ndarray, m: int) -> np.ndarray:
    """Inverse of the scaled upper-triangle vectorization for a real symmetric ``m×m``."""
    out = np.zeros((m, m))
    iu = _upper_colmajor(m)
    out[iu] = v
    out = out + out.T
    d = np.arange(m)
    out[d, d] /= 2
    off = ~np.eye(m, dtype=bool)
    out[off] /= SQRT2
    return out


@lru_cache(maxsize=64)
def _upper_colmajor(m: int) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = [], []
    for j in range(m):
        ii.extend(range(j + 1))
        jj.extend([j] * (j + 1))
    return np.array(ii), np.array(jj)


def embed_real(y: np.ndarray) -> np.ndarray:
    """``[[Re Y, -Im Y], [Im Y, Re Y]]``; its spectrum is that of Y, each value doubled."""
    return np.block([[y.real, -y.imag], [y.imag, y.real]])


def _real_part(m: sp.spmatrix) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    out = sp.csr_matrix((m.data.real, m.indices, m.indptr), shape=m.shape)
    out.eliminate_zeros()
    return out


def encode(problem, t: float | None = None, reduce: bool = True) -> ConicProgram:
    """Encode ``problem.sdp`` (an :class:`SdpData`) as a real conic program.

    With ``problem.sdp.maximize_t`` the visibility is an extra variable and the
    objective is ``max t``; otherwise ``t`` fixes the right-hand sides.
    """
    sdp: SdpData = getattr(problem, "sdp", problem)
    if not sdp.maximize_t and any(e.slope is not None for e in sdp.equalities) and t is None:
        raise ValueError("feasibility encoding needs a visibility t")
    offsets = np.cumsum([0] + [blk.param.size for blk in sdp.blocks])
    block_slices = [slice(int(offsets[i]), int(offsets[i + 1])) for i in range(len(sdp.blocks))]
    n_vars = int(offsets[-1])
    t_index = None
    if sdp.maximize_t:
        t_index = n_vars
        n_vars += 1

    cache: dict = {}

    def composed(kind: str, op: LinOp, param: HermitianParam) -> sp.csr_matrix:
        key = (kind, op.key, param.key)
        if key not in cache:
            out = coef_extractor(op.out_dim) if kind == "eq" else svec_embed_map(op.out_dim)
            cache[key] = _real_part(out @ op.matrix @ param.basis)
        return cache[key]

    blocks_A, bs, labels = [], [], []
    row = 0
    for eq in sdp.equalities:
        n_out = eq.rhs.shape[0]
        R = coef_extractor(n_out)
        rhs = eq.rhs.astype(complex)
        nrow = R.shape[0]
        mats = []
        for term in eq.terms:
            m = composed("eq", term.op, sdp.blocks[term.block].param)
            mats.append((block_slices[term.block].start, term.scale * m))
        if eq.slope is not None:
            slope = np.real(R @ eq.slope.astype(complex).reshape(-1))
            if sdp.maximize_t:
                mats.append((t_index, sp.csr_matrix(-slope.reshape(-1, 1))))
            else:
                rhs = rhs + t * eq.slope
        bs.append(np.real(R @ rhs.reshape(-1)))
        blocks_A.append((row, nrow, mats))
        labels.append((eq.label, row, nrow))
        row += nrow
    n_zero = row
    psd_sizes = []
    for con in sdp.psd:
        m = composed("psd", con.op, sdp.blocks[con.block].param)
        nrow = m.shape[0]
        blocks_A.append((row, nrow, [(block_slices[con.block].start, -m)]))
        bs.append(np.zeros(nrow))
        labels.append((con.label, row, nrow))
        psd_sizes.append(2 * con.op.out_dim)
        row += nrow

    rr, cc, vv = [], [], []
    for r0, _, mats in blocks_A:
        for c0, m in mats:
            coo = sp.coo_matrix(m)
            rr.append(coo.row + r0)
            cc.append(coo.col + c0)
            vv.append(coo.data)
    A = sp.csc_matrix(
        (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))), shape=(row, n_vars)
    )
    A.data[np.abs(A.data) < DROP_TOL] = 0.0
    A.eliminate_zeros()
    b = np.concatenate(bs)
    if reduce:
        A, b, n_zero, labels = _independent_equalities(A, b, n_zero, labels)
    q = np.zeros(n_vars)
    if t_index is not None:
        q[t_index] = -1.0
    return ConicProgram(A, b, q, n_zero, psd_sizes, block_slices, t_index,
                        float(sdp.x_bound), labels)


def _independent_equalities(A: sp.csc_matrix, b: np.ndarray, n_zero: int, labels):
    """Keep a linearly independent subset of the equality rows.

    Symmetry reduction leaves many equality rows as exact linear combinations
    of others, which interior-point solvers handle badly.  Rows are dropped
    only if the right-hand side is consistent with the kept ones, so the
    feasible set is unchanged.
    """
    if n_zero == 0 or n_zero * A.shape[1] > DENSE_REDUCE_LIMIT:
        return A, b, n_zero, labels
    eq = A[:n_zero].toarray()
    _, r, piv = sla.qr(eq.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int((diag > RANK_REL_TOL * max(diag[0], 1.0)).sum()) if len(diag) else 0
    if rank == n_zero:
        return A, b, n_zero, labels
    keep = np.sort(piv[:rank])
    x, *_ = np.linalg.lstsq(eq[keep], b[keep], rcond=None)
    if np.abs(eq @ x - b[:n_zero]).max() > 1e-9 * max(1.0, np.abs(b).max()):
        return A, b, n_zero, labels
    rows = np.concatenate([keep, np.arange(n_zero, A.shape[0])])
    kept_set = np.zeros(n_zero, dtype=bool)
    kept_set[keep] = True
    new_labels, pos = [], 0
    for label, r0, nrow in labels:
        if r0 < n_zero:
            nrow = int(kept_set[r0:r0 + nrow].sum())
        new_labels.append((label, pos, nrow))
        pos += nrow
    return A[rows].tocsc(), b[rows], rank, new_labels


def decode(program: ConicProgram, problem, x: np.ndarray) -> list[np.ndarray]:
    """Hermitian block values from a primal vector."""
    sdp: SdpData = getattr(problem, "sdp", problem)
    return [blk.param.to_matrix(x[s]) for blk, s in zip(sdp.blocks, program.block_slices)]


# ---------------------------------------------------------------------------
# Solving


class Status(str, enum.Enum):
    OPTIMAL = "OPTIMAL"
    PRIMAL_INFEASIBLE = "PRIMAL_INFEASIBLE"
    UNKNOWN = "UNKNOWN"


@dataclass
class SolverSettings:
    solver: str = "clarabel"
    max_iter: int = 50_000
    time_limit: float = 600.0
    tol: float = 1e-8
    verbose: bool = False


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray | None
    certificate: np.ndarray | None
    certificate_margin: float | None
    primal_residual: float | None
    objective: float | None
    raw_status: str
    iterations: int
    solve_time: float
    message: str = ""


def _psd_row_blocks(program: ConicProgram):
    r = program.n_zero
    for m in program.psd_sizes:
        k = svec_size(m)
        yield r, k, m
        r += k


def primal_residual(program: ConicProgram, x: np.ndarray) -> float:
    """Worst violation of ``A x + s = b``, ``s ∈ K`` (equality error or negative eigenvalue)."""
    s = program.b - program.A @ x
    worst = float(np.abs(s[: program.n_zero]).max(initial=0.0))
    for r, k, m in _psd_row_blocks(program):
        ev = np.linalg.eigvalsh(smat(s[r: r + k], m))[0]
        worst = max(worst, -float(ev))
    return worst


def certificate_margin(program: ConicProgram, y: np.ndarray) -> float:
    """Normalized strength of an infeasibility certificate.

    ``y`` is projected onto the dual cone; for any feasible ``x`` with
    ``‖x‖ ≤ x_bound`` one would have ``b·y ≥ -x_bound ‖Aᵀy‖``, so a positive
    return value proves infeasibility.
    """
    y = np.array(y, dtype=float)
    for r, k, m in _psd_row_blocks(program):
        w, v = np.linalg.eigh(smat(y[r: r + k], m))
        proj = (v * np.clip(w, 0, None)) @ v.T
        iu = _upper_colmajor(m)
        scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
        y[r: r + k] = proj[iu] * scale
    norm = np.linalg.norm(y)
    if norm == 0:
        return 0.0
    aty = np.linalg.norm(program.A.T @ y)
    return float((-(program.b @ y) - program.x_bound * aty) / norm)


# Clarabel's default static regularization stalls on these degenerate
# programs; a slightly larger constant converges, with plain defaults and
# the QDLDL factorization as fallbacks.
_CLARABEL_ATTEMPTS = (
    {"static_regularization_constant": 1e-7},
    {},
    {"static_regularization_constant": 1e-7, "direct_solve_method": "qdldl"},
)
_CLARABEL_FINAL = {"Solved", "PrimalInfeasible", "DualInfeasible", "MaxTime"}


def _clarabel_rank(status: str) -> int:
    if status in _CLARABEL_FINAL:
        return 2
    return 1 if status.startswith("Almost") else 0


def _run_clarabel(program: ConicProgram, settings: SolverSettings):
    import clarabel

    cones = []
    if program.n_zero:
        cones.append(clarabel.ZeroConeT(program.n_zero))
    cones.extend(clarabel.PSDTriangleConeT(m) for m in program.psd_sizes)
    P = sp.csc_matrix((program.n_vars, program.n_vars))
    A = program.A.tocsc()
    deadline = time.perf_counter() + settings.time_limit
    result, error = None, None
    for extra in _CLARABEL_ATTEMPTS:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            break
        s = clarabel.DefaultSettings()
        s.verbose = settings.verbose
        s.max_iter = int(min(settings.max_iter, 2**31 - 1))
        s.time_limit = float(remaining)
        s.tol_feas = settings.tol
        s.tol_gap_abs = settings.tol
        s.tol_gap_rel = settings.tol
        s.presolve_enable = False
        s.chordal_decomposition_enable = False
        for key, val in extra.items():
            setattr(s, key, val)
        try:
            sol = clarabel.DefaultSolver(P, program.q, A, program.b, cones, s).solve()
        except (KeyboardInterrupt, SystemExit):
            raise
        except BaseException as exc:  # Rust panics surface as pyo3 PanicException
            log.info("clarabel failed with %s: %s; retrying", extra or "defaults", exc)
            error = exc
            continue
        name = str(sol.status).split(".")[-1]
        attempt = (name, np.array(sol.x), np.array(sol.z), int(sol.iterations))
        if result is None or _clarabel_rank(name) > _clarabel_rank(result[0]):
            result = attempt
        if name in _CLARABEL_FINAL:
            break
        log.info("clarabel returned %s with %s; retrying", name, extra or "defaults")
    if result is None:
        raise RuntimeError(f"clarabel failed: {error}") from error
    return result


def _scs_permutation(program: ConicProgram) -> np.ndarray:
    """Row order mapping our (upper, col-major) svec to SCS's (lower, col-major)."""
    perm = [np.arange(program.n_zero)]
    for r, k, m in _psd_row_blocks(program):
        ii, jj = _upper_colmajor(m)
        pos = {(i, j): n for n, (i, j) in enumerate(zip(ii, jj))}
        order = [pos[(j, i)] for j in range(m) for i in range(j, m)]
        perm.append(r + np.array(order))
    return np.concatenate(perm)


def _run_scs(program: ConicProgram, settings: SolverSettings):
    import scs

    perm = _scs_permutation(program)
    data = {"A": program.A.tocsr()[perm].tocsc(), "b": program.b[perm], "c": program.q}
    cone = {"z": program.n_zero, "s": list(program.psd_sizes)}
    solver = scs.SCS(data, cone, verbose=settings.verbose, max_iters=int(settings.max_iter),
                     time_limit_secs=float(settings.time_limit), eps_abs=settings.tol,
                     eps_rel=settings.tol, eps_infeas=settings.tol)
    sol = solver.solve()
    y = np.empty_like(sol["y"])
    y[perm] = sol["y"]
    info = sol["info"]
    return info["status"], np.array(sol["x"]), y, int(info["iter"])


_OPTIMAL = {"Solved", "AlmostSolved", "solved", "solved_inaccurate"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible", "infeasible", "infeasible_inaccurate"}
FEASIBILITY_RESIDUAL_TOL = 1e-6


def run(program: ConicProgram, settings: SolverSettings | None = None) -> SolveOutcome:
    """Solve and map the result conservatively onto OPTIMAL / PRIMAL_INFEASIBLE / UNKNOWN.

    OPTIMAL requires a primal point with residual below 1e-6; PRIMAL_INFEASIBLE
    requires a verified certificate with margin at least ``CERTIFICATE_TOL``.
    """
    settings = settings or SolverSettings()
    runner = {"clarabel": _run_clarabel, "scs": _run_scs}.get(settings.solver)
    if runner is None:
        raise ValueError(f"unknown solver {settings.solver!r}")
    t0 = time.perf_counter()
    try:
        raw, x, y, iters = runner(program, settings)
    except Exception as exc:  # solver crash is an inconclusive outcome
        log.warning("solver %s failed: %s", settings.solver, exc)
        return SolveOutcome(Status.UNKNOWN, None, None, None, None, None, "crash", 0,
                            time.perf_counter() - t0, str(exc))
    elapsed = time.perf_counter() - t0
    if raw in _OPTIMAL:
        res = primal_residual(program, x)
        obj = float(x[program.t_index]) if program.t_index is not None else 0.0
        status = Status.OPTIMAL if res <= FEASIBILITY_RESIDUAL_TOL else Status.UNKNOWN
        msg = "" if status is Status.OPTIMAL else f"primal residual {res:.2e} too large"
        return SolveOutcome(status, x, None, None, res, obj, raw, iters, elapsed, msg)
    if raw in _INFEASIBLE:
        margin = certificate_margin(program, y)
        status = Status.PRIMAL_INFEASIBLE if margin >= CERTIFICATE_TOL else Status.UNKNOWN
        msg = "" if status is Status.PRIMAL_INFEASIBLE else f"certificate margin {margin:.2e} too weak"
        return SolveOutcome(status, None, y, margin, None, None, raw, iters, elapsed, msg)
    return SolveOutcome(Status.UNKNOWN, None, None, None, None, None, raw, iters, elapsed,
                        f"solver returned {raw}")


# ---------------------------------------------------------------------------
# SDPA sparse export


def write_sdpa(program: ConicProgram, path) -> None:
    """Write the program in SDPA sparse format (``.dat-s``).

    Layout: variables ``x`` are the SDPA ``y``-variables; block 1 is a diagonal
    (LP) block holding each equality twice as ``±(b - A x) ≥ 0``; blocks 2.. are
    the PSD slacks ``b - A x``.  SDPA minimizes ``c·x`` subject to
    ``Σ x_i F_i - F_0 ⪰ 0`` so ``F_i`` is the negated column ``-A[:, i]`` and
    ``F_0 = -b``; ``c`` is ``q``.  Only upper-triangular entries are written.
    """
    A = program.A.tocsc()
    nz = program.n_zero
    nblocks = 1 + len(program.psd_sizes) if nz else len(program.psd_sizes)
    sizes = ([-2 * nz] if nz else []) + list(program.psd_sizes)
    psd_blocks = list(_psd_row_blocks(program))
    first_psd = 2 if nz else 1

    def entries(idx: np.ndarray, vals: np.ndarray, sign: float):
        out = []
        lp = idx < nz
        for r, v in zip(idx[lp], vals[lp]):
            out.append((1, 2 * r + 1, 2 * r + 1, sign * v))
            out.append((1, 2 * r + 2, 2 * r + 2, -sign * v))
        for r, v in zip(idx[~lp], vals[~lp]):
            bi = int(np.searchsorted(starts, r, side="right")) - 1
            r0, _, m = psd_blocks[bi]
            ii, jj = _upper_colmajor(m)
            i, j = ii[r - r0], jj[r - r0]
            out.append((first_psd + bi, i + 1, j + 1, sign * (v if i == j else v / SQRT2)))
        return out

    starts = np.array([r for r, _, _ in psd_blocks], dtype=int)
    bnz = np.nonzero(program.b)[0]
    with open(path, "w") as fh:
        fh.write('"seocert conic program: equalities as paired LP rows, then PSD blocks"\n')
        fh.write(f"{program.n_vars}\n{nblocks}\n")
        fh.write(" ".join(str(s) for s in sizes) + "\n")
        fh.write(" ".join(f"{c:.17g}" for c in program.q) + "\n")
        for blk, i, j, val in entries(bnz, program.b[bnz], -1.0):
            fh.write(f"0 {blk} {i} {j} {val:.17g}\n")
        for col in range(program.n_vars):
            lo, hi = A.indptr[col], A.indptr[col + 1]
            for blk, i, j, val in entries(A.indices[lo:hi], A.data[lo:hi], -1.0):
                fh.write(f"{col + 1} {blk} {i} {j} {val:.17g}\n")


def read_sdpa(path):
    """Parse an SDPA sparse file into ``(c, block_sizes, {matrix: {block: dense}})``."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith(('"', "*"))]
    m = int(lines[0].split()[0])
    nb = int(lines[1].split()[0])
    sizes = [int(v) for v in lines[2].replace(",", " ").replace("{", " ").replace("}", " ").split()[:nb]]
    c = np.array([float(v) for v in lines[3].replace(",", " ").split()[:m]])
    mats: dict[int, dict[int, np.ndarray]] = {}
    for ln in lines[4:]:
        k, blk, i, j, val = ln.split()
        k, blk, i, j = int(k), int(blk), int(i) - 1, int(j) - 1
        size = abs(sizes[blk - 1])
        mat = mats.setdefault(k, {}).setdefault(blk, np.zeros((size, size)))
        mat[i, j] = float(val)
        mat[j, i] = float(val)
    return c, sizes, mats
