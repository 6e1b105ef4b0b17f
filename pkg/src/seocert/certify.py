"""k-compatibility SDP hierarchy and certification verdicts.

An assemblage ``{M_{a|x}}`` is k-compatible iff its lift

    M̃^k_{a|x} = (1/k) Σ_ℓ I^{⊗ℓ} ⊗ M_{a|x} ⊗ I^{⊗(k-ℓ-1)}

is jointly measurable.  The joint observable is searched over deterministic
responses: one block ``G_λ`` per outcome tuple ``λ = (a_1, …, a_{n_m})`` with
``Σ_{λ: λ_x = a} G_λ`` equal to the target effect.  Stronger tiers restrict the
joint observable towards separability: PPT across every single-factor cut,
then a symmetric extension (DPS level N) of every factor but the first.

Infeasibility at any tier rules out a product-form k-copy joint observable and
hence certifies that at least k+1 incompatible measurements were used.
"""

from __future__ import annotations

import enum
import itertools
import logging
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
import scipy.sparse as sp

from seocert import qops
from seocert import sdp_adapter as sdp
from seocert.scenarios import AssemblageError, MeasurementAssemblage
from seocert.seo import seo, seo_rank, steer

log = logging.getLogger(__name__)

MAX_PARENT_BLOCKS = 256
MAX_EXTENSION_DIM = 256
REPORT_SCHEMA_VERSION = "1.0"


class CapExceeded(ValueError):
    pass


class Tier(str, enum.Enum):
    KCOMPAT = "KCOMPAT"
    KCOMPAT_PPT = "KCOMPAT_PPT"
    KCOMPAT_PPT_DPS = "KCOMPAT_PPT_DPS"


PPT_CUTS = ("all", "first")


@dataclass(frozen=True)
class ConstraintTier:
    """Tier of the hierarchy.

    ``ppt_cuts`` selects which partial transposes of the joint observable are
    required: ``"all"`` transposes every single copy, ``"first"`` only copy 0.
    The two coincide for k <= 2; for larger k ``"first"`` is a weaker (still
    sound) test.  Extensions are always PPT on every single-factor cut.
    """

    kind: Tier
    level: int = 2
    compressed: bool = False
    ppt_cuts: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "kind", Tier(self.kind))
        if self.kind is Tier.KCOMPAT_PPT_DPS and self.level < 2:
            raise ValueError("DPS level must be at least 2")
        if self.ppt_cuts not in PPT_CUTS:
            raise ValueError(f"ppt_cuts must be one of {PPT_CUTS}, got {self.ppt_cuts!r}")

    @classmethod
    def parse(cls, name: str, level: int = 2, compressed: bool = False,
              ppt_cuts: str = "all") -> "ConstraintTier":
        key = name.strip().lower()
        kinds = {"kcompat": Tier.KCOMPAT, "ppt": Tier.KCOMPAT_PPT, "dps": Tier.KCOMPAT_PPT_DPS,
                 "kcompat_ppt": Tier.KCOMPAT_PPT, "kcompat_ppt_dps": Tier.KCOMPAT_PPT_DPS}
        if key not in kinds:
            raise ValueError(f"unknown tier {name!r}; expected kcompat, ppt or dps")
        return cls(kinds[key], level, compressed, ppt_cuts)

    @property
    def has_ppt(self) -> bool:
        return self.kind is not Tier.KCOMPAT

    @property
    def label(self) -> str:
        if self.kind is Tier.KCOMPAT_PPT_DPS:
            base = f"KCOMPAT_PPT_DPS({self.level})"
        else:
            base = self.kind.value
        return base + ("[first]" if self.has_ppt and self.ppt_cuts == "first" else "")

    def cascade(self) -> list["ConstraintTier"]:
        """This tier preceded by every weaker one, cheapest first."""
        order = [Tier.KCOMPAT, Tier.KCOMPAT_PPT, Tier.KCOMPAT_PPT_DPS]
        out = [ConstraintTier(t, ppt_cuts=self.ppt_cuts) for t in order[: order.index(self.kind)]]
        return out + [self]


KCOMPAT = ConstraintTier(Tier.KCOMPAT)
KCOMPAT_PPT = ConstraintTier(Tier.KCOMPAT_PPT)
KCOMPAT_PPT_DPS = ConstraintTier(Tier.KCOMPAT_PPT_DPS)


class Mode(str, enum.Enum):
    FEASIBILITY = "FEASIBILITY"
    MAX_VISIBILITY = "MAX_VISIBILITY"


class Verdict(str, enum.Enum):
    CERTIFIED = "CERTIFIED_AT_LEAST"
    INCONCLUSIVE = "INCONCLUSIVE"


# ---------------------------------------------------------------------------
# Lift


@dataclass(frozen=True)
class LiftedAssemblage:
    base: MeasurementAssemblage
    k: int
    effects: np.ndarray

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.base.d,) * self.k

    @property
    def dim(self) -> int:
        return self.base.d ** self.k

    def as_assemblage(self) -> MeasurementAssemblage:
        return MeasurementAssemblage(self.effects)


def lift(m: MeasurementAssemblage, k: int) -> LiftedAssemblage:
    if k < 1:
        raise ValueError("number of copies k must be >= 1")
    if k == 1:
        return LiftedAssemblage(m, 1, m.effects)
    dims = [m.d] * k
    eff = np.zeros((m.n_m, m.n_a, m.d ** k, m.d ** k), dtype=complex)
    for x in range(m.n_m):
        for a in range(m.n_a):
            eff[x, a] = sum(qops.embed(m.effects[x, a], pos, dims) for pos in range(k)) / k
    return LiftedAssemblage(m, k, eff)


def outcome_tuples(n_m: int, n_a: int) -> np.ndarray:
    return np.array(list(itertools.product(range(n_a), repeat=n_m)), dtype=int).reshape(-1, n_m)


def response_table(n_m: int, n_a: int) -> np.ndarray:
    """``D[x, a, λ] = 1`` iff tuple ``λ`` answers ``a`` to setting ``x``."""
    lam = outcome_tuples(n_m, n_a)
    return (lam.T[:, None, :] == np.arange(n_a)[None, :, None]).astype(float)


# ---------------------------------------------------------------------------
# Symmetric extension layout


@lru_cache(maxsize=32)
def symmetric_isometry(d: int, n: int) -> sp.csr_matrix:
    """Isometry from Sym^n(C^d) into (C^d)^{⊗n}; columns are normalized symmetrized basis states."""
    if n == 0:
        return sp.csr_matrix(np.ones((1, 1)))
    rows, cols, vals = [], [], []
    for col, multiset in enumerate(itertools.combinations_with_replacement(range(d), n)):
        words = set(itertools.permutations(multiset))
        for w in words:
            rows.append(int(np.ravel_multi_index(w, (d,) * n)))
            cols.append(col)
            vals.append(1 / np.sqrt(len(words)))
    return sp.csr_matrix((vals, (rows, cols)), shape=(d ** n, comb(d + n - 1, n)))


def _kron_all(mats) -> sp.csr_matrix:
    out = sp.csr_matrix(np.ones((1, 1)))
    for m in mats:
        out = sp.kron(out, m, format="csr")
    return out


@dataclass(frozen=True)
class ExtensionLayout:
    """Factor bookkeeping for the level-N extension of ``k`` factors of dimension ``d``.

    Extended order: original factors ``0..k-1`` followed by the ``N-1``
    duplicates of factor 1, then of factor 2, and so on.  Factor 0 is never
    duplicated.
    """

    d: int
    k: int
    level: int

    @property
    def n_factors(self) -> int:
        return 1 + (self.k - 1) * self.level

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.d,) * self.n_factors

    @property
    def dim(self) -> int:
        return self.d ** self.n_factors

    def position(self, factor: int, copy: int) -> int:
        if copy == 0:
            return factor
        return self.k + (factor - 1) * (self.level - 1) + (copy - 1)

    def copies(self, factor: int) -> list[int]:
        if factor == 0:
            return [0]
        return [self.position(factor, c) for c in range(self.level)]

    def swap_generators(self) -> list[np.ndarray]:
        gens = []
        for f in range(1, self.k):
            for c in range(1, self.level):
                perm = list(range(self.n_factors))
                i, j = self.position(f, 0), self.position(f, c)
                perm[i], perm[j] = j, i
                gens.append(qops.factor_permutation_indices(self.dims, perm))
        return gens

    def _grouped_to_extended(self) -> sp.csr_matrix:
        grouped = [0] + [self.position(f, c) for f in range(1, self.k) for c in range(self.level)]
        perm = [grouped.index(p) for p in range(self.n_factors)]
        idx = qops.factor_permutation_indices(self.dims, perm)
        n = self.dim
        return sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, n))

    def compression(self) -> sp.csr_matrix:
        """Isometry from ``C^d ⊗ Sym^N ⊗ … ⊗ Sym^N`` into the extended space."""
        parts = [sp.identity(self.d, format="csr")]
        parts += [symmetric_isometry(self.d, self.level)] * (self.k - 1)
        return (self._grouped_to_extended() @ _kron_all(parts)).tocsr()

    def cut_range(self, factor: int) -> sp.csr_matrix:
        """Isometry onto a subspace containing the range of a compressed operator
        after transposing the first copy of ``factor``."""
        if factor == 0:
            return self.compression()
        parts = [sp.identity(self.d, format="csr")]
        for f in range(1, self.k):
            if f == factor:
                parts.append(sp.kron(sp.identity(self.d), symmetric_isometry(self.d, self.level - 1),
                                     format="csr"))
            else:
                parts.append(symmetric_isometry(self.d, self.level))
        return (self._grouped_to_extended() @ _kron_all(parts)).tocsr()

    @property
    def compressed_dim(self) -> int:
        return self.d * comb(self.d + self.level - 1, self.level) ** (self.k - 1)


# ---------------------------------------------------------------------------
# Symmetry reduction


def weyl_operators(d: int) -> list[np.ndarray]:
    """Displacement operators ``X^p Z^q`` for all ``p, q`` (identity first)."""
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    return [np.linalg.matrix_power(shift, p) @ np.linalg.matrix_power(clock, q)
            for p in range(d) for q in range(d)]


@dataclass(frozen=True)
class Covariance:
    """A unitary mapping every effect of setting x onto another effect of the same setting."""

    unitary: np.ndarray
    outcome_perm: np.ndarray  # (n_m, n_a): U M_{a|x} U^† = M_{perm[x, a]|x}


def assemblage_covariances(m: MeasurementAssemblage, tol: float = 1e-9) -> list[Covariance]:
    """Weyl operators that permute outcomes within every setting.

    The displacement operators form a group up to phases, so the ones found
    here form a subgroup; the identity is always first.
    """
    out = []
    for u in weyl_operators(m.d):
        conj = u @ m.effects @ u.conj().T
        perm = np.full((m.n_m, m.n_a), -1)
        ok = True
        for x in range(m.n_m):
            dist = np.abs(conj[x][:, None] - m.effects[x][None, :]).max(axis=(2, 3))
            match = dist <= tol
            if not (match.sum(axis=1) == 1).all():
                ok = False
                break
            perm[x] = match.argmax(axis=1)
            if len(set(perm[x])) != m.n_a:
                ok = False
                break
        if ok:
            out.append(Covariance(u, perm))
    return out


def lambda_orbits(lambdas: np.ndarray, covs: list[Covariance]) -> list[tuple[int, int]] | None:
    """For every tuple, ``(representative index, group element)`` with ``λ = h·rep``.

    Returns None unless the group acts freely (all orbits of full size).
    """
    index = {tuple(lam): i for i, lam in enumerate(lambdas)}
    n_m = lambdas.shape[1]
    assign: list[tuple[int, int] | None] = [None] * len(lambdas)
    for i, lam in enumerate(lambdas):
        if assign[i] is not None:
            continue
        seen = set()
        for h, cov in enumerate(covs):
            img = index[tuple(cov.outcome_perm[np.arange(n_m), lam])]
            if img in seen or assign[img] is not None:
                return None
            seen.add(img)
            assign[img] = (i, h)
    return assign


def _copy_perms(dims, factors) -> list[np.ndarray]:
    """Basis permutations generating all permutations of the listed (equal) factors."""
    gens = []
    for a, b in zip(factors, factors[1:]):
        perm = list(range(len(dims)))
        perm[a], perm[b] = b, a
        gens.append(qops.factor_permutation_indices(dims, perm))
    return gens


def _closure(gens) -> tuple[tuple[int, ...], ...]:
    """Every product of the given factor permutations, identity included."""
    gens = [tuple(g) for g in gens]
    if not gens:
        return ()
    ident = tuple(range(len(gens[0])))
    seen = {ident}
    frontier = [ident]
    while frontier:
        nxt = []
        for p in frontier:
            for g in gens:
                q = tuple(p[i] for i in g)
                if q not in seen:
                    seen.add(q)
                    nxt.append(q)
        frontier = nxt
    return tuple(sorted(seen))


def _all_perms_of(factors, n_factors: int) -> tuple[tuple[int, ...], ...]:
    gens = []
    for a, b in zip(factors, factors[1:]):
        g = list(range(n_factors))
        g[a], g[b] = b, a
        gens.append(g)
    return _closure(gens)


ISOTYPIC_MAX_DIM = 64


@lru_cache(maxsize=128)
def isotypic_isometries(dims: tuple[int, ...], group: tuple[tuple[int, ...], ...]
                        ) -> tuple[np.ndarray, ...]:
    """Isometries ``V_i`` with ``X ⪰ 0 ⟺ V_i^† X V_i ⪰ 0 ∀i`` for every X invariant under ``group``.

    Invariant operators commute with a generic real combination ``B`` of the
    permutation matrices, so they are block diagonal in its eigenspaces.
    Eigenspaces on which two random invariant operators have identical
    spectra are copies of the same block and only one is kept.
    """
    n = int(np.prod(dims))
    idx = [qops.factor_permutation_indices(dims, g) for g in group]
    rng = np.random.default_rng(1729)
    B = np.zeros((n, n))
    rows = np.arange(n)
    for p in idx:
        c = rng.normal()
        B[rows, p] += c
        B[p, rows] += c
    w, v = np.linalg.eigh(B)
    cuts = np.nonzero(np.diff(w) > 1e-8 * max(1.0, float(np.abs(w).max())))[0] + 1
    spaces = np.split(v, cuts, axis=1)
    param = sdp.hermitian_param(n, idx)
    probes = [param.to_matrix(rng.normal(size=param.size)) for _ in range(2)]
    block_diag = sum(V @ (V.T @ probes[0] @ V) @ V.T for V in spaces)
    if np.abs(block_diag - probes[0]).max() > 1e-9 * max(1.0, np.abs(probes[0]).max()):
        return (np.eye(n),)
    kept, sigs = [], []
    for V in spaces:
        sig = np.concatenate([np.linalg.eigvalsh(V.T @ g @ V) for g in probes])
        if any(len(t) == len(sig) and np.allclose(t, sig, atol=1e-9) for t in sigs):
            continue
        sigs.append(sig)
        kept.append(V)
    return tuple(kept)


class _PsdSplitter:
    """Adds PSD constraints, split into isotypic blocks when the image is permutation invariant."""

    def __init__(self, data: sdp.SdpData):
        self.data = data
        self.ops: dict = {}

    def add(self, label: str, block: int, op: sdp.LinOp, dims, group):
        group = tuple(g for g in group if g != tuple(range(len(dims))))
        if not group or op.out_dim > ISOTYPIC_MAX_DIM:
            self.data.psd.append(sdp.PsdConstraint(label, block, op))
            return
        full = _closure(group)
        key = (op.key, tuple(dims), full)
        if key not in self.ops:
            pieces = []
            for i, V in enumerate(isotypic_isometries(tuple(dims), full)):
                mat = (qops.conj_map(V.T) @ op.matrix).tocsr()
                pieces.append(sdp.LinOp(f"{op.key}|iso{len(self.ops)}:{i}", mat, V.shape[1]))
            self.ops[key] = pieces
        for i, piece in enumerate(self.ops[key]):
            self.data.psd.append(sdp.PsdConstraint(f"{label}[{i}]", block, piece))


# ---------------------------------------------------------------------------
# Problem construction


@dataclass
class CompatProblem:
    """A fully assembled instance.

    ``lambdas``/``responses`` describe the logical joint observable.  With
    symmetry reduction only one block per orbit of outcome tuples is a
    variable: ``orbit[i] = (r, h)`` means ``G_{λ_i} = U_h G_{λ_r} U_h^†`` with
    ``U_h`` the k-fold tensor power of ``covariances[h].unitary``.
    """

    lifted: LiftedAssemblage
    tier: ConstraintTier
    mode: Mode
    lambdas: np.ndarray
    responses: np.ndarray
    sdp: sdp.SdpData
    parent_blocks: list[int]
    extension_blocks: list[int] = field(default_factory=list)
    layout: ExtensionLayout | None = None
    covariances: list[Covariance] = field(default_factory=list)
    orbit: list[tuple[int, int]] | None = None

    @property
    def n_parent_blocks(self) -> int:
        """Number of logical joint-observable effects ``G_λ``."""
        return len(self.lambdas)

    @property
    def n_variable_blocks(self) -> int:
        return len(self.parent_blocks)

    @property
    def reduced(self) -> bool:
        return self.orbit is not None

    @property
    def parent_dim(self) -> int:
        return self.lifted.dim

    @property
    def extension_dim(self) -> int | None:
        if not self.extension_blocks:
            return None
        return self.sdp.blocks[self.extension_blocks[0]].param.dim

    def parent_values(self, values: list[np.ndarray]) -> list[np.ndarray]:
        """All logical ``G_λ`` from solved block values (undoes the orbit reduction)."""
        reps = {lam_idx: blk for lam_idx, blk in zip(self._rep_indices(), self.parent_blocks)}
        if self.orbit is None:
            return [values[b] for b in self.parent_blocks]
        out = []
        for r, h in self.orbit:
            u = qops.kron(*[self.covariances[h].unitary] * self.lifted.k)
            out.append(u @ values[reps[r]] @ u.conj().T)
        return out

    def _rep_indices(self) -> list[int]:
        if self.orbit is None:
            return list(range(len(self.lambdas)))
        return sorted({r for r, _ in self.orbit})


def _singleton_cuts(k: int, symmetric: bool) -> list[int]:
    """Single factors whose transpose is not equivalent to an earlier one's.

    Complements are equivalent by global-transpose invariance; with copy
    symmetry all single factors are equivalent to factor 0.
    """
    if k == 1:
        return []
    if k == 2 or symmetric:
        return [0]
    return list(range(k))


def _check_caps(n_lambda: int, ext_dim: int | None, allow_large: bool):
    if allow_large:
        return
    if n_lambda > MAX_PARENT_BLOCKS:
        raise CapExceeded(f"{n_lambda} parent blocks exceed the cap of {MAX_PARENT_BLOCKS} "
                          "(allow_large / --allow-large lifts it)")
    if ext_dim is not None and ext_dim > MAX_EXTENSION_DIM:
        raise CapExceeded(f"extension blocks of dimension {ext_dim} exceed the cap of "
                          f"{MAX_EXTENSION_DIM} (allow_large / --allow-large lifts it)")


def build_problem(m: MeasurementAssemblage, k: int, tier: ConstraintTier = KCOMPAT,
                  mode: Mode = Mode.MAX_VISIBILITY, allow_large: bool = False,
                  symmetry: bool = True, unextended_factor: int = 0) -> CompatProblem:
    """Assemble the tier's SDP for the lifted assemblage ``M̃^k``.

    The visibility enters affinely: the target effect is
    ``t M̃^k_{a|x} + (1 - t) I / n_a``, fixed at solve time in FEASIBILITY mode
    and maximized in MAX_VISIBILITY mode.

    With ``symmetry`` the search is restricted to joint observables invariant
    under permutations of the copies (of copies 1..k-1 for the extension tier,
    whose first factor is special) and covariant under Weyl operators that
    permute outcomes within every setting.  Both groups preserve every
    constraint, so averaging any feasible point over them gives a feasible
    invariant point and feasibility is unchanged.

    ``unextended_factor`` picks the copy left out of the symmetric extension
    (only without symmetry reduction); by copy symmetry of the lift the
    choice does not change the value.
    """
    if unextended_factor and symmetry:
        raise ValueError("a different unextended factor needs symmetry=False")
    if not 0 <= unextended_factor < k:
        raise ValueError(f"unextended factor {unextended_factor} out of range for k={k}")
    if m.normalization_error() > qops.TOL_PSD:
        raise AssemblageError("assemblage effects do not sum to the identity")
    mode = Mode(mode)
    lifted = lift(m, k)
    n = lifted.dim
    lambdas = outcome_tuples(m.n_m, m.n_a)
    D = response_table(m.n_m, m.n_a)
    dps = tier.kind is Tier.KCOMPAT_PPT_DPS and k >= 2
    layout = ExtensionLayout(m.d, k, tier.level) if dps else None
    ext_dim = None
    if layout is not None:
        ext_dim = layout.compressed_dim if tier.compressed else layout.dim
    _check_caps(len(lambdas), ext_dim, allow_large)

    covs, orbit = [], None
    if symmetry:
        covs = assemblage_covariances(m)
        if len(covs) > 1:
            orbit = lambda_orbits(lambdas, covs)
        if orbit is None:
            covs = []

    data = sdp.SdpData(maximize_t=mode is Mode.MAX_VISIBILITY)
    # copy 0 is distinguished by the extension or by a single transposed cut
    first_only = tier.has_ppt and tier.ppt_cuts == "first"
    sym_factors = list(range(1 if dps or first_only else 0, k)) if symmetry else []
    g_param = sdp.hermitian_param(n, _copy_perms(lifted.dims, sym_factors))
    ident = sdp.identity_op(n)
    reps = sorted({r for r, _ in orbit}) if orbit is not None else list(range(len(lambdas)))
    parents = [data.add_block(f"G{tuple(lambdas[r])}", g_param) for r in reps]
    block_of = dict(zip(reps, parents))

    # G_λ as (block, operator) pairs
    conj_ops = {}
    if orbit is not None:
        for h, cov in enumerate(covs):
            u = qops.kron(*[cov.unitary] * k)
            conj_ops[h] = ident if h == 0 else sdp.LinOp(f"weyl{m.d}:{k}:{h}", qops.conj_map(u), n)
        g_terms = [(block_of[r], conj_ops[h]) for r, h in orbit]
    else:
        g_terms = [(block_of[i], ident) for i in range(len(lambdas))]

    eye = np.eye(n, dtype=complex)
    noise = eye / m.n_a
    # the last outcome of every setting follows from normalization
    for x in range(m.n_m):
        for a in range(m.n_a - 1):
            terms = tuple(sdp.Term(*g_terms[i]) for i in np.nonzero(D[x, a])[0])
            data.equalities.append(sdp.Equality(f"marginal[a={a},x={x}]", terms, noise,
                                                lifted.effects[x, a] - noise))
    data.equalities.append(sdp.Equality("normalization", tuple(sdp.Term(*gt) for gt in g_terms), eye))

    if not tier.has_ppt or k == 1:
        cuts = []
    elif first_only:
        cuts = [0]
    elif dps and symmetry and k >= 3:
        cuts = [0, 1]
    else:
        cuts = _singleton_cuts(k, symmetry and not dps)
    pt_ops = [sdp.LinOp(f"pt{k}:{s}:{m.d}", qops.ptranspose_map(lifted.dims, [s]), n) for s in cuts]
    g_group = _all_perms_of(sym_factors, k)
    splitter = _PsdSplitter(data)
    for r, i in zip(reps, parents):
        name = f"G{tuple(lambdas[r])}"
        splitter.add(name, i, ident, lifted.dims, g_group)
        for s, op in zip(cuts, pt_ops):
            # transposing factor s keeps the permutations that fix it
            splitter.add(f"{name}^T{s}", i, op, lifted.dims, [g for g in g_group if g[s] == s])

    extensions = []
    if layout is not None:
        extensions = _add_extensions(data, layout, tier.compressed, parents,
                                     [lambdas[r] for r in reps], symmetry, unextended_factor)
    data.x_bound = float(n * (2 if extensions else 1))
    return CompatProblem(lifted, tier, mode, lambdas, D, data, parents, extensions, layout,
                         covs, orbit)


def _group_swap_perm(layout: ExtensionLayout, f: int, g: int) -> list[int]:
    """Factor permutation exchanging all copies of factor ``f`` with those of ``g``."""
    perm = list(range(layout.n_factors))
    for c in range(layout.level):
        i, j = layout.position(f, c), layout.position(g, c)
        perm[i], perm[j] = j, i
    return perm


def _add_extensions(data: sdp.SdpData, layout: ExtensionLayout, compressed: bool,
                    parents: list[int], lambdas, symmetric: bool, free: int = 0) -> list[int]:
    dims = layout.dims
    k = layout.k
    tag = f"{layout.d},{layout.k},{layout.level}"
    parent_op = sdp.identity_op(layout.d ** k)
    if free:
        # extension factor 0 stands for copy `free` of the joint observable
        perm = list(range(k))
        perm[0], perm[free] = free, 0
        idx = qops.factor_permutation_indices((layout.d,) * k, perm)
        n = layout.d ** k
        swap = sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, n))
        parent_op = sdp.LinOp(f"swap{tag}:{free}", qops.conj_map(swap), n)
    marginal = qops.ptrace_map(dims, keep=range(k))
    # with symmetry between factors 1..k-1 their cuts are equivalent
    cut_factors = [0, 1] if symmetric else list(range(k))
    group_swaps = [_group_swap_perm(layout, f, f + 1) for f in range(1, k - 1)] if symmetric else []
    if compressed:
        V = layout.compression()
        conj_v = qops.conj_map(V)
        m = V.shape[1]
        sym_dim = comb(layout.d + layout.level - 1, layout.level)
        cdims = (layout.d,) + (sym_dim,) * (k - 1)
        perms = _copy_perms(cdims, list(range(1, k))) if symmetric else []
        param = sdp.hermitian_param(m, perms)
        self_op = sdp.identity_op(m)
        marg_op = sdp.LinOp(f"marg-c{tag}", (marginal @ conj_v).tocsr(), layout.d ** k)
        cut_ops = []
        for f in cut_factors:
            W = layout.cut_range(f)
            mat = qops.conj_map(W.conj().T) @ qops.ptranspose_map(dims, [f]) @ conj_v
            cut_ops.append(sdp.LinOp(f"cut-c{tag}:{f}", mat.tocsr(), W.shape[1]))
    else:
        gens = layout.swap_generators()
        gens += [qops.factor_permutation_indices(dims, p) for p in group_swaps]
        param = sdp.hermitian_param(layout.dim, gens)
        self_op = sdp.identity_op(layout.dim)
        marg_op = sdp.LinOp(f"marg{tag}", marginal, layout.d ** k)
        cut_ops = [sdp.LinOp(f"cut{tag}:{f}", qops.ptranspose_map(dims, [f]), layout.dim)
                   for f in cut_factors]
    zero = np.zeros((layout.d ** k,) * 2, dtype=complex)
    if compressed:
        img_dims = cdims
        group = _all_perms_of(list(range(1, k)), k) if symmetric else ()
        cut_groups = [group if f == 0 else () for f in cut_factors]
    else:
        img_dims = dims
        swaps = []
        for f in range(1, k):
            for c in range(1, layout.level):
                g = list(range(layout.n_factors))
                i, j = layout.position(f, 0), layout.position(f, c)
                g[i], g[j] = j, i
                swaps.append(g)
        group = _closure(swaps + group_swaps)
        cut_groups = [[g for g in group if g[f] == f] for f in cut_factors]
    splitter = _PsdSplitter(data)
    ext_blocks = []
    for g, lam in zip(parents, lambdas):
        name = f"Gext{tuple(lam)}"
        e = data.add_block(name, param)
        ext_blocks.append(e)
        splitter.add(name, e, self_op, img_dims, group)
        for f, op, cg in zip(cut_factors, cut_ops, cut_groups):
            splitter.add(f"{name}^T{f}", e, op, img_dims, cg)
        data.equalities.append(sdp.Equality(
            f"{name}:marginal", (sdp.Term(e, marg_op), sdp.Term(g, parent_op, -1.0)), zero))
    return ext_blocks


def constraint_violations(problem: CompatProblem, values: list[np.ndarray],
                          t: float = 1.0) -> dict[str, float]:
    """Per-constraint violation of explicit block values (negative eigenvalue or max abs error)."""
    out = {}
    for i, (blk, val) in enumerate(zip(problem.sdp.blocks, values)):
        recon = blk.param.to_matrix(blk.param.from_matrix(val))
        out[f"param:{blk.name}"] = float(np.abs(recon - val).max())
    for eq in problem.sdp.equalities:
        lhs = sum(term.scale * term.op.apply(values[term.block]) for term in eq.terms)
        rhs = eq.rhs + (t * eq.slope if eq.slope is not None else 0)
        out[eq.label] = float(np.abs(lhs - rhs).max())
    for con in problem.sdp.psd:
        out[con.label] = max(0.0, -qops.min_eig(con.op.apply(values[con.block])))
    return out


# ---------------------------------------------------------------------------
# Solving and reports


@dataclass
class CertificationReport:
    verdict: Verdict
    k: int
    tier: str
    tier_used: str
    mode: str
    t_queried: float | None = None
    t_c: float | None = None
    solver_status: str = sdp.Status.UNKNOWN.value
    raw_status: str = ""
    max_constraint_violation: float | None = None
    certificate_margin: float | None = None
    wall_time: float = 0.0
    iterations: int = 0
    solver: str = "clarabel"
    n_parent_blocks: int = 0
    n_variable_blocks: int = 0
    parent_dim: int = 0
    extension_dim: int | None = None
    seo_rank: int | None = None
    message: str = ""
    stages: list[dict] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    @property
    def certified_count(self) -> int | None:
        return self.k + 1 if self.certified else None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict.value
        out["certified_count"] = self.certified_count
        out["schema_version"] = REPORT_SCHEMA_VERSION
        out["t_c_raw"] = self.t_c
        if self.t_c is not None:
            out["t_c"] = round(self.t_c, 4)
        return out


def solve(problem: CompatProblem, t: float | None = None,
          settings: sdp.SolverSettings | None = None) -> CertificationReport:
    """Solve one problem.

    FEASIBILITY: CERTIFIED only on a verified infeasibility certificate.
    MAX_VISIBILITY: reports ``t_c``; the verdict stays INCONCLUSIVE since no
    visibility was queried.
    """
    settings = settings or sdp.SolverSettings()
    t0 = time.perf_counter()
    if problem.mode is Mode.FEASIBILITY and t is None:
        raise ValueError("FEASIBILITY mode needs a visibility t")
    program = sdp.encode(problem, t if problem.mode is Mode.FEASIBILITY else None)
    outcome = sdp.run(program, settings)
    report = CertificationReport(
        verdict=Verdict.INCONCLUSIVE,
        k=problem.lifted.k,
        tier=problem.tier.label,
        tier_used=problem.tier.label,
        mode=problem.mode.value,
        t_queried=t if problem.mode is Mode.FEASIBILITY else None,
        solver_status=outcome.status.value,
        raw_status=outcome.raw_status,
        max_constraint_violation=outcome.primal_residual,
        certificate_margin=outcome.certificate_margin,
        iterations=outcome.iterations,
        solver=settings.solver,
        n_parent_blocks=problem.n_parent_blocks,
        n_variable_blocks=problem.n_variable_blocks,
        parent_dim=problem.parent_dim,
        extension_dim=problem.extension_dim,
        message=outcome.message,
    )
    if problem.mode is Mode.MAX_VISIBILITY:
        if outcome.status is sdp.Status.OPTIMAL:
            report.t_c = outcome.objective
    elif outcome.status is sdp.Status.PRIMAL_INFEASIBLE:
        report.verdict = Verdict.CERTIFIED
    report.wall_time = time.perf_counter() - t0
    log.info("%s k=%d %s: %s (%.1fs)", problem.mode.value, problem.lifted.k, problem.tier.label,
             outcome.raw_status, report.wall_time)
    return report


def critical_visibility(m: MeasurementAssemblage, k: int, tier: ConstraintTier = KCOMPAT,
                        settings: sdp.SolverSettings | None = None,
                        allow_large: bool = False, symmetry: bool = True) -> CertificationReport:
    """Largest visibility at which ``t M + (1-t) I/n_a`` passes the tier's test."""
    problem = build_problem(m, k, tier, Mode.MAX_VISIBILITY, allow_large, symmetry)
    return solve(problem, settings=settings)


def feasible_at(m: MeasurementAssemblage, k: int, tier: ConstraintTier, t: float,
                settings: sdp.SolverSettings | None = None, allow_large: bool = False,
                symmetry: bool = True) -> CertificationReport:
    problem = build_problem(m, k, tier, Mode.FEASIBILITY, allow_large, symmetry)
    return solve(problem, t, settings)


def bisect_visibility(m: MeasurementAssemblage, k: int, tier: ConstraintTier = KCOMPAT,
                      tol: float = 1e-4, settings: sdp.SolverSettings | None = None,
                      allow_large: bool = False, symmetry: bool = True) -> tuple[float, float]:
    """Bracket ``[lo, hi]`` around the critical visibility using feasibility solves only.

    ``lo`` is the largest visibility seen feasible, ``hi`` the smallest one with
    an infeasibility certificate.  An undecided solve (close to the boundary the
    certificate can get too weak) stops the bisection early, so the returned
    bracket may be wider than ``tol``.
    """
    problem = build_problem(m, k, tier, Mode.FEASIBILITY, allow_large, symmetry)
    lo, hi = 0.0, 1.0
    top = solve(problem, 1.0, settings)
    if not top.certified:
        if top.solver_status == sdp.Status.OPTIMAL.value:
            return 1.0, 1.0
        raise RuntimeError(f"undecided solve at t=1: {top.raw_status} {top.message}")
    while hi - lo > tol:
        mid = (lo + hi) / 2
        rep = solve(problem, mid, settings)
        if rep.certified:
            hi = mid
        elif rep.solver_status == sdp.Status.OPTIMAL.value:
            lo = mid
        else:
            log.info("bisection stopped at t=%.8f: %s %s", mid, rep.raw_status, rep.message)
            break
    return lo, hi


def certify_assemblage(m: MeasurementAssemblage, k: int, tier: ConstraintTier = KCOMPAT_PPT_DPS,
                       settings: sdp.SolverSettings | None = None, cascade: bool = True,
                       allow_large: bool = False, symmetry: bool = True) -> CertificationReport:
    """Feasibility test of ``m`` itself (visibility 1), optionally trying weaker tiers first.

    Infeasibility of a weaker tier already implies infeasibility of every
    stronger one, so the cascade stops at the first certificate.
    """
    tiers = tier.cascade() if cascade else [tier]
    stages = []
    report = None
    t0 = time.perf_counter()
    for tr in tiers:
        problem = build_problem(m, k, tr, Mode.FEASIBILITY, allow_large, symmetry)
        report = solve(problem, 1.0, settings)
        stages.append({"tier": tr.label, "solver_status": report.solver_status,
                       "verdict": report.verdict.value, "wall_time": report.wall_time})
        if report.certified:
            break
    report.tier = tier.label
    report.stages = stages
    report.wall_time = time.perf_counter() - t0
    return report


def certify_from_state(state: np.ndarray, m: MeasurementAssemblage, k: int,
                       tier: ConstraintTier = KCOMPAT_PPT_DPS,
                       settings: sdp.SolverSettings | None = None, cascade: bool = True,
                       allow_large: bool = False, symmetry: bool = True) -> CertificationReport:
    """Steer ``state`` with Alice's ``m``, take Bob's SEO and test its k-compatibility tiers."""
    s = seo(steer(state, m))
    report = certify_assemblage(s, k, tier, settings, cascade, allow_large, symmetry)
    report.seo_rank = seo_rank(state, m.d)
    return report
