"""Explicit k-simulation models and the two-copy sufficient condition.

A k-simulation model reconstructs ``M_{a|x} = Σ_y p(y|x) Σ_b q(a|x,b,y) B_{b|y}``
from k simulator POVMs.  Its product-form k-copy joint observable
``Ñ_b̄ = B_{b_1|1} ⊗ … ⊗ B_{b_k|k}`` gives an explicit feasible point of every
tier of the compatibility hierarchy, which makes these models the positive
controls of the package.

In the other direction, a two-copy joint observable whose effects all lie in
``{A ⊗ I + I ⊗ B}`` can be rewritten as ``q C ⊗ I + (1-q) I ⊗ D`` with POVMs C,
D, which exhibits a 2-simulation model.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from math import factorial

import numpy as np

from seocert import qops
from seocert.scenarios import MeasurementAssemblage, random_povm

SPAN_TOL = 1e-7


@dataclass(frozen=True)
class SimulationModel:
    """``p[x, y] = p(y|x)``, ``q[x, y, b, a] = q(a|x,b,y)`` and simulators ``B_{b|y}``."""

    p: np.ndarray
    q: np.ndarray
    simulators: MeasurementAssemblage

    @property
    def k(self) -> int:
        return self.simulators.n_m

    @property
    def n_m(self) -> int:
        return self.p.shape[0]

    @property
    def n_a(self) -> int:
        return self.q.shape[3]

    @property
    def d(self) -> int:
        return self.simulators.d

    def validate(self, tol: float = 1e-9) -> "SimulationModel":
        n_m, k = self.p.shape
        if self.q.shape[:3] != (n_m, k, self.simulators.n_a):
            raise ValueError(f"q has shape {self.q.shape}, inconsistent with p {self.p.shape} "
                             f"and {self.simulators.n_a} simulator outcomes")
        if self.p.min() < -tol or np.abs(self.p.sum(axis=1) - 1).max() > tol:
            raise ValueError("p(y|x) must be a stochastic table")
        if self.q.min() < -tol or np.abs(self.q.sum(axis=3) - 1).max() > tol:
            raise ValueError("q(a|x,b,y) must be normalized over a")
        self.simulators.validate()
        return self

    def reconstruct(self) -> MeasurementAssemblage:
        eff = np.einsum("xy,xyba,ybij->xaij", self.p, self.q, self.simulators.effects)
        return MeasurementAssemblage(eff)

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """``p(a|x)`` predicted for state ``rho`` (shape (n_m, n_a))."""
        return np.real(np.einsum("xaij,ji->xa", self.reconstruct().effects, rho))


def random_simulation_model(d: int, k: int, n_m: int, n_a: int, n_b: int,
                            rng: np.random.Generator) -> SimulationModel:
    p = rng.dirichlet(np.ones(k), size=n_m)
    q = rng.dirichlet(np.ones(n_a), size=(n_m, k, n_b))
    sims = MeasurementAssemblage(np.array([random_povm(d, n_b, rng) for _ in range(k)]))
    return SimulationModel(p, q, sims).validate()


# ---------------------------------------------------------------------------
# Product-form k-copy joint observable


def product_joint_observable(model: SimulationModel) -> tuple[np.ndarray, np.ndarray]:
    """Effects ``Ñ_b̄`` (one per tuple ``b̄``) and responses ``r[x, a, b̄]``.

    ``r(a|x,b̄) = Σ_y p(y|x) q(a|x,b_y,y)`` so that
    ``tr[ρ M_{a|x}] = Σ_b̄ r(a|x,b̄) tr[ρ^{⊗k} Ñ_b̄]`` for every state ρ.
    """
    B = model.simulators.effects
    tuples = list(itertools.product(range(model.simulators.n_a), repeat=model.k))
    effects = np.array([qops.kron(*[B[y, b] for y, b in enumerate(bt)]) for bt in tuples])
    bt = np.array(tuples)
    resp = np.zeros((model.n_m, model.n_a, len(tuples)))
    for y in range(model.k):
        # q[x, y, b_y, a] for every tuple, weighted by p(y|x)
        resp += np.einsum("x,xna->xan", model.p[:, y], model.q[:, y, bt[:, y], :])
    return effects, resp


def k_copy_statistics(effects: np.ndarray, resp: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``Σ_b̄ r(a|x,b̄) tr[ρ^{⊗k} Ñ_b̄]`` for all (x, a)."""
    n = effects.shape[1]
    k = int(round(np.log(n) / np.log(rho.shape[0])))
    rho_k = qops.kron(*[rho] * k)
    probs = np.real(np.einsum("nij,ji->n", effects, rho_k))
    return resp @ probs


def separable_terms(model: SimulationModel, lambdas: np.ndarray
                    ) -> list[list[tuple[float, list[np.ndarray]]]]:
    """Product decompositions of a feasible joint observable for the lifted assemblage.

    The stochastic responses are coarse-grained onto deterministic tuples
    ``λ`` (weight ``Π_x r(λ_x|x,b̄)``) and the product effects are averaged over
    all permutations of the copies, which turns their marginals into the
    symmetric lift.  Returns, per ``λ``, a list of ``(weight, factors)``.
    """
    B = model.simulators.effects
    _, resp = product_joint_observable(model)
    tuples = list(itertools.product(range(model.simulators.n_a), repeat=model.k))
    perms = list(itertools.permutations(range(model.k)))
    out = []
    for lam in lambdas:
        terms = []
        for n, bt in enumerate(tuples):
            w = float(np.prod([resp[x, a, n] for x, a in enumerate(lam)]))
            if w <= 0:
                continue
            factors = [B[y, b] for y, b in enumerate(bt)]
            for perm in perms:
                terms.append((w / factorial(model.k), [factors[i] for i in perm]))
        out.append(terms)
    return out


def _bose_extension(op: np.ndarray, copies: int) -> np.ndarray:
    """PSD operator on ``copies`` factors, supported on the symmetric subspace,
    whose marginal on any ``copies - 1`` traced factors is ``op``."""
    w, v = np.linalg.eigh(qops.hermitize(op))
    d = op.shape[0]
    out = np.zeros((d ** copies,) * 2, dtype=complex)
    for lam, vec in zip(w, v.T):
        if lam <= 1e-14:
            continue
        u = np.sqrt(lam) * vec
        uk = qops.kron(*[u.reshape(-1, 1)] * copies).ravel()
        out += np.outer(uk, uk.conj()) / lam ** (copies - 1)
    return out


def lifted_feasible_point(model: SimulationModel, problem) -> list[np.ndarray]:
    """Block values for ``problem`` (built without symmetry reduction) at visibility 1."""
    if problem.reduced:
        raise ValueError("feasible points are assembled for the unreduced formulation")
    lambdas = problem.lambdas
    terms = separable_terms(model, lambdas)
    values: list[np.ndarray | None] = [None] * len(problem.sdp.blocks)
    for blk, tl in zip(problem.parent_blocks, terms):
        values[blk] = sum(w * qops.kron(*f) for w, f in tl)
    layout = problem.layout
    if layout is not None:
        V = layout.compression().toarray() if problem.tier.compressed else None
        for blk, tl in zip(problem.extension_blocks, terms):
            ext = np.zeros((layout.dim,) * 2, dtype=complex)
            for w, f in tl:
                grouped = [f[0]] + [_bose_extension(f[i], layout.level) for i in range(1, layout.k)]
                x = qops.kron(*grouped)
                # grouped order (0, 1-copies, 2-copies, …) to extended order
                order = [0] + [layout.position(i, c) for i in range(1, layout.k)
                               for c in range(layout.level)]
                perm = [order.index(p) for p in range(layout.n_factors)]
                ext += w * qops.permute_factors(x, layout.dims, perm)
            values[blk] = V.conj().T @ ext @ V if V is not None else ext
    return values


# ---------------------------------------------------------------------------
# Two-copy sufficient condition


@dataclass(frozen=True)
class SpanResult:
    member: np.ndarray          # per-effect membership flags
    residual: np.ndarray        # HS norm of the component outside the span
    local_a: np.ndarray         # Ã_λ (meaningful where member)
    local_b: np.ndarray         # B̃_λ


def span_test(G: np.ndarray, dims: tuple[int, int], tol: float = SPAN_TOL) -> SpanResult:
    """Project each ``G_λ`` onto ``{A ⊗ I + I ⊗ B}`` in the Hilbert-Schmidt inner product.

    Gauge: the identity component is split so that ``tr Ã = tr B̃ · d_A / d_B``.
    """
    d_a, d_b = dims
    G = np.asarray(G)
    member, res, As, Bs = [], [], [], []
    for g in G:
        ta = qops.partial_trace(g, dims, keep=[0]) / d_b
        tb = qops.partial_trace(g, dims, keep=[1]) / d_a
        shift = np.trace(g).real / (2 * d_a * d_b)
        a = ta - shift * np.eye(d_a)
        b = tb - shift * np.eye(d_b)
        r = np.linalg.norm(g - np.kron(a, np.eye(d_b)) - np.kron(np.eye(d_a), b))
        member.append(r <= tol)
        res.append(r)
        As.append(qops.hermitize(a))
        Bs.append(qops.hermitize(b))
    return SpanResult(np.array(member), np.array(res), np.array(As), np.array(Bs))


class DecompositionStatus(str, enum.Enum):
    OK = "OK"
    NOT_APPLICABLE = "NOT_APPLICABLE"


@dataclass(frozen=True)
class TwoSimDecomposition:
    status: DecompositionStatus
    q: float | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    model: SimulationModel | None = None
    reason: str = ""

    def reconstruct(self) -> np.ndarray:
        d_a, d_b = self.C.shape[1], self.D.shape[1]
        return np.array([self.q * np.kron(c, np.eye(d_b)) + (1 - self.q) * np.kron(np.eye(d_a), dd)
                         for c, dd in zip(self.C, self.D)])


def two_sim_decompose(G: np.ndarray, responses: np.ndarray, dims: tuple[int, int],
                      span_tol: float = SPAN_TOL, psd_tol: float = 1e-8) -> TwoSimDecomposition:
    """Turn an in-span two-copy joint observable into a 2-simulation model.

    ``responses[x, a, λ]`` is the post-processing of the joint observable.
    The decomposition shifts each ``Ã_λ`` by its smallest eigenvalue so both
    local parts become PSD, reads off ``q = 1 - Σ_λ tr B_λ / d_B`` from the
    normalization and rescales to POVMs.  Anything that fails a check is
    reported NOT_APPLICABLE rather than returned as a model.
    """
    d_a, d_b = dims
    G = np.asarray(G)
    na = G.shape[0]
    span = span_test(G, dims, span_tol)
    if not span.member.all():
        worst = float(span.residual.max())
        return TwoSimDecomposition(DecompositionStatus.NOT_APPLICABLE,
                                   reason=f"effect outside the local span (residual {worst:.2e})")
    A, B = [], []
    for a_t, b_t in zip(span.local_a, span.local_b):
        nu_min = np.linalg.eigvalsh(a_t)[0]
        A.append(a_t - nu_min * np.eye(d_a))
        B.append(b_t + nu_min * np.eye(d_b))
    A, B = np.array(A), np.array(B)
    worst = min(min(qops.min_eig(x) for x in A), min(qops.min_eig(x) for x in B))
    if worst < -psd_tol:
        return TwoSimDecomposition(DecompositionStatus.NOT_APPLICABLE,
                                   reason=f"shifted local parts not PSD (min eigenvalue {worst:.2e})")
    q = 1 - np.trace(B.sum(axis=0)).real / d_b
    q_other = 1 - np.trace(A.sum(axis=0)).real / d_a
    if q < -psd_tol or q > 1 + psd_tol or abs(q + q_other - 1) > 1e-7:
        return TwoSimDecomposition(DecompositionStatus.NOT_APPLICABLE,
                                   reason=f"inconsistent normalization q={q:.3g}, q'={q_other:.3g}")
    q = float(np.clip(q, 0.0, 1.0))
    eps = 1e-12
    C = A / q if q > eps else np.broadcast_to(np.eye(d_a) / na, A.shape).copy()
    Dm = B / (1 - q) if 1 - q > eps else np.broadcast_to(np.eye(d_b) / na, B.shape).copy()
    for povm, d in ((C, d_a), (Dm, d_b)):
        if np.abs(povm.sum(axis=0) - np.eye(d)).max() > 1e-7:
            return TwoSimDecomposition(DecompositionStatus.NOT_APPLICABLE,
                                       reason="rescaled local parts do not sum to the identity")
    recon = np.array([q * np.kron(c, np.eye(d_b)) + (1 - q) * np.kron(np.eye(d_a), dd)
                      for c, dd in zip(C, Dm)])
    if np.abs(recon - G).max() > 1e-7:
        return TwoSimDecomposition(DecompositionStatus.NOT_APPLICABLE,
                                   reason="reconstruction does not match the joint observable")
    model = None
    if d_a == d_b:
        n_m, n_a, _ = responses.shape
        p = np.tile([q, 1 - q], (n_m, 1))
        # q(a|x, b=λ, y) = response of λ, identical for both simulators
        qt = np.repeat(np.transpose(responses, (0, 2, 1))[:, None], 2, axis=1)
        model = SimulationModel(p, qt, MeasurementAssemblage(np.array([C, Dm])))
    return TwoSimDecomposition(DecompositionStatus.OK, q, C, Dm, model)
