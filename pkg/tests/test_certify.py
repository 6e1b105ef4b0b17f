import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from seocert import certify as cert
from seocert import qops
from seocert import sdp_adapter as sa
from seocert.scenarios import (depolarize, hollow_triangle, maximally_entangled, mub_assemblage,
                               random_assemblage, trivial)
from seocert.seo import seo, steer


def qubit_seo(n_m=3):
    return seo(steer(maximally_entangled(2), mub_assemblage(2, n_m)))


# ---------------------------------------------------------------------------
# Lift and bookkeeping


def test_lift_definition_and_normalization(rng):
    m = random_assemblage(2, 2, 3, rng)
    lifted = cert.lift(m, 3)
    e = m.effects[1, 2]
    expected = (qops.kron(e, np.eye(2), np.eye(2)) + qops.kron(np.eye(2), e, np.eye(2))
                + qops.kron(np.eye(2), np.eye(2), e)) / 3
    np.testing.assert_allclose(lifted.effects[1, 2], expected, atol=1e-12)
    assert lifted.as_assemblage().is_valid()
    np.testing.assert_allclose(cert.lift(m, 1).effects, m.effects)
    with pytest.raises(ValueError):
        cert.lift(m, 0)


def test_lifted_statistics_on_product_states(rng):
    """tr[ρ^{⊗k} M̃] = tr[ρ M] for every state."""
    m = random_assemblage(2, 2, 2, rng)
    lifted = cert.lift(m, 3)
    rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    rk = qops.kron(rho, rho, rho)
    for x, a in itertools.product(range(2), range(2)):
        assert abs(np.trace(rk @ lifted.effects[x, a]) - np.trace(rho @ m.effects[x, a])) < 1e-12


def test_response_table():
    d = cert.response_table(2, 3)
    assert d.shape == (2, 3, 9)
    np.testing.assert_allclose(d.sum(axis=1), 1)
    lam = cert.outcome_tuples(2, 3)
    assert d[1, lam[5][1], 5] == 1


def test_block_counts_for_qubit_extension():
    prob = cert.build_problem(qubit_seo(), 2, cert.KCOMPAT_PPT_DPS, symmetry=False)
    assert prob.n_parent_blocks == 8 and prob.n_variable_blocks == 8
    assert prob.parent_dim == 4
    assert len(prob.extension_blocks) == 8 and prob.extension_dim == 8


def test_symmetry_reduces_blocks():
    prob = cert.build_problem(qubit_seo(), 2, cert.KCOMPAT)
    assert prob.reduced
    assert prob.n_parent_blocks == 8
    assert prob.n_variable_blocks < 8


def test_extension_layout_positions():
    lay = cert.ExtensionLayout(2, 3, 2)
    assert lay.n_factors == 5
    assert lay.copies(1) == [1, 3] and lay.copies(2) == [2, 4]
    assert lay.copies(0) == [0]
    v = lay.compression()
    np.testing.assert_allclose((v.conj().T @ v).toarray(), np.eye(lay.compressed_dim), atol=1e-12)
    assert lay.compressed_dim == 2 * 3 * 3


def test_symmetric_isometry_projects_onto_symmetric_subspace():
    v = cert.symmetric_isometry(3, 2).toarray()
    proj = v @ v.conj().T
    swap = np.zeros((9, 9))
    for i, j in itertools.product(range(3), repeat=2):
        swap[j * 3 + i, i * 3 + j] = 1
    np.testing.assert_allclose(proj, (np.eye(9) + swap) / 2, atol=1e-12)


def test_weyl_covariance_of_mubs():
    m = mub_assemblage(3, 4)
    covs = cert.assemblage_covariances(m)
    assert len(covs) == 9
    for cov in covs:
        u = cov.unitary
        for x, a in itertools.product(range(4), range(3)):
            np.testing.assert_allclose(u @ m.effects[x, a] @ u.conj().T,
                                       m.effects[x, cov.outcome_perm[x, a]], atol=1e-12)
    orbit = cert.lambda_orbits(cert.outcome_tuples(4, 3), covs)
    assert orbit is not None and len({r for r, _ in orbit}) == 81 // 9


def test_caps():
    m = mub_assemblage(3, 4)
    with pytest.raises(cert.CapExceeded):
        cert.build_problem(trivial(2, 9, 2), 1, cert.KCOMPAT)
    with pytest.raises(cert.CapExceeded):
        cert.build_problem(m, 3, cert.ConstraintTier(cert.Tier.KCOMPAT_PPT_DPS, level=3))
    with pytest.raises(cert.CapExceeded):
        cert.build_problem(trivial(2, 9, 2), 1, cert.KCOMPAT, allow_large=False)
    assert cert.build_problem(trivial(2, 9, 2), 1, cert.KCOMPAT, allow_large=True).n_parent_blocks == 512


def test_tier_parsing_and_cascade():
    t = cert.ConstraintTier.parse("dps")
    assert t.label == "KCOMPAT_PPT_DPS(2)"
    assert [c.label for c in t.cascade()] == ["KCOMPAT", "KCOMPAT_PPT", "KCOMPAT_PPT_DPS(2)"]
    assert cert.ConstraintTier.parse("kcompat").cascade() == [cert.KCOMPAT]
    with pytest.raises(ValueError):
        cert.ConstraintTier.parse("nope")
    with pytest.raises(ValueError):
        cert.ConstraintTier(cert.Tier.KCOMPAT_PPT_DPS, level=1)


def test_ppt_cut_option():
    first = cert.ConstraintTier.parse("dps", ppt_cuts="first")
    assert first.label == "KCOMPAT_PPT_DPS(2)[first]"
    assert [c.label for c in first.cascade()] == ["KCOMPAT", "KCOMPAT_PPT[first]",
                                                  "KCOMPAT_PPT_DPS(2)[first]"]
    assert cert.ConstraintTier.parse("kcompat", ppt_cuts="first").label == "KCOMPAT"
    with pytest.raises(ValueError):
        cert.ConstraintTier.parse("ppt", ppt_cuts="some")


# ---------------------------------------------------------------------------
# Qubit analytic values


@pytest.mark.parametrize("tier,expected", [
    (cert.KCOMPAT, np.sqrt(3) / 2),
    (cert.KCOMPAT_PPT, np.sqrt(2 / 3)),
    (cert.KCOMPAT_PPT_DPS, np.sqrt(2 / 3)),
    (cert.ConstraintTier(cert.Tier.KCOMPAT_PPT_DPS, compressed=True), np.sqrt(2 / 3)),
])
def test_qubit_three_mub_thresholds(tier, expected):
    rep = cert.critical_visibility(qubit_seo(), 2, tier)
    assert rep.solver_status == "OPTIMAL"
    assert abs(rep.t_c - expected) < 1e-5


@pytest.mark.parametrize("n_m,expected", [(2, 1 / np.sqrt(2)), (3, 1 / np.sqrt(3))])
def test_single_copy_thresholds(n_m, expected):
    rep = cert.critical_visibility(qubit_seo(n_m), 1, cert.KCOMPAT)
    assert abs(rep.t_c - expected) < 1e-5


@pytest.mark.parametrize("tier", [cert.KCOMPAT, cert.KCOMPAT_PPT, cert.KCOMPAT_PPT_DPS])
def test_symmetry_reduction_agrees_with_plain(tier):
    m = qubit_seo()
    a = cert.critical_visibility(m, 2, tier, symmetry=True)
    b = cert.critical_visibility(m, 2, tier, symmetry=False)
    assert abs(a.t_c - b.t_c) < 1e-6


def test_compression_agrees_with_full_extension():
    m = qubit_seo()
    full = cert.critical_visibility(m, 2, cert.KCOMPAT_PPT_DPS, symmetry=False)
    comp = cert.critical_visibility(m, 2, cert.ConstraintTier(cert.Tier.KCOMPAT_PPT_DPS, compressed=True),
                                    symmetry=False)
    assert abs(full.t_c - comp.t_c) < 1e-6


def test_symmetry_agrees_on_random_assemblage(rng):
    m = random_assemblage(2, 3, 2, rng)
    for tier in (cert.KCOMPAT_PPT, cert.KCOMPAT_PPT_DPS):
        a = cert.critical_visibility(m, 2, tier, symmetry=True)
        b = cert.critical_visibility(m, 2, tier, symmetry=False)
        assert abs(a.t_c - b.t_c) < 1e-6


def projective_qubits(n_m, seed):
    rng = np.random.default_rng(seed)
    eff = []
    for _ in range(n_m):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        v /= np.linalg.norm(v)
        p = np.outer(v, v.conj())
        eff.append([p, np.eye(2) - p])
    from seocert.scenarios import MeasurementAssemblage
    return MeasurementAssemblage(np.array(eff))


def test_first_cut_matches_all_cuts_for_two_copies():
    tier = cert.ConstraintTier.parse("ppt", ppt_cuts="first")
    assert abs(cert.critical_visibility(qubit_seo(), 2, tier).t_c - np.sqrt(2 / 3)) < 1e-5


def test_first_cut_is_weaker_for_three_copies():
    m = projective_qubits(4, 7)
    kc = cert.critical_visibility(m, 3, cert.KCOMPAT).t_c
    first = cert.critical_visibility(m, 3, cert.ConstraintTier.parse("ppt", ppt_cuts="first")).t_c
    every = cert.critical_visibility(m, 3, cert.KCOMPAT_PPT).t_c
    assert kc >= first - 1e-7 >= every - 2e-7
    assert every < 1


@pytest.mark.slow
def test_first_cut_symmetry_reduction_agrees_with_plain():
    m = projective_qubits(4, 7)
    tier = cert.ConstraintTier.parse("ppt", ppt_cuts="first")
    a = cert.critical_visibility(m, 3, tier, symmetry=True)
    b = cert.critical_visibility(m, 3, tier, symmetry=False)
    assert abs(a.t_c - b.t_c) < 1e-6


@pytest.mark.parametrize("k", [2, pytest.param(3, marks=pytest.mark.slow)])
def test_unextended_factor_choice_is_immaterial(rng, k):
    m = random_assemblage(2, 2, 2, rng)
    values = [cert.solve(cert.build_problem(m, k, cert.KCOMPAT_PPT_DPS, symmetry=False,
                                            unextended_factor=f)).t_c for f in range(k)]
    assert max(values) - min(values) < 1e-6
    with pytest.raises(ValueError):
        cert.build_problem(m, k, cert.KCOMPAT_PPT_DPS, unextended_factor=1)


def test_visibility_solution_satisfies_constraints():
    m = qubit_seo()
    prob = cert.build_problem(m, 2, cert.KCOMPAT_PPT_DPS, symmetry=False)
    prog = sa.encode(prob)
    out = sa.run(prog)
    vals = sa.decode(prog, prob, out.x)
    viol = cert.constraint_violations(prob, vals, out.objective)
    assert max(viol.values()) < 1e-6


def test_reduced_solution_expands_to_full_joint_observable():
    m = mub_assemblage(2, 3).transpose()
    prob = cert.build_problem(m, 2, cert.KCOMPAT_PPT)
    prog = sa.encode(prob)
    out = sa.run(prog)
    g = prob.parent_values(sa.decode(prog, prob, out.x))
    assert len(g) == 8
    lifted = cert.lift(depolarize(m, out.objective), 2).effects
    np.testing.assert_allclose(sum(g), np.eye(4), atol=1e-6)
    for x, a in itertools.product(range(3), range(2)):
        marg = sum(gi for gi, lam in zip(g, prob.lambdas) if lam[x] == a)
        np.testing.assert_allclose(marg, lifted[x, a], atol=1e-6)
    for gi in g:
        assert qops.min_eig(gi) > -1e-6
        assert qops.min_eig(qops.partial_transpose(gi, [2, 2], [0])) > -1e-6


# ---------------------------------------------------------------------------
# Verdicts


def test_certify_above_threshold():
    m = depolarize(mub_assemblage(2, 3), 0.95)
    rep = cert.certify_from_state(maximally_entangled(2), m, 2, cert.KCOMPAT_PPT_DPS)
    assert rep.certified and rep.certified_count == 3
    assert rep.tier_used == "KCOMPAT"  # the cascade stops at the cheapest certificate
    assert rep.certificate_margin >= sa.CERTIFICATE_TOL
    assert rep.seo_rank == 2


def test_inconclusive_below_threshold():
    m = depolarize(mub_assemblage(2, 3), 0.8)
    rep = cert.certify_from_state(maximally_entangled(2), m, 2, cert.KCOMPAT_PPT_DPS)
    assert not rep.certified
    assert [s["tier"] for s in rep.stages] == ["KCOMPAT", "KCOMPAT_PPT", "KCOMPAT_PPT_DPS(2)"]


def test_between_tiers_needs_the_stronger_tier():
    # 0.84 lies between √(2/3) and √3/2: only the PPT tier certifies
    m = depolarize(mub_assemblage(2, 3), 0.84)
    rep = cert.certify_from_state(maximally_entangled(2), m, 2, cert.KCOMPAT_PPT)
    assert rep.certified and rep.tier_used == "KCOMPAT_PPT"
    rep = cert.certify_from_state(maximally_entangled(2), m, 2, cert.KCOMPAT)
    assert not rep.certified


def test_k_settings_are_always_k_compatible():
    rep = cert.certify_assemblage(mub_assemblage(2, 2), 2, cert.KCOMPAT_PPT_DPS)
    assert not rep.certified and rep.solver_status == "OPTIMAL"


def test_hollow_triangle_verdicts():
    m = hollow_triangle()
    for pair in ([0, 1], [0, 2], [1, 2]):
        assert cert.certify_assemblage(m.subset(pair), 1, cert.KCOMPAT).solver_status == "OPTIMAL"
    rep = cert.certify_assemblage(m, 1, cert.KCOMPAT)
    assert rep.certified and rep.certificate_margin >= sa.CERTIFICATE_TOL
    assert not cert.certify_assemblage(m, 2, cert.KCOMPAT_PPT_DPS).certified


def test_bisection_brackets_max_visibility():
    m = qubit_seo()
    lo, hi = cert.bisect_visibility(m, 2, cert.KCOMPAT, tol=1e-3)
    assert lo <= np.sqrt(3) / 2 <= hi + 1e-6 and hi - lo <= 1e-3


def test_bisection_keeps_bracket_on_undecided_solve(monkeypatch):
    real, calls = cert.solve, []

    def flaky(problem, t, settings=None):
        calls.append(t)
        if len(calls) == 4:
            return SimpleNamespace(certified=False, solver_status="UNKNOWN",
                                   raw_status="MaxIterations", message="stub")
        return real(problem, t, settings)

    monkeypatch.setattr(cert, "solve", flaky)
    lo, hi = cert.bisect_visibility(qubit_seo(), 2, cert.KCOMPAT, tol=1e-3)
    # t=1, 0.5, 0.75 decided; the fourth solve at 0.875 is not
    assert calls == [1.0, 0.5, 0.75, 0.875]
    assert (lo, hi) == (0.75, 1.0)


def test_report_dict():
    rep = cert.critical_visibility(qubit_seo(), 2, cert.KCOMPAT)
    d = rep.to_dict()
    assert d["schema_version"] == cert.REPORT_SCHEMA_VERSION
    assert d["t_c"] == round(rep.t_c, 4) and d["t_c_raw"] == rep.t_c
    assert d["verdict"] == "INCONCLUSIVE" and d["certified_count"] is None
