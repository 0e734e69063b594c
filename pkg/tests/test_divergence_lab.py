"""Exhaustive-enumeration oracles for sampling-induced information loss.

The frozen constants below were produced by this module itself on a fixed
desk-scale design and then pinned, so any later change to the enumeration
or quadrature paths that shifts the numbers will be caught.
"""

import numpy as np
import pytest

from soa_lab import (Alternative, CapacityError, Dataset, GridSpec,
                     InvalidInputError, Observation, Prior, Protocol,
                     UtilityParams, build_divergence_report, coverage_r,
                     divergence_uniform_closed_form, enumerate_feasible_sets,
                     enumerate_sets, expected_divergence,
                     expected_divergence_direct, expected_kl_direct,
                     expected_quasi_ll, expected_quasi_ll_setwise,
                     expected_true_ll, kl_term_a_entropy_form,
                     kl_term_a_joint, kl_terms, protocol_comparison)


def desk_observation():
    x = [0.9, -0.3, 0.1, -1.4]
    return Observation(0, [Alternative(j, [x[j]]) for j in range(4)], 2)


def desk_design():
    return Dataset([desk_observation(),
                    Observation(1, [Alternative(j, [v]) for j, v in
                                    enumerate([-0.6, 0.4, 1.1, 0.2])], 0)])


BSTAR = UtilityParams([0.8])
UNI = Protocol("uniform_wor", m=2)
IMP = Protocol("importance_independent",
               inclusion_probs=np.array([0.8, 0.6, 0.4, 0.2]))
PRIOR = Prior(np.zeros(1), 4.0 * np.eye(1))
GRID = GridSpec.make(-6.0, 6.0, 161)


def random_observation(rng, J, K):
    return Observation(0, [Alternative(j, rng.normal(size=K))
                           for j in range(J)], int(rng.integers(J)))


# ---------------------------------------------------------------------------
# frozen desk-scale values
# ---------------------------------------------------------------------------

def test_frozen_expectations_uniform():
    obs = desk_observation()
    assert abs(expected_quasi_ll(obs, UNI, BSTAR, BSTAR, "mcfadden")
               - (-0.5770114712681176)) < 1e-12
    assert abs(expected_true_ll(obs, BSTAR, BSTAR)
               - (-1.2090711035770283)) < 1e-12
    assert abs(expected_divergence(obs, UNI, BSTAR, "mcfadden")
               - 0.6320596323089107) < 1e-12


def test_frozen_expectations_importance():
    obs = desk_observation()
    assert abs(expected_quasi_ll(obs, IMP, BSTAR, BSTAR, "mcfadden")
               - (-0.7697555018306571)) < 1e-12
    assert abs(expected_quasi_ll(obs, IMP, BSTAR, BSTAR, "none")
               - (-0.8262769994943988)) < 1e-12
    assert abs(expected_divergence(obs, IMP, BSTAR, "mcfadden")
               - 0.43931560174637135) < 1e-12


def test_frozen_kl_terms():
    ds = desk_design()
    kt = kl_terms(ds, UNI, "mcfadden", PRIOR, GRID)
    assert abs(kt.a - (-0.9923036221998851)) < 1e-12
    assert abs(kt.b - 1.1602391678518464) < 1e-12
    kt = kl_terms(ds, IMP, "mcfadden", PRIOR, GRID)
    assert abs(kt.a - (-0.8371852529150179)) < 1e-12
    assert abs(kt.b - 0.9910086337925633) < 1e-12


# ---------------------------------------------------------------------------
# coverage share R
# ---------------------------------------------------------------------------

def test_coverage_is_third_for_pairs_with_equal_utilities():
    # J=3, m=2, flat utilities: three feasible pair-sets, each covering 1/3
    obs = Observation(0, [Alternative(j, [0.0]) for j in range(3)], 0)
    proto = Protocol("uniform_wor", m=2)
    feasible = enumerate_feasible_sets(proto, 3)
    assert len(feasible) == 3
    for members, lcp in feasible:
        es = type("E", (), {"member_ids": members, "log_cond_prob": lcp})
        assert abs(coverage_r(obs, es, UtilityParams([0.0])) - 1.0 / 3.0) < 1e-14


def test_coverage_sums_to_one_and_stays_in_unit_interval():
    rng = np.random.default_rng(11)
    for trial in range(20):
        J = int(rng.integers(3, 7))
        m = int(rng.integers(2, J + 1))
        obs = random_observation(rng, J, 2)
        beta = UtilityParams(rng.normal(size=2))
        proto = (Protocol("uniform_wor", m=m) if trial % 2 == 0 else
                 Protocol("importance_independent",
                          inclusion_probs=rng.uniform(0.1, 0.9, size=J)))
        total = 0.0
        for members, lcp in enumerate_feasible_sets(proto, J):
            es = type("E", (), {"member_ids": members, "log_cond_prob": lcp})
            r = coverage_r(obs, es, beta)
            assert 0.0 < r <= 1.0 + 1e-12
            total += r
        assert abs(total - 1.0) < 1e-12


def test_full_coverage_when_set_is_everything():
    rng = np.random.default_rng(12)
    obs = random_observation(rng, 4, 1)
    proto = Protocol("uniform_wor", m=4)
    (members, lcp), = enumerate_feasible_sets(proto, 4)
    es = type("E", (), {"member_ids": members, "log_cond_prob": lcp})
    assert abs(coverage_r(obs, es, UtilityParams(rng.normal(size=1))) - 1.0) < 1e-14


# ---------------------------------------------------------------------------
# expectation identities
# ---------------------------------------------------------------------------

def protocols_for(rng, J):
    return [Protocol("uniform_wor", m=int(rng.integers(2, J + 1))),
            Protocol("importance_independent",
                     inclusion_probs=rng.uniform(0.1, 0.9, size=J))]


def test_choice_first_equals_set_first():
    rng = np.random.default_rng(13)
    for _ in range(10):
        J = int(rng.integers(3, 6))
        obs = random_observation(rng, J, 2)
        bs = UtilityParams(rng.normal(size=2))
        b = UtilityParams(rng.normal(size=2))
        for proto in protocols_for(rng, J):
            for mode in ("mcfadden", "none"):
                a = expected_quasi_ll(obs, proto, bs, b, mode)
                c = expected_quasi_ll_setwise(obs, proto, bs, b, mode)
                assert abs(a - c) < 1e-12


def test_divergence_forms_agree_and_match_difference():
    rng = np.random.default_rng(14)
    for _ in range(10):
        J = int(rng.integers(3, 6))
        obs = random_observation(rng, J, 1)
        bs = UtilityParams(rng.normal(size=1))
        for proto in protocols_for(rng, J):
            for mode in ("mcfadden", "none"):
                split = expected_divergence(obs, proto, bs, mode)
                direct = expected_divergence_direct(obs, proto, bs, mode)
                gap = (expected_quasi_ll(obs, proto, bs, bs, mode)
                       - expected_true_ll(obs, bs, bs))
                assert abs(split - direct) < 1e-12
                assert abs(split - gap) < 1e-12


def test_uniform_divergence_closed_form_and_positivity():
    rng = np.random.default_rng(15)
    for _ in range(10):
        J = int(rng.integers(4, 7))
        m = int(rng.integers(2, J))  # strict subsets
        obs = random_observation(rng, J, 1)
        bs = UtilityParams(rng.normal(size=1))
        proto = Protocol("uniform_wor", m=m)
        closed = divergence_uniform_closed_form(obs, proto, bs)
        assert closed > 0.0
        assert abs(closed - expected_divergence(obs, proto, bs, "mcfadden")) < 1e-12


def test_uniform_conditioning_is_mode_invariant():
    rng = np.random.default_rng(16)
    obs = random_observation(rng, 5, 2)
    bs = UtilityParams(rng.normal(size=2))
    proto = Protocol("uniform_wor", m=3)
    vals = [expected_quasi_ll(obs, proto, bs, bs, mode)
            for mode in ("mcfadden", "none", "uniform_constant")]
    assert abs(vals[0] - vals[1]) < 1e-13
    assert abs(vals[0] - vals[2]) < 1e-13


def test_closed_form_rejects_nonuniform_protocols():
    obs = desk_observation()
    with pytest.raises(InvalidInputError):
        divergence_uniform_closed_form(obs, IMP, BSTAR)


# ---------------------------------------------------------------------------
# posterior information loss
# ---------------------------------------------------------------------------

def test_kl_decomposition_matches_direct_assembly():
    ds = desk_design()
    for proto in (UNI, IMP):
        for mode in ("mcfadden", "none"):
            kt = kl_terms(ds, proto, mode, PRIOR, GRID)
            direct = expected_kl_direct(ds, proto, mode, PRIOR, GRID)
            assert abs((kt.a + kt.b) - direct) < 1e-12
            assert kt.a + kt.b >= -1e-10  # expected KL is non-negative


def test_term_a_joint_assembly_agrees():
    ds = desk_design()
    for proto in (UNI, IMP):
        kt = kl_terms(ds, proto, "mcfadden", PRIOR, GRID)
        assert abs(kt.a - kl_term_a_joint(ds, proto, "mcfadden", PRIOR, GRID)) < 1e-12


def test_term_a_entropy_form_agrees_under_uniform():
    ds = desk_design()
    kt = kl_terms(ds, UNI, "mcfadden", PRIOR, GRID)
    assert abs(kt.a - kl_term_a_entropy_form(ds, UNI, PRIOR, GRID)) < 1e-12
    assert kt.a <= 0.0


def test_protocol_survey_prefers_uniform():
    rng = np.random.default_rng(17)
    designs = [Dataset([random_observation(rng, 4, 1)]) for _ in range(3)]
    protos = [("uniform_m2", Protocol("uniform_wor", m=2)),
              ("skewed", Protocol("importance_independent",
                                  inclusion_probs=np.array([0.9, 0.7, 0.3, 0.1]))),
              ("uniform_m3", Protocol("uniform_wor", m=3))]
    cmp = protocol_comparison(designs, protos, PRIOR, GRID)
    assert cmp.uniform_attains_max
    totals = [r.a_total for r in cmp.rows]
    assert totals == sorted(totals, reverse=True)
    assert all(len(r.a_per_design) == 3 for r in cmp.rows)


def test_report_bundles_consistent_numbers():
    ds = desk_design()
    rep = build_divergence_report(ds, UNI, "mcfadden", BSTAR, PRIOR, GRID)
    assert abs(rep.expected_divergence
               - (rep.expected_quasi_ll - rep.expected_true_ll)) < 1e-12
    assert abs(rep.kl_term_a - (-0.9923036221998851)) < 1e-12
    # coverage table covers every (observation, feasible set) pair and sums
    # to one within each observation
    sums = {}
    for (obs_idx, _), r in rep.r_coverage.items():
        sums[obs_idx] = sums.get(obs_idx, 0.0) + r
    assert set(sums) == {0, 1}
    assert all(abs(s - 1.0) < 1e-12 for s in sums.values())


# ---------------------------------------------------------------------------
# guards
# ---------------------------------------------------------------------------

def test_grid_validation():
    ds = desk_design()
    with pytest.raises(InvalidInputError):
        kl_terms(ds, UNI, "mcfadden", PRIOR, GridSpec.make(-6, 6, 41))
    with pytest.raises(InvalidInputError):
        kl_terms(ds, UNI, "mcfadden", PRIOR,
                 GridSpec.make((-6, -6), (6, 6), (61, 61)))


def test_joint_enumeration_capacity_guard():
    ds = desk_design()
    tight = Protocol("uniform_wor", m=2, enumeration_cap=10)
    with pytest.raises(CapacityError):
        kl_terms(ds, tight, "mcfadden", PRIOR, GRID)
