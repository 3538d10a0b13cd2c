from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regimetest import (AllZeroMatrix, EmptyGrid, PropensitySpec, TestOptions, baseline_hazard,
                        build_weights, covariance, iid_terms, known_propensity, omega,
                        parse_regime, qhat, regime_cumhaz, run_test, score_statistic)
from regimetest.engine import compute_components, quadratic_test

from builders import (cohort_from_subjects, embedded_two_stage_rules, half,
                      random_two_stage_subjects, single_stage_design, two_stage_design)
from oracle import (Subj, classical_logrank_numerator, nelson_aalen_increments, reference_test)

KNOWN = TestOptions(propensity=PropensitySpec(mode="known"), correction=False)

# six subjects, no censoring: arm 1 dies at 2, 4, 6 and arm 0 at 1, 3, 5
SIX = [(2, 1), (4, 1), (6, 1), (1, 0), (3, 0), (5, 0)]


def _six_cohort():
    design = single_stage_design()
    return cohort_from_subjects(design, [Subj(t, 1, [a]) for t, a in SIX])


def _arm_regimes(design):
    return [parse_regime("stage1: 1", design, "treat"), parse_regime("stage1: 0", design, "ctrl")]


class TestSingleStageReduction:
    def test_score_is_twice_logrank_numerator(self):
        c = _six_cohort()
        fit = known_propensity(c.design)
        w = build_weights(c, _arm_regimes(c.design), fit, L=6.0)
        T = score_statistic(w)
        classical = classical_logrank_numerator([t for t, _ in SIX], [1] * 6, [a for _, a in SIX])
        assert classical == Fraction(-23, 30)
        assert abs(T[0] - 2 * float(classical)) < 1e-10

    def test_baseline_is_nelson_aalen(self):
        c = _six_cohort()
        fit = known_propensity(c.design)
        w = build_weights(c, _arm_regimes(c.design), fit, L=6.0)
        dl = baseline_hazard(w)
        na = [float(x) for x in nelson_aalen_increments([t for t, _ in SIX], [1] * 6)]
        assert np.max(np.abs(dl - na)) < 1e-10

    def test_four_subject_nelson_aalen_with_censoring(self):
        design = single_stage_design()
        subjects = [Subj(1, 1, [0]), Subj(2, 0, [1]), Subj(3, 1, [1]), Subj(3, 1, [0])]
        c = cohort_from_subjects(design, subjects)
        w = build_weights(c, _arm_regimes(design), known_propensity(design), L=3.0)
        assert np.allclose(baseline_hazard(w), [1 / 4, 2 / 2])
        # q for arm 1 at u=1: 2 of 4 at risk weigh 2 each -> 0.5; at u=3 only one treated left
        assert np.allclose(qhat(w)[0], [0.5, 0.5])

    def test_qhat_three_to_one(self):
        design = single_stage_design()
        subjects = [Subj(5, 1, [1]), Subj(6, 0, [1]), Subj(7, 0, [1]), Subj(8, 0, [0])]
        c = cohort_from_subjects(design, subjects)
        w = build_weights(c, _arm_regimes(design), known_propensity(design), L=5.0)
        assert qhat(w)[0, 0] == pytest.approx(0.75)

    def test_single_regime_qhat_is_one(self):
        c = _six_cohort()
        w = build_weights(c, [parse_regime("stage1: 1", c.design)], known_propensity(c.design), L=6)
        assert np.all(qhat(w) == 1.0)


class TestAgainstOracle:
    @pytest.mark.parametrize("seed, ties", [(1, False), (2, True), (3, False)])
    def test_two_stage_embedded(self, seed, ties):
        rng = np.random.default_rng(seed)
        subjects = random_two_stage_subjects(rng, 35, ties=ties)
        design = two_stage_design()
        c = cohort_from_subjects(design, subjects)
        texts, funcs = embedded_two_stage_rules()
        regimes = [parse_regime(t, design) for t in texts]
        L = float(np.quantile(c.u, 0.9))
        ref = reference_test(subjects, funcs, half, L, corrected=True)
        comps = compute_components(c, regimes, known_propensity(design), L)
        assert np.allclose(comps.weights.grid, ref["grid"])
        assert np.max(np.abs(comps.dLambda - ref["dLambda"])) < 1e-12
        assert np.max(np.abs(comps.qhat - np.array(ref["qhat"]))) < 1e-12
        assert np.max(np.abs(comps.scores - ref["score"])) < 1e-10
        assert np.max(np.abs(comps.iid - ref["iid"])) < 1e-10
        assert np.max(np.abs(comps.G - ref["G"])) < 1e-10
        stat, nu, p, _ = quadratic_test(comps.scores, comps.iid, comps.G, True)
        assert stat == pytest.approx(ref["stat"], rel=1e-8)

    def test_covariate_rule_regimes(self):
        rng = np.random.default_rng(9)
        subjects = random_two_stage_subjects(rng, 30)
        design = two_stage_design()
        c = cohort_from_subjects(design, subjects)
        texts = ["stage1: if x1 > 0 then 1 else 0; stage2: if x2 == 1 then 1 else 0",
                 "stage1: if x1 > 0.5 then 0 else 1; stage2: 0",
                 "stage1: 1; stage2: if x1 < 0 then 1 else 0"]
        funcs = [
            lambda k, h: (1 if h["x1"] > 0 else 0) if k == 1 else (1 if h["x2"] == 1 else 0),
            lambda k, h: (0 if h["x1"] > 0.5 else 1) if k == 1 else 0,
            lambda k, h: 1 if k == 1 else (1 if h["x1"] < 0 else 0),
        ]
        L = float(np.max(c.u))
        ref = reference_test(subjects, funcs, half, L)
        comps = compute_components(c, [parse_regime(t, design) for t in texts],
                                   known_propensity(design), L)
        assert np.max(np.abs(comps.iid - ref["iid"])) < 1e-10

    def test_scalar_omega_matches_table(self):
        rng = np.random.default_rng(4)
        design = two_stage_design()
        c = cohort_from_subjects(design, random_two_stage_subjects(rng, 25))
        texts, _ = embedded_two_stage_rules()
        regimes = [parse_regime(t, design) for t in texts]
        fit = known_propensity(design)
        w = build_weights(c, regimes, fit, L=float(c.u.max()))
        for i, subj in enumerate(c):
            for j, reg in enumerate(regimes):
                for g, u in enumerate(w.grid):
                    assert omega(subj, reg, u, fit) == pytest.approx(w.omega[j, i, g])


class TestExamples:
    def test_omega_values(self):
        design = two_stage_design()
        reg = parse_regime("stage1: 1; stage2: 1", design)
        fit = known_propensity(design)
        s = cohort_from_subjects(design, [Subj(8, 1, [1, 1], [0, 5], {"x1": 0, "x2": 0})]).subject(0)
        assert omega(s, reg, 6.0, fit) == 4.0
        assert omega(s, reg, 4.0, fit) == 2.0
        assert omega(s, reg, 9.0, fit) == 0.0
        other = parse_regime("stage1: 0; stage2: 1", design)
        assert omega(s, other, 1.0, fit) == 0.0

    def test_no_events_before_L(self):
        design = single_stage_design()
        c = cohort_from_subjects(design, [Subj(t, d, [a]) for t, d, a in
                                          [(1, 0, 0), (2, 0, 1), (5, 1, 1), (6, 1, 0)]])
        grid = np.array([0.5, 1.5])
        w = build_weights(c, _arm_regimes(design), known_propensity(design), L=2.0, grid=grid)
        dl = baseline_hazard(w)
        assert np.all(dl == 0)
        assert np.all(score_statistic(w, dl) == 0)
        assert np.all(iid_terms(w, dl) == 0)
        with pytest.raises(EmptyGrid):
            run_test(c, _arm_regimes(design), KNOWN.replace(L=2.0))

    def test_identical_weights_give_zero_score(self):
        c = _six_cohort()
        same = [parse_regime("stage1: 1", c.design), parse_regime("stage1: 1", c.design)]
        w = build_weights(c, same, known_propensity(c.design), L=6.0)
        assert np.max(np.abs(score_statistic(w))) < 1e-12
        with pytest.raises(AllZeroMatrix):
            run_test(c, same, KNOWN.replace(L=6.0))

    def test_identical_regimes_with_estimated_probabilities(self):
        rng = np.random.default_rng(23)
        design = two_stage_design()
        c = cohort_from_subjects(design, random_two_stage_subjects(rng, 120))
        same = [parse_regime("stage1: 1; stage2: 1", design)] * 2
        for correction in (False, True):
            with pytest.raises(AllZeroMatrix):
                run_test(c, same, TestOptions(correction=correction))

    def test_covariance_examples(self):
        assert np.all(covariance(np.zeros((4, 2))) == 0)
        iid = np.array([[1.0, 2.0], [3.0, -1.0]])
        assert np.allclose(covariance(iid), [[5.0, -0.5], [-0.5, 2.5]])

    def test_duplication_scales_statistic(self):
        rng = np.random.default_rng(21)
        design = two_stage_design()
        c = cohort_from_subjects(design, random_two_stage_subjects(rng, 60))
        texts, _ = embedded_two_stage_rules()
        regimes = [parse_regime(t, design) for t in texts]
        L = float(np.quantile(c.u, 0.9))
        one = run_test(c, regimes, KNOWN.replace(L=L))
        dup = c.take(np.tile(np.arange(c.n), 3))
        three = run_test(dup, regimes, KNOWN.replace(L=L))
        assert three.statistic == pytest.approx(3 * one.statistic, rel=1e-9)
        assert np.allclose(three.components, 3 * np.array(one.components))

    def test_reference_regime_invariance(self):
        rng = np.random.default_rng(22)
        design = two_stage_design()
        c = cohort_from_subjects(design, random_two_stage_subjects(rng, 80))
        texts, _ = embedded_two_stage_rules()
        regimes = [parse_regime(t, design) for t in texts]
        L = float(np.quantile(c.u, 0.9))
        base = run_test(c, regimes, KNOWN.replace(L=L))
        for perm in ([1, 0, 2, 3], [3, 2, 1, 0], [0, 3, 1, 2]):
            other = run_test(c, [regimes[i] for i in perm], KNOWN.replace(L=L))
            assert other.statistic == pytest.approx(base.statistic, rel=1e-8, abs=1e-10)
            assert other.nu == base.nu
        # permuting only non-reference regimes permutes the components
        swapped = run_test(c, [regimes[i] for i in (1, 0, 2, 3)], KNOWN.replace(L=L))
        assert swapped.components[0] == pytest.approx(base.components[1])

    def test_result_serialisation(self):
        c = _six_cohort()
        res = run_test(c, _arm_regimes(c.design), KNOWN.replace(L=6.0), config_echo={"k": 1})
        d = res.to_dict()
        for key in ("statistic", "nu", "p_value", "variant", "components", "rank_tolerance", "L",
                    "warnings"):
            assert key in d
        assert d["variant"] == "plain"
        assert d["warnings"]["dropped_grid_points"] == 0
        assert d["config"] == {"k": 1}
        assert 0 <= d["p_value"] <= 1 and d["statistic"] >= 0 and d["nu"] >= 1


class TestCurves:
    def test_single_arm_is_nelson_aalen(self):
        design = single_stage_design()
        rows = [(1, 1), (2, 0), (3, 1), (3, 1), (4, 0)]
        c = cohort_from_subjects(design, [Subj(t, d, [1]) for t, d in rows])
        curve = regime_cumhaz(c, parse_regime("stage1: 1", design), known_propensity(design),
                              L=4.0)
        na = np.cumsum([float(x) for x in nelson_aalen_increments([t for t, _ in rows],
                                                                  [d for _, d in rows])])
        assert curve.time[0] == 0 and curve.cumhaz[0] == 0 and curve.survival[0] == 1
        assert np.allclose(curve.cumhaz[1:], na, atol=1e-14)
        assert np.allclose(curve.survival, np.exp(-curve.cumhaz))

    def test_no_events(self):
        design = single_stage_design()
        c = cohort_from_subjects(design, [Subj(1, 0, [1]), Subj(2, 0, [0])])
        curve = regime_cumhaz(c, parse_regime("stage1: 1", design), known_propensity(design))
        assert np.all(curve.cumhaz == 0) and np.all(curve.survival == 1)

    def test_csv(self):
        c = _six_cohort()
        curve = regime_cumhaz(c, parse_regime("stage1: 1", c.design), known_propensity(c.design),
                              L=6.0)
        lines = curve.to_csv().splitlines()
        assert lines[0] == "time,cumhaz,survival"
        assert lines[1] == "0,0,1"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(8, 40))
def test_iid_columns_sum_to_score(seed, n):
    rng = np.random.default_rng(seed)
    design = two_stage_design()
    c = cohort_from_subjects(design, random_two_stage_subjects(rng, n, ties=bool(seed % 2)))
    if not c.delta.any():
        return
    texts, _ = embedded_two_stage_rules()
    regimes = [parse_regime(t, design) for t in texts]
    comps = compute_components(c, regimes, known_propensity(design), float(c.u.max()))
    assert np.max(np.abs(comps.iid.sum(axis=0) - comps.scores)) < 1e-10
    assert np.all(comps.weights.omega >= 0)
    assert np.all(comps.weights.omega[:, ~comps.weights.at_risk] == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_grid_refines_monotonically(seed, L1, L2):
    rng = np.random.default_rng(seed)
    design = two_stage_design()
    c = cohort_from_subjects(design, random_two_stage_subjects(rng, 30))
    texts, _ = embedded_two_stage_rules()
    regimes = [parse_regime(t, design) for t in texts]
    lo, hi = sorted((L1, L2))
    try:
        small = build_weights(c, regimes, known_propensity(design), lo).grid
    except EmptyGrid:
        return
    big = build_weights(c, regimes, known_propensity(design), hi).grid
    assert set(small) <= set(big)
