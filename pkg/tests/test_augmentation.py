from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regimetest import (BasisSpec, ConfigError, PropensitySpec, SmartDesign, TestOptions, build_design_matrix,
                        fit_saturated, parse_regime, residualize, run_augmented_test, run_test)
from regimetest.simulation import (covariate_basis, embedded_regimes, generate_scenario,
                                   named_scenario, scenario_design)

from builders import cohort_from_subjects, embedded_two_stage_rules, random_two_stage_subjects, \
    single_stage_design, two_stage_design
from oracle import Subj


@pytest.fixture(scope="module")
def eight_regime_cohort():
    return generate_scenario(named_scenario("5", 400), 3)


class TestDesignMatrix:
    def test_score_only_dimension(self, eight_regime_cohort):
        c = eight_regime_cohort
        X = build_design_matrix(c, fit_saturated(c))
        assert X.shape == (c.n, 5)

    def test_basis_dimension(self, eight_regime_cohort):
        c = eight_regime_cohort
        basis = BasisSpec.from_dict(covariate_basis(c.design))
        assert basis.stage1 == ("x11", "x12")
        assert all(cols == ("x11", "x12", "x2") for cols in basis.later.values())
        X = build_design_matrix(c, fit_saturated(c), basis)
        assert X.shape == (c.n, 19)
        # stage-2 blocks vanish for subjects who never reached stage 2
        assert np.all(X[c.kappa == 1][:, 1:5] == 0)
        assert np.all(X[c.kappa == 1][:, 7:] == 0)

    def test_single_stage_two_arms(self):
        design = single_stage_design()
        c = cohort_from_subjects(design, [Subj(1 + i, 1, [i % 2]) for i in range(6)])
        assert build_design_matrix(c, fit_saturated(c)).shape == (6, 1)

    def test_basis_validation(self):
        design = scenario_design("eight")
        with pytest.raises(ConfigError, match="intercept"):
            BasisSpec(("1",)).validate(design)
        with pytest.raises(ConfigError, match="unknown stratum"):
            BasisSpec((), {"nope": ("x11",)}).validate(design)
        with pytest.raises(ConfigError):
            BasisSpec(("x2",)).validate(design)     # a stage-2 column at stage 1

    def test_basis_dict_round_trip(self):
        design = scenario_design("eight")
        basis = BasisSpec.from_dict(covariate_basis(design))
        again = BasisSpec.from_dict(basis.to_dict(design))
        assert again == basis
        with pytest.raises(ConfigError):
            BasisSpec.from_dict({"stage0": {}})


class TestResidualize:
    def test_hand_example(self):
        X = np.array([[1.0], [2.0], [3.0]])
        y = np.array([[1.0], [2.0], [4.0]])
        # coefficient (1+4+12)/(1+4+9) = 17/14
        want = [float(Fraction(v) - Fraction(17, 14) * x) for v, x in [(1, 1), (2, 2), (4, 3)]]
        assert np.allclose(residualize(y, X)[:, 0], want, atol=1e-14)

    def test_zero_design(self):
        iid = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(residualize(iid, np.zeros((4, 2))), iid)
        assert np.array_equal(residualize(iid, np.zeros((4, 0))), iid)

    def test_rank_deficient_matches_reduced(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(30, 2))
        Xdup = np.column_stack([X, X[:, 0] + X[:, 1]])
        y = rng.normal(size=(30, 2))
        assert np.allclose(residualize(y, X), residualize(y, Xdup), atol=1e-10)

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            residualize(np.zeros((3, 1)), np.zeros((4, 1)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 60), st.integers(1, 6), st.integers(1, 4))
def test_residuals_orthogonal_to_design(seed, n, p, d):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.exponential(size=p)
    y = rng.normal(size=(n, d))
    R = residualize(y, X)
    scale = np.abs(X).max() * np.abs(y).max() * n
    assert np.max(np.abs(X.T @ R)) < 1e-9 * scale
    # projecting twice changes nothing
    assert np.allclose(residualize(R, X), R, atol=1e-10 * max(1.0, np.abs(y).max()))


def _two_stage(seed, n):
    rng = np.random.default_rng(seed)
    design = two_stage_design()
    c = cohort_from_subjects(design, random_two_stage_subjects(rng, n))
    texts, _ = embedded_two_stage_rules()
    return c, [parse_regime(t, design) for t in texts]


def test_score_only_residualization_keeps_total():
    from regimetest.engine import compute_components
    c, regimes = _two_stage(6, 150)
    fit = fit_saturated(c)
    comps = compute_components(c, regimes, fit, float(np.quantile(c.u, 0.9)))
    X = build_design_matrix(c, fit)
    assert np.max(np.abs(X.sum(axis=0))) < 1e-9
    R = residualize(comps.iid, X)
    assert np.max(np.abs(R.sum(axis=0) - comps.iid.sum(axis=0))) < 1e-9


def test_zero_basis_columns_leave_statistic_unchanged():
    rng = np.random.default_rng(7)
    base = two_stage_design()
    design = SmartDesign(base.K, base.options, base.strata, {**base.covariates, "z": 1})
    subjects = random_two_stage_subjects(rng, 150)
    for s in subjects:
        s.cov["z"] = 0.0
    c = cohort_from_subjects(design, subjects)
    texts, _ = embedded_two_stage_rules()
    regimes = [parse_regime(t, design) for t in texts]
    plain = run_augmented_test(c, regimes, PropensitySpec())
    zero = run_augmented_test(c, regimes, PropensitySpec(),
                              BasisSpec(("z",), {"a1_0": ("z",), "a1_1": ("z",)}))
    assert zero.variant == "augmented" and plain.variant == "estimated-gamma"
    assert zero.statistic == pytest.approx(plain.statistic, rel=1e-10, abs=1e-12)


def test_augmented_needs_estimated_model():
    c, regimes = _two_stage(8, 40)
    with pytest.raises(ConfigError):
        run_augmented_test(c, regimes, PropensitySpec(mode="known"))
    with pytest.raises(ConfigError):
        run_test(c, regimes, TestOptions(propensity=PropensitySpec(mode="known"),
                                         variant="augmented"))


def test_augmented_variance_not_larger():
    c = generate_scenario(named_scenario("3a", 600), 11)
    regimes = [parse_regime(t, c.design) for t in embedded_regimes("competing")]
    from regimetest import covariance
    from regimetest.engine import compute_components
    fit = fit_saturated(c)
    comps = compute_components(c, regimes, fit, 400.0)
    base = np.trace(covariance(residualize(comps.iid, build_design_matrix(c, fit))))
    aug = np.trace(covariance(residualize(
        comps.iid, build_design_matrix(c, fit, BasisSpec.from_dict(covariate_basis(c.design))))))
    assert aug <= base + 1e-12
