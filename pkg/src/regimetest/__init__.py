"""Weighted logrank tests for comparing survival across multistage treatment regimes."""

from .errors import (AllZeroMatrix, CohortValidationError, ConfigError, DataError,
                     DegenerateStratum, DslSyntaxError, EmptyGrid, EmptyStratum,
                     MissingCatchAll, NonConvergence, NumericalError, PositivityViolation,
                     RegimeTestError, RuleError, SeparationDetected, SingularParameterization,
                     TreatmentCodeError, UnknownVariable)
from .rules import (NO_SELECTION, Regime, SmartDesign, StageRule, Stratum,
                    consistency_indicator, evaluate_rule, format_regime, parse_condition,
                    parse_regime, propensity_product)
from .cohort import (Cohort, SubjectRecord, counting_views, event_grid, load_cohort,
                     truncation_time, write_cohort)
from .propensity import (FittedPropensity, PropensitySpec, fit_logistic, fit_propensity,
                         fit_saturated, known_propensity, score_vector)
from .weights import WeightTable, build_weights, omega
from .numerics import chi2_sf, pinv_rank
from .augmentation import BasisSpec, build_design_matrix, residualize, run_augmented_test
from .correction import corrected_covariance, g_terms
from .engine import (SurvivalCurve, TestOptions, TestResult, baseline_hazard, covariance,
                     iid_terms, qhat, regime_cumhaz, run_test, score_statistic)

__version__ = "0.1.0"
