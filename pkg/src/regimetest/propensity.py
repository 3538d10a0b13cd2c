"""Treatment-assignment probability models.

Within every stratum (the feasible option subset at a stage) the probability
of each option is a multinomial logit with the first listed option as the
reference::

    P(A = o_j | h) = exp(g_j . h) / (1 + sum_l exp(g_l . h)),   j >= 1
    P(A = o_0 | h) = 1 / (1 + sum_l exp(g_l . h))

where ``h`` is the stratum's feature vector.  With two options this is
ordinary logistic regression for the second option.  Three modes exist:

* ``known``: fixed probabilities, no parameters;
* ``saturated``: intercept only, fitted in closed form from stratum counts;
* ``logistic``: declared feature columns, fitted by damped Newton steps.

The score vector of a subject stacks, stratum by stratum, the blocks
``I(in stratum) * (I(A = o_j) - P(A = o_j | h)) * h``.  Blocks are zero for
strata the subject is not in, including strata of stages never reached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cohort import Cohort
from .errors import (ConfigError, DegenerateStratum, EmptyStratum, NonConvergence,
                     PositivityViolation, SeparationDetected)
from .rules import SmartDesign, Stratum

__all__ = [
    "PropensitySpec", "StratumModel", "FittedPropensity", "fit_propensity",
    "fit_saturated", "fit_logistic", "known_propensity", "score_vector",
    "NEWTON_TOL", "MAX_NEWTON_ITER", "MAX_HALVINGS", "SEPARATION_BOUND",
]

NEWTON_TOL = 1e-8
MAX_NEWTON_ITER = 100
MAX_HALVINGS = 30
SEPARATION_BOUND = 15.0
INTERCEPT = "1"


@dataclass(frozen=True)
class PropensitySpec:
    """How treatment probabilities are obtained.

    ``values`` (known mode) holds one entry per stratum in design order
    (``stage1`` first): a list of probabilities aligned with the stratum's
    options.  ``None`` entries, or ``values=None``, mean equal probabilities.
    ``stage_formulas`` (logistic mode) maps ``"1"`` to a feature list and
    ``"k"`` (k >= 2) either to one feature list for every stratum at that
    stage or to a ``{stratum_name: features}`` mapping.  ``"1"`` inside a
    feature list is the intercept.  Unlisted strata get an intercept only.
    """

    mode: str = "saturated"
    values: tuple | None = None
    stage_formulas: Mapping | None = None

    def __post_init__(self):
        if self.mode not in ("known", "saturated", "logistic"):
            raise ConfigError(f"propensity.mode must be known, saturated or logistic, not {self.mode!r}")

    # -- JSON ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, data: Mapping) -> "PropensitySpec":
        if not isinstance(data, Mapping):
            raise ConfigError("propensity must be an object")
        unknown = set(data) - {"mode", "values", "stage_formulas"}
        if unknown:
            raise ConfigError(f"propensity: unknown key(s) {sorted(unknown)}")
        mode = data.get("mode", "saturated")
        values = data.get("values")
        if values is not None:
            if not isinstance(values, list):
                raise ConfigError("propensity.values must be a list (one entry per stratum)")
            values = tuple(None if v is None else tuple(float(x) for x in v) for v in values)
        formulas = data.get("stage_formulas")
        if formulas is not None and not isinstance(formulas, Mapping):
            raise ConfigError("propensity.stage_formulas must be an object")
        return cls(mode=mode, values=values, stage_formulas=formulas)

    def to_dict(self) -> dict:
        out: dict = {"mode": self.mode}
        if self.values is not None:
            out["values"] = [None if v is None else list(v) for v in self.values]
        if self.stage_formulas is not None:
            out["stage_formulas"] = _plain(self.stage_formulas)
        return out

    def features_for(self, design: SmartDesign, stratum: Stratum) -> tuple:
        if self.mode != "logistic" or not self.stage_formulas:
            return (INTERCEPT,)
        entry = self.stage_formulas.get(str(stratum.stage))
        if entry is None:
            return (INTERCEPT,)
        if isinstance(entry, Mapping):
            entry = entry.get(stratum.name)
            if entry is None:
                return (INTERCEPT,)
        return tuple(str(f) for f in entry)

    def validate(self, design: SmartDesign) -> None:
        strata = design.all_strata()
        if self.mode == "known" and self.values is not None:
            if len(self.values) != len(strata):
                raise ConfigError(
                    f"propensity.values needs {len(strata)} entries (one per stratum: "
                    f"{[s.name for s in strata]}), got {len(self.values)}")
            for s, vals in zip(strata, self.values):
                if vals is None:
                    continue
                if len(vals) != len(s.options):
                    raise ConfigError(f"propensity.values for stratum {s.name!r} needs "
                                      f"{len(s.options)} probabilities")
                if any(v < 0 for v in vals) or abs(sum(vals) - 1.0) > 1e-9:
                    raise ConfigError(f"propensity.values for stratum {s.name!r} must be "
                                      "nonnegative and sum to 1")
        if self.mode == "logistic" and self.stage_formulas:
            names = {s.name for s in strata}
            for key, entry in self.stage_formulas.items():
                if not str(key).isdigit() or not 1 <= int(key) <= design.K:
                    raise ConfigError(f"propensity.stage_formulas: bad stage key {key!r}")
                if isinstance(entry, Mapping):
                    for sname in entry:
                        if sname not in names:
                            raise ConfigError(f"propensity.stage_formulas: unknown stratum {sname!r}")
            for s in strata:
                feats = self.features_for(design, s)
                if len(set(feats)) != len(feats) or not feats:
                    raise ConfigError(f"features for stratum {s.name!r} must be distinct and nonempty")
                for f in feats:
                    if f != INTERCEPT:
                        try:
                            design.check_variable(f, s.stage)
                        except Exception as exc:
                            raise ConfigError(f"propensity feature for stratum {s.name!r}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# Per-stratum model
# ---------------------------------------------------------------------------

def _softmax_ref(eta: np.ndarray) -> np.ndarray:
    """Probabilities for linear predictors ``eta`` (n, m-1) with a zero reference column."""
    full = np.concatenate([np.zeros((eta.shape[0], 1)), eta], axis=1)
    full -= full.max(axis=1, keepdims=True)
    np.exp(full, out=full)
    full /= full.sum(axis=1, keepdims=True)
    return full


@dataclass
class StratumModel:
    stratum: Stratum
    features: tuple
    gamma: np.ndarray | None = None       # (m-1, p) for fitted modes
    fixed: np.ndarray | None = None       # (m,) for known mode

    @property
    def n_params(self) -> int:
        return 0 if self.gamma is None else self.gamma.size

    def feature_matrix(self, cohort: Cohort) -> np.ndarray:
        cols = []
        for f in self.features:
            if f == INTERCEPT:
                cols.append(np.ones(cohort.n))
            else:
                cols.append(np.asarray(cohort.env()[f], dtype=float))
        return np.column_stack(cols) if cols else np.ones((cohort.n, 1))

    def probabilities(self, H: np.ndarray) -> np.ndarray:
        """Option probabilities, shape ``(n, m)`` in stratum option order."""
        if self.fixed is not None:
            return np.broadcast_to(self.fixed, (H.shape[0], self.fixed.size))
        with np.errstate(invalid="ignore"):
            eta = H @ self.gamma.T
        return _softmax_ref(np.nan_to_num(eta))


def _option_onehot(a: np.ndarray, options: Sequence[int]) -> np.ndarray:
    return (a[:, None] == np.asarray(options)[None, :]).astype(float)


# ---------------------------------------------------------------------------
# Fitted model
# ---------------------------------------------------------------------------

@dataclass
class FittedPropensity:
    """Treatment-probability model with parameters fixed.

    ``models`` follows ``design.all_strata()`` order.  ``gamma_hat`` is the
    concatenation of each stratum's ``(m-1) x p`` parameter matrix
    (row-major).
    """

    design: SmartDesign
    mode: str
    models: list
    iterations: dict = field(default_factory=dict)

    @property
    def score_dim(self) -> int:
        return sum(m.n_params for m in self.models)

    @property
    def gamma_hat(self) -> np.ndarray:
        parts = [m.gamma.ravel() for m in self.models if m.gamma is not None]
        return np.concatenate(parts) if parts else np.zeros(0)

    def _stage_models(self, k: int):
        return [(i, m) for i, m in enumerate(self.models) if m.stratum.stage == k]

    def option_probability(self, cohort: Cohort, k: int, codes: np.ndarray) -> np.ndarray:
        """P(A_k = codes[i] | H_k) for each subject; NaN where stage ``k`` is unreached.

        Codes outside the subject's stratum get probability 0.
        """
        codes = np.asarray(codes)
        out = np.full(cohort.n, np.nan)
        sidx = cohort.stratum_index(k)
        for local, (_, model) in enumerate(self._stage_models(k)):
            member = sidx == local
            if not member.any():
                continue
            H = model.feature_matrix(cohort)[member]
            P = model.probabilities(H)
            onehot = _option_onehot(codes[member], model.stratum.options)
            out[member] = (P * onehot).sum(axis=1)
        return out

    def observed_probability(self, cohort: Cohort, k: int) -> np.ndarray:
        return self.option_probability(cohort, k, cohort.treatments[k - 1])

    def subject_probability(self, subject, k: int, option: int) -> float:
        """Scalar probability for one :class:`SubjectRecord`."""
        history = subject.history()
        for s_local, (_, model) in enumerate(self._stage_models(k)):
            if bool(model.stratum.condition.evaluate(history)):
                if option not in model.stratum.options:
                    return 0.0
                h = np.array([[1.0 if f == INTERCEPT else history[f] for f in model.features]])
                P = model.probabilities(h)[0]
                return float(P[model.stratum.options.index(option)])
        raise PositivityViolation(f"subject {subject.id}: no stratum matches at stage {k}")

    def score_blocks(self, cohort: Cohort) -> list:
        """Per stratum: ``(residuals (n, m-1), features (n, p))``.

        Residuals are ``I(A = o_j) - P(A = o_j | h)`` for members of the
        stratum and zero for everyone else.  Known-mode strata are skipped.
        """
        blocks = []
        for model in self.models:
            if model.gamma is None:
                continue
            k = model.stratum.stage
            local = [m for _, m in self._stage_models(k)].index(model)
            member = cohort.stratum_index(k) == local
            H = model.feature_matrix(cohort)
            H = np.where(member[:, None], H, 0.0)
            P = model.probabilities(H)
            Y = _option_onehot(cohort.treatments[k - 1], model.stratum.options)
            resid = np.where(member[:, None], Y[:, 1:] - P[:, 1:], 0.0)
            blocks.append((resid, H))
        return blocks

    def score_matrix(self, cohort: Cohort) -> np.ndarray:
        """Per-subject score vectors, shape ``(n, score_dim)``."""
        cols = []
        for resid, H in self.score_blocks(cohort):
            # row-major over (option, feature) to match gamma_hat
            cols.append((resid[:, :, None] * H[:, None, :]).reshape(cohort.n, -1))
        return np.concatenate(cols, axis=1) if cols else np.zeros((cohort.n, 0))

    def loglik(self, cohort: Cohort) -> float:
        total = 0.0
        for k in range(1, self.design.K + 1):
            reached = cohort.kappa >= k
            p = self.observed_probability(cohort, k)[reached]
            total += float(np.log(p).sum())
        return total

    def describe(self) -> dict:
        out = {"mode": self.mode, "strata": []}
        for m in self.models:
            entry = {"name": m.stratum.name, "stage": m.stratum.stage,
                     "options": list(m.stratum.options), "features": list(m.features)}
            if m.gamma is not None:
                entry["gamma"] = m.gamma.tolist()
            if m.fixed is not None:
                entry["probabilities"] = m.fixed.tolist()
            out["strata"].append(entry)
        return out


def score_vector(subject_index: int, cohort: Cohort, fitted: FittedPropensity) -> np.ndarray:
    """Score vector of one subject (row ``subject_index`` of the score matrix)."""
    return fitted.score_matrix(cohort)[subject_index]


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def known_propensity(design: SmartDesign, spec: PropensitySpec | None = None) -> FittedPropensity:
    spec = spec or PropensitySpec(mode="known")
    spec.validate(design)
    models = []
    for i, s in enumerate(design.all_strata()):
        vals = None if spec.values is None else spec.values[i]
        if vals is None:
            vals = np.full(len(s.options), 1.0 / len(s.options))
        models.append(StratumModel(s, (INTERCEPT,), fixed=np.asarray(vals, dtype=float)))
    return FittedPropensity(design, "known", models)


def _members(cohort: Cohort, stratum: Stratum, local: int) -> np.ndarray:
    return cohort.stratum_index(stratum.stage) == local


def _stage_local_index(design: SmartDesign, stratum: Stratum) -> int:
    return design.strata_at(stratum.stage).index(stratum)


def fit_saturated(cohort: Cohort, spec: PropensitySpec | None = None) -> FittedPropensity:
    """Stratum sample proportions (closed-form ML of the intercept-only model)."""
    design = cohort.design
    models = []
    for s in design.all_strata():
        member = _members(cohort, s, _stage_local_index(design, s))
        a = cohort.treatments[s.stage - 1][member]
        if a.size == 0:
            raise EmptyStratum(f"stratum {s.name!r} has no subjects")
        counts = np.array([(a == o).sum() for o in s.options], dtype=float)
        if np.any(counts == 0):
            empty = [o for o, c in zip(s.options, counts) if c == 0]
            raise DegenerateStratum(
                f"stratum {s.name!r}: no subject received option(s) {empty}")
        gamma = np.log(counts[1:] / counts[0])[:, None]
        models.append(StratumModel(s, (INTERCEPT,), gamma=gamma))
    return FittedPropensity(design, "saturated", models)


def _fit_stratum_newton(H: np.ndarray, Y: np.ndarray, name: str,
                        trace: list | None = None) -> tuple[np.ndarray, int]:
    """Maximise the multinomial-logit loglikelihood for one stratum.

    ``H`` is (n, p) features and ``Y`` (n, m) one-hot responses.  Returns the
    (m-1, p) parameter matrix and the number of Newton iterations used.  When
    ``trace`` is a list, the loglikelihood after every accepted step is
    appended to it.
    """
    n, p = H.shape
    m = Y.shape[1]
    q = (m - 1) * p
    if np.linalg.matrix_rank(H) < p:
        raise DegenerateStratum(f"stratum {name!r}: feature matrix is rank deficient")
    counts = Y.sum(axis=0)
    if np.any(counts == 0):
        raise SeparationDetected(f"stratum {name!r}: an option was never received")

    def evaluate(theta):
        G = theta.reshape(m - 1, p)
        eta = H @ G.T
        full = np.concatenate([np.zeros((n, 1)), eta], axis=1)
        mx = full.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(full - mx).sum(axis=1))
        ll = float((Y * full).sum() - lse.sum())
        P = np.exp(full - lse[:, None])
        return ll, P

    def gradient(P):
        R = Y[:, 1:] - P[:, 1:]
        return (R.T @ H).ravel()

    def hessian(P):
        Pm = P[:, 1:]
        info = np.zeros((q, q))
        for j in range(m - 1):
            for l in range(m - 1):
                w = Pm[:, j] * ((j == l) - Pm[:, l])
                info[j * p:(j + 1) * p, l * p:(l + 1) * p] = (H * w[:, None]).T @ H
        return info

    theta = np.zeros(q)
    ll, P = evaluate(theta)
    if trace is not None:
        trace.append(ll)
    for it in range(MAX_NEWTON_ITER + 1):
        g = gradient(P)
        if np.max(np.abs(g)) < NEWTON_TOL:
            if np.max(np.abs(theta)) > SEPARATION_BOUND:
                raise SeparationDetected(f"stratum {name!r}: |gamma| exceeds {SEPARATION_BOUND}")
            return theta.reshape(m - 1, p), it
        if it == MAX_NEWTON_ITER:
            break
        info = hessian(P)
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, g, rcond=None)[0]
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + scale * step
            ll_new, P_new = evaluate(cand)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            scale *= 0.5
        else:
            raise NonConvergence(f"stratum {name!r}: step halving failed to increase the likelihood")
        theta, ll, P = cand, ll_new, P_new
        if trace is not None:
            trace.append(ll)
        if np.max(np.abs(theta)) > SEPARATION_BOUND:
            raise SeparationDetected(
                f"stratum {name!r}: parameter magnitude exceeds {SEPARATION_BOUND} (monotone likelihood)")
    raise NonConvergence(f"stratum {name!r}: no convergence within {MAX_NEWTON_ITER} Newton iterations")


def fit_logistic(cohort: Cohort, spec: PropensitySpec) -> FittedPropensity:
    """Maximum-likelihood fit of per-stratum logistic (multinomial logit) models."""
    design = cohort.design
    spec.validate(design)
    models, iterations = [], {}
    for s in design.all_strata():
        feats = spec.features_for(design, s)
        model = StratumModel(s, feats)
        member = _members(cohort, s, _stage_local_index(design, s))
        if not member.any():
            raise EmptyStratum(f"stratum {s.name!r} has no subjects")
        H = model.feature_matrix(cohort)[member]
        Y = _option_onehot(cohort.treatments[s.stage - 1][member], s.options)
        gamma, its = _fit_stratum_newton(H, Y, s.name)
        model.gamma = gamma
        models.append(model)
        iterations[s.name] = its
    return FittedPropensity(design, "logistic", models, iterations)


def fit_propensity(cohort: Cohort, spec: PropensitySpec) -> FittedPropensity:
    spec.validate(cohort.design)
    if spec.mode == "known":
        return known_propensity(cohort.design, spec)
    if spec.mode == "saturated":
        return fit_saturated(cohort, spec)
    return fit_logistic(cohort, spec)
