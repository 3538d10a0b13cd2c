"""Projection of the influence terms onto propensity scores and covariate bases.

Estimating the treatment probabilities, and optionally adding functions of
the history, removes from each influence term its least-squares projection
on those (mean-zero) columns.  The residuals give a smaller covariance and
hence a more powerful test.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .cohort import Cohort
from .errors import ConfigError
from .propensity import FittedPropensity
from .rules import SmartDesign

log = logging.getLogger(__name__)

__all__ = ["BasisSpec", "build_design_matrix", "residualize", "run_augmented_test"]


@dataclass(frozen=True)
class BasisSpec:
    """Covariate columns multiplying each stratum's score block.

    ``stage1`` lists stage-1 columns; ``later`` maps stratum names (stage 2
    and beyond) to their column lists.  No intercept entries: the intercept
    is already represented by the score itself.
    """

    stage1: tuple = ()
    later: Mapping[str, tuple] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.stage1 and not any(self.later.values())

    @classmethod
    def from_dict(cls, data: Mapping | None) -> "BasisSpec":
        if not data:
            return cls()
        if not isinstance(data, Mapping):
            raise ConfigError("basis must be an object")
        stage1 = data.get("stage1", [])
        later: dict[str, tuple] = {}
        for key, value in data.items():
            if key == "stage1":
                continue
            if not key.startswith("stage") or not key[5:].isdigit() or int(key[5:]) < 2:
                raise ConfigError(f"basis: unknown key {key!r}")
            if not isinstance(value, Mapping):
                raise ConfigError(f"basis.{key} must map stratum names to column lists")
            for name, cols in value.items():
                later[str(name)] = tuple(str(c) for c in cols)
        if not isinstance(stage1, (list, tuple)):
            raise ConfigError("basis.stage1 must be a list of column names")
        return cls(tuple(str(c) for c in stage1), later)

    def to_dict(self, design: SmartDesign | None = None) -> dict:
        out: dict = {}
        if self.stage1:
            out["stage1"] = list(self.stage1)
        for name, cols in self.later.items():
            stage = design.stratum_by_name(name).stage if design is not None else 2
            out.setdefault(f"stage{stage}", {})[name] = list(cols)
        return out

    def columns_for(self, stratum_name: str) -> tuple:
        if stratum_name == "stage1":
            return self.stage1
        return self.later.get(stratum_name, ())

    def validate(self, design: SmartDesign) -> None:
        for c in self.stage1:
            _check_column(design, c, 1, "stage1")
        for name, cols in self.later.items():
            try:
                stratum = design.stratum_by_name(name)
            except Exception:
                raise ConfigError(f"basis refers to unknown stratum {name!r}") from None
            if stratum.stage == 1:
                raise ConfigError("stage-1 basis columns go under 'stage1'")
            for c in cols:
                _check_column(design, c, stratum.stage, name)


def _check_column(design: SmartDesign, column: str, stage: int, where: str) -> None:
    if column == "1":
        raise ConfigError(f"basis {where}: intercept entries are not allowed")
    try:
        design.check_variable(column, stage)
    except Exception as exc:
        raise ConfigError(f"basis {where}: {exc}") from exc


def build_design_matrix(cohort: Cohort, fitted: FittedPropensity,
                        basis: BasisSpec | None = None) -> np.ndarray:
    """Regression design: the score columns, then score-times-basis columns.

    Each stratum contributes ``(m-1) * p`` score columns and
    ``(m-1) * b`` basis columns, where ``m`` is its option count, ``p`` its
    feature count and ``b`` its basis length.  Rows of subjects outside the
    stratum are zero in that stratum's columns.
    """
    basis = basis or BasisSpec()
    basis.validate(cohort.design)
    blocks = fitted.score_blocks(cohort)
    fitted_models = [m for m in fitted.models if m.gamma is not None]
    env = cohort.env()
    score_cols = []
    basis_cols = []
    for (resid, H), model in zip(blocks, fitted_models):
        score_cols.append((resid[:, :, None] * H[:, None, :]).reshape(cohort.n, -1))
        cols = basis.columns_for(model.stratum.name)
        if cols:
            B = np.column_stack([np.nan_to_num(np.asarray(env[c], dtype=float)) for c in cols])
            basis_cols.append((resid[:, :, None] * B[:, None, :]).reshape(cohort.n, -1))
    if not fitted_models and not basis.empty:
        log.warning("basis columns ignored: the propensity model has no estimated parameters")
    parts = score_cols + basis_cols
    if not parts:
        return np.zeros((cohort.n, 0))
    return np.concatenate(parts, axis=1)


def residualize(iid: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Residuals of regressing each column of ``iid`` on ``X`` through the origin.

    The normal equations are solved with a pseudo-inverse of ``X'X`` so that
    rank-deficient designs are handled; residuals do not depend on which
    generalized inverse is used.
    """
    iid = np.asarray(iid, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != iid.shape[0]:
        raise ValueError("design matrix must have one row per subject")
    if X.shape[1] == 0 or not np.any(X):
        return iid.copy()
    XtX = X.T @ X
    coef = np.linalg.pinv(XtX, rcond=1e-12, hermitian=True) @ (X.T @ iid)
    resid = iid - X @ coef
    # one refinement pass tightens orthogonality when X is ill-conditioned
    coef2 = np.linalg.pinv(XtX, rcond=1e-12, hermitian=True) @ (X.T @ resid)
    return resid - X @ coef2


def run_augmented_test(cohort: Cohort, regimes, propensity, basis: BasisSpec | None = None,
                       options=None):
    """Test with estimated probabilities and (optional) covariate augmentation."""
    from .engine import TestOptions, run_test

    options = options or TestOptions()
    if propensity.mode == "known":
        raise ConfigError("the augmented test needs an estimated propensity model "
                          "(saturated or logistic)")
    opts = options.replace(propensity=propensity, basis=basis or BasisSpec(), variant="auto")
    return run_test(cohort, regimes, opts)
