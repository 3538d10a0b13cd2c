"""Observed SMART data held column-wise, with CSV input/output.

Every subject contributes the number of decisions reached (``kappa``), the
decision times (the first is always 0), the treatments received, covariates
(each tied to the stage at which it becomes known), the follow-up time ``u``
and the event indicator ``delta``.  Stage-``k`` fields are absent when
``kappa < k``; absent treatments are stored as -1, absent decision times as
``inf`` and absent covariates as NaN.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import CohortValidationError, EmptyGrid, RuleError
from .rules import SmartDesign

log = logging.getLogger(__name__)

__all__ = [
    "SubjectRecord", "Cohort", "load_cohort", "write_cohort", "cohort_to_csv",
    "event_grid", "truncation_time", "counting_views", "format_number",
]


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's observed data (a read-only view)."""

    id: str
    kappa: int
    decision_times: tuple    # length kappa, first entry 0.0
    treatments: tuple        # length kappa
    covariates: Mapping[str, float]
    u: float
    delta: int

    def history(self) -> dict:
        """Flat variable map usable by rule evaluation (all stages reached)."""
        env = {"kappa": float(self.kappa)}
        for k, a in enumerate(self.treatments, start=1):
            env[f"a{k}"] = float(a)
        for k, t in enumerate(self.decision_times[1:], start=2):
            env[f"t{k}"] = float(t)
        env.update({name: float(v) for name, v in self.covariates.items()})
        return env


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


class Cohort:
    """Validated, immutable, column-oriented collection of subjects.

    Parameters
    ----------
    design : SmartDesign
    ids : sequence of str
    kappa : int array, shape (n,)
    u : float array, shape (n,)
    delta : int array, shape (n,)
    treatments : int array, shape (K, n); -1 where the stage was not reached
    times : float array, shape (K, n); row 0 is zero, ``inf`` where unreached
    covariates : mapping of column name to float array (NaN where unknown)
    validate : bool
        Run the full set of checks (default).  Simulators that build data
        satisfying the invariants by construction may skip it.
    """

    def __init__(self, design: SmartDesign, ids, kappa, u, delta, treatments, times,
                 covariates: Mapping[str, Sequence[float]], validate: bool = True,
                 row_offset: int = 1):
        self.design = design
        self.ids = tuple(str(i) for i in ids)
        self.kappa = _readonly(np.asarray(kappa, dtype=np.int64))
        self.u = _readonly(np.asarray(u, dtype=float))
        self.delta = _readonly(np.asarray(delta, dtype=np.int64))
        self.treatments = _readonly(np.asarray(treatments, dtype=np.int64).reshape(design.K, -1))
        self.times = _readonly(np.asarray(times, dtype=float).reshape(design.K, -1))
        self.covariates = {name: _readonly(np.asarray(covariates[name], dtype=float))
                           for name in design.covariates}
        self._strata_cache: dict[int, np.ndarray] = {}
        self._env: dict | None = None
        self._row_offset = row_offset
        if validate:
            self.validate()

    # -- basic protocol -------------------------------------------------------
    @property
    def n(self) -> int:
        return self.kappa.shape[0]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[SubjectRecord]:
        return (self.subject(i) for i in range(self.n))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        if self.design != other.design or self.ids != other.ids:
            return False
        pairs = [(self.kappa, other.kappa), (self.u, other.u), (self.delta, other.delta),
                 (self.treatments, other.treatments), (self.times, other.times)]
        pairs += [(self.covariates[c], other.covariates[c]) for c in self.design.covariates]
        return all(np.array_equal(a, b, equal_nan=a.dtype.kind == "f") for a, b in pairs)

    __hash__ = None

    def subject(self, i: int) -> SubjectRecord:
        k = int(self.kappa[i])
        return SubjectRecord(
            id=self.ids[i], kappa=k,
            decision_times=tuple(float(t) for t in self.times[:k, i]),
            treatments=tuple(int(a) for a in self.treatments[:k, i]),
            covariates={name: float(col[i]) for name, col in self.covariates.items()
                        if self.design.covariates[name] <= k},
            u=float(self.u[i]), delta=int(self.delta[i]))

    def env(self) -> dict:
        """Column map for vectorised rule evaluation (NaN where unknown)."""
        if self._env is None:
            self._env = self._build_env()
        return dict(self._env)

    def _build_env(self) -> dict:
        env = {"kappa": _readonly(self.kappa.astype(float))}
        for k in range(1, self.design.K + 1):
            a = self.treatments[k - 1].astype(float)
            env[f"a{k}"] = np.where(self.treatments[k - 1] >= 0, a, np.nan)
            if k >= 2:
                t = self.times[k - 1]
                env[f"t{k}"] = np.where(np.isfinite(t), t, np.nan)
        for key in list(env):
            env[key] = _readonly(env[key])
        env.update(self.covariates)
        return env

    def stratum_index(self, k: int) -> np.ndarray:
        """Per-subject index into ``design.strata_at(k)``; -1 when stage k unreached."""
        if k not in self._strata_cache:
            idx = self.design.stratum_index(k, self.env(), self.kappa >= k)
            idx.setflags(write=False)
            self._strata_cache[k] = idx
        return self._strata_cache[k]

    def take(self, index) -> "Cohort":
        """Sub-cohort (or resampled cohort) of the given positions."""
        index = np.asarray(index)
        ids = [self.ids[i] for i in index]
        if len(set(ids)) != len(ids):
            counts: dict[str, int] = {}
            fresh = []
            for i in ids:
                counts[i] = counts.get(i, 0) + 1
                fresh.append(i if counts[i] == 1 else f"{i}#{counts[i]}")
            ids = fresh
        return Cohort(self.design, ids, self.kappa[index], self.u[index], self.delta[index],
                      self.treatments[:, index], self.times[:, index],
                      {c: v[index] for c, v in self.covariates.items()}, validate=False)

    # -- validation ----------------------------------------------------------
    def validate(self) -> None:
        d = self.design
        n = self.n
        row = lambda i: i + self._row_offset  # noqa: E731
        for name, arr in [("u", self.u), ("delta", self.delta)]:
            if arr.shape != (n,):
                raise CohortValidationError(f"column {name} has wrong length")
        seen: dict[str, int] = {}
        for i, sid in enumerate(self.ids):
            if sid in seen:
                raise CohortValidationError(
                    f"duplicate subject_id {sid!r} (first seen in row {row(seen[sid])})", row(i))
            seen[sid] = i
        bad = np.flatnonzero((self.kappa < 1) | (self.kappa > d.K))
        if bad.size:
            raise CohortValidationError(f"kappa must lie in 1..{d.K}", row(bad[0]))
        bad = np.flatnonzero(~np.isin(self.delta, (0, 1)))
        if bad.size:
            raise CohortValidationError("delta must be 0 or 1", row(bad[0]))
        bad = np.flatnonzero(~(np.isfinite(self.u) & (self.u > 0)))
        if bad.size:
            raise CohortValidationError("u must be a positive finite number", row(bad[0]))
        if np.any(self.times[0] != 0):
            raise CohortValidationError("first decision time must be 0",
                                        row(np.flatnonzero(self.times[0] != 0)[0]))
        prev = self.times[0]
        for k in range(1, d.K + 1):
            reached = self.kappa >= k
            a = self.treatments[k - 1]
            bad = np.flatnonzero(reached & ~np.isin(a, d.options[k - 1]))
            if bad.size:
                raise CohortValidationError(
                    f"a{k}={a[bad[0]]} is not an option at stage {k} {list(d.options[k - 1])}",
                    row(bad[0]))
            bad = np.flatnonzero(~reached & (a != -1))
            if bad.size:
                raise CohortValidationError(f"a{k} given although kappa < {k}", row(bad[0]))
            if k >= 2:
                t = self.times[k - 1]
                bad = np.flatnonzero(reached & ~np.isfinite(t))
                if bad.size:
                    raise CohortValidationError(f"t{k} is missing although kappa >= {k}", row(bad[0]))
                bad = np.flatnonzero(~reached & np.isfinite(t))
                if bad.size:
                    raise CohortValidationError(f"t{k} given although kappa < {k}", row(bad[0]))
                bad = np.flatnonzero(reached & ~(t > prev))
                if bad.size:
                    what = "t2 > 0" if k == 2 else f"t{k} > t{k - 1}"
                    raise CohortValidationError(f"decision times must increase ({what})", row(bad[0]))
                bad = np.flatnonzero(reached & (t > self.u))
                if bad.size:
                    raise CohortValidationError(
                        f"t{k} exceeds u (decision times must satisfy t_kappa <= u)", row(bad[0]))
                prev = np.where(reached, t, prev)
        for name, stage in d.covariates.items():
            col = self.covariates[name]
            bad = np.flatnonzero((self.kappa >= stage) & ~np.isfinite(col))
            if bad.size:
                raise CohortValidationError(f"covariate {name} is missing", row(bad[0]))
        for k in range(2, d.K + 1):
            try:
                idx = self.stratum_index(k)
            except RuleError as exc:
                raise CohortValidationError(str(exc)) from exc
            strata = d.strata_at(k)
            a = self.treatments[k - 1]
            for s_idx, s in enumerate(strata):
                bad = np.flatnonzero((idx == s_idx) & ~np.isin(a, s.options))
                if bad.size:
                    raise CohortValidationError(
                        f"a{k}={a[bad[0]]} is not feasible in stratum {s.name!r} {list(s.options)}",
                        row(bad[0]))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def format_number(x: float) -> str:
    """Shortest plain-decimal text that parses back to exactly ``x``."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return np.format_float_positional(x, unique=True, trim="-")


def _header(design: SmartDesign) -> list[str]:
    cols = ["subject_id", "kappa", "u", "delta"]
    cols += [f"a{k}" for k in range(1, design.K + 1)]
    cols += [f"t{k}" for k in range(2, design.K + 1)]
    cols += list(design.covariates)
    return cols


def cohort_to_csv(cohort: Cohort) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    d = cohort.design
    writer.writerow(_header(d))
    for i in range(cohort.n):
        k = int(cohort.kappa[i])
        row = [cohort.ids[i], k, format_number(cohort.u[i]), int(cohort.delta[i])]
        row += [int(cohort.treatments[s, i]) if s < k else "" for s in range(d.K)]
        row += [format_number(cohort.times[s, i]) if s < k else "" for s in range(1, d.K)]
        for name in d.covariates:
            v = cohort.covariates[name][i]
            row.append("" if not math.isfinite(v) else format_number(v))
        writer.writerow(row)
    return buf.getvalue()


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_cohort(cohort: Cohort, path: str | os.PathLike) -> None:
    atomic_write_text(path, cohort_to_csv(cohort))


def _parse_field(text: str, kind, row: int, column: str):
    try:
        if kind is int:
            value = float(text)
            if not value.is_integer():
                raise ValueError
            return int(value)
        value = float(text)
        if not math.isfinite(value):
            raise ValueError
        return value
    except ValueError:
        what = "an integer" if kind is int else "a finite number"
        raise CohortValidationError(f"column {column}: {text!r} is not {what}", row) from None


def load_cohort(path: str | os.PathLike, design: SmartDesign) -> Cohort:
    """Read and validate a cohort CSV against ``design``.

    Error messages name the data row (1 = first line after the header).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return read_cohort_csv(fh, design)


def read_cohort_csv(fh, design: SmartDesign) -> Cohort:
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CohortValidationError("file is empty (a header line is required)") from None
    required = _header(design)
    missing = [c for c in required if c not in header]
    if missing:
        raise CohortValidationError(f"missing column(s): {', '.join(missing)}")
    extra = [c for c in header if c not in required]
    if extra:
        log.warning("ignoring undeclared column(s): %s", ", ".join(extra))
    pos = {c: header.index(c) for c in required}
    K = design.K
    ids, kappa, u, delta = [], [], [], []
    treatments = [[] for _ in range(K)]
    times = [[] for _ in range(K)]
    covs = {c: [] for c in design.covariates}
    for r, fields in enumerate(reader, start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise CohortValidationError(
                f"expected {len(header)} fields, found {len(fields)}", r)
        get = lambda c: fields[pos[c]].strip()  # noqa: E731
        sid = get("subject_id")
        if not sid:
            raise CohortValidationError("subject_id is empty", r)
        k = _parse_field(get("kappa"), int, r, "kappa")
        if not 1 <= k <= K:
            raise CohortValidationError(f"kappa must lie in 1..{K}", r)
        ids.append(sid)
        kappa.append(k)
        u.append(_parse_field(get("u"), float, r, "u"))
        delta.append(_parse_field(get("delta"), int, r, "delta"))
        for s in range(1, K + 1):
            text = get(f"a{s}")
            if s <= k:
                if not text:
                    raise CohortValidationError(f"a{s} is empty although kappa >= {s}", r)
                treatments[s - 1].append(_parse_field(text, int, r, f"a{s}"))
            else:
                if text:
                    raise CohortValidationError(f"a{s} must be empty when kappa < {s}", r)
                treatments[s - 1].append(-1)
            if s == 1:
                times[0].append(0.0)
                continue
            text = get(f"t{s}")
            if s <= k:
                if not text:
                    raise CohortValidationError(f"t{s} is empty although kappa >= {s}", r)
                times[s - 1].append(_parse_field(text, float, r, f"t{s}"))
            else:
                if text:
                    raise CohortValidationError(f"t{s} must be empty when kappa < {s}", r)
                times[s - 1].append(math.inf)
        for name, stage in design.covariates.items():
            text = get(name)
            if not text:
                if stage <= k:
                    raise CohortValidationError(f"covariate {name} is missing", r)
                covs[name].append(math.nan)
            else:
                covs[name].append(_parse_field(text, float, r, name))
    if not ids:
        raise CohortValidationError("file has no data rows")
    return Cohort(design, ids, kappa, u, delta, treatments, times, covs, validate=True)


# ---------------------------------------------------------------------------
# Time grid and counting processes
# ---------------------------------------------------------------------------

def truncation_time(cohort: Cohort, at_risk_fraction: float = 0.02) -> float:
    """Smallest observed time at which at most ``ceil(f * n)`` subjects remain at risk."""
    if not 0.0 <= at_risk_fraction < 1.0:
        raise ValueError("at_risk_fraction must lie in [0, 1)")
    limit = math.ceil(at_risk_fraction * cohort.n)
    times = np.sort(cohort.u)
    # at risk at times[m] counts subjects with u >= times[m]
    at_risk = cohort.n - np.searchsorted(times, times, side="left")
    ok = np.flatnonzero(at_risk <= limit)
    return float(times[ok[0]]) if ok.size else float(times[-1])


def event_grid(cohort: Cohort, L: float) -> np.ndarray:
    """Distinct event times not exceeding ``L``, ascending."""
    if not L > 0:
        raise ValueError("L must be positive")
    grid = np.unique(cohort.u[(cohort.delta == 1) & (cohort.u <= L)])
    if grid.size == 0:
        raise EmptyGrid(f"no events at or before L={L}")
    return grid


def counting_views(subject: SubjectRecord, u: float) -> tuple[int, int]:
    """``(dN(u), Y(u))`` for one subject at grid time ``u``."""
    dn = int(subject.delta == 1 and subject.u == u)
    y = int(subject.u >= u)
    return dn, y
