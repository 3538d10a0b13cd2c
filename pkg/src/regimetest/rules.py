"""Treatment regimes as ordered per-stage decision rules.

A regime is written in a small rule language::

    stage1: if x12 >= 0.3 then 1 else 0
    stage2: if x12 >= 0.4 and x2 == 1 and r == 1 then 1 else 0

Stages are separated by newlines or ``;``.  Each stage holds clauses that are
tried in order; the first one whose condition holds supplies the treatment
code.  The last clause must be a catch-all (a bare code, an ``else`` branch or
``if true then ...``).

Conditions are evaluated column-wise on numpy arrays so that a whole cohort is
classified at once.  Missing values (NaN) make every comparison false except
``!=``, which mirrors IEEE semantics.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (DslSyntaxError, MissingCatchAll, RuleError,
                     TreatmentCodeError, UnknownVariable)

__all__ = [
    "Condition", "Compare", "And", "Or", "Not", "TRUE", "Stratum", "SmartDesign",
    "StageRule", "Regime", "NoSelection", "NO_SELECTION", "parse_regime",
    "parse_condition", "format_regime", "evaluate_rule", "consistency_indicator",
    "propensity_product",
]


# ---------------------------------------------------------------------------
# Condition trees
# ---------------------------------------------------------------------------

_COMPARATORS = {
    "<": np.less, "<=": np.less_equal, ">": np.greater,
    ">=": np.greater_equal, "==": np.equal, "!=": np.not_equal,
}


def _broadcast_len(env: Mapping[str, object]) -> int | None:
    for value in env.values():
        arr = np.asarray(value)
        if arr.ndim == 1:
            return arr.shape[0]
    return None


class Condition:
    """Base class of the boolean expression tree."""

    precedence = 4

    def evaluate(self, env: Mapping[str, object]) -> np.ndarray:
        raise NotImplementedError

    def variables(self) -> set[str]:
        raise NotImplementedError

    def to_text(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.to_text()


@dataclass(frozen=True)
class _True(Condition):
    precedence = 4

    def evaluate(self, env):
        size = _broadcast_len(env)
        return np.True_ if size is None else np.ones(size, dtype=bool)

    def variables(self):
        return set()

    def to_text(self):
        return "true"


TRUE = _True()


@dataclass(frozen=True)
class Compare(Condition):
    name: str
    op: str
    value: float
    precedence = 4

    def evaluate(self, env):
        if self.name not in env:
            raise UnknownVariable(self.name)
        column = np.asarray(env[self.name], dtype=float)
        with np.errstate(invalid="ignore"):
            return _COMPARATORS[self.op](column, self.value)

    def variables(self):
        return {self.name}

    def to_text(self):
        return f"{self.name} {self.op} {_format_number(self.value)}"


@dataclass(frozen=True)
class Not(Condition):
    item: Condition
    precedence = 3

    def evaluate(self, env):
        return np.logical_not(self.item.evaluate(env))

    def variables(self):
        return self.item.variables()

    def to_text(self):
        inner = self.item.to_text()
        if self.item.precedence < self.precedence:
            inner = f"({inner})"
        return f"not {inner}"


@dataclass(frozen=True)
class And(Condition):
    items: tuple
    precedence = 2

    def evaluate(self, env):
        out = self.items[0].evaluate(env)
        for item in self.items[1:]:
            out = np.logical_and(out, item.evaluate(env))
        return out

    def variables(self):
        return set().union(*(i.variables() for i in self.items))

    def to_text(self):
        return " and ".join(_wrap(i, self.precedence) for i in self.items)


@dataclass(frozen=True)
class Or(Condition):
    items: tuple
    precedence = 1

    def evaluate(self, env):
        out = self.items[0].evaluate(env)
        for item in self.items[1:]:
            out = np.logical_or(out, item.evaluate(env))
        return out

    def variables(self):
        return set().union(*(i.variables() for i in self.items))

    def to_text(self):
        return " or ".join(_wrap(i, self.precedence) for i in self.items)


def _wrap(item: Condition, parent_precedence: int) -> str:
    text = item.to_text()
    # Parenthesise children of equal precedence too, so the printed form
    # reproduces the same tree shape when parsed back.
    if item.precedence <= parent_precedence:
        return f"({text})"
    return text


def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stratum:
    """A feasible option subset at one stage, selected by a history condition."""

    name: str
    stage: int
    condition: Condition
    options: tuple

    def __post_init__(self):
        if len(self.options) == 0:
            raise RuleError(f"stratum {self.name!r} has no options")
        if len(set(self.options)) != len(self.options):
            raise RuleError(f"stratum {self.name!r} lists an option twice")


@dataclass(frozen=True)
class SmartDesign:
    """Stage count, option sets, stage-2+ strata and covariate stages.

    ``covariates`` maps each history column to the first stage at which it is
    known.  Response indicators are ordinary covariates (usually stage 2).
    Stage 1 has a single implicit stratum named ``"stage1"`` holding every
    stage-1 option.
    """

    K: int
    options: tuple                   # options[k-1] = sorted codes at stage k
    strata: tuple = ()               # strata for stages 2..K (flat tuple)
    covariates: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1 or len(self.options) != self.K:
            raise RuleError("options must be given for every stage")
        object.__setattr__(self, "options",
                           tuple(tuple(int(o) for o in opts) for opts in self.options))
        object.__setattr__(self, "covariates", dict(self.covariates))
        for name, stage in self.covariates.items():
            if not 1 <= stage <= self.K:
                raise RuleError(f"covariate {name} has stage {stage} outside 1..{self.K}")
            if name in self.reserved_names():
                raise RuleError(f"covariate name {name} clashes with a reserved name")
        names = set()
        for s in self.strata:
            if not 2 <= s.stage <= self.K:
                raise RuleError(f"stratum {s.name!r} has stage {s.stage} outside 2..{self.K}")
            if s.name in names or s.name == "stage1":
                raise RuleError(f"duplicate stratum name {s.name!r}")
            names.add(s.name)
            bad = set(s.options) - set(self.options[s.stage - 1])
            if bad:
                raise TreatmentCodeError(
                    f"stratum {s.name!r} uses codes {sorted(bad)} not offered at stage {s.stage}")
            for var in s.condition.variables():
                self.check_variable(var, s.stage)
        for k in range(2, self.K + 1):
            if not self.strata_at(k):
                raise RuleError(f"stage {k} has no strata")

    # -- variables -----------------------------------------------------------
    def reserved_names(self) -> set[str]:
        names = {f"a{k}" for k in range(1, self.K + 1)}
        names |= {f"t{k}" for k in range(2, self.K + 1)}
        names.add("kappa")
        return names

    def variable_stage(self, name: str) -> int:
        """First stage at which ``name`` may be used in a rule."""
        m = re.fullmatch(r"a(\d+)", name)
        if m and 1 <= int(m.group(1)) <= self.K:
            return int(m.group(1)) + 1
        m = re.fullmatch(r"t(\d+)", name)
        if m and 2 <= int(m.group(1)) <= self.K:
            return int(m.group(1))
        if name == "kappa":
            return 1
        if name in self.covariates:
            return self.covariates[name]
        raise UnknownVariable(name)

    def check_variable(self, name: str, stage: int) -> None:
        first = self.variable_stage(name)
        if first > stage:
            raise RuleError(
                f"variable {name} is only known from stage {first} and cannot be used at stage {stage}")

    # -- strata --------------------------------------------------------------
    def strata_at(self, k: int) -> list[Stratum]:
        if k == 1:
            return [Stratum("stage1", 1, TRUE, self.options[0])]
        return [s for s in self.strata if s.stage == k]

    def all_strata(self) -> list[Stratum]:
        out = []
        for k in range(1, self.K + 1):
            out.extend(self.strata_at(k))
        return out

    def stratum_by_name(self, name: str) -> Stratum:
        for s in self.all_strata():
            if s.name == name:
                return s
        raise RuleError(f"unknown stratum {name!r}")

    def stratum_index(self, k: int, env: Mapping[str, object], reached: np.ndarray) -> np.ndarray:
        """Index (within ``strata_at(k)``) of each subject's stratum, -1 if not reached.

        Raises :class:`RuleError` listing the first offending position when a
        reached history matches zero or several strata.
        """
        reached = np.asarray(reached, dtype=bool)
        strata = self.strata_at(k)
        hits = np.zeros((len(strata), reached.shape[0]), dtype=bool)
        for s_idx, s in enumerate(strata):
            hits[s_idx] = np.broadcast_to(s.condition.evaluate(env), reached.shape)
        count = hits.sum(axis=0)
        bad = reached & (count != 1)
        if bad.any():
            pos = int(np.flatnonzero(bad)[0])
            what = "no stratum" if count[pos] == 0 else "several strata"
            raise RuleError(f"stage {k} history at position {pos} matches {what}", )
        return np.where(reached, hits.argmax(axis=0), -1)


# ---------------------------------------------------------------------------
# Rules and regimes
# ---------------------------------------------------------------------------

class NoSelection:
    """Marker returned when a stage is never reached (the event came first)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoSelection"


NO_SELECTION = NoSelection()


@dataclass(frozen=True)
class StageRule:
    stage: int
    clauses: tuple  # of (Condition, int)

    def evaluate(self, env: Mapping[str, object]) -> np.ndarray:
        """Vectorised first-match evaluation; returns an int array."""
        size = _broadcast_len(env)
        shape = () if size is None else (size,)
        out = np.full(shape, -1, dtype=np.int64)
        undecided = np.ones(shape, dtype=bool)
        for cond, code in self.clauses:
            hit = np.broadcast_to(cond.evaluate(env), shape) & undecided
            out = np.where(hit, code, out)
            undecided = undecided & ~hit
            if not undecided.any():
                break
        return out

    def to_text(self) -> str:
        parts = []
        for cond, code in self.clauses:
            if cond is TRUE or isinstance(cond, _True):
                parts.append(str(code))
            else:
                parts.append(f"if {cond.to_text()} then {code}")
        return f"stage{self.stage}: " + "; ".join(parts)


@dataclass(frozen=True)
class Regime:
    stages: tuple  # of StageRule, one per stage
    label: str = ""

    @property
    def K(self) -> int:
        return len(self.stages)

    def codes(self, env: Mapping[str, object], kappa: np.ndarray) -> np.ndarray:
        """Treatment recommended at each stage, shape ``(K, n)``; -1 where unreached."""
        kappa = np.asarray(kappa)
        out = np.empty((self.K, kappa.shape[0]), dtype=np.int64)
        for k, rule in enumerate(self.stages, start=1):
            codes = np.broadcast_to(rule.evaluate(env), kappa.shape)
            out[k - 1] = np.where(kappa >= k, codes, -1)
        return out

    def to_text(self) -> str:
        return "\n".join(rule.to_text() for rule in self.stages)

    def __str__(self):
        return self.to_text()


def format_regime(regime: Regime) -> str:
    """Canonical source text; ``parse_regime(format_regime(r))`` rebuilds ``r``."""
    return regime.to_text()


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<cmp><=|>=|==|!=|<|>)
  | (?P<punct>[;:()])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)

_KEYWORDS = {"if", "then", "else", "and", "or", "not", "true", "stage"}


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        col = pos - line_start + 1
        if kind == "newline":
            tokens.append(_Token("sep", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            pass
        elif kind == "ident":
            low = value.lower()
            if low in _KEYWORDS:
                tokens.append(_Token(low, low, line, col))
            else:
                m_stage = re.fullmatch(r"stage(\d+)", low)
                if m_stage:
                    tokens.append(_Token("stage", low, line, col))
                    tokens.append(_Token("int", m_stage.group(1), line, col + 5))
                else:
                    tokens.append(_Token("ident", value, line, col))
        elif kind == "punct":
            tokens.append(_Token("sep" if value == ";" else value, value, line, col))
        else:
            tokens.append(_Token(kind, value, line, col))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, design: SmartDesign | None):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.design = design

    # helpers
    def peek(self, offset=0) -> _Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str | None = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            shown = tok.text if tok.kind != "eof" else "end of input"
            raise DslSyntaxError(f"expected {what or kind}, found {shown!r}", tok.line, tok.col)
        return self.next()

    def skip_separators(self):
        while self.peek().kind == "sep":
            self.next()

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        raise DslSyntaxError(message, tok.line, tok.col)

    # grammar
    def parse_regime(self) -> list[tuple[int, list, _Token]]:
        stages = []
        self.skip_separators()
        while self.peek().kind != "eof":
            stages.append(self.parse_stage())
            self.skip_separators()
        if not stages:
            self.error("empty regime text")
        return stages

    def parse_stage(self):
        head = self.expect("stage", "'stage'")
        number_tok = self.peek()
        if number_tok.kind == "number" and re.fullmatch(r"\d+", number_tok.text):
            self.next()
            stage = int(number_tok.text)
        else:
            stage = int(self.expect("int", "stage number").text)
        self.expect(":", "':'")
        clauses = list(self.parse_clause())
        while True:
            save = self.pos
            self.skip_separators()
            if self.peek().kind in ("if", "number"):
                clauses.extend(self.parse_clause())
            else:
                self.pos = save
                break
        return stage, clauses, head

    def parse_clause(self):
        tok = self.peek()
        if tok.kind == "if":
            self.next()
            cond = self.parse_or()
            self.expect("then", "'then'")
            code = self.parse_code()
            if self.peek().kind == "else":
                self.next()
                other = self.parse_code()
                return [(cond, code, tok), (TRUE, other, tok)]
            return [(cond, code, tok)]
        if tok.kind == "number":
            return [(TRUE, self.parse_code(), tok)]
        self.error(f"expected a clause ('if ...' or a treatment code), found {tok.text or 'end of input'!r}")

    def parse_code(self) -> int:
        tok = self.expect("number", "treatment code")
        if not re.fullmatch(r"\+?\d+", tok.text):
            self.error(f"treatment code must be a non-negative integer, found {tok.text!r}", tok)
        return int(tok.text)

    def parse_or(self) -> Condition:
        items = [self.parse_and()]
        while self.peek().kind == "or":
            self.next()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self) -> Condition:
        items = [self.parse_not()]
        while self.peek().kind == "and":
            self.next()
            items.append(self.parse_not())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_not(self) -> Condition:
        if self.peek().kind == "not":
            self.next()
            return Not(self.parse_not())
        return self.parse_atom()

    def parse_atom(self) -> Condition:
        tok = self.peek()
        if tok.kind == "(":
            self.next()
            inner = self.parse_or()
            self.expect(")", "')'")
            return inner
        if tok.kind == "true":
            self.next()
            return TRUE
        if tok.kind == "ident":
            self.next()
            op = self.expect("cmp", "comparison operator")
            num = self.expect("number", "number")
            value = float(num.text)
            if not math.isfinite(value):
                self.error("non-finite number", num)
            return Compare(tok.text, op.text, value)
        self.error(f"expected a condition, found {tok.text or 'end of input'!r}")


def parse_condition(text: str, design: SmartDesign | None = None, stage: int | None = None) -> Condition:
    """Parse a bare boolean expression (used for stratum definitions)."""
    parser = _Parser(text, design)
    cond = parser.parse_or()
    if parser.peek().kind != "eof":
        parser.error(f"unexpected {parser.peek().text!r} after condition")
    if design is not None:
        for var in cond.variables():
            if stage is None:
                design.variable_stage(var)
            else:
                design.check_variable(var, stage)
    return cond


def parse_regime(text: str, design: SmartDesign, label: str = "") -> Regime:
    """Parse rule source into a :class:`Regime` validated against ``design``."""
    parser = _Parser(text, design)
    raw_stages = parser.parse_regime()
    by_stage: dict[int, StageRule] = {}
    for stage, clauses, head in raw_stages:
        if not 1 <= stage <= design.K:
            raise DslSyntaxError(f"stage {stage} outside 1..{design.K}", head.line, head.col)
        if stage in by_stage:
            raise DslSyntaxError(f"stage {stage} defined twice", head.line, head.col)
        allowed = set(design.options[stage - 1])
        for cond, code, tok in clauses:
            for var in sorted(cond.variables()):
                design.check_variable(var, stage)
            if code not in allowed:
                raise TreatmentCodeError(
                    f"treatment code {code} is not an option at stage {stage} "
                    f"(line {tok.line}); allowed {sorted(allowed)}")
        if not isinstance(clauses[-1][0], _True):
            raise MissingCatchAll(f"stage {stage} rule has no catch-all clause")
        # Clauses after the first catch-all can never fire; keep them out so the
        # canonical text stays minimal.
        kept = []
        for cond, code, _ in clauses:
            kept.append((cond, code))
            if isinstance(cond, _True):
                break
        by_stage[stage] = StageRule(stage, tuple(kept))
    missing = [k for k in range(1, design.K + 1) if k not in by_stage]
    if missing:
        raise RuleError(f"regime has no rule for stage(s) {missing}")
    return Regime(tuple(by_stage[k] for k in range(1, design.K + 1)), label or text.strip())


# ---------------------------------------------------------------------------
# Single-subject evaluation
# ---------------------------------------------------------------------------

def evaluate_rule(regime: Regime, k: int, history: Mapping[str, object]):
    """Treatment chosen by ``regime`` at stage ``k`` for one history.

    Returns :data:`NO_SELECTION` when the history says the event (or
    censoring) happened before stage ``k``: either ``event_occurred`` is true
    or ``kappa`` is below ``k``.
    """
    if history.get("event_occurred", False):
        return NO_SELECTION
    kappa = history.get("kappa")
    if kappa is not None and not (isinstance(kappa, float) and math.isnan(kappa)) and kappa < k:
        return NO_SELECTION
    env = {name: value for name, value in history.items() if name != "event_occurred"}
    return int(regime.stages[k - 1].evaluate(env))


def _subject_codes(subject, regime: Regime) -> list:
    history = subject.history()
    return [evaluate_rule(regime, k, history) for k in range(1, subject.kappa + 1)]


def consistency_indicator(subject, regime: Regime, u: float) -> int:
    """1 when the treatments ``subject`` received by time ``u`` agree with ``regime``."""
    codes = _subject_codes(subject, regime)
    for k in range(1, subject.kappa + 1):
        if subject.decision_times[k - 1] <= u and subject.treatments[k - 1] != codes[k - 1]:
            return 0
    return 1


def propensity_product(subject, regime: Regime, u: float, prop) -> float:
    """Product of the probabilities of the regime's choices at stages reached by ``u``.

    ``prop`` must expose ``subject_probability(subject, k, option)``.
    """
    from .errors import PositivityViolation

    codes = _subject_codes(subject, regime)
    out = 1.0
    for k in range(1, subject.kappa + 1):
        if subject.decision_times[k - 1] <= u:
            p = float(prop.subject_probability(subject, k, codes[k - 1]))
            if p <= 0.0:
                raise PositivityViolation(
                    f"subject {subject.id}: probability of option {codes[k - 1]} at stage {k} is 0")
            out *= p
    return out
