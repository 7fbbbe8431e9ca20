"""Cascade math-answer equivalence checking and the {0,1} reward it backs.

Four stages, strictest first:

 1. normalized string equality,
 2. exact rational/structural equality of the parsed answers,
 3. numeric comparison of float views with tolerance, after reconciling
    percent, degree and unit modifiers,
 4. short opaque-string fallback.

The first stage that can decide wins.  ``not_equivalent`` is only ever
emitted when both sides parsed numerically and every reconciliation failed;
everything else that cannot be decided is ``unverifiable``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

EQUIVALENT = "equivalent"
NOT_EQUIVALENT = "not_equivalent"
UNVERIFIABLE = "unverifiable"

REL_TOL = 1e-4
ABS_TOL = 1e-9
OPAQUE_MAX_LEN = 20

# Recognized trailing unit words, longest first so "min" beats "m".
_UNITS = ("min", "cm", "mm", "km", "kg", "m", "g", "s", "h")
_UNIT_RE = re.compile(r"(?<![a-zA-Z])(%s)$" % "|".join(_UNITS), re.IGNORECASE)
_DEGREE_RE = re.compile(r"(?:(?<![a-zA-Z])degrees?|\^\{\\circ\}|\^\\circ|°)$")
_CASEFOLD_WORDS = set(_UNITS) | {"degrees", "degree"}


@dataclass(frozen=True)
class Verdict:
    outcome: str  # equivalent | not_equivalent | unverifiable
    stage: Optional[int]  # deciding stage, None iff unverifiable

    def __post_init__(self) -> None:
        if (self.stage is None) != (self.outcome == UNVERIFIABLE):
            raise ValueError("stage must be present iff the outcome is decided")


@dataclass(frozen=True)
class ParsedAnswer:
    """Outcome of parsing one answer string.

    ``exact`` carries the value as a Fraction whenever the expression
    evaluates exactly; ``approx`` is the float view.  Containers keep their
    elements and no scalar value.  Unparseable input degrades to kind
    "opaque" rather than raising.
    """

    kind: str  # integer | rational | real | symbolic | tuple | set | opaque
    raw: str  # the normalized source string
    exact: Optional[Fraction] = None
    approx: Optional[float] = None
    elements: tuple["ParsedAnswer", ...] = field(default_factory=tuple)
    percent: bool = False
    degree: bool = False
    unit: Optional[str] = None

    @property
    def is_opaque(self) -> bool:
        return self.kind == "opaque"

    @property
    def is_container(self) -> bool:
        return self.kind in ("tuple", "set")


def normalize(raw: str) -> str:
    """Canonical form used for string comparison and as parser input."""
    s = raw.strip()
    # Outer math delimiters, possibly stacked.
    while True:
        t = s.strip()
        if len(t) >= 2 and t.startswith("$") and t.endswith("$"):
            s = t[1:-1]
            continue
        if len(t) >= 4 and t.startswith("\\(") and t.endswith("\\)"):
            s = t[2:-2]
            continue
        if len(t) >= 4 and t.startswith("\\[") and t.endswith("\\]"):
            s = t[2:-2]
            continue
        s = t
        break
    s = s.replace("\\left", "").replace("\\right", "")
    for _ in range(4):  # unwrap \text{...}, tolerating light nesting
        new = re.sub(r"\\text\s*\{([^{}]*)\}", r"\1", s)
        if new == s:
            break
        s = new
    s = re.sub(r"\s+", "", s)
    # Thousands separators: a comma between a digit and a 3-digit group that
    # ends the run ("1,000" yes, "(1,2)" no).
    s = re.sub(r"(?<=\d),(?=\d{3}(?!\d))", "", s)
    s = s.rstrip(".")
    # Case-fold a trailing unit-like word so "5 M" and "5m" agree.
    m = re.search(r"([a-zA-Z]+)$", s)
    if m and m.group(1).lower() in _CASEFOLD_WORDS:
        s = s[: m.start(1)] + m.group(1).lower()
    return s


class _ParseError(Exception):
    pass


@dataclass(frozen=True)
class _Num:
    """Numeric value with an exact rational view when one exists."""

    exact: Optional[Fraction]
    approx: float

    @classmethod
    def from_fraction(cls, f: Fraction) -> "_Num":
        try:
            return cls(f, float(f))
        except OverflowError as exc:
            raise _ParseError("value overflows the float view") from exc

    @property
    def is_exact(self) -> bool:
        return self.exact is not None


def _num_op(a: _Num, b: _Num, op: str) -> _Num:
    if a.is_exact and b.is_exact:
        try:
            if op == "+":
                return _Num.from_fraction(a.exact + b.exact)
            if op == "-":
                return _Num.from_fraction(a.exact - b.exact)
            if op == "*":
                return _Num.from_fraction(a.exact * b.exact)
            if op == "/":
                if b.exact == 0:
                    raise _ParseError("division by zero")
                return _Num.from_fraction(a.exact / b.exact)
        except OverflowError as exc:
            raise _ParseError("value overflow") from exc
    x, y = a.approx, b.approx
    if op == "+":
        return _Num(None, x + y)
    if op == "-":
        return _Num(None, x - y)
    if op == "*":
        return _Num(None, x * y)
    if y == 0:
        raise _ParseError("division by zero")
    return _Num(None, x / y)


def _num_pow(base: _Num, exp: _Num) -> _Num:
    if (
        base.is_exact
        and exp.is_exact
        and exp.exact.denominator == 1
        and abs(exp.exact.numerator) <= 4096
    ):
        n = exp.exact.numerator
        if base.exact == 0 and n < 0:
            raise _ParseError("zero to a negative power")
        try:
            return _Num.from_fraction(base.exact**n)
        except OverflowError as exc:
            raise _ParseError("value overflow") from exc
    try:
        return _Num(None, math.pow(base.approx, exp.approx))
    except (OverflowError, ValueError) as exc:
        raise _ParseError("invalid power") from exc


def _exact_root(f: Fraction, n: int) -> Optional[Fraction]:
    if f < 0:
        return None
    try:
        num = round(f.numerator ** (1 / n))
        den = round(f.denominator ** (1 / n))
    except OverflowError:
        return None
    for p in (num - 1, num, num + 1):
        for q in (den - 1, den, den + 1):
            if p >= 0 and q >= 1 and p**n == f.numerator and q**n == f.denominator:
                return Fraction(p, q)
    return None


def _num_root(x: _Num, n: int) -> _Num:
    if x.approx < 0:
        raise _ParseError("root of a negative value")
    if x.is_exact:
        r = _exact_root(x.exact, n)
        if r is not None:
            return _Num.from_fraction(r)
    return _Num(None, x.approx ** (1.0 / n))


_TOKEN_RE = re.compile(
    r"""
      \d+\.\d*(?:[eE][+-]?\d+)?     # 3.14, 2., 1.5e-3
    | \.\d+(?:[eE][+-]?\d+)?        # .5
    | \d+(?:[eE][+-]?\d+)?          # 42, 1e-4
    | \\frac | \\sqrt | \\pi | \\cdot | \\times
    | [a-zA-Z]+
    | [()\[\]{}+\-*/^,]
    | π | ·
    """,
    re.VERBOSE,
)


def _tokenize(s: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(s):
        m = _TOKEN_RE.match(s, pos)
        if m is None:
            raise _ParseError(f"unexpected character at {pos!r}")
        tokens.append(m.group(0))
        pos = m.end()
    return tokens


_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


class _Parser:
    """Recursive-descent evaluator over the token list.

    Besides the value, it tracks a coarse surface shape (int literal, plain
    fraction, decimal, or anything richer) so the caller can label kind.
    """

    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise _ParseError("unexpected end of input")
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise _ParseError(f"expected {tok!r}, got {got!r}")

    def parse_expr(self) -> tuple[_Num, str]:
        value, shape = self.parse_term()
        while self.peek() in ("+", "-"):
            op = self.next()
            rhs, _ = self.parse_term()
            value = _num_op(value, rhs, op)
            shape = "expr"
        return value, shape

    def parse_term(self) -> tuple[_Num, str]:
        value, shape = self.parse_power()
        while True:
            tok = self.peek()
            if tok in ("*", "/", "\\cdot", "\\times", "·"):
                op = self.next()
                rhs, rshape = self.parse_power()
                value = _num_op(value, rhs, "/" if op == "/" else "*")
                if op == "/" and shape == "int" and rshape == "int":
                    shape = "fraction"
                else:
                    shape = "expr"
            elif tok is not None and (
                _NUMBER_RE.match(tok)
                or tok in ("\\pi", "π", "\\frac", "\\sqrt", "(", "e")
            ):
                # implicit multiplication: 2\pi, 3(4), 2e
                rhs, _ = self.parse_power()
                value = _num_op(value, rhs, "*")
                shape = "expr"
            else:
                return value, shape

    def parse_power(self) -> tuple[_Num, str]:
        base, shape = self.parse_atom()
        if self.peek() == "^":
            self.next()
            if self.peek() == "{":
                self.next()
                exp, _ = self.parse_expr()
                self.expect("}")
            else:
                exp, _ = self.parse_power()  # right-associative
            return _num_pow(base, exp), "expr"
        return base, shape

    def parse_braced(self) -> _Num:
        self.expect("{")
        value, _ = self.parse_expr()
        self.expect("}")
        return value

    def parse_atom(self) -> tuple[_Num, str]:
        tok = self.next()
        if tok == "-":
            value, shape = self.parse_power()
            return _num_op(_Num.from_fraction(Fraction(0)), value, "-"), shape
        if tok == "+":
            return self.parse_power()
        if _NUMBER_RE.match(tok):
            frac = Fraction(tok.replace("E", "e"))
            shape = "int" if re.fullmatch(r"\d+", tok) else "decimal"
            return _Num.from_fraction(frac), shape
        if tok in ("\\pi", "π", "pi"):
            return _Num(None, math.pi), "expr"
        if tok == "e":
            return _Num(None, math.e), "expr"
        if tok == "\\frac":
            num = self.parse_braced()
            den = self.parse_braced()
            return _num_op(num, den, "/"), "fraction"
        if tok == "\\sqrt":
            n = 2
            if self.peek() == "[":
                self.next()
                idx, _ = self.parse_expr()
                self.expect("]")
                if not (idx.is_exact and idx.exact.denominator == 1 and idx.exact > 0):
                    raise _ParseError("root index must be a positive integer")
                n = int(idx.exact)
            return _num_root(self.parse_braced(), n), "expr"
        if tok == "(":
            value, _ = self.parse_expr()
            self.expect(")")
            return value, "expr"
        raise _ParseError(f"unexpected token {tok!r}")


def _strip_modifiers(s: str) -> tuple[str, bool, bool, Optional[str]]:
    percent = degree = False
    unit: Optional[str] = None
    if s.endswith("\\%"):
        s, percent = s[:-2], True
    elif s.endswith("%"):
        s, percent = s[:-1], True
    m = _DEGREE_RE.search(s)
    if m:
        s, degree = s[: m.start()], True
    if not degree:
        m = _UNIT_RE.search(s)
        # A unit needs something before it; a bare "m" stays opaque.
        if m and m.start() > 0:
            unit = m.group(1).lower()
            s = s[: m.start()]
    if percent and degree:
        raise _ParseError("percent and degree are mutually exclusive")
    return s, percent, degree, unit


def _scalar_kind(shape: str, value: _Num, percent: bool) -> str:
    if percent:
        return "real"
    if shape == "int" and value.is_exact and value.exact.denominator == 1:
        return "integer"
    if shape == "fraction" and value.is_exact:
        return "rational"
    if shape == "decimal":
        return "real"
    return "symbolic"


def _parse_scalar(s: str, raw: str) -> ParsedAnswer:
    core, percent, degree, unit = _strip_modifiers(s)
    if not core:
        raise _ParseError("empty value")
    parser = _Parser(_tokenize(core))
    value, shape = parser.parse_expr()
    if parser.peek() is not None:
        raise _ParseError(f"trailing input {parser.peek()!r}")
    if percent:
        value = _num_op(value, _Num.from_fraction(Fraction(1, 100)), "*")
    if not math.isfinite(value.approx):
        raise _ParseError("non-finite value")
    return ParsedAnswer(
        kind=_scalar_kind(shape, value, percent),
        raw=raw,
        exact=value.exact,
        approx=value.approx,
        percent=percent,
        degree=degree,
        unit=unit,
    )


def _split_top_level(s: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_math(raw: str) -> ParsedAnswer:
    """Parse a normalized answer string; opaque fallback, never an error."""
    s = raw
    try:
        if len(s) >= 2 and s[0] in "([{" and s[-1] == {"(": ")", "[": "]", "{": "}"}[s[0]]:
            inner = s[1:-1]
            parts = _split_top_level(inner)
            if s[0] == "{" or len(parts) > 1:
                elements = tuple(_parse_scalar(p, p) for p in parts)
                return ParsedAnswer(
                    kind="set" if s[0] == "{" else "tuple",
                    raw=raw,
                    elements=elements,
                )
        return _parse_scalar(s, raw)
    except _ParseError:
        return ParsedAnswer(kind="opaque", raw=raw)


def _close(x: float, y: float) -> bool:
    return abs(x - y) <= max(REL_TOL * max(abs(x), abs(y)), ABS_TOL)


def _exact_scalar_equal(a: ParsedAnswer, b: ParsedAnswer) -> bool:
    if a.degree != b.degree or a.unit != b.unit:
        return False
    if a.exact is not None and b.exact is not None:
        return a.exact == b.exact
    if a.exact is None and b.exact is None:
        return a.approx == b.approx
    return False


def _exact_equal(a: ParsedAnswer, b: ParsedAnswer) -> bool:
    if a.is_container or b.is_container:
        if a.kind != b.kind or len(a.elements) != len(b.elements):
            return False
        if a.kind == "tuple":
            return all(_exact_equal(x, y) for x, y in zip(a.elements, b.elements))
        xs = sorted(a.elements, key=lambda e: e.approx)
        ys = sorted(b.elements, key=lambda e: e.approx)
        return all(_exact_equal(x, y) for x, y in zip(xs, ys))
    return _exact_scalar_equal(a, b)


def _scalar_close(a: ParsedAnswer, b: ParsedAnswer) -> bool:
    if a.unit is not None and b.unit is not None and a.unit != b.unit:
        return False
    x, y = a.approx, b.approx
    if a.degree == b.degree:
        return _close(x, y)
    # One side is in degrees: accept either the as-given reading or the
    # radian coercion of the degree side.
    if a.degree:
        return _close(x, y) or _close(x * math.pi / 180.0, y)
    return _close(x, y) or _close(x, y * math.pi / 180.0)


def _numeric_close(a: ParsedAnswer, b: ParsedAnswer) -> bool:
    if a.is_container or b.is_container:
        if a.kind != b.kind or len(a.elements) != len(b.elements):
            return False
        if a.kind == "tuple":
            return all(_numeric_close(x, y) for x, y in zip(a.elements, b.elements))
        xs = sorted(a.elements, key=lambda e: e.approx)
        ys = sorted(b.elements, key=lambda e: e.approx)
        return all(_numeric_close(x, y) for x, y in zip(xs, ys))
    return _scalar_close(a, b)


def verify(candidate: str, gold: str, start_stage: int = 1) -> Verdict:
    """Run the cascade; ``start_stage`` disables the stricter stages before it."""
    na, nb = normalize(candidate), normalize(gold)
    if start_stage <= 1 and na == nb and na != "":
        return Verdict(EQUIVALENT, 1)
    pa, pb = parse_math(na), parse_math(nb)
    both_numeric = not pa.is_opaque and not pb.is_opaque
    if start_stage <= 2 and both_numeric and _exact_equal(pa, pb):
        return Verdict(EQUIVALENT, 2)
    if start_stage <= 3 and both_numeric:
        if _numeric_close(pa, pb):
            return Verdict(EQUIVALENT, 3)
        return Verdict(NOT_EQUIVALENT, 3)
    if (
        start_stage <= 4
        and pa.is_opaque
        and pb.is_opaque
        and len(na) <= OPAQUE_MAX_LEN
        and len(nb) <= OPAQUE_MAX_LEN
        and na == nb
    ):
        return Verdict(EQUIVALENT, 4)
    return Verdict(UNVERIFIABLE, None)


def reward(response_answer: str, gold: str, truncated: bool) -> float:
    """Binary verifiable reward; over-length rollouts score zero outright."""
    if truncated:
        return 0.0
    return 1.0 if verify(response_answer, gold).outcome == EQUIVALENT else 0.0


_BOXED_RE = re.compile(r"\\boxed\s*\{")


def extract_final_answer(text: str) -> str:
    """Content of the last ``\\boxed{...}`` if present, else the final line."""
    last = None
    for m in _BOXED_RE.finditer(text):
        depth = 1
        i = m.end()
        while i < len(text) and depth > 0:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            last = text[m.end() : i - 1]
    if last is not None:
        return last.strip()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    return lines[-1] if lines else ""
