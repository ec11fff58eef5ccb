"""Expression and system-definition language.

Plants and control laws are written as small arithmetic expressions over
state variables ``x1..xn``, inputs ``u1..um``, the sampling period ``T`` and
named parameters.  This module parses them into an immutable AST, evaluates
them pointwise (strictly, with domain errors) and compiles them into
vectorised numpy callables used by the simulation code.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

so ``-x1^2`` is ``-(x1^2)`` and ``^`` is right-associative.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Num", "Var", "Neg", "BinOp", "Call", "Expr",
    "ParseDiagnostic", "DSLError", "ParseError", "EvaluationError",
    "SystemDef", "FUNCTIONS",
    "parse_expression", "parse_system", "evaluate", "pretty", "compile_expr",
    "free_variables", "substitute",
]

# name -> arity
FUNCTIONS: Mapping[str, int] = MappingProxyType({
    "sin": 1, "cos": 1, "tan": 1, "exp": 1, "ln": 1, "sqrt": 1,
    "abs": 1, "tanh": 1, "sign": 1, "min": 2, "max": 2,
})

MAX_DEPTH = 64
MAX_TREE_DEPTH = 256


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]
    pos: int = field(default=-1, compare=False, repr=False)


Expr = Num | Var | Neg | BinOp | Call


# ---------------------------------------------------------------------------
# errors

@dataclass(frozen=True)
class ParseDiagnostic:
    offset: int
    line: int
    column: int
    message: str
    expected: tuple[str, ...] = ()

    def __str__(self) -> str:
        s = f"{self.line}:{self.column}: {self.message}"
        if self.expected:
            s += f" (expected {', '.join(self.expected)})"
        return s

    def to_dict(self) -> dict:
        return {"offset": self.offset, "line": self.line, "column": self.column,
                "message": self.message, "expected": list(self.expected)}


class DSLError(Exception):
    pass


class ParseError(DSLError):
    def __init__(self, diagnostic: ParseDiagnostic):
        super().__init__(str(diagnostic))
        self.diagnostic = diagnostic


class EvaluationError(DSLError, ArithmeticError):
    """Domain violation or unbound variable during evaluation.

    ``point`` holds the variable bindings at the offending point when known,
    ``index`` the row of a batch evaluation.
    """

    def __init__(self, message: str, point: Mapping[str, float] | None = None,
                 index: int | None = None):
        detail = message
        if point:
            detail += " at " + ", ".join(f"{k}={v!r}" for k, v in sorted(point.items()))
        super().__init__(detail)
        self.reason = message
        self.point = dict(point) if point else None
        self.index = index


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _diag(text: str, offset: int, message: str, expected: Sequence[str] = ()) -> ParseDiagnostic:
    offset = max(0, min(offset, len(text)))
    line, col = _line_col(text, offset)
    return ParseDiagnostic(offset, line, col, message, tuple(expected))


# ---------------------------------------------------------------------------
# lexer

_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_PUNCT = set("+-*/^(),")


@dataclass(frozen=True)
class _Tok:
    kind: str  # 'num', 'ident', punctuation char, or 'eof'
    text: str
    pos: int


_DIGITS = frozenset("0123456789")
_IDENT_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in _DIGITS or (c == "." and i + 1 < n and src[i + 1] in _DIGITS):
            m = _NUMBER.match(src, i)
            end = m.end()
            if end < n and (src[end].isalnum() or src[end] in "_."):
                raise ParseError(_diag(src, i, "malformed numeric literal"))
            value = float(m.group())
            if not math.isfinite(value):
                raise ParseError(_diag(src, i, "numeric literal overflows binary64"))
            toks.append(_Tok("num", m.group(), i))
            i = end
        elif c in _IDENT_START:
            m = _IDENT.match(src, i)
            toks.append(_Tok("ident", m.group(), i))
            i = m.end()
        elif c in _PUNCT:
            toks.append(_Tok(c, c, i))
            i += 1
        else:
            raise ParseError(_diag(src, i, f"unexpected character {c!r}"))
    toks.append(_Tok("eof", "", n))
    return toks


# ---------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.depth = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, message: str, expected: Sequence[str] = (), tok: _Tok | None = None):
        tok = tok or self.tok
        raise ParseError(_diag(self.src, tok.pos, message, expected))

    def unexpected(self, expected: Sequence[str]):
        t = self.tok
        what = "end of input" if t.kind == "eof" else repr(t.text)
        self.error(f"unexpected {what}", expected)

    def take(self, kind: str) -> _Tok:
        t = self.tok
        if t.kind != kind:
            self.unexpected([repr(kind)])
        self.i += 1
        return t

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            self.error("expression nested too deeply")

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "eof":
            self.unexpected(["operator", "end of input"])
        if _tree_depth(e) > MAX_TREE_DEPTH:
            raise ParseError(_diag(self.src, 0, "expression nested too deeply"))
        return e

    def expr(self) -> Expr:
        self.enter()
        e = self.term()
        while self.tok.kind in ("+", "-"):
            op = self.take(self.tok.kind).kind
            e = BinOp(op, e, self.term())
        self.depth -= 1
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.kind in ("*", "/"):
            op = self.take(self.tok.kind).kind
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.tok.kind == "-":
            self.enter()
            self.i += 1
            e = Neg(self.unary())
            self.depth -= 1
            return e
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "^":
            self.enter()
            self.i += 1
            e = BinOp("^", base, self.unary())
            self.depth -= 1
            return e
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "ident":
            self.i += 1
            if self.tok.kind == "(":
                return self.call(t)
            if t.text in FUNCTIONS:
                self.error(f"function {t.text!r} used without arguments", ["'('"])
            return Var(t.text, t.pos)
        if t.kind == "(":
            self.i += 1
            e = self.expr()
            self.take(")")
            return e
        self.unexpected(["number", "identifier", "'('", "'-'"])

    def call(self, name: _Tok) -> Expr:
        if name.text not in FUNCTIONS:
            self.error(f"unknown function {name.text!r}", tok=name)
        self.take("(")
        args = [self.expr()]
        while self.tok.kind == ",":
            self.i += 1
            args.append(self.expr())
        self.take(")")
        arity = FUNCTIONS[name.text]
        if len(args) != arity:
            self.error(f"function {name.text!r} takes {arity} argument(s), got {len(args)}",
                       tok=name)
        return Call(name.text, tuple(args), name.pos)


def _tree_depth(e: Expr) -> int:
    best, stack = 0, [(e, 1)]
    while stack:
        node, d = stack.pop()
        best = max(best, d)
        if isinstance(node, Neg):
            stack.append((node.operand, d + 1))
        elif isinstance(node, BinOp):
            stack += [(node.left, d + 1), (node.right, d + 1)]
        elif isinstance(node, Call):
            stack += [(a, d + 1) for a in node.args]
    return best


def parse_expression(source: str | bytes) -> Expr:
    """Parse one expression.

    Raises
    ------
    ParseError
        Carrying a :class:`ParseDiagnostic` for the first lexical, syntax or
        arity error in left-to-right order.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(ParseDiagnostic(exc.start, 1, exc.start + 1,
                                             "invalid UTF-8 byte sequence")) from None
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# printing / traversal

def pretty(e: Expr) -> str:
    """Fully parenthesised rendering that reparses to an identical AST."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{pretty(e.operand)})"
    if isinstance(e, BinOp):
        return f"({pretty(e.left)} {e.op} {pretty(e.right)})"
    return f"{e.func}({', '.join(pretty(a) for a in e.args)})"


def _walk(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Neg):
        yield from _walk(e.operand)
    elif isinstance(e, BinOp):
        yield from _walk(e.left)
        yield from _walk(e.right)
    elif isinstance(e, Call):
        for a in e.args:
            yield from _walk(a)


def free_variables(e: Expr) -> set[str]:
    return {v.name for v in _walk(e) if isinstance(v, Var)}


def substitute(e: Expr, values: Mapping[str, float]) -> Expr:
    """Replace variables named in ``values`` by numeric literals."""
    if isinstance(e, Var):
        return Num(float(values[e.name])) if e.name in values else e
    if isinstance(e, Neg):
        return Neg(substitute(e.operand, values))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, values), substitute(e.right, values))
    if isinstance(e, Call):
        return Call(e.func, tuple(substitute(a, values) for a in e.args), e.pos)
    return e


# ---------------------------------------------------------------------------
# strict scalar evaluation

def _fail(msg: str, env: Mapping[str, float]):
    raise EvaluationError(msg, env)


def _pow(a: float, b: float, env) -> float:
    if a < 0 and not float(b).is_integer():
        _fail("non-integer power of negative base", env)
    if a == 0 and b < 0:
        _fail("division by zero (zero base, negative exponent)", env)
    try:
        return math.pow(a, b)
    except OverflowError:
        _fail("overflow in '^'", env)


def _call(name: str, args: list[float], env) -> float:
    a = args[0]
    try:
        if name == "sqrt":
            if a < 0:
                _fail("sqrt of negative argument", env)
            return math.sqrt(a)
        if name == "ln":
            if a <= 0:
                _fail("ln of nonpositive argument", env)
            return math.log(a)
        if name == "exp":
            return math.exp(a)
        if name == "sign":
            return float((a > 0) - (a < 0))
        if name == "abs":
            return abs(a)
        if name == "min":
            return min(a, args[1])
        if name == "max":
            return max(a, args[1])
        return getattr(math, name)(a)
    except OverflowError:
        _fail(f"overflow in {name}()", env)


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` in binary64 with every domain violation raised.

    ``sign(0) = 0``.  Division by zero, ``sqrt``/``ln`` outside their
    domains, non-integer powers of negative numbers, overflow and unbound
    variables raise :class:`EvaluationError`; NaN is never returned.
    """

    def ev(node: Expr) -> float:
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Var):
            try:
                v = float(env[node.name])
            except KeyError:
                _fail(f"unbound variable {node.name!r}", env)
            if not math.isfinite(v):
                _fail(f"non-finite value bound to {node.name!r}", env)
            return v
        if isinstance(node, Neg):
            return -ev(node.operand)
        if isinstance(node, BinOp):
            a, b = ev(node.left), ev(node.right)
            if node.op == "+":
                r = a + b
            elif node.op == "-":
                r = a - b
            elif node.op == "*":
                r = a * b
            elif node.op == "/":
                if b == 0:
                    _fail("division by zero", env)
                r = a / b
            else:
                r = _pow(a, b, env)
        else:
            r = _call(node.func, [ev(x) for x in node.args], env)
        if not math.isfinite(r):
            _fail("overflow", env)
        return r

    return ev(e)


# ---------------------------------------------------------------------------
# lenient vectorised evaluation

Kernel = Callable[[Mapping[str, np.ndarray]], np.ndarray]

_UFUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "ln": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sign": np.sign,
    "min": np.minimum, "max": np.maximum,
}
_BINOPS = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.true_divide}


def _nanify(r):
    # inf -> nan so later ops (1/inf, exp(-inf), tanh(inf)) cannot hide a failure
    fin = np.isfinite(r)
    if np.ndim(r) == 0:
        return r if fin else np.float64(np.nan)
    if fin.all():
        return r
    return np.where(fin, r, np.nan)


def _kernel(e: Expr) -> Kernel:
    if isinstance(e, Num):
        v = np.float64(e.value)
        return lambda env: v
    if isinstance(e, Var):
        name = e.name
        return lambda env: env[name]
    if isinstance(e, Neg):
        k = _kernel(e.operand)
        return lambda env: -k(env)
    if isinstance(e, BinOp):
        kl, kr = _kernel(e.left), _kernel(e.right)
        if e.op == "^":
            def kpow(env):
                a, b = kl(env), kr(env)
                r = np.power(a, b)
                return _nanify(np.where(np.isnan(a) | np.isnan(b), np.nan, r))
            return kpow
        op = _BINOPS[e.op]
        return lambda env: _nanify(op(kl(env), kr(env)))
    fn = _UFUNCS[e.func]
    ks = [_kernel(a) for a in e.args]
    if len(ks) == 1:
        k0 = ks[0]
        return lambda env: _nanify(fn(k0(env)))
    k0, k1 = ks
    return lambda env: _nanify(fn(k0(env), k1(env)))


def compile_expr(e: Expr) -> Kernel:
    """Compile ``e`` into a numpy kernel over arrays of equal shape.

    The kernel never raises on domain violations: affected entries come back
    as NaN (including entries whose intermediate values were infinite), so
    callers can mask or re-evaluate them strictly with :func:`evaluate`.
    """
    k = _kernel(e)

    def run(env: Mapping[str, np.ndarray]) -> np.ndarray:
        with np.errstate(all="ignore"):
            return k(env)

    return run


# ---------------------------------------------------------------------------
# system definitions

_STATE = re.compile(r"x([1-9][0-9]*)$")
_INPUT = re.compile(r"u([1-9][0-9]*)$")


@dataclass(frozen=True)
class SystemDef:
    """A plant ``f(x, u)`` with optional CT law ``u_c(x)`` and DT laws ``U(x, T)``.

    ``U`` maps a variant name to its ``m`` component expressions.  When
    ``symbolic_params`` is set the expressions still reference parameters,
    which must then be bound from ``params`` at evaluation time.
    """

    n: int
    m: int
    f: tuple[Expr, ...]
    u_c: tuple[Expr, ...] | None = None
    U: Mapping[str, tuple[Expr, ...]] = field(default_factory=lambda: MappingProxyType({}))
    params: Mapping[str, float] = field(default_factory=lambda: MappingProxyType({}))
    symbolic_params: bool = False
    name: str = ""
    source: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise ValueError("need n >= 1 and m >= 0")
        if len(self.f) != self.n:
            raise ValueError(f"f has {len(self.f)} components, expected {self.n}")
        if self.u_c is not None and len(self.u_c) != self.m:
            raise ValueError(f"u_c has {len(self.u_c)} components, expected {self.m}")
        for k, v in self.U.items():
            if len(v) != self.m:
                raise ValueError(f"U.{k} has {len(v)} components, expected {self.m}")
        object.__setattr__(self, "U", MappingProxyType(dict(self.U)))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    @property
    def law_names(self) -> list[str]:
        return list(self.U)


@dataclass
class _Line:
    no: int
    offset: int  # offset of line start within document
    text: str


def _strip_comment(s: str) -> str:
    for mark in ("#", ";"):
        j = s.find(mark)
        if j >= 0:
            s = s[:j]
    return s


def parse_system(source: str | bytes, name: str = "") -> SystemDef:
    """Parse a sectioned system document.

    Sections ``[system]`` (``n``, ``m``, optional ``params = substitute |
    symbolic`` and ``name``), ``[f]`` (``f1..fn``), optional ``[u_c]``
    (``uc1..ucm``), any number of ``[U.<name>]`` (``U1..Um``) and
    ``[params]``.  ``#`` and ``;`` start comments.

    Raises
    ------
    ParseError
        With line/column pointing into ``source``.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(ParseDiagnostic(exc.start, 1, exc.start + 1,
                                             "invalid UTF-8 byte sequence")) from None
    text = source

    def fail(offset: int, msg: str, expected: Sequence[str] = ()):
        raise ParseError(_diag(text, offset, msg, expected))

    sections: dict[str, dict[str, tuple[str, int]]] = {}
    section_pos: dict[str, int] = {}
    order: list[str] = []
    current = None
    offset = 0
    for no, raw in enumerate(text.split("\n"), start=1):
        line = _Line(no, offset, raw)
        offset += len(raw) + 1
        body = _strip_comment(raw)
        stripped = body.strip()
        if not stripped:
            continue
        lead = line.offset + (len(body) - len(body.lstrip()))
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                fail(lead, "unterminated section header", ["']'"])
            sec = stripped[1:-1].strip()
            if not (sec in ("system", "f", "u_c", "params")
                    or (sec.startswith("U.") and _IDENT.fullmatch(sec[2:]))):
                fail(lead, f"unknown section [{sec}]",
                     ["[system]", "[f]", "[u_c]", "[U.<name>]", "[params]"])
            if sec in sections:
                fail(lead, f"duplicate section [{sec}]")
            sections[sec] = {}
            section_pos[sec] = lead
            order.append(sec)
            current = sec
            continue
        if "=" not in body:
            fail(lead, "expected 'key = value'", ["'='"])
        if current is None:
            fail(lead, "key outside of any section", ["[system]"])
        eq = body.index("=")
        key = body[:eq].strip()
        if not _IDENT.fullmatch(key):
            fail(lead, f"invalid key {key!r}")
        if key in sections[current]:
            fail(lead, f"duplicate key {key!r} in [{current}]")
        value = body[eq + 1:]
        vstart = line.offset + eq + 1 + (len(value) - len(value.lstrip()))
        sections[current][key] = (value.strip(), vstart)

    if "system" not in sections:
        fail(len(text), "missing mandatory section [system]", ["[system]"])
    if "f" not in sections:
        fail(len(text), "missing mandatory section [f]", ["[f]"])

    sysd = sections["system"]

    def int_key(key: str, minimum: int) -> int:
        if key not in sysd:
            fail(section_pos["system"], f"[system] is missing {key!r}", [key])
        val, pos = sysd[key]
        try:
            k = int(val)
        except ValueError:
            fail(pos, f"{key} must be an integer")
        if k < minimum:
            fail(pos, f"{key} must be >= {minimum}")
        return k

    n = int_key("n", 1)
    m = int_key("m", 0)
    for key, (val, pos) in sysd.items():
        if key not in ("n", "m", "params", "name"):
            fail(pos, f"unknown key {key!r} in [system]", ["n", "m", "params", "name"])
    mode = sysd.get("params", ("substitute", 0))
    if mode[0] not in ("substitute", "symbolic"):
        fail(mode[1], "params directive must be 'substitute' or 'symbolic'")
    symbolic = mode[0] == "symbolic"
    sys_name = sysd.get("name", (name, 0))[0]

    def expr_at(val: str, pos: int) -> Expr:
        try:
            e = parse_expression(val)
        except ParseError as exc:
            fail(pos + exc.diagnostic.offset, exc.diagnostic.message, exc.diagnostic.expected)
        return _shift(e, pos)

    params: dict[str, float] = {}
    for key, (val, pos) in sections.get("params", {}).items():
        if key in FUNCTIONS or key == "T" or _STATE.match(key) or _INPUT.match(key):
            fail(pos, f"parameter name {key!r} is reserved")
        e = expr_at(val, pos)
        try:
            params[key] = evaluate(e, params)
        except EvaluationError as exc:
            fail(pos, f"parameter {key!r}: {exc.reason}")

    def check(e: Expr, allow_u: bool, allow_t: bool, where: str):
        for v in _walk(e):
            if not isinstance(v, Var):
                continue
            nm = v.name
            ms, mi = _STATE.match(nm), _INPUT.match(nm)
            if ms:
                if int(ms.group(1)) > n:
                    fail(v.pos, f"{nm} out of range in {where} (n={n})")
            elif mi:
                if not allow_u:
                    fail(v.pos, f"input {nm} not allowed in {where}")
                if int(mi.group(1)) > m:
                    fail(v.pos, f"{nm} out of range in {where} (m={m})")
            elif nm == "T":
                if not allow_t:
                    fail(v.pos, f"sampling period T not allowed in {where}")
            elif nm not in params:
                fail(v.pos, f"unknown identifier {nm!r} in {where}")

    def vector(sec: str, prefix: str, dim: int, allow_u: bool, allow_t: bool) -> tuple[Expr, ...]:
        entries = sections[sec]
        wanted = [f"{prefix}{i}" for i in range(1, dim + 1)]
        for key, (_, pos) in entries.items():
            if key not in wanted:
                fail(pos, f"unexpected key {key!r} in [{sec}] (dimension {dim})", wanted)
        out = []
        for key in wanted:
            if key not in entries:
                fail(section_pos[sec], f"[{sec}] is missing {key!r}", [key])
            e = expr_at(*entries[key])
            check(e, allow_u, allow_t, f"[{sec}] {key}")
            out.append(e if symbolic else substitute(e, params))
        return tuple(out)

    f = vector("f", "f", n, True, False)
    u_c = vector("u_c", "uc", m, False, False) if "u_c" in sections else None
    laws = {sec[2:]: vector(sec, "U", m, False, True) for sec in order if sec.startswith("U.")}
    return SystemDef(n=n, m=m, f=f, u_c=u_c, U=laws, params=params,
                     symbolic_params=symbolic, name=sys_name, source=text)


def _shift(e: Expr, by: int) -> Expr:
    # move node positions from expression-relative to document-relative
    if isinstance(e, Var):
        return Var(e.name, e.pos + by)
    if isinstance(e, Neg):
        return Neg(_shift(e.operand, by))
    if isinstance(e, BinOp):
        return BinOp(e.op, _shift(e.left, by), _shift(e.right, by))
    if isinstance(e, Call):
        return Call(e.func, tuple(_shift(a, by) for a in e.args), e.pos + by)
    return e
