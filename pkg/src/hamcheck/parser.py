"""Text syntax for expressions and operators.

Expressions::

    (phi(u_0,u_1)*u_2 + psi(u_0,u_1))^(-2)      1/2*u_1^2      chi{0,1}(u_0, 1/2*u_1^2)

Operators combine ``D`` (``D1 .. Dm`` when m > 1) with expressions:

* ``f*P`` and ``P*f`` scale the coefficients of ``P`` by ``f``;
* ``P@Q`` is composition, so ``D@f`` is ``f*D + D(f)``;
* ``D(f)`` applied directly to a parenthesized expression is the function ``Df``;
* ``[[0, D], [D, 0]]`` is a matrix operator;
* a trailing ``where name = expr, ...`` list binds names used above it.

Sources may start with a header block of ``key=value`` lines (``m``,
``depvars``, ``functions``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .algebra import Expr, FnSym, IndepVar, JetVar, render
from .calculus import total_derivative
from .operators import DimensionMismatch, DiffOp, compose


# ---------------------------------------------------------------- errors


class DSLError(Exception):
    """Base class of input errors; ``line`` and ``column`` are 1-based."""

    kind = "error"

    def __init__(self, message: str, line: int = 0, column: int = 0, expected: Sequence[str] = ()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = sorted(set(expected))
        where = f"{line}:{column}: " if line else ""
        tail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{where}{message}{tail}")

    def to_json(self) -> dict:
        out = {"error": self.kind, "message": self.message, "line": self.line, "column": self.column}
        if self.expected:
            out["expected"] = self.expected
        return out


class DSLSyntaxError(DSLError, SyntaxError):
    kind = "syntax"


class UnknownSymbol(DSLError, NameError):
    kind = "unknown_symbol"


class ArityMismatch(DSLError, TypeError):
    kind = "arity"


class CyclicBinding(DSLError, ValueError):
    kind = "cyclic_binding"


class ShapeError(DSLError, DimensionMismatch):
    kind = "dimension"


# ---------------------------------------------------------------- config


HEADER_KEYS = ("m", "depvars", "functions")
_HEADER_RE = re.compile(r"^\s*(m|depvars|functions)\s*=(.*)$")


@dataclass
class SessionConfig:
    """Number of independent variables, dependent-variable names, declared functions.

    With no declared functions any name may be used as an opaque function; its
    arity is fixed by its first use.
    """

    m: int = 1
    depvars: Tuple[str, ...] = ("u",)
    functions: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.depvars = tuple(self.depvars)
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not self.depvars:
            raise ValueError("at least one dependent variable is required")
        names = list(self.depvars) + list(self.functions)
        for n in names:
            if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", n):
                raise ValueError(f"invalid name {n!r}")
        if len(set(names)) != len(names):
            raise ValueError("names must be unique")

    @property
    def n_dep(self) -> int:
        return len(self.depvars)

    @property
    def strict(self) -> bool:
        return bool(self.functions)


def _apply_header(cfg: Dict, key: str, value: str, line: int):
    value = value.strip()
    try:
        if key == "m":
            cfg["m"] = int(value)
        elif key == "depvars":
            cfg["depvars"] = tuple(v.strip() for v in value.split(",") if v.strip())
        else:
            fns = {}
            for item in filter(None, (v.strip() for v in value.split(","))):
                name, _, arity = item.partition("/")
                fns[name.strip()] = int(arity) if arity else -1
            cfg["functions"] = fns
    except ValueError as exc:
        raise DSLSyntaxError(f"bad header value for {key}: {exc}", line, 1, ["integer"]) from None


def parse_config(text: str, base: Optional[SessionConfig] = None) -> SessionConfig:
    """Read a ``key=value`` config block (blank lines and ``#`` comments allowed)."""
    cfg = _config_dict(base)
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        mt = _HEADER_RE.match(line)
        if not mt:
            raise DSLSyntaxError("expected a key=value line", n, 1, HEADER_KEYS)
        _apply_header(cfg, mt.group(1), mt.group(2), n)
    return _make_config(cfg)


def _config_dict(base: Optional[SessionConfig]) -> Dict:
    base = base or SessionConfig()
    return {"m": base.m, "depvars": base.depvars, "functions": dict(base.functions)}


def _make_config(cfg: Dict) -> SessionConfig:
    try:
        return SessionConfig(**cfg)
    except ValueError as exc:
        raise DSLSyntaxError(str(exc), 1, 1, HEADER_KEYS) from None


def split_header(text: str, base: Optional[SessionConfig] = None) -> Tuple[SessionConfig, str]:
    """Strip a leading header block; header lines are blanked so positions stay valid."""
    cfg = _config_dict(base)
    lines = text.splitlines()
    seen = False
    for n, raw in enumerate(lines):
        body = raw.split("#", 1)[0]
        mt = _HEADER_RE.match(body)
        if mt:
            _apply_header(cfg, mt.group(1), mt.group(2), n + 1)
            lines[n] = ""
            seen = True
        elif body.strip() == "---" and seen:
            lines[n] = ""
            break
        elif body.strip():
            break
        else:
            lines[n] = ""
    return _make_config(cfg), "\n".join(lines)


# ---------------------------------------------------------------- tokens


@dataclass(frozen=True)
class Token:
    kind: str  # NUM, IDENT, OP, END
    text: str
    line: int
    column: int


_TOKEN_RE = re.compile(r"(\d+(?:\.\d+)?)|([A-Za-z][A-Za-z0-9]*)|(.)", re.S)
_PUNCT = set("+-*/^@()[]{},_=;")


def tokenize(src: str) -> List[Token]:
    """Split into tokens carrying 1-based line and column."""
    out: List[Token] = []
    line, col = 1, 1
    for mt in _TOKEN_RE.finditer(src):
        text = mt.group(0)
        if mt.group(1):
            out.append(Token("NUM", text, line, col))
        elif mt.group(2):
            out.append(Token("IDENT", text, line, col))
        elif text in _PUNCT:
            out.append(Token("OP", text, line, col))
        elif not text.isspace():
            raise DSLSyntaxError(f"unexpected character {text!r}", line, col, ["expression"])
        if text == "\n":
            line, col = line + 1, 1
        else:
            col += len(text)
    out.append(Token("END", "", line, col))
    return out


# ---------------------------------------------------------------- parser

Value = Union[Expr, DiffOp]

_OPERAND = ("number", "x", "jet variable", "function call", "D", "(", "[", "-", "name")
_AFTER = ("+", "-", "*", "/", "^", "@")
_JET_NAME = re.compile(r"u(\d+)?$")
_INDEXED = re.compile(r"([xD])(\d+)$")


class _Parser:
    def __init__(self, tokens: List[Token], cfg: SessionConfig, bindings=None, fn_arity=None):
        self.t = tokens
        self.pos = 0
        self.cfg = cfg
        self.bindings = bindings if bindings is not None else {}
        self.fn_arity = fn_arity if fn_arity is not None else dict(cfg.functions)

    # token helpers
    @property
    def cur(self) -> Token:
        return self.t[self.pos]

    def advance(self) -> Token:
        tok = self.t[self.pos]
        self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.cur
        return tok.kind in ("OP", "IDENT") and tok.text == text

    def expect(self, text: str, expected: Sequence[str] = ()) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}", expected or [text])
        return self.advance()

    def fail(self, msg: str, expected: Sequence[str], tok: Optional[Token] = None):
        tok = tok or self.cur
        found = "end of input" if tok.kind == "END" else repr(tok.text)
        raise DSLSyntaxError(f"{msg}, found {found}", tok.line, tok.column, expected)

    def integer(self, what: str = "integer") -> int:
        tok = self.cur
        if tok.kind != "NUM" or "." in tok.text:
            self.fail(f"expected {what}", [what])
        self.advance()
        return int(tok.text)

    # grammar
    def value(self) -> Value:
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance()
            right = self.term()
            left = self.combine(op, left, right)
        return left

    def term(self) -> Value:
        left = self.factor()
        while self.at("*") or self.at("/") or self.at("@"):
            op = self.advance()
            right = self.factor()
            left = self.combine(op, left, right)
        return left

    def factor(self) -> Value:
        base = self.base()
        if self.at("^"):
            tok = self.advance()
            if self.at("("):
                self.advance()
                n = self.signed_int()
                self.expect(")", [")"])
            else:
                n = self.signed_int()
            base = self.power(tok, base, n)
        return base

    def signed_int(self) -> int:
        sign = 1
        if self.at("-"):
            self.advance()
            sign = -1
        return sign * self.integer("integer exponent")

    def base(self) -> Value:
        tok = self.cur
        if tok.kind == "NUM":
            self.advance()
            return Expr.const(Fraction(tok.text))
        if self.at("-"):
            self.advance()
            inner = self.factor()
            return -inner
        if self.at("("):
            self.advance()
            inner = self.value()
            self.expect(")", [")"] + list(_AFTER))
            return inner
        if self.at("["):
            return self.matrix()
        if tok.kind == "IDENT":
            return self.identifier()
        self.fail("expected an operand", _OPERAND)

    def matrix(self) -> DiffOp:
        start = self.expect("[")
        rows: List[List[Value]] = []
        while True:
            self.expect("[", ["["])
            row = [self.value()]
            while self.at(","):
                self.advance()
                row.append(self.value())
            self.expect("]", [",", "]"])
            rows.append(row)
            if self.at(","):
                self.advance()
                continue
            self.expect("]", [",", "]"])
            break
        if any(len(r) != len(rows[0]) for r in rows):
            raise ShapeError("ragged operator matrix", start.line, start.column)
        cells = [[self.as_op(v, start) for v in r] for r in rows]
        for r in cells:
            for c in r:
                if (c.rows, c.cols) != (1, 1):
                    raise ShapeError("matrix cells must be scalar", start.line, start.column)
        return DiffOp.from_blocks(cells)

    def identifier(self) -> Value:
        tok = self.advance()
        name = tok.text
        cfg = self.cfg
        if self.at("_"):
            alpha = self.dep_index(tok)
            self.advance()
            return Expr.atom(JetVar(alpha, self.jet_index(tok)))
        if name == "x" or (_INDEXED.match(name) and name[0] == "x"):
            return Expr.atom(IndepVar(self.axis(tok, "x")))
        if name == "D" or (_INDEXED.match(name) and name[0] == "D"):
            mu = self.axis(tok, "D")
            if self.at("("):
                self.advance()
                arg = self.value()
                self.expect(")", [")"] + list(_AFTER))
                if isinstance(arg, DiffOp):
                    self.fail("D(...) takes an expression; use @ to compose operators", ["expression"], tok)
                return total_derivative(arg, mu)
            return DiffOp.D(mu, 1, cfg.m)
        if self.at("{") or self.at("("):
            return self.call(tok)
        if name in self.bindings:
            return self.resolve(tok)
        if name in cfg.depvars or _JET_NAME.match(name):
            self.fail("expected '_' and a jet index after a dependent variable", ["_"])
        raise UnknownSymbol(f"unknown symbol {name!r}", tok.line, tok.column)

    def dep_index(self, tok: Token) -> int:
        name, cfg = tok.text, self.cfg
        if name in cfg.depvars:
            return cfg.depvars.index(name)
        mt = _JET_NAME.match(name)
        if mt:
            if mt.group(1) is None:
                if cfg.n_dep == 1:
                    return 0
            else:
                k = int(mt.group(1))
                if 1 <= k <= cfg.n_dep:
                    return k - 1
        raise UnknownSymbol(f"unknown dependent variable {name!r}", tok.line, tok.column)

    def jet_index(self, tok: Token) -> Tuple[int, ...]:
        m = self.cfg.m
        if self.at("("):
            here = self.advance()
            idx = [self.integer()]
            while self.at(","):
                self.advance()
                idx.append(self.integer())
            self.expect(")", [",", ")"])
        else:
            here = self.cur
            idx = [self.integer("jet index")]
        if len(idx) != m:
            raise DSLSyntaxError(
                f"jet index has {len(idx)} entries but m = {m}", here.line, here.column,
                ["integer"] if m == 1 else ["(" + ",".join(["INT"] * m) + ")"],
            )
        return tuple(idx)

    def axis(self, tok: Token, head: str) -> int:
        m = self.cfg.m
        if tok.text == head:
            if m != 1:
                raise DSLSyntaxError(
                    f"{head} needs an index 1..{m} when m = {m}", tok.line, tok.column,
                    [f"{head}{k}" for k in range(1, m + 1)],
                )
            return 0
        k = int(tok.text[1:])
        if not 1 <= k <= m:
            raise DSLSyntaxError(
                f"{tok.text} is out of range for m = {m}", tok.line, tok.column,
                [f"{head}{j}" for j in range(1, m + 1)] if m > 1 else [head],
            )
        return k - 1

    def call(self, tok: Token) -> Expr:
        name = tok.text
        derivs: Optional[List[int]] = None
        if self.at("{"):
            self.advance()
            derivs = [self.integer()]
            while self.at(","):
                self.advance()
                derivs.append(self.integer())
            self.expect("}", [",", "}"])
        self.expect("(", ["("])
        args = [self.expr_arg()]
        while self.at(","):
            self.advance()
            args.append(self.expr_arg())
        self.expect(")", [",", ")"] + list(_AFTER))
        if name in self.cfg.depvars or name in self.bindings or name in ("x", "u", "where"):
            raise UnknownSymbol(f"{name!r} is not a function", tok.line, tok.column)
        declared = self.fn_arity.get(name)
        if declared is None:
            if self.cfg.strict:
                raise UnknownSymbol(f"undeclared function {name!r}", tok.line, tok.column)
            self.fn_arity[name] = declared = len(args)
        if declared >= 0 and declared != len(args):
            raise ArityMismatch(
                f"{name} takes {declared} argument(s), got {len(args)}", tok.line, tok.column
            )
        if derivs is not None and len(derivs) != len(args):
            raise ArityMismatch(
                f"{name} has {len(args)} argument slot(s) but {len(derivs)} derivative count(s)",
                tok.line, tok.column,
            )
        return Expr.atom(FnSym(name, tuple(derivs) if derivs else (0,) * len(args), tuple(args)))

    def expr_arg(self) -> Expr:
        tok = self.cur
        v = self.value()
        if isinstance(v, DiffOp):
            self.fail("function arguments must be expressions", ["expression"], tok)
        return v

    def resolve(self, tok: Token) -> Value:
        entry = self.bindings[tok.text]
        if entry.value is not None:
            return entry.value
        if entry.busy:
            raise CyclicBinding(f"binding {tok.text!r} refers to itself", tok.line, tok.column)
        entry.busy = True
        sub = _Parser(entry.tokens, self.cfg, self.bindings, self.fn_arity)
        v = sub.value()
        if sub.cur.kind != "END":
            sub.fail("unexpected token in binding", list(_AFTER) + [","])
        entry.value = v
        entry.busy = False
        return v

    # semantics
    def as_op(self, v: Value, tok: Token) -> DiffOp:
        if isinstance(v, DiffOp):
            return v
        return DiffOp.mult(v, self.cfg.m)

    def combine(self, tok: Token, a: Value, b: Value) -> Value:
        op = tok.text
        try:
            if isinstance(a, Expr) and isinstance(b, Expr):
                if op == "+":
                    return a + b
                if op == "-":
                    return a - b
                if op == "*":
                    return a * b
                if op == "/":
                    return a / b
                return compose(self.as_op(a, tok), self.as_op(b, tok))
            if op in "+-":
                a, b = self.as_op(a, tok), self.as_op(b, tok)
                return a + b if op == "+" else a - b
            if op == "*":
                if isinstance(a, DiffOp) and isinstance(b, DiffOp):
                    raise DSLSyntaxError(
                        "'*' between two operators is ambiguous; use '@' for composition",
                        tok.line, tok.column, ["@"],
                    )
                return a.scale(b) if isinstance(a, DiffOp) else b.scale(a)
            if op == "/":
                if isinstance(b, DiffOp):
                    raise DSLSyntaxError("cannot divide by an operator", tok.line, tok.column, ["expression"])
                return a.scale(1 / b)
            return compose(self.as_op(a, tok), self.as_op(b, tok))
        except DimensionMismatch as exc:
            if isinstance(exc, DSLError):
                raise
            raise ShapeError(str(exc), tok.line, tok.column) from None
        except ZeroDivisionError:
            raise DSLSyntaxError("division by zero", tok.line, tok.column, ["nonzero divisor"]) from None

    def power(self, tok: Token, base: Value, n: int) -> Value:
        if isinstance(base, Expr):
            try:
                return base ** n
            except ZeroDivisionError:
                raise DSLSyntaxError("zero raised to a negative power", tok.line, tok.column, ["integer >= 0"]) from None
        if n < 0:
            raise DSLSyntaxError("operators have no negative powers", tok.line, tok.column, ["integer >= 0"])
        out = DiffOp.identity(base.rows, base.m)
        for _ in range(n):
            out = compose(out, base)
        return out


@dataclass
class _Binding:
    tokens: List[Token]
    value: Optional[Value] = None
    busy: bool = False


_RESERVED = {"x", "D", "where"}


def _split_where(tokens: List[Token], cfg: SessionConfig) -> Tuple[List[Token], Dict[str, _Binding]]:
    depth = 0
    cut = None
    for n, tok in enumerate(tokens):
        if tok.kind == "OP" and tok.text in "([{":
            depth += 1
        elif tok.kind == "OP" and tok.text in ")]}":
            depth -= 1
        elif tok.kind == "IDENT" and tok.text == "where" and depth == 0:
            cut = n
            break
    if cut is None:
        return tokens, {}
    end = tokens[-1]
    main = tokens[:cut] + [Token("END", "", tokens[cut].line, tokens[cut].column)]
    rest = tokens[cut + 1:-1]
    bindings: Dict[str, _Binding] = {}
    groups: List[List[Token]] = [[]]
    depth = 0
    for tok in rest:
        if tok.kind == "OP" and tok.text in "([{":
            depth += 1
        elif tok.kind == "OP" and tok.text in ")]}":
            depth -= 1
        if depth == 0 and tok.kind == "OP" and tok.text in ",;":
            groups.append([])
            continue
        groups[-1].append(tok)
    for group in groups:
        if not group:
            tok = end
            raise DSLSyntaxError("empty binding", tok.line, tok.column, ["name"])
        name = group[0]
        if name.kind != "IDENT":
            raise DSLSyntaxError("expected a binding name", name.line, name.column, ["name"])
        if len(group) < 2 or group[1].text != "=":
            tok = group[1] if len(group) > 1 else end
            raise DSLSyntaxError(f"expected '=' after {name.text}", tok.line, tok.column, ["="])
        if len(group) < 3:
            raise DSLSyntaxError("expected an expression after '='", end.line, end.column, _OPERAND)
        reserved = (
            name.text in _RESERVED or name.text in cfg.depvars or name.text in cfg.functions
            or _JET_NAME.match(name.text) or _INDEXED.match(name.text)
        )
        if reserved:
            raise DSLSyntaxError(f"{name.text!r} is reserved and cannot be bound", name.line, name.column, ["name"])
        if name.text in bindings:
            raise DSLSyntaxError(f"{name.text!r} is bound twice", name.line, name.column, ["name"])
        last = group[-1]
        bindings[name.text] = _Binding(group[2:] + [Token("END", "", last.line, last.column + len(last.text))])
    return main, bindings


def _parse_value(src: str, cfg: Optional[SessionConfig]) -> Tuple[Value, SessionConfig, Token]:
    cfg, body = split_header(src, cfg)
    tokens = tokenize(body)
    main, bindings = _split_where(tokens, cfg)
    p = _Parser(main, cfg, bindings)
    first = p.cur
    v = p.value()
    if p.cur.kind != "END":
        p.fail("unexpected token", list(_AFTER) + ["where", "end of input"])
    for name in bindings:
        entry = bindings[name]
        if entry.value is None:
            p.resolve(Token("IDENT", name, entry.tokens[0].line, entry.tokens[0].column))
    return v, cfg, first


def parse_expr(src: str, cfg: Optional[SessionConfig] = None) -> Expr:
    """Parse an expression (optionally with header and ``where`` bindings)."""
    v, _, first = _parse_value(src, cfg)
    if isinstance(v, DiffOp):
        raise DSLSyntaxError("expected an expression, got an operator", first.line, first.column, ["expression"])
    return v


@dataclass
class OperatorSpec:
    source: str
    op: DiffOp
    config: SessionConfig

    @property
    def order(self) -> int:
        return self.op.order

    @property
    def jet_orders(self) -> Dict[int, int]:
        """n(i): coefficient jet order for each operator order i present (m = 1 keyed by |i|)."""
        out: Dict[int, int] = {}
        for (_, _, i), v in self.op.entries.items():
            k = sum(i)
            out[k] = max(out.get(k, -1), v.jet_order())
        return dict(sorted(out.items()))


def parse_operator(src: str, cfg: Optional[SessionConfig] = None) -> OperatorSpec:
    """Parse an operator; plain expressions become multiplication operators."""
    v, cfg, first = _parse_value(src, cfg)
    op = v if isinstance(v, DiffOp) else DiffOp.mult(v, cfg.m)
    if cfg.n_dep > 1 and (op.rows, op.cols) == (1, 1) and op.is_zero:
        op = DiffOp.zero(cfg.n_dep, cfg.n_dep, cfg.m)
    if (op.rows, op.cols) != (cfg.n_dep, cfg.n_dep):
        raise ShapeError(
            f"operator is {op.rows}x{op.cols} but there are {cfg.n_dep} dependent variables",
            first.line, first.column,
        )
    return OperatorSpec(src, op, cfg)


# ---------------------------------------------------------------- rendering


def render_expr(e: Expr, cfg: Optional[SessionConfig] = None) -> str:
    cfg = cfg or SessionConfig()
    return render(e, cfg.m, cfg.n_dep, cfg.depvars)


def _render_scalar(block: Dict[Tuple[int, ...], Expr], cfg: SessionConfig) -> str:
    if not block:
        return "0"
    parts = []
    for i, c in sorted(block.items()):
        ds = []
        for mu, k in enumerate(i):
            if k:
                head = "D" if cfg.m == 1 else f"D{mu + 1}"
                ds.append(head if k == 1 else f"{head}^{k}")
        coeff = render(c, cfg.m, cfg.n_dep, cfg.depvars)
        if not ds:
            parts.append(f"({coeff})")
        elif coeff == "1":
            parts.append("@".join(ds))
        else:
            parts.append(f"({coeff})*" + "@".join(ds))
    return " + ".join(parts)


def render_operator(op: DiffOp, cfg: Optional[SessionConfig] = None) -> str:
    """Text form that :func:`parse_operator` reads back to an equal operator."""
    cfg = cfg or SessionConfig(m=op.m, depvars=tuple(f"u{k + 1}" for k in range(op.rows)) if op.rows > 1 else ("u",))
    if (op.rows, op.cols) == (1, 1):
        return _render_scalar(op.block(0, 0), cfg)
    rows = []
    for r in range(op.rows):
        rows.append("[" + ", ".join(_render_scalar(op.block(r, c), cfg) for c in range(op.cols)) + "]")
    return "[" + ", ".join(rows) + "]"
