"""Experiment-script language: lexer, parser, printer and interpreter.

A script drives one simulated device through reset/write/erase/read
operations, optionally inside ``sweep`` and ``repeat`` loops::

    sweep dt from 0ms to 8ms step 0.1ms {
        repeat 100 { reset; apply pre(dt) - post(0ms); read; }
    }

Every quantity carries a unit. Quantities are held exactly (``Decimal``) in
canonical units, microseconds and volts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from .device import Device, DeviceParams, Level, classify_state
from .waveform import DEFAULT_PULSES, PulseShapeParams, Segment, Signal, make_post, make_pre, subtract

TIME, VOLTAGE = "time", "voltage"

# unit -> (dimension, factor to canonical unit)
UNITS = {
    "s": (TIME, Decimal(1000000)),
    "ms": (TIME, Decimal(1000)),
    "us": (TIME, Decimal(1)),
    "µs": (TIME, Decimal(1)),
    "V": (VOLTAGE, Decimal(1)),
    "mV": (VOLTAGE, Decimal("0.001")),
}
CANONICAL_UNIT = {TIME: "us", VOLTAGE: "V"}

KEYWORDS = frozenset({
    "let", "reset", "read", "record", "write", "erase", "form", "apply",
    "sweep", "from", "to", "step", "repeat", "pre", "post", "pulse",
})
PUNCT = frozenset("(),;{}=-")

# Extra spawn-key component for second and later resets within one loop iteration.
_RESET_ORDINAL_BASE = 1 << 32


class ScriptError(Exception):
    category = "script"

    def __init__(self, message: str, line: int, col: int):
        super().__init__(message)
        self.message = message
        self.line = line
        self.col = col

    def __str__(self):
        return f"{self.line}:{self.col}: {self.category} error: {self.message}"


class LexError(ScriptError):
    category = "lexical"


class ParseError(ScriptError):
    category = "syntax"

    def __init__(self, message: str, line: int, col: int, expected: Iterable[str] = ()):
        self.expected: FrozenSet[str] = frozenset(expected)
        if self.expected:
            message = f"{message}; expected one of: {', '.join(sorted(self.expected))}"
        super().__init__(message, line, col)


class SemanticError(ScriptError):
    category = "semantic"


class ExecutionError(ScriptError):
    category = "runtime"


# --- AST ---------------------------------------------------------------------

Pos = Tuple[int, int]
_pos = lambda: field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Quantity:
    value: Decimal
    dim: str

    @classmethod
    def of(cls, magnitude, unit: str) -> "Quantity":
        dim, factor = UNITS[unit]
        return cls(Decimal(str(magnitude)) * factor, dim)

    @property
    def canonical(self) -> float:
        return float(self.value)

    def __str__(self):
        return f"{_fmt_decimal(self.value)}{CANONICAL_UNIT[self.dim]}"


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = _pos()


QExpr = Union[Quantity, Var]


@dataclass(frozen=True)
class Pre:
    onset: QExpr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Post:
    onset: QExpr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Pulse:
    onset: QExpr
    width: QExpr
    amplitude: QExpr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Diff:
    left: "WaveExpr"
    right: "WaveExpr"
    pos: Pos = _pos()


WaveExpr = Union[Pre, Post, Pulse, Diff]


@dataclass(frozen=True)
class Reset:
    pos: Pos = _pos()


@dataclass(frozen=True)
class Read:
    pos: Pos = _pos()


@dataclass(frozen=True)
class Record:
    label: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class Write:
    amplitude: QExpr
    width: QExpr
    alias: str = "write"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Erase:
    amplitude: QExpr
    width: QExpr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Apply:
    expr: WaveExpr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Let:
    name: str
    quantity: Quantity
    pos: Pos = _pos()


@dataclass(frozen=True)
class Sweep:
    var: str
    start: Quantity
    stop: Quantity
    step: Quantity
    body: Tuple["Statement", ...]
    pos: Pos = _pos()

    @property
    def count(self) -> int:
        return int((self.stop.value - self.start.value) // self.step.value) + 1

    def values(self) -> List[Quantity]:
        return [Quantity(self.start.value + k * self.step.value, self.start.dim)
                for k in range(self.count)]


@dataclass(frozen=True)
class Repeat:
    count: int
    body: Tuple["Statement", ...]
    pos: Pos = _pos()


Statement = Union[Reset, Read, Record, Write, Erase, Apply, Let, Sweep, Repeat]


@dataclass(frozen=True)
class Program:
    statements: Tuple[Statement, ...]


# --- lexer -------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int
    unit: Optional[str] = None


def _is_digit(ch: str) -> bool:
    return "0" <= ch <= "9"


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch == "_"


def _is_ident_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k: int = 1):
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line, col = line + 1, 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n\f\v":
            advance()
        elif ch == "#":
            while i < n and text[i] != "\n":
                advance()
        elif _is_digit(ch) or (ch == "." and i + 1 < n and _is_digit(text[i + 1])):
            start_line, start_col, j = line, col, i
            while i < n and _is_digit(text[i]):
                advance()
            if i < n and text[i] == ".":
                advance()
                while i < n and _is_digit(text[i]):
                    advance()
            number = text[j:i]
            unit = None
            if i < n and _is_ident_start(text[i]):
                ul, uc, k = line, col, i
                while i < n and _is_ident_char(text[i]):
                    advance()
                unit = text[k:i]
                if unit not in UNITS:
                    raise LexError(f"unknown unit {unit!r}", ul, uc)
            tokens.append(Token("NUMBER", number, start_line, start_col, unit))
        elif _is_ident_start(ch):
            start_line, start_col, j = line, col, i
            while i < n and _is_ident_char(text[i]):
                advance()
            word = text[j:i]
            tokens.append(Token(word if word in KEYWORDS else "IDENT", word, start_line, start_col))
        elif ch == '"':
            start_line, start_col = line, col
            advance()
            chars = []
            while True:
                if i >= n or text[i] == "\n":
                    raise LexError("unterminated string", start_line, start_col)
                c = text[i]
                if c == '"':
                    advance()
                    break
                if c == "\\":
                    if i + 1 >= n:
                        raise LexError("unterminated string", start_line, start_col)
                    esc = text[i + 1]
                    if esc not in '"\\n':
                        raise LexError(f"unknown escape \\{esc}", line, col)
                    chars.append("\n" if esc == "n" else esc)
                    advance(2)
                else:
                    chars.append(c)
                    advance()
            tokens.append(Token("STRING", "".join(chars), start_line, start_col))
        elif ch in PUNCT:
            tokens.append(Token(ch, ch, line, col))
            advance()
        else:
            raise LexError(f"unexpected character {ch!r}", line, col)
    tokens.append(Token("EOF", "", line, col))
    return tokens


# --- parser ------------------------------------------------------------------

_STATEMENT_START = frozenset({"let", "reset", "read", "record", "write", "erase", "form",
                              "apply", "sweep", "repeat"})
_TERM_START = frozenset({"pre", "post", "pulse"})


class _Scope:
    def __init__(self, parent: Optional["_Scope"] = None):
        self.parent = parent
        self.names: Dict[str, str] = {}

    def lookup(self, name: str) -> Optional[str]:
        scope = self
        while scope is not None:
            if name in scope.names:
                return scope.names[name]
            scope = scope.parent
        return None


class _Parser:
    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, expected: Iterable[str], what: str = "unexpected") -> ParseError:
        t = self.tok
        found = "end of input" if t.kind == "EOF" else repr(t.text)
        return ParseError(f"{what} {found}", t.line, t.col, expected)

    def expect(self, kind: str) -> Token:
        if self.tok.kind != kind:
            raise self.fail({kind})
        t = self.tok
        self.i += 1
        return t

    def accept(self, kind: str) -> Optional[Token]:
        if self.tok.kind == kind:
            t = self.tok
            self.i += 1
            return t
        return None

    # program / statements

    def program(self) -> Program:
        scope = _Scope()
        stmts = []
        while self.tok.kind != "EOF":
            if self.tok.kind not in _STATEMENT_START:
                raise self.fail(_STATEMENT_START | {"EOF"})
            stmts.append(self.statement(scope))
        if not stmts:
            raise ParseError("empty program", self.tok.line, self.tok.col, _STATEMENT_START)
        return Program(tuple(stmts))

    def block(self, scope: _Scope) -> Tuple[Statement, ...]:
        self.expect("{")
        stmts = []
        while not self.accept("}"):
            if self.tok.kind not in _STATEMENT_START:
                raise self.fail(_STATEMENT_START | {"}"})
            stmts.append(self.statement(scope))
        return tuple(stmts)

    def statement(self, scope: _Scope) -> Statement:
        t = self.tok
        pos = (t.line, t.col)
        kind = t.kind
        if kind == "let":
            self.i += 1
            name = self.expect("IDENT").text
            self.expect("=")
            q = self.quantity()
            self.expect(";")
            scope.names[name] = q.dim
            return Let(name, q, pos)
        if kind == "sweep":
            self.i += 1
            var = self.expect("IDENT").text
            self.expect("from")
            start = self.quantity()
            self.expect("to")
            stop = self.quantity()
            self.expect("step")
            step_tok = self.tok
            step = self.quantity()
            if not start.dim == stop.dim == step.dim:
                raise SemanticError("sweep bounds and step must share a unit dimension", *pos)
            if step.value <= 0:
                raise SemanticError("sweep step must be > 0", step_tok.line, step_tok.col)
            if start.value > stop.value:
                raise SemanticError("sweep 'from' must not exceed 'to'", *pos)
            inner = _Scope(scope)
            inner.names[var] = start.dim
            body = self.block(inner)
            return Sweep(var, start, stop, step, body, pos)
        if kind == "repeat":
            self.i += 1
            n = self.tok
            if n.kind != "NUMBER" or n.unit is not None or "." in n.text:
                raise self.fail({"INT"})
            self.i += 1
            if len(n.text.lstrip("0")) > 9:
                raise SemanticError("repeat count too large", n.line, n.col)
            count = int(n.text)
            if count < 1:
                raise SemanticError("repeat count must be >= 1", n.line, n.col)
            body = self.block(_Scope(scope))
            return Repeat(count, body, pos)
        stmt = self.action(scope, pos)
        self.expect(";")
        return stmt

    def action(self, scope: _Scope, pos: Pos) -> Statement:
        kind = self.tok.kind
        self.i += 1
        if kind == "reset":
            return Reset(pos)
        if kind == "read":
            return Read(pos)
        if kind == "record":
            return Record(self.expect("STRING").text, pos)
        if kind in ("write", "erase", "form"):
            self.expect("(")
            amp = self.qexpr(scope, VOLTAGE)
            self.expect(",")
            width = self.qexpr(scope, TIME)
            self.expect(")")
            if isinstance(amp, Quantity):
                if kind == "erase" and not amp.value < 0:
                    raise SemanticError("erase amplitude must be negative", *pos)
                if kind != "erase" and not amp.value > 0:
                    raise SemanticError(f"{kind} amplitude must be positive", *pos)
            if isinstance(width, Quantity) and not width.value > 0:
                raise SemanticError("pulse width must be > 0", *pos)
            if kind == "erase":
                return Erase(amp, width, pos)
            return Write(amp, width, kind, pos)
        if kind == "apply":
            return Apply(self.waveexpr(scope), pos)
        raise AssertionError(kind)

    # expressions

    def waveexpr(self, scope: _Scope) -> WaveExpr:
        left = self.term(scope)
        while self.tok.kind == "-":
            t = self.tok
            self.i += 1
            left = Diff(left, self.term(scope), (t.line, t.col))
        return left

    def term(self, scope: _Scope) -> WaveExpr:
        t = self.tok
        pos = (t.line, t.col)
        if t.kind not in _TERM_START:
            raise self.fail(_TERM_START)
        self.i += 1
        self.expect("(")
        if t.kind == "pulse":
            onset = self.qexpr(scope, TIME)
            self.expect(",")
            width = self.qexpr(scope, TIME)
            self.expect(",")
            amp = self.qexpr(scope, VOLTAGE)
            self.expect(")")
            if isinstance(width, Quantity) and not width.value > 0:
                raise SemanticError("pulse width must be > 0", *pos)
            return Pulse(onset, width, amp, pos)
        onset = self.qexpr(scope, TIME)
        self.expect(")")
        return Pre(onset, pos) if t.kind == "pre" else Post(onset, pos)

    def qexpr(self, scope: _Scope, dim: str) -> QExpr:
        t = self.tok
        if t.kind == "IDENT":
            self.i += 1
            bound = scope.lookup(t.text)
            if bound is None:
                raise SemanticError(f"unbound variable {t.text!r}", t.line, t.col)
            if bound != dim:
                raise SemanticError(f"{t.text!r} is a {bound}, expected a {dim}", t.line, t.col)
            return Var(t.text, (t.line, t.col))
        if t.kind not in ("NUMBER", "-"):
            raise self.fail({"NUMBER", "IDENT"})
        q = self.quantity()
        if q.dim != dim:
            raise SemanticError(f"expected a {dim} quantity, got a {q.dim}", t.line, t.col)
        return q

    def quantity(self) -> Quantity:
        neg = self.accept("-") is not None
        t = self.tok
        if t.kind != "NUMBER":
            raise self.fail({"NUMBER"})
        self.i += 1
        unit = t.unit
        if unit is None:
            u = self.tok
            if u.kind == "IDENT" and u.text in UNITS:
                unit = u.text
                self.i += 1
            else:
                raise ParseError("quantity needs a unit", u.line, u.col, sorted(UNITS))
        try:
            mag = Decimal(t.text)
        except InvalidOperation:  # pragma: no cover - lexer only emits valid numerals
            raise LexError(f"bad number {t.text!r}", t.line, t.col) from None
        q = Quantity.of(-mag if neg else mag, unit)
        return q


def parse(text: str) -> Program:
    """Parse script source; raises a positioned :class:`ScriptError` subclass."""
    parser = _Parser(tokenize(text))
    try:
        return parser.program()
    except RecursionError:
        t = parser.tok
        raise ParseError("blocks nested too deeply", t.line, t.col) from None


# --- printer -----------------------------------------------------------------

def _fmt_decimal(d: Decimal) -> str:
    s = format(d.normalize(), "f")
    return "0" if s in ("-0", "0") else s


def _fmt_q(q: QExpr) -> str:
    return q.name if isinstance(q, Var) else str(q)


def _fmt_wave(e: WaveExpr) -> str:
    if isinstance(e, Pre):
        return f"pre({_fmt_q(e.onset)})"
    if isinstance(e, Post):
        return f"post({_fmt_q(e.onset)})"
    if isinstance(e, Pulse):
        return f"pulse({_fmt_q(e.onset)}, {_fmt_q(e.width)}, {_fmt_q(e.amplitude)})"
    if isinstance(e.right, Diff):
        raise ValueError("right-nested differences have no textual form")
    return f"{_fmt_wave(e.left)} - {_fmt_wave(e.right)}"


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def _print_stmts(stmts: Sequence[Statement], depth: int, out: List[str]) -> None:
    pad = "    " * depth
    for s in stmts:
        if isinstance(s, Reset):
            out.append(f"{pad}reset;")
        elif isinstance(s, Read):
            out.append(f"{pad}read;")
        elif isinstance(s, Record):
            out.append(f'{pad}record "{_escape(s.label)}";')
        elif isinstance(s, Write):
            out.append(f"{pad}{s.alias}({_fmt_q(s.amplitude)}, {_fmt_q(s.width)});")
        elif isinstance(s, Erase):
            out.append(f"{pad}erase({_fmt_q(s.amplitude)}, {_fmt_q(s.width)});")
        elif isinstance(s, Apply):
            out.append(f"{pad}apply {_fmt_wave(s.expr)};")
        elif isinstance(s, Let):
            out.append(f"{pad}let {s.name} = {s.quantity};")
        elif isinstance(s, Sweep):
            out.append(f"{pad}sweep {s.var} from {s.start} to {s.stop} step {s.step} {{")
            _print_stmts(s.body, depth + 1, out)
            out.append(f"{pad}}}")
        elif isinstance(s, Repeat):
            out.append(f"{pad}repeat {s.count} {{")
            _print_stmts(s.body, depth + 1, out)
            out.append(f"{pad}}}")
        else:
            raise TypeError(f"not a statement: {s!r}")


def print_program(p: Program) -> str:
    """Canonical source text; quantities are emitted in µs and V."""
    out: List[str] = []
    _print_stmts(p.statements, 0, out)
    return "\n".join(out) + "\n"


# --- interpreter -------------------------------------------------------------

@dataclass(frozen=True)
class LogRow:
    row: int
    label: str
    resistance: Optional[float] = None
    state: Optional[Level] = None
    bindings: Tuple[Tuple[str, Quantity], ...] = ()


@dataclass
class RunLog:
    rows: List[LogRow] = field(default_factory=list)
    events: List[Tuple[str, str]] = field(default_factory=list)

    def reads(self) -> List[LogRow]:
        return [r for r in self.rows if r.resistance is not None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "label", "resistance_ohm", "state"])
        for r in self.rows:
            w.writerow([r.row, r.label,
                        "" if r.resistance is None else f"{r.resistance:.3f}",
                        "" if r.state is None else r.state.value])
        return buf.getvalue()

    def to_records(self) -> List[dict]:
        return [{"row": r.row, "label": r.label, "resistance_ohm": r.resistance,
                 "state": None if r.state is None else r.state.value} for r in self.rows]


class _Interpreter:
    def __init__(self, params: DeviceParams, seed: int, pulse_params: PulseShapeParams):
        self.params = params
        self.seed = seed
        self.pulses = pulse_params
        self.device = Device(params, (seed,))
        self.log = RunLog()
        self.path: List[int] = []
        self.resets: Dict[Tuple[int, ...], int] = {(): 1}
        self.sweep_vars: List[Tuple[str, Quantity]] = []

    def value(self, q: QExpr, env: Dict[str, Quantity]) -> float:
        return (env[q.name] if isinstance(q, Var) else q).canonical

    def signal(self, e: WaveExpr, env: Dict[str, Quantity]) -> Signal:
        if isinstance(e, Diff):
            return subtract(self.signal(e.left, env), self.signal(e.right, env))
        onset = self.value(e.onset, env)
        if onset < 0:
            raise ExecutionError(f"negative onset {onset} us", *e.pos)
        if isinstance(e, Pre):
            return make_pre(onset, self.pulses)
        if isinstance(e, Post):
            return make_post(onset, self.pulses)
        width = self.value(e.width, env)
        if not width > 0:
            raise ExecutionError("pulse width must be > 0", *e.pos)
        return Signal((Segment.from_us(onset, onset + width, self.value(e.amplitude, env)),))

    def pulse(self, s: Union[Write, Erase], env: Dict[str, Quantity]) -> None:
        v, w = self.value(s.amplitude, env), self.value(s.width, env)
        name = "erase" if isinstance(s, Erase) else s.alias
        if name == "erase" and not v < 0:
            raise ExecutionError(f"erase amplitude must be negative, got {v} V", *s.pos)
        if name != "erase" and not v > 0:
            raise ExecutionError(f"{name} amplitude must be positive, got {v} V", *s.pos)
        if not w > 0:
            raise ExecutionError("pulse width must be > 0", *s.pos)
        self.log.events.append((name, f"{v} V, {w} us"))
        self.device.apply_segment(Segment.from_us(0.0, w, v))

    def reset(self) -> None:
        key = tuple(self.path)
        n = self.resets.get(key, 0)
        self.resets[key] = n + 1
        stream = (self.seed, *key) if n == 0 else (self.seed, *key, _RESET_ORDINAL_BASE + n)
        self.device = Device(self.params, stream)
        self.device.force_reset()
        self.log.events.extend((e.kind, e.detail) for e in self.device.events)

    def add_row(self, label: str, resistance=None, state=None) -> None:
        self.log.rows.append(LogRow(len(self.log.rows), label, resistance, state,
                                    tuple(self.sweep_vars)))

    def run(self, stmts: Sequence[Statement], env: Dict[str, Quantity]) -> None:
        env = dict(env)
        for s in stmts:
            if isinstance(s, Reset):
                self.reset()
            elif isinstance(s, Read):
                r = self.device.read()
                label = "read"
                if self.sweep_vars:
                    label += "[" + ",".join(f"{k}={q}" for k, q in self.sweep_vars) + "]"
                self.add_row(label, r, classify_state(r, self.params))
            elif isinstance(s, Record):
                self.add_row(s.label)
            elif isinstance(s, (Write, Erase)):
                self.pulse(s, env)
            elif isinstance(s, Apply):
                self.device.apply_signal(self.signal(s.expr, env))
            elif isinstance(s, Let):
                env[s.name] = s.quantity
            elif isinstance(s, Sweep):
                for k, q in enumerate(s.values()):
                    self.path.append(k)
                    self.sweep_vars.append((s.var, q))
                    self.run(s.body, {**env, s.var: q})
                    self.sweep_vars.pop()
                    self.path.pop()
            elif isinstance(s, Repeat):
                for k in range(s.count):
                    self.path.append(k)
                    self.run(s.body, env)
                    self.path.pop()
            else:
                raise TypeError(f"not a statement: {s!r}")


def execute(p: Program, params: Optional[DeviceParams] = None, seed: int = 0,
            pulse_params: PulseShapeParams = DEFAULT_PULSES) -> RunLog:
    """Run a program against one simulated device.

    ``reset`` starts a fresh trial: the device returns to its pre-programmed
    HRS state on a random stream keyed by ``(seed, *loop_indices)`` and is
    erase-verified. This is the same keying the STDP sweep uses per cell.
    """
    interp = _Interpreter(params or DeviceParams(), seed, pulse_params)
    interp.run(p.statements, {})
    return interp.log


def aggregate_reads(log: RunLog, var: str = "dt") -> Dict[Quantity, Tuple[int, int]]:
    """Group reads by the value of sweep variable ``var``: ``{value: (trials, writes)}``."""
    out: Dict[Quantity, Tuple[int, int]] = {}
    for r in log.reads():
        bound = dict(r.bindings)
        if var not in bound:
            continue
        n, w = out.get(bound[var], (0, 0))
        out[bound[var]] = (n + 1, w + (r.state is Level.LRS))
    return out
