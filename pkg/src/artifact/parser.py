"""Concrete syntax: program sources, JSON bindings and assertions, pretty printing.

Program grammar::

    program  := (vardecl | procdecl)* "::" stmt        ("::" optional without decls)
    vardecl  := "var" IDENT ":" type
    type     := "bool" | "int" "[" INT "]"
    procdecl := "proc" IDENT "(" [IDENT ("," IDENT)*] ")" "=" stmt "end"
    stmt     := simple (";" simple)*                   (right associative)
    simple   := "bot" | "skip" | IDENT ":=|0>" | "[" IDENT+ "]" "*=" IDENT
              | "case" IDENT "[" IDENT+ "]" "{" (INT "->" stmt)+ "}"
              | "local" decl+ ";" stmt ";" "release" IDENT+
              | "call" IDENT "(" [IDENT ("," IDENT)*] ")"
              | "(" stmt ")"
    decl     := IDENT [":" type]                       (bool when omitted)

Comments run from ``#`` or ``//`` to the end of the line.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from math import prod
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .assertions import BaseFactor, Pqpt, identity_term, literal, make_pqpt, zero_term
from .errors import DimensionMismatch, QrvError, QrvSyntaxError, StaticError
from .lang import (
    BOOL,
    Bindings,
    Bot,
    Call,
    Case,
    Init,
    Local,
    ParamHole,
    ProcDecl,
    Program,
    Release,
    Seq,
    Skip,
    Stmt,
    Unitary,
    VarDecl,
    VarType,
)
from .operators import ComplexMatrix

KEYWORDS = {"var", "bool", "int", "proc", "end", "bot", "skip", "case", "local", "release", "call"}

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*|//[^\n]*)
  | (?P<init>:=[ \t]*\|0>)
  | (?P<op>::|\*=|->|[;:\[\](){},=])
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | int | op | init | eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise QrvSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            if kind == "ident" and chunk in KEYWORDS:
                kind = "kw"
            out.append(Token(kind, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    out.append(Token("eof", "", line, col))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # token helpers ------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Token | None = None) -> QrvSyntaxError:
        t = tok or self.tok
        found = t.text or "end of input"
        return QrvSyntaxError(f"{msg} (found {found!r})", t.line, t.col)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "kw") and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        if self.tok.kind != "ident":
            raise self.error("expected an identifier")
        t = self.tok
        self.i += 1
        return t.text

    def integer(self) -> int:
        if self.tok.kind != "int":
            raise self.error("expected an integer")
        t = self.tok
        self.i += 1
        return int(t.text)

    def idents_until(self, stop: str) -> tuple[str, ...]:
        names = []
        while self.tok.kind == "ident":
            names.append(self.ident())
        if not names:
            raise self.error("expected at least one register")
        self.expect(stop)
        return tuple(names)

    def arglist(self) -> tuple[str, ...]:
        self.expect("(")
        names: list[str] = []
        if not self.at(")"):
            names.append(self.ident())
            while self.at(","):
                self.i += 1
                names.append(self.ident())
        self.expect(")")
        return tuple(names)

    def vartype(self) -> VarType:
        t = self.tok
        if self.at("bool"):
            self.i += 1
            return BOOL
        if self.at("int"):
            self.i += 1
            self.expect("[")
            n = self.integer()
            self.expect("]")
            try:
                return VarType("int", n)
            except StaticError as exc:
                raise QrvSyntaxError(str(exc), t.line, t.col) from None
        raise self.error("expected a type ('bool' or 'int[N]')")

    # program ------------------------------------------------------------
    def program(self) -> Program:
        vars_: list[VarDecl] = []
        procs: list[ProcDecl] = []
        while self.at("var") or self.at("proc"):
            if self.at("var"):
                self.i += 1
                name = self.ident()
                self.expect(":")
                vars_.append(VarDecl(name, self.vartype()))
            else:
                t = self.expect("proc")
                name = self.ident()
                formals = self.arglist()
                self.expect("=")
                body = self.stmt()
                self.expect("end")
                procs.append(ProcDecl(name, formals, body, pos=(t.line, t.col)))
        if self.at("::"):
            self.i += 1
        elif vars_ or procs:
            raise self.error("expected '::' before the main statement")
        main = self.stmt()
        if self.tok.kind != "eof":
            raise self.error("unexpected trailing input")
        return Program(tuple(vars_), tuple(procs), main)

    def stmt(self) -> Stmt:
        parts = [self.simple()]
        while self.at(";") and not (self.peek().kind == "kw" and self.peek().text == "release"):
            self.i += 1
            parts.append(self.simple())
        out = parts[-1]
        for s in reversed(parts[:-1]):
            out = Seq(s, out, pos=s.pos)
        return out

    def simple(self) -> Stmt:
        t = self.tok
        pos = (t.line, t.col)
        if self.at("bot"):
            self.i += 1
            return Bot(pos=pos)
        if self.at("skip"):
            self.i += 1
            return Skip(pos=pos)
        if self.at("("):
            self.i += 1
            s = self.stmt()
            self.expect(")")
            return s
        if self.at("["):
            self.i += 1
            regs = self.idents_until("]")
            self.expect("*=")
            return Unitary(regs, self.ident(), pos=pos)
        if self.at("case"):
            self.i += 1
            meas = self.ident()
            self.expect("[")
            regs = self.idents_until("]")
            self.expect("{")
            arms: list[tuple[int, Stmt]] = []
            while self.tok.kind == "int":
                m = self.integer()
                self.expect("->")
                arms.append((m, self.stmt()))
            if not arms:
                raise self.error("a case statement needs at least one arm")
            self.expect("}")
            return Case(meas, regs, tuple(arms), pos=pos)
        if self.at("local"):
            self.i += 1
            names: list[str] = []
            types: list[VarType] = []
            while self.tok.kind == "ident":
                names.append(self.ident())
                if self.at(":"):
                    self.i += 1
                    types.append(self.vartype())
                else:
                    types.append(BOOL)
            if not names:
                raise self.error("expected local register names")
            self.expect(";")
            body = self.stmt()
            self.expect(";")
            rt = self.expect("release")
            released = []
            while self.tok.kind == "ident":
                released.append(self.ident())
            if sorted(released) != sorted(names):
                raise QrvSyntaxError(f"release {released} does not match local {names}",
                                     rt.line, rt.col)
            return Local(tuple(names), tuple(types), body, pos=pos)
        if self.at("call"):
            self.i += 1
            name = self.ident()
            return Call(name, self.arglist(), pos=pos)
        if t.kind == "ident":
            name = self.ident()
            if self.tok.kind == "init":
                self.i += 1
                return Init(name, pos=pos)
            raise self.error("expected ':=|0>' after a register name")
        raise self.error("expected a statement")


def _guard(fn, text):
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise QrvSyntaxError(f"input is not UTF-8: {exc.reason}") from None
    try:
        return fn(text)
    except RecursionError:
        raise QrvSyntaxError("nesting too deep") from None


def parse_program(text: str | bytes) -> Program:
    return _guard(lambda t: _Parser(t).program(), text)


def parse_stmt(text: str | bytes) -> Stmt:
    def go(t: str) -> Stmt:
        p = _Parser(t)
        s = p.stmt()
        if p.tok.kind != "eof":
            raise p.error("unexpected trailing input")
        return s
    return _guard(go, text)


# ---------------------------------------------------------------------------
# pretty printing
# ---------------------------------------------------------------------------


def _print_stmt(s: Stmt, indent: int) -> str:
    pad = "  " * indent
    if isinstance(s, Seq):
        first = _print_stmt(s.first, indent)
        if isinstance(s.first, Seq):
            first = pad + "(" + first.strip() + ")"
        return first + ";\n" + _print_stmt(s.second, indent)
    if isinstance(s, Bot):
        return pad + "bot"
    if isinstance(s, Skip):
        return pad + "skip"
    if isinstance(s, Init):
        return f"{pad}{s.var} := |0>"
    if isinstance(s, Unitary):
        return f"{pad}[{' '.join(s.vars)}] *= {s.op}"
    if isinstance(s, Call):
        return f"{pad}call {s.proc}({', '.join(s.args)})"
    if isinstance(s, Case):
        lines = [f"{pad}case {s.meas}[{' '.join(s.vars)}] {{"]
        for m, arm in s.arms:
            lines.append(f"{pad}  {m} ->")
            lines.append(_print_stmt(arm, indent + 2))
        lines.append(pad + "}")
        return "\n".join(lines)
    if isinstance(s, Local):
        decls = " ".join(v if t == BOOL else f"{v}:{t}" for v, t in zip(s.vars, s.types))
        return (f"{pad}local {decls};\n" + _print_stmt(s.body, indent + 1)
                + f";\n{pad}release {' '.join(s.vars)}")
    if isinstance(s, (ParamHole, Release)):
        raise QrvError(f"{type(s).__name__} has no concrete syntax")
    raise QrvError(f"cannot print {s!r}")


def print_stmt(s: Stmt) -> str:
    return _print_stmt(s, 0)


def print_program(p: Program) -> str:
    lines = [f"var {v.name} : {v.type}" for v in p.vars]
    for proc in p.procs:
        lines.append(f"proc {proc.name}({', '.join(proc.formals)}) =")
        lines.append(_print_stmt(proc.body, 1))
        lines.append("end")
    lines.append("::")
    lines.append(print_stmt(p.main))
    return "\n".join(lines) + "\n"


def pretty_print(x: Program | Pqpt | Stmt) -> str:
    if isinstance(x, Program):
        return print_program(x)
    if isinstance(x, Pqpt):
        return json.dumps(pqpt_to_json(x), indent=1)
    return print_stmt(x)


# ---------------------------------------------------------------------------
# matrices, bindings and assertions
# ---------------------------------------------------------------------------

_KET = {"0": np.array([1, 0]), "1": np.array([0, 1]),
        "+": np.array([1, 1]) / np.sqrt(2), "-": np.array([1, -1]) / np.sqrt(2)}


def ket(label: str, d: int) -> np.ndarray:
    """``|label>`` in dimension ``d``: a qubit string over 0/1/+/- or a decimal index."""
    label = label.strip()
    if label and all(c in _KET for c in label) and 2 ** len(label) == d:
        out = np.ones(1)
        for c in label:
            out = np.kron(out, _KET[c])
        return out.astype(complex)
    if label.isdigit() and int(label) < d:
        v = np.zeros(d, dtype=complex)
        v[int(label)] = 1.0
        return v
    raise DimensionMismatch(f"cannot read |{label}> in dimension {d}")


_OUTER = re.compile(r"^\s*\|([^<>|]*)>\s*<([^<>|]*)\|\s*$")


def parse_matrix(x: Any, d: int | None = None, matrices: Mapping[str, Any] | None = None) -> np.ndarray:
    """Matrix literal: rows of numbers or ``[re, im]`` pairs, a name, ``I``, ``0`` or ``|a><b|``."""
    if isinstance(x, str):
        if matrices and x in matrices:
            return parse_matrix(matrices[x], d, matrices)
        if d is None:
            raise DimensionMismatch(f"cannot size the matrix {x!r} without a dimension")
        if x == "I":
            return np.eye(d, dtype=complex)
        if x == "0":
            return np.zeros((d, d), dtype=complex)
        m = _OUTER.match(x)
        if m:
            return np.outer(ket(m.group(1), d), ket(m.group(2), d).conj())
        raise QrvSyntaxError(f"unknown matrix {x!r}")
    try:
        rows = [[complex(z[0], z[1]) if isinstance(z, (list, tuple)) else complex(z) for z in row]
                for row in x]
        arr = np.array(rows, dtype=complex)
    except (TypeError, ValueError, IndexError) as exc:
        raise QrvSyntaxError(f"malformed matrix literal: {exc}") from None
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"matrix literal of shape {arr.shape} is not square")
    if d is not None and arr.shape[0] != d:
        raise DimensionMismatch(f"matrix of dimension {arr.shape[0]}, expected {d}")
    return arr


def matrix_json(a: np.ndarray, digits: int = 12) -> list:
    def num(v: float) -> float:
        return float(f"{v:.{digits}g}") + 0.0
    return [[[num(z.real), num(z.imag)] for z in row] for row in np.asarray(a)]


def parse_bindings(text: str | Mapping) -> Bindings:
    data = json.loads(text) if isinstance(text, str) else dict(text)
    mats = data.get("matrices", {})
    try:
        unitaries = {k: parse_matrix(v, matrices=mats) for k, v in data.get("unitaries", {}).items()}
        measurements = {k: {int(m): parse_matrix(op, matrices=mats) for m, op in v.items()}
                        for k, v in data.get("measurements", {}).items()}
        predicates = {k: parse_matrix(v, matrices=mats) for k, v in data.get("predicates", {}).items()}
    except (AttributeError, ValueError) as exc:
        raise QrvSyntaxError(f"malformed bindings: {exc}") from None
    return Bindings(unitaries, measurements, predicates)


def bindings_json(b: Bindings) -> dict:
    return {"unitaries": {k: matrix_json(v) for k, v in b.unitaries.items()},
            "measurements": {k: {str(m): matrix_json(op) for m, op in v.items()}
                             for k, v in b.measurements.items()},
            "predicates": {k: matrix_json(v) for k, v in b.predicates.items()}}


def assertion_from_obj(obj: Any, dims: Mapping[str, int] | None = None,
                       matrices: Mapping[str, Any] | None = None) -> Pqpt:
    """Build a term from its JSON object form."""
    dims = dict(dims or {})
    if not isinstance(obj, Mapping):
        raise QrvSyntaxError("an assertion must be a JSON object")
    mats = dict(matrices or {})
    mats.update(obj.get("matrices", {}))
    dims.update(obj.get("dims", {}) if isinstance(obj.get("dims"), Mapping) else {})

    def space(vars_: Sequence[str], sample: Any = None) -> tuple[int, ...]:
        if isinstance(obj.get("dims"), list):
            return tuple(obj["dims"])
        missing = [v for v in vars_ if v not in dims]
        if missing:
            if len(vars_) == 1 and sample is not None and not isinstance(sample, str):
                return (len(sample),)
            raise DimensionMismatch(f"unknown dimensions for registers {missing}")
        return tuple(dims[v] for v in vars_)

    if "literal" in obj:
        vars_ = tuple(obj.get("vars", ()))
        ds = space(vars_, obj["literal"])
        return literal(parse_matrix(obj["literal"], prod(ds), mats), vars_, ds)
    if "pvar" in obj:
        vars_ = tuple(obj.get("vars", ()))
        ds = space(vars_)
        return make_pqpt([BaseFactor(obj["pvar"], vars_)], [np.eye(prod(ds))], [], vars_, ds)
    if "base" in obj:
        base = []
        for f in obj["base"]:
            if f.get("pvar", "I") != "I":
                base.append(BaseFactor(f["pvar"], tuple(f["vars"])))
        vars_ = tuple(obj.get("vars") or [v for f in obj["base"] for v in f["vars"]])
        ds = space(vars_)
        d = prod(ds)
        E = [parse_matrix(k, d, mats) for k in obj.get("E", [])]
        F = [parse_matrix(k, d, mats) for k in obj.get("F", [])]
        return make_pqpt(base, E, F, vars_, ds)
    if "const" in obj:
        vars_ = tuple(obj.get("vars", ()))
        ds = space(vars_)
        return identity_term(vars_, ds) if obj["const"] == "I" else zero_term(vars_, ds)
    raise QrvSyntaxError("assertion needs one of 'literal', 'pvar', 'base'")


def parse_assertion(text: str | bytes, dims: Mapping[str, int] | None = None,
                    matrices: Mapping[str, Any] | None = None) -> Pqpt:
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="strict")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise QrvSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return assertion_from_obj(obj, dims, matrices)


def pqpt_to_json(p: Pqpt) -> dict:
    return {"vars": list(p.vars), "dims": list(p.dims),
            "base": [{"vars": list(f.vars), "pvar": f.pvar} for f in p.base],
            "E": [matrix_json(k) for k in p.E.kraus_array] if p.base else [],
            "F": [matrix_json(k) for k in p.F.kraus_array]}


def state_from_text(text: str, vars: Sequence[str], dims: Sequence[int]) -> ComplexMatrix:
    """Input state given as ``|a><b|``, ``I`` (maximally mixed) or a JSON matrix."""
    d = prod(dims)
    t = text.strip()
    if t == "I":
        return ComplexMatrix(np.eye(d) / d, tuple(vars), tuple(dims))
    if t.startswith("["):
        return ComplexMatrix(parse_matrix(json.loads(t), d), tuple(vars), tuple(dims))
    return ComplexMatrix(parse_matrix(t, d), tuple(vars), tuple(dims))


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

CORPUS_PREFIX = "corpus:"


def corpus_dir() -> Path:
    return Path(__file__).resolve().parent / "corpus"


EXAMPLES_PREFIX = "examples/"


def resolve_path(path: str | Path) -> Path:
    """``corpus:name`` and (when no such file exists) ``examples/name`` point into the bundled corpus."""
    s = str(path)
    if s.startswith(CORPUS_PREFIX):
        return corpus_dir() / s[len(CORPUS_PREFIX):]
    if s.startswith(EXAMPLES_PREFIX) and not Path(s).exists():
        return corpus_dir() / s[len(EXAMPLES_PREFIX):]
    return Path(s)


def bindings_path_for(program_path: Path) -> Path:
    return program_path.with_name(program_path.stem + ".bind.json")


def load_program(path: str | Path, bindings: str | Path | None = None) -> Program:
    p = resolve_path(path)
    prog = parse_program(p.read_bytes())
    bpath = resolve_path(bindings) if bindings is not None else bindings_path_for(p)
    b = parse_bindings(bpath.read_text(encoding="utf-8")) if bpath.exists() else Bindings()
    return prog.with_bindings(b)
