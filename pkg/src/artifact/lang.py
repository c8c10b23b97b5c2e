"""Abstract syntax of the recursive quantum language, static checks and unrolling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from math import prod
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    ArityMismatch,
    FreshExhausted,
    IncompleteMeasurement,
    MissingArm,
    NonUnitary,
    TypeMismatch,
    UnknownName,
)
from .operators import TOL_EQ, max_abs

FRESH_PREFIX = "$r"
FRESH_LIMIT = 1_000_000


@dataclass(frozen=True)
class VarType:
    kind: str  # "bool" | "int"
    dim: int

    def __post_init__(self) -> None:
        if self.kind not in ("bool", "int"):
            raise TypeMismatch(f"unknown register kind {self.kind!r}")
        if self.kind == "bool" and self.dim != 2:
            raise TypeMismatch("Boolean registers have dimension 2")
        if self.dim < 2 or self.dim & (self.dim - 1):
            raise TypeMismatch(f"integer registers need a power-of-two dimension >= 2, got {self.dim}")

    def __str__(self) -> str:
        return "bool" if self.kind == "bool" else f"int[{self.dim}]"


BOOL = VarType("bool", 2)


def int_type(dim: int) -> VarType:
    return VarType("int", dim)


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: VarType

    @property
    def dim(self) -> int:
        return self.type.dim


# ---------------------------------------------------------------------------
# statements
# ---------------------------------------------------------------------------

Pos = Union[tuple[int, int], None]


@dataclass(frozen=True)
class Bot:
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Skip:
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Init:
    var: str
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Unitary:
    vars: tuple[str, ...]
    op: str
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Seq:
    first: "Stmt"
    second: "Stmt"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Case:
    meas: str
    vars: tuple[str, ...]
    arms: tuple[tuple[int, "Stmt"], ...]
    pos: Pos = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        # arms are keyed by outcome; source order is irrelevant
        object.__setattr__(self, "arms", tuple(sorted(self.arms, key=lambda a: a[0])))

    def arm(self, m: int) -> "Stmt":
        for k, s in self.arms:
            if k == m:
                return s
        raise MissingArm(f"no arm for outcome {m} of {self.meas}")


@dataclass(frozen=True)
class Local:
    vars: tuple[str, ...]
    types: tuple[VarType, ...]
    body: "Stmt"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    proc: str
    args: tuple[str, ...] = ()
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ParamHole:
    """Program parameter standing for an arbitrary quantum operation on ``vars``."""

    name: str
    vars: tuple[str, ...]
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Release:
    """Run-time tailer produced by the (Loc) transition; never written in source."""

    vars: tuple[str, ...]
    pos: Pos = field(default=None, compare=False, repr=False)


Stmt = Union[Bot, Skip, Init, Unitary, Seq, Case, Local, Call, ParamHole, Release]


def seq(*stmts: Stmt) -> Stmt:
    """Right-nested sequential composition."""
    if not stmts:
        return Skip()
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(s, out)
    return out


def flatten_seq(s: Stmt) -> list[Stmt]:
    if isinstance(s, Seq):
        return flatten_seq(s.first) + flatten_seq(s.second)
    return [s]


@dataclass(frozen=True)
class ProcDecl:
    name: str
    formals: tuple[str, ...]
    body: Stmt
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass
class Bindings:
    """Named matrices referenced by a program."""

    unitaries: dict[str, np.ndarray] = field(default_factory=dict)
    measurements: dict[str, dict[int, np.ndarray]] = field(default_factory=dict)
    predicates: dict[str, np.ndarray] = field(default_factory=dict)

    def merged(self, other: "Bindings") -> "Bindings":
        return Bindings({**self.unitaries, **other.unitaries},
                        {**self.measurements, **other.measurements},
                        {**self.predicates, **other.predicates})


@dataclass(frozen=True)
class Program:
    vars: tuple[VarDecl, ...]
    procs: tuple[ProcDecl, ...]
    main: Stmt
    bindings: Bindings | None = field(default=None, compare=False)
    formal_types: tuple[tuple[str, tuple[VarType, ...]], ...] | None = field(
        default=None, compare=False)

    @property
    def global_vars(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.vars)

    @property
    def global_dims(self) -> tuple[int, ...]:
        return tuple(v.dim for v in self.vars)

    def var_type(self, name: str) -> VarType:
        for v in self.vars:
            if v.name == name:
                return v.type
        raise UnknownName(f"undeclared register {name!r}")

    def proc(self, name: str) -> ProcDecl:
        for p in self.procs:
            if p.name == name:
                return p
        raise UnknownName(f"undeclared procedure {name!r}")

    def proc_map(self) -> dict[str, ProcDecl]:
        return {p.name: p for p in self.procs}

    def formal_type_map(self) -> dict[str, tuple[VarType, ...]]:
        if self.formal_types is None:
            raise TypeMismatch("program has not been type checked")
        return dict(self.formal_types)

    def with_bindings(self, b: Bindings) -> "Program":
        return replace(self, bindings=b, formal_types=None)


# ---------------------------------------------------------------------------
# traversal helpers
# ---------------------------------------------------------------------------


def children(s: Stmt) -> list[Stmt]:
    if isinstance(s, Seq):
        return [s.first, s.second]
    if isinstance(s, Case):
        return [a for _, a in s.arms]
    if isinstance(s, Local):
        return [s.body]
    return []


def walk(s: Stmt) -> Iterable[Stmt]:
    yield s
    for c in children(s):
        yield from walk(c)


def stmt_registers(s: Stmt) -> tuple[str, ...]:
    """Registers named directly by ``s`` (not by its children)."""
    if isinstance(s, Init):
        return (s.var,)
    if isinstance(s, (Unitary, Case, ParamHole, Release)):
        return s.vars
    if isinstance(s, Call):
        return s.args
    return ()


def free_vars(s: Stmt) -> set[str]:
    """Registers occurring free in ``s`` (call arguments included, callee bodies not)."""
    if isinstance(s, Local):
        return free_vars(s.body) - set(s.vars)
    out = set(stmt_registers(s))
    for c in children(s):
        out |= free_vars(c)
    return out


def all_names(s: Stmt) -> set[str]:
    out = set(stmt_registers(s))
    if isinstance(s, Local):
        out |= set(s.vars)
    for c in children(s):
        out |= all_names(c)
    return out


def map_stmt(s: Stmt, f: Callable[[Stmt], Stmt | None]) -> Stmt:
    """Bottom-up rewrite: ``f`` may return a replacement or None to keep the node."""
    r = f(s)
    if r is not None:
        return r
    if isinstance(s, Seq):
        return Seq(map_stmt(s.first, f), map_stmt(s.second, f), pos=s.pos)
    if isinstance(s, Case):
        return Case(s.meas, s.vars, tuple((m, map_stmt(a, f)) for m, a in s.arms), pos=s.pos)
    if isinstance(s, Local):
        return Local(s.vars, s.types, map_stmt(s.body, f), pos=s.pos)
    return s


def contains_call(s: Stmt) -> bool:
    return any(isinstance(x, Call) for x in walk(s))


# ---------------------------------------------------------------------------
# fresh registers and substitution
# ---------------------------------------------------------------------------


def fresh_vars(template: Sequence[tuple[str, VarType]], used: Iterable[str]) -> list[tuple[str, VarType]]:
    """Registers from the reserved ``$rN`` namespace, typed like ``template``."""
    taken = set(used)
    out: list[tuple[str, VarType]] = []
    counter = itertools.count()
    for _, t in template:
        while True:
            i = next(counter)
            if i >= FRESH_LIMIT:
                raise FreshExhausted("fresh register supply exhausted")
            name = f"{FRESH_PREFIX}{i}"
            if name not in taken:
                taken.add(name)
                out.append((name, t))
                break
    return out


def substitute_vars(s: Stmt, mapping: Mapping[str, str]) -> Stmt:
    """Simultaneous renaming of free register occurrences, avoiding capture."""
    mapping = {k: v for k, v in mapping.items() if k != v}
    if not mapping:
        return s

    def ren(vs: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(mapping.get(v, v) for v in vs)

    if isinstance(s, Init):
        return Init(mapping.get(s.var, s.var), pos=s.pos)
    if isinstance(s, Unitary):
        return Unitary(ren(s.vars), s.op, pos=s.pos)
    if isinstance(s, ParamHole):
        return ParamHole(s.name, ren(s.vars), pos=s.pos)
    if isinstance(s, Release):
        return Release(ren(s.vars), pos=s.pos)
    if isinstance(s, Call):
        return Call(s.proc, ren(s.args), pos=s.pos)
    if isinstance(s, Seq):
        return Seq(substitute_vars(s.first, mapping), substitute_vars(s.second, mapping), pos=s.pos)
    if isinstance(s, Case):
        return Case(s.meas, ren(s.vars), tuple((m, substitute_vars(a, mapping)) for m, a in s.arms),
                    pos=s.pos)
    if isinstance(s, Local):
        inner = {k: v for k, v in mapping.items() if k not in s.vars}
        targets = set(inner.values())
        clash = [v for v in s.vars if v in targets]
        vars_, body = s.vars, s.body
        if clash and any(k in free_vars(s.body) for k in inner):
            used = all_names(s.body) | targets | set(inner)
            fresh = fresh_vars([(v, t) for v, t in zip(s.vars, s.types) if v in clash], used)
            rename = {v: n for v, (n, _) in zip(clash, fresh)}
            body = substitute_vars(body, rename)
            vars_ = tuple(rename.get(v, v) for v in vars_)
        return Local(vars_, s.types, substitute_vars(body, inner), pos=s.pos)
    return s


def check_injective(mapping: Mapping[str, str]) -> None:
    vals = list(mapping.values())
    if len(set(vals)) != len(vals):
        raise TypeMismatch(f"register renaming {dict(mapping)} is not injective")


# ---------------------------------------------------------------------------
# syntactic approximation
# ---------------------------------------------------------------------------


def instantiate(proc: ProcDecl, args: Sequence[str]) -> Stmt:
    if len(args) != len(proc.formals):
        raise ArityMismatch(f"{proc.name} expects {len(proc.formals)} arguments, got {len(args)}")
    mapping = dict(zip(proc.formals, args))
    check_injective(mapping)
    return substitute_vars(proc.body, mapping)


def unroll(procs: Sequence[ProcDecl] | Program, name: str, k: int) -> Stmt:
    """k-th syntactic approximation of the body of ``name``.

    Depth 0 is ``bot``; depth k+1 replaces every ``call P_j(a)`` in the body by
    ``skip; S_j^(k)[a/y_j]``, simultaneously for all procedures.
    """
    table = {p.name: p for p in (procs.procs if isinstance(procs, Program) else procs)}
    if name not in table:
        raise UnknownName(f"undeclared procedure {name!r}")
    memo: dict[tuple[str, int], Stmt] = {}

    def go(pname: str, depth: int) -> Stmt:
        key = (pname, depth)
        if key in memo:
            return memo[key]
        if depth == 0:
            out: Stmt = Bot()
        else:
            def repl(x: Stmt) -> Stmt | None:
                if isinstance(x, Call):
                    callee = table.get(x.proc)
                    if callee is None:
                        raise UnknownName(f"undeclared procedure {x.proc!r}")
                    inner = go(x.proc, depth - 1)
                    mapping = dict(zip(callee.formals, x.args))
                    return Seq(Skip(), substitute_vars(inner, mapping))
                return None
            out = map_stmt(table[pname].body, repl)
        memo[key] = out
        return out

    return go(name, k)


def unroll_stmt(program: Program, s: Stmt, k: int) -> Stmt:
    """Statement with each top-level call replaced by its k-th approximation."""
    def repl(x: Stmt) -> Stmt | None:
        if isinstance(x, Call):
            return substitute_vars(unroll(program, x.proc, k),
                                   dict(zip(program.proc(x.proc).formals, x.args)))
        return None
    return map_stmt(s, repl)


def replace_calls_with_holes(s: Stmt, procs: Mapping[str, ProcDecl]) -> Stmt:
    """``S'`` of the fixed-point construction: each call becomes ``skip; Omega``."""
    def repl(x: Stmt) -> Stmt | None:
        if isinstance(x, Call):
            return Seq(Skip(), ParamHole(x.proc, x.args))
        return None
    return map_stmt(s, repl)


# ---------------------------------------------------------------------------
# static checks
# ---------------------------------------------------------------------------


def check_unitary(u: np.ndarray, tol: float = TOL_EQ) -> bool:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    eye = np.eye(u.shape[0])
    return max_abs(u @ u.conj().T - eye) <= tol and max_abs(u.conj().T @ u - eye) <= tol


def check_complete(ops: Mapping[int, np.ndarray], tol: float = TOL_EQ) -> bool:
    mats = [np.asarray(m, dtype=complex) for m in ops.values()]
    if not mats:
        return False
    d = mats[0].shape[0]
    if any(m.shape != (d, d) for m in mats):
        return False
    total = sum(m.conj().T @ m for m in mats)
    return max_abs(total - np.eye(d)) <= tol


def footprints(program: Program) -> dict[str, tuple[str, ...]]:
    """Globals each procedure may touch, directly or through the calls it makes."""
    procs = program.proc_map()
    globals_ = set(program.global_vars)
    result: dict[str, set[str]] = {p: set() for p in procs}

    def local_globals(p: ProcDecl, s: Stmt, bound: set[str]) -> set[str]:
        out: set[str] = set()
        if isinstance(s, Local):
            return local_globals(p, s.body, bound | set(s.vars))
        if isinstance(s, Call):
            out |= {a for a in s.args if a not in bound and a in globals_}
            out |= result.get(s.proc, set())
        else:
            out |= {v for v in stmt_registers(s) if v not in bound and v in globals_}
        for c in children(s):
            out |= local_globals(p, c, bound)
        return out

    changed = True
    while changed:
        changed = False
        for p in procs.values():
            new = local_globals(p, p.body, set(p.formals))
            if new != result[p.name]:
                result[p.name] = new
                changed = True
    order = program.global_vars
    return {name: tuple(v for v in order if v in g) for name, g in result.items()}


def typecheck(program: Program, tol: float = TOL_EQ) -> Program:
    """Static checks; returns the program with inferred formal-parameter types."""
    b = program.bindings
    if b is None:
        raise UnknownName("program has no operator bindings")
    names = [v.name for v in program.vars]
    if len(set(names)) != len(names):
        raise TypeMismatch("duplicate register declaration")
    pnames = [p.name for p in program.procs]
    if len(set(pnames)) != len(pnames):
        raise TypeMismatch("duplicate procedure declaration")
    for p in program.procs:
        if len(set(p.formals)) != len(p.formals):
            raise TypeMismatch(f"procedure {p.name} repeats a formal parameter")
    for name, u in b.unitaries.items():
        if not check_unitary(u, tol):
            raise NonUnitary(f"binding {name!r} is not unitary")
    for name, ops in b.measurements.items():
        if not check_complete(ops, tol):
            raise IncompleteMeasurement(f"measurement {name!r} does not sum to the identity")

    procs = program.proc_map()
    globals_ = {v.name: v.type for v in program.vars}
    feet = footprints(program)
    formal_types: dict[str, list[VarType | None]] = {p.name: [None] * len(p.formals)
                                                     for p in program.procs}

    def lookup(scope: Mapping[str, VarType | None], v: str, where: str) -> VarType | None:
        if v not in scope:
            raise UnknownName(f"undeclared register {v!r} in {where}")
        return scope[v]

    def check(s: Stmt, scope: dict[str, VarType | None], where: str, strict: bool) -> None:
        if isinstance(s, (Bot, Skip)):
            return
        if isinstance(s, Init):
            lookup(scope, s.var, where)
            return
        if isinstance(s, (Unitary, Case, ParamHole, Release)):
            if len(set(s.vars)) != len(s.vars):
                raise TypeMismatch(f"repeated register in {s.vars} ({where})")
            types = [lookup(scope, v, where) for v in s.vars]
        if isinstance(s, Unitary):
            if s.op not in b.unitaries:
                raise UnknownName(f"unbound unitary {s.op!r}")
            if strict or all(t is not None for t in types):
                d = prod(t.dim for t in types)  # type: ignore[union-attr]
                if np.asarray(b.unitaries[s.op]).shape != (d, d):
                    raise TypeMismatch(f"unitary {s.op!r} has shape "
                                       f"{np.asarray(b.unitaries[s.op]).shape}, registers "
                                       f"{s.vars} need dimension {d}")
            return
        if isinstance(s, Case):
            if s.meas not in b.measurements:
                raise UnknownName(f"unbound measurement {s.meas!r}")
            ops = b.measurements[s.meas]
            outcomes = sorted(ops)
            arms = [m for m, _ in s.arms]
            if len(set(arms)) != len(arms):
                raise MissingArm(f"repeated arm in case over {s.meas}")
            if sorted(arms) != outcomes:
                raise MissingArm(f"case over {s.meas} has arms {arms}, outcomes are {outcomes}")
            if strict or all(t is not None for t in types):
                d = prod(t.dim for t in types)  # type: ignore[union-attr]
                for m, op in ops.items():
                    if np.asarray(op).shape != (d, d):
                        raise TypeMismatch(f"measurement {s.meas!r} has shape "
                                           f"{np.asarray(op).shape}, registers need {d}")
            for _, a in s.arms:
                check(a, scope, where, strict)
            return
        if isinstance(s, Seq):
            check(s.first, scope, where, strict)
            check(s.second, scope, where, strict)
            return
        if isinstance(s, Local):
            if len(set(s.vars)) != len(s.vars):
                raise TypeMismatch(f"repeated local register in {s.vars}")
            inner = dict(scope)
            inner.update(zip(s.vars, s.types))
            check(s.body, inner, where, strict)
            return
        if isinstance(s, Call):
            if s.proc not in procs:
                raise UnknownName(f"undeclared procedure {s.proc!r}")
            callee = procs[s.proc]
            if len(s.args) != len(callee.formals):
                raise ArityMismatch(f"call {s.proc} with {len(s.args)} arguments, "
                                    f"expected {len(callee.formals)}")
            if len(set(s.args)) != len(s.args):
                raise TypeMismatch(f"call {s.proc}{s.args} aliases a register")
            alias = set(s.args) & set(feet[s.proc])
            if alias:
                raise TypeMismatch(f"call {s.proc}{s.args} passes global(s) {sorted(alias)} "
                                   f"that the procedure also uses directly")
            for i, a in enumerate(s.args):
                t = lookup(scope, a, where)
                if t is None:
                    continue
                cur = formal_types[s.proc][i]
                if cur is None:
                    formal_types[s.proc][i] = t
                elif cur != t:
                    raise TypeMismatch(f"argument {i} of {s.proc} used as {cur} and as {t}")
            return
        raise TypeMismatch(f"unexpected statement {s!r}")

    # infer formal types by propagation from the main statement
    for _ in range(len(program.procs) + 2):
        check(program.main, dict(globals_), "main", strict=True)
        for p in program.procs:
            scope: dict[str, VarType | None] = dict(globals_)
            scope.update(zip(p.formals, formal_types[p.name]))
            check(p.body, scope, f"procedure {p.name}", strict=False)
    for p in program.procs:
        if any(t is None for t in formal_types[p.name]):
            raise TypeMismatch(f"cannot infer the types of the parameters of {p.name}")
        scope = dict(globals_)
        scope.update(zip(p.formals, formal_types[p.name]))
        check(p.body, scope, f"procedure {p.name}", strict=True)
    ft = tuple((p.name, tuple(formal_types[p.name])) for p in program.procs)  # type: ignore[arg-type]
    return replace(program, formal_types=ft)


def make_while(name: str, meas: str, vars: Sequence[str], body: Stmt) -> ProcDecl:
    """Tail-recursive procedure for ``while M[q] = 1 do body od``."""
    return ProcDecl(name, (), Case(meas, tuple(vars), ((0, Skip()), (1, Seq(body, Call(name, ()))))))
