"""Operational and denotational semantics.

The operational side is a labelled small-step relation explored breadth
first; the denotational side maps statements to superoperators. Procedure
calls are interpreted by iterating the vectorial function of the procedure
system from the zero map, which generates exactly the denotations of the
syntactic approximations, one unrolling level per iteration.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from math import prod
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import IllTyped, LimitExceeded, NotConverged, NotMonotone, TypeMismatch, UnboundParam
from .lang import (
    Bot,
    Call,
    Case,
    Init,
    Local,
    ParamHole,
    Program,
    Release,
    Seq,
    Skip,
    Stmt,
    Unitary,
    VarType,
    all_names,
    footprints,
    fresh_vars,
    instantiate,
    substitute_vars,
    unroll_stmt,
)
from .operators import (
    MAX_ITER,
    TOL_FP,
    TOL_PSD,
    ComplexMatrix,
    SuperOp,
    add,
    apply,
    choi_distance,
    compose,
    embed_op,
    expand,
    partial_trace,
    qop_leq,
    rename_op,
    tail_bound,
    tensor,
)

EPS = "ε"
PRUNE_TRACE = 1e-12


# ---------------------------------------------------------------------------
# operational semantics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Config:
    stmt: Stmt | None  # None is the empty statement E
    state: ComplexMatrix
    types: tuple[tuple[str, VarType], ...] = ()  # types of registers allocated by (Loc)

    @property
    def terminal(self) -> bool:
        return self.stmt is None


@dataclass(frozen=True, eq=False)
class Trace:
    labels: tuple
    final: Config

    @property
    def value(self) -> float:
        return float(self.final.state.trace().real)

    def to_json(self) -> dict:
        return {"labels": list(self.labels), "trace_value": self.value,
                "final_state": matrix_to_json(self.final.state.data)}


@dataclass
class Exploration:
    traces: list[Trace]
    output_sum: ComplexMatrix
    truncated: bool
    dropped_mass: float
    pruned: int
    cut: int


def matrix_to_json(a: np.ndarray, digits: int = 12) -> list:
    def num(x: float) -> float:
        return float(f"{x:.{digits}g}") + 0.0
    return [[[num(z.real), num(z.imag)] for z in row] for row in np.asarray(a)]


def _unitary(env: Program, name: str) -> np.ndarray:
    return np.asarray(env.bindings.unitaries[name], dtype=complex)


def _measurement(env: Program, name: str) -> dict[int, np.ndarray]:
    return {int(m): np.asarray(op, dtype=complex) for m, op in env.bindings.measurements[name].items()}


def _local_op(op: np.ndarray, sub: Sequence[str], state: ComplexMatrix) -> np.ndarray:
    missing = [v for v in sub if v not in state.vars]
    if missing:
        raise IllTyped(f"registers {missing} are not part of the state {state.vars}")
    dims = [state.dims[state.vars.index(v)] for v in sub]
    if op.shape != (prod(dims), prod(dims)):
        raise IllTyped(f"operator of shape {op.shape} applied to registers {tuple(sub)}")
    return expand(ComplexMatrix(op, tuple(sub), tuple(dims)), state.vars, state.dims).data


def _sandwich(op: np.ndarray, state: ComplexMatrix) -> ComplexMatrix:
    return state.with_data(op @ state.data @ op.conj().T)


def step(env: Program, c: Config) -> list[tuple[object, Config]]:
    """One-step successors of a live configuration, each with its label."""
    s, rho = c.stmt, c.state
    if s is None:
        return []
    if isinstance(s, Bot):
        return [(EPS, Config(None, rho.with_data(np.zeros_like(rho.data)), c.types))]
    if isinstance(s, Skip):
        return [(EPS, Config(None, rho, c.types))]
    if isinstance(s, Init):
        d = rho.dims[rho.vars.index(s.var)] if s.var in rho.vars else 0
        if d == 0:
            raise IllTyped(f"register {s.var} is not part of the state")
        out = np.zeros_like(rho.data)
        for i in range(d):
            k = np.zeros((d, d), dtype=complex)
            k[0, i] = 1.0
            big = _local_op(k, (s.var,), rho)
            out = out + big @ rho.data @ big.conj().T
        return [(EPS, Config(None, rho.with_data(out), c.types))]
    if isinstance(s, Unitary):
        big = _local_op(_unitary(env, s.op), s.vars, rho)
        return [(EPS, Config(None, _sandwich(big, rho), c.types))]
    if isinstance(s, Seq):
        out = []
        for label, nxt in step(env, Config(s.first, rho, c.types)):
            rest = s.second if nxt.stmt is None else Seq(nxt.stmt, s.second)
            out.append((label, Config(rest, nxt.state, nxt.types)))
        return out
    if isinstance(s, Case):
        out = []
        for m, op in sorted(_measurement(env, s.meas).items()):
            big = _local_op(op, s.vars, rho)
            out.append((m, Config(s.arm(m), _sandwich(big, rho), c.types)))
        return out
    if isinstance(s, Local):
        used = set(rho.vars) | all_names(s.body)
        fresh = fresh_vars(list(zip(s.vars, s.types)), used)
        names = tuple(n for n, _ in fresh)
        body = substitute_vars(s.body, dict(zip(s.vars, names)))
        dims = tuple(t.dim for t in s.types)
        zero = np.zeros((prod(dims), prod(dims)), dtype=complex)
        zero[0, 0] = 1.0
        new = tensor(rho, ComplexMatrix(zero, names, dims))
        return [(EPS, Config(Seq(body, Release(names)), new, c.types + tuple(fresh)))]
    if isinstance(s, Release):
        kept = tuple((n, t) for n, t in c.types if n not in s.vars)
        return [(EPS, Config(None, partial_trace(rho, s.vars), kept))]
    if isinstance(s, Call):
        return [(EPS, Config(instantiate(env.proc(s.proc), s.args), rho, c.types))]
    if isinstance(s, ParamHole):
        raise IllTyped(f"program parameter {s.name} has no operational meaning")
    raise IllTyped(f"unexpected statement {s!r}")


def explore(env: Program, s: Stmt, rho: ComplexMatrix, max_steps: int = 200,
            prune_trace: float = PRUNE_TRACE, max_configs: int | None = None) -> Exploration:
    """Breadth-first enumeration of all labelled runs up to ``max_steps`` steps each.

    ``max_configs`` caps the number of live configurations (LimitExceeded).
    """
    frontier: deque[tuple[tuple, Config, int]] = deque([((), Config(s, rho), 0)])
    traces: list[Trace] = []
    total = np.zeros_like(rho.data)
    dropped = 0.0
    pruned = cut = 0
    while frontier:
        labels, c, n = frontier.popleft()
        if c.terminal:
            traces.append(Trace(labels, c))
            total = total + c.state.data
            continue
        if n >= max_steps:
            cut += 1
            dropped += float(c.state.trace().real)
            continue
        succ = step(env, c)
        for label, nxt in succ:
            # only branching steps are pruned, so case-free runs always reach a trace
            if len(succ) > 1 and not nxt.terminal and nxt.state.trace().real < prune_trace:
                pruned += 1
                dropped += max(float(nxt.state.trace().real), 0.0)
                continue
            frontier.append((labels + (label,), nxt, n + 1))
        if max_configs is not None and len(frontier) > max_configs:
            raise LimitExceeded(f"more than {max_configs} live configurations")
    return Exploration(traces, rho.with_data(total), bool(cut) or dropped > 0, dropped, pruned, cut)


def replay(env: Program, s: Stmt, rho: ComplexMatrix, labels: Iterable) -> Config | None:
    """Follow a given label word; ``None`` is the exception configuration."""
    c = Config(s, rho)
    for want in labels:
        if c.terminal:
            return None
        succ = [nxt for label, nxt in step(env, c) if label == want]
        if not succ:
            return None
        c = succ[0]
    return c


def dump_traces(result: Exploration) -> str:
    return "\n".join(json.dumps(t.to_json(), ensure_ascii=False) for t in result.traces)


# ---------------------------------------------------------------------------
# denotational semantics
# ---------------------------------------------------------------------------


@dataclass
class FixedPoint:
    """Denotations of all procedures, each on its formals followed by its globals."""

    ops: dict[str, SuperOp]
    spaces: dict[str, tuple[tuple[str, ...], tuple[int, ...]]]
    iterations: int
    delta: float
    tail: float
    deltas: list[float] = field(default_factory=list)


def _init_op(var: str, vars: Sequence[str], dims: Sequence[int]) -> SuperOp:
    d = dims[list(vars).index(var)]
    ks = []
    for i in range(d):
        k = np.zeros((d, d), dtype=complex)
        k[0, i] = 1.0
        ks.append(k)
    return embed_op(SuperOp(np.array(ks), (var,), (d,), check=False), vars, dims)


class Denoter:
    """Compositional evaluator bound to one type-checked program."""

    def __init__(self, env: Program, params: Mapping[str, SuperOp] | None = None,
                 tol: float = TOL_FP, max_iter: int = MAX_ITER):
        if env.formal_types is None:
            raise TypeMismatch("denotation needs a type-checked program")
        self.env = env
        self.params = dict(params or {})
        self.tol = tol
        self.max_iter = max_iter
        self.procs = env.proc_map()
        self.formal_types = env.formal_type_map()
        self.feet = footprints(env)
        self.gdims = dict(zip(env.global_vars, env.global_dims))
        self._fix: FixedPoint | None = None

    # procedure spaces ---------------------------------------------------
    def space(self, name: str) -> tuple[tuple[str, ...], tuple[int, ...]]:
        p = self.procs[name]
        clash = set(p.formals) & set(self.feet[name])
        if clash:
            raise IllTyped(f"formal(s) {sorted(clash)} of {name} shadow globals its callees use")
        vars_ = p.formals + self.feet[name]
        dims = tuple(t.dim for t in self.formal_types[name]) + tuple(self.gdims[g] for g in self.feet[name])
        return vars_, dims

    def fixpoint(self) -> FixedPoint:
        if self._fix is None:
            self._fix = self._iterate()
        return self._fix

    def _iterate(self) -> FixedPoint:
        spaces = {n: self.space(n) for n in self.procs}
        table = {n: SuperOp.zero(*spaces[n]) for n in self.procs}
        if not table:
            return FixedPoint({}, {}, 0, 0.0, 0.0)
        deltas: list[float] = []
        for it in range(1, self.max_iter + 1):
            new = {n: self._den(self.procs[n].body, *spaces[n], table) for n in self.procs}
            if it <= 8:
                for n in self.procs:
                    if not qop_leq(table[n], new[n], tol=max(TOL_PSD, self.tol)):
                        raise NotMonotone(f"approximants of {n} decrease at level {it}")
            delta = max(choi_distance(table[n], new[n]) for n in self.procs)
            deltas.append(delta)
            table = new
            if delta < self.tol:
                return FixedPoint(table, spaces, it, delta, tail_bound(deltas), deltas)
        raise NotConverged(f"procedure fixed point not reached after {self.max_iter} iterations",
                           self.max_iter, deltas[-1])

    def approximant(self, k: int) -> dict[str, SuperOp]:
        """``k``-th Kleene iterate of the procedure table, i.e. the denotations of the
        k-th syntactic approximations without building the unrolled statements."""
        spaces = {n: self.space(n) for n in self.procs}
        table = {n: SuperOp.zero(*spaces[n]) for n in self.procs}
        for _ in range(k):
            table = {n: self._den(self.procs[n].body, *spaces[n], table) for n in self.procs}
        return table

    def call_op(self, proc: str, args: Sequence[str], table: Mapping[str, SuperOp] | None = None) -> SuperOp:
        """Denotation of ``call proc(args)`` on the actuals followed by the callee's globals."""
        if proc not in self.procs:
            raise TypeMismatch(f"undeclared procedure {proc!r}")
        op = (table if table is not None else self.fixpoint().ops)[proc]
        return rename_op(op, dict(zip(self.procs[proc].formals, args)))

    # statements ---------------------------------------------------------
    def denote(self, s: Stmt, vars: Sequence[str] | None = None,
               dims: Sequence[int] | None = None) -> SuperOp:
        if vars is None:
            vars, dims = self.env.global_vars, self.env.global_dims
        elif dims is None:
            dims = tuple(self.gdims[v] for v in vars)
        return self._den(s, tuple(vars), tuple(dims), None)

    def _den(self, s: Stmt, vars: tuple[str, ...], dims: tuple[int, ...],
             table: Mapping[str, SuperOp] | None) -> SuperOp:
        if isinstance(s, Bot):
            return SuperOp.zero(vars, dims)
        if isinstance(s, Skip):
            return SuperOp.identity(vars, dims)
        if isinstance(s, Init):
            self._need(s.var, vars)
            return _init_op(s.var, vars, dims)
        if isinstance(s, Unitary):
            for v in s.vars:
                self._need(v, vars)
            sub_dims = tuple(dims[vars.index(v)] for v in s.vars)
            return embed_op(SuperOp.unitary(_unitary(self.env, s.op), s.vars, sub_dims), vars, dims)
        if isinstance(s, Seq):
            return compose(self._den(s.first, vars, dims, table), self._den(s.second, vars, dims, table))
        if isinstance(s, Case):
            for v in s.vars:
                self._need(v, vars)
            sub_dims = tuple(dims[vars.index(v)] for v in s.vars)
            out = SuperOp.zero(vars, dims)
            for m, op in sorted(_measurement(self.env, s.meas).items()):
                meas = embed_op(SuperOp(op[None], s.vars, sub_dims, check=False), vars, dims)
                out = add(out, compose(meas, self._den(s.arm(m), vars, dims, table)), check=False)
            return out
        if isinstance(s, Local):
            return self._den_local(s, vars, dims, table)
        if isinstance(s, Call):
            for v in s.args:
                self._need(v, vars)
            op = self.call_op(s.proc, s.args, table)
            for v in op.vars:
                self._need(v, vars)
            return embed_op(op, vars, dims)
        if isinstance(s, ParamHole):
            if s.name not in self.params:
                raise UnboundParam(f"no value bound to program parameter {s.name!r}")
            op = self.params[s.name]
            if len(op.vars) < len(s.vars):
                raise IllTyped(f"parameter {s.name} acts on {op.vars}, hole needs {s.vars}")
            op = rename_op(op, dict(zip(op.vars, s.vars)))
            for v in op.vars:
                self._need(v, vars)
            return embed_op(op, vars, dims)
        if isinstance(s, Release):
            raise IllTyped("release markers only occur during execution")
        raise IllTyped(f"unexpected statement {s!r}")

    def _den_local(self, s: Local, vars: tuple[str, ...], dims: tuple[int, ...],
                   table: Mapping[str, SuperOp] | None) -> SuperOp:
        clash = [v for v in s.vars if v in vars]
        body = s.body
        names = list(s.vars)
        if clash:
            fresh = fresh_vars([(v, t) for v, t in zip(s.vars, s.types) if v in clash],
                               set(vars) | all_names(s.body))
            rename = {v: n for v, (n, _) in zip(clash, fresh)}
            body = substitute_vars(body, rename)
            names = [rename.get(v, v) for v in names]
        ldims = tuple(t.dim for t in s.types)
        g = self._den(body, vars + tuple(names), dims + ldims, table)
        d, dl = prod(dims), prod(ldims)
        k = g.kraus_array.reshape(-1, d, dl, d, dl)[:, :, :, :, 0]  # (I x <i|) K (I x |0>)
        ops = k.transpose(0, 2, 1, 3).reshape(-1, d, d)
        return SuperOp(ops, vars, dims, check=False)

    @staticmethod
    def _need(v: str, vars: Sequence[str]) -> None:
        if v not in vars:
            raise IllTyped(f"register {v} is not in scope {tuple(vars)}")


def denote(env: Program, s: Stmt, params: Mapping[str, SuperOp] | None = None,
           tol: float = TOL_FP, max_iter: int = MAX_ITER,
           vars: Sequence[str] | None = None) -> SuperOp:
    return Denoter(env, params, tol, max_iter).denote(s, vars)


def denote_unrolled(env: Program, s: Stmt, k: int, params: Mapping[str, SuperOp] | None = None,
                    vars: Sequence[str] | None = None) -> SuperOp:
    """Denotation of ``s`` with every call replaced by its k-th syntactic approximation."""
    return Denoter(env, params).denote(unroll_stmt(env, s, k), vars)


def limit_slack(fix: FixedPoint, dim: int) -> float:
    """Bound on the distance between a computed denotation and the true limit."""
    return dim * (fix.tail + fix.delta)


@dataclass
class Agreement:
    max_dev: float
    truncated: bool
    dropped_mass: float


def check_sem_agreement(env: Program, s: Stmt, rho: ComplexMatrix, max_steps: int = 200,
                        prune_trace: float = PRUNE_TRACE) -> Agreement:
    den = apply(denote(env, s, vars=rho.vars), rho)
    ex = explore(env, s, rho, max_steps, prune_trace)
    dev = float(np.max(np.abs(den.data - ex.output_sum.data))) if den.data.size else 0.0
    return Agreement(dev, ex.truncated, ex.dropped_mass)
