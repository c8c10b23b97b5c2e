"""Hoare-triple checking and proof-script replay.

Semantic checks compare a precondition against ``fwlp`` / ``fwp`` through
``pqpt_order``. The proof checker replays a JSON derivation rule by rule; the
Loewner side formulas of (R Order) and of the recursion rules are discharged
by the same order procedure, so an ``unknown`` there never passes silently.

Recursion rules for total correctness carry an indexed family ``P^0, P^1,
...``. Explicit families are finite lists (constant after the last entry)
and are checked at every index. Template families are expressions in one
integer meta-variable ``n`` and are checked at a finite probe set, which the
verdict reports as ``inductive step sampled``.
"""

from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass, field
from math import prod
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .assertions import (
    EQ,
    LEQ,
    ORDER_SEED,
    OrderFormula,
    Pqpt,
    Transformer,
    Verdict,
    align,
    const_part,
    eval_pqpt,
    identity_term,
    limit_pqpt,
    literal,
    pad,
    pqpt_conj,
    pqpt_disj,
    pqpt_equal,
    pqpt_order,
    rename_pqpt,
    subst_pqpt,
    union_space,
    zero_term,
)
from .errors import (
    IllegitimateFormula,
    QrvError,
    QrvSyntaxError,
    RuleMismatch,
    SideConditionViolated,
    UndischargedAssumption,
    UnknownSideCondition,
)
from .lang import (
    Bot,
    Call,
    Case,
    Init,
    Local,
    Program,
    Seq,
    Skip,
    Stmt,
    Unitary,
    check_injective,
    check_unitary,
    flatten_seq,
    free_vars,
    seq,
    substitute_vars,
)
from .operators import MAX_ITER, TOL_EQ, TOL_FP, TOL_PSD, ComplexMatrix, SuperOp, embed_op, max_abs
from .parser import assertion_from_obj, load_program, parse_stmt, resolve_path
from .semantics import _measurement

PARTIAL, TOTAL, EXACT = "partial", "total", "exact"
MODES = (PARTIAL, TOTAL, EXACT)


@dataclass(frozen=True, eq=False)
class HoareTriple:
    pre: Pqpt
    stmt: Stmt
    post: Pqpt
    mode: str = PARTIAL

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise IllegitimateFormula(f"unknown correctness mode {self.mode!r}")
        if self.pre.params != self.post.params:
            raise IllegitimateFormula(f"parameter sets differ: {sorted(self.pre.params)} vs "
                                      f"{sorted(self.post.params)}")


# ---------------------------------------------------------------------------
# semantic checks
# ---------------------------------------------------------------------------


def _semantic(env: Program, t: HoareTriple, liberal: bool, rel: str, tol: float,
              max_iter: int, slack: float, seed: int) -> Verdict:
    res = Transformer(env, tol=tol, max_iter=max_iter).run(t.stmt, t.post, liberal=liberal)
    order_tol = max(TOL_PSD, res.slack + slack)
    v = pqpt_order(OrderFormula(t.pre, res.value, rel), seed=seed, tol=order_tol)
    v.diagnostics.update({"iterations": res.iterations, "slack": float(f"{order_tol:.12g}")})
    return v


def check_partial(env: Program, t: HoareTriple, tol: float = TOL_FP, max_iter: int = MAX_ITER,
                  slack: float = 0.0, seed: int = ORDER_SEED) -> Verdict:
    """``pre <= fwlp.S.post``."""
    return _semantic(env, t, True, LEQ, tol, max_iter, slack, seed)


def check_total(env: Program, t: HoareTriple, tol: float = TOL_FP, max_iter: int = MAX_ITER,
                slack: float = 0.0, seed: int = ORDER_SEED) -> Verdict:
    """``pre <= fwp.S.post``."""
    return _semantic(env, t, False, LEQ, tol, max_iter, slack, seed)


def check_exact(env: Program, t: HoareTriple, tol: float = TOL_FP, max_iter: int = MAX_ITER,
                slack: float = 0.0, seed: int = ORDER_SEED) -> Verdict:
    """``pre = fwp.S.post``."""
    return _semantic(env, t, False, EQ, tol, max_iter, slack, seed)


def check_triple(env: Program, t: HoareTriple, **kw) -> Verdict:
    return {PARTIAL: check_partial, TOTAL: check_total, EXACT: check_exact}[t.mode](env, t, **kw)


@dataclass(frozen=True)
class ProbResult:
    delta: float
    exact: bool
    slack: float = 0.0
    iterations: int = 0

    def to_json(self) -> dict:
        return {"delta": float(f"{self.delta:.12g}"), "exact": self.exact,
                "slack": float(f"{self.slack:.12g}"), "iterations": self.iterations}


def _as_term(x: Pqpt | ComplexMatrix) -> Pqpt:
    return literal(x) if isinstance(x, ComplexMatrix) else x


def prob_query(env: Program, pre_proj: Pqpt | ComplexMatrix, s: Stmt, post_proj: Pqpt | ComplexMatrix,
               tol: float = TOL_FP, max_iter: int = MAX_ITER, slack: float = 0.0) -> ProbResult:
    """Probability that outputs satisfy ``post_proj`` for inputs in the range of ``pre_proj``."""
    pre, post = _as_term(pre_proj), _as_term(post_proj)
    if pre.params or post.params:
        raise IllegitimateFormula("probability queries take parameter-free predicates")
    res = Transformer(env, tol=tol, max_iter=max_iter).run(s, post)
    pre, r = align(pre, res.value)
    p, m = eval_pqpt(pre).data, eval_pqpt(r).data
    if max_abs(p @ p - p) > 1e-8:
        raise IllegitimateFormula("the precondition of a probability query must be a projector")
    w, vecs = np.linalg.eigh((p + p.conj().T) / 2)
    basis = vecs[:, w > 0.5]
    if basis.shape[1] == 0:
        return ProbResult(0.0, True, res.slack, res.iterations)
    restricted = basis.conj().T @ m @ basis
    restricted = (restricted + restricted.conj().T) / 2
    delta = float(np.trace(restricted).real / basis.shape[1])
    bound = max(TOL_EQ, res.slack + slack)
    if max_abs(restricted - delta * np.eye(basis.shape[1])) <= bound:
        return ProbResult(delta, True, res.slack, res.iterations)
    return ProbResult(float(np.linalg.eigvalsh(restricted)[-1]), False, res.slack, res.iterations)


# ---------------------------------------------------------------------------
# template expressions
# ---------------------------------------------------------------------------

_BINOPS: dict[type, Callable] = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
                                 ast.Div: operator.truediv, ast.FloorDiv: operator.floordiv,
                                 ast.Mod: operator.mod, ast.Pow: operator.pow}
_CMPOPS: dict[type, Callable] = {ast.Eq: operator.eq, ast.NotEq: operator.ne, ast.Lt: operator.lt,
                                 ast.LtE: operator.le, ast.Gt: operator.gt, ast.GtE: operator.ge}
_FUNCS: dict[str, Callable] = {"sqrt": math.sqrt, "min": min, "max": max, "abs": abs,
                               "floor": math.floor, "exp": math.exp}
_CONSTS = {"pi": math.pi}


def eval_expr(text: str, env: Mapping[str, int]) -> float:
    """Arithmetic over the meta-variables in ``env`` (no other names are visible)."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise QrvSyntaxError(f"bad expression {text!r}: {exc.msg}") from None

    def go(node: ast.AST):
        if isinstance(node, ast.Expression):
            return go(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise NameError(node.id)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](go(node.left), go(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = go(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.IfExp):
            return go(node.body) if go(node.test) else go(node.orelse)
        if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
            return _CMPOPS[type(node.ops[0])](go(node.left), go(node.comparators[0]))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            return _FUNCS[node.func.id](*[go(a) for a in node.args])
        raise QrvSyntaxError(f"unsupported construct in expression {text!r}")

    return go(tree)


# ---------------------------------------------------------------------------
# proof scripts
# ---------------------------------------------------------------------------

PT_RULES = {"Rt Rec", "Rt gRec", "Rt pRec"}
PP_RULES = {"Rp Rec", "Rp gRec", "Rp pRec"}
REC_RULES = PT_RULES | PP_RULES
LOOP_RULES = {"Rp Loop", "Rt Loop"}
RULES = {"A Bot", "A Skip", "A Init", "A Unit", "R Comp", "R Case", "R Order", "R Subst",
         "R Loc", "R' Loc", "R Adap", "Assume", "Order"} | REC_RULES | LOOP_RULES


@dataclass(frozen=True)
class Step:
    id: str
    rule: str
    premises: tuple[str, ...]
    conclusion: Any
    side: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Family:
    name: str
    mode: str  # explicit | template
    entries: tuple = ()
    template: Any = None
    probes: tuple[int, ...] = ()
    meta: str = "n"

    def raw(self, j: int) -> Any:
        if self.mode == "explicit":
            return self.entries[min(j, len(self.entries) - 1)]
        return _subst_meta(self.template, {self.meta: j})

    @property
    def indices(self) -> tuple[int, ...]:
        if self.mode == "explicit":
            return tuple(range(len(self.entries)))
        return self.probes


@dataclass(frozen=True)
class ProofScript:
    steps: tuple[Step, ...]
    assumptions: dict[str, Any]
    families: dict[str, Family]
    assertions: dict[str, Any] = field(default_factory=dict)
    matrices: dict[str, Any] = field(default_factory=dict)
    dims: dict[str, int] = field(default_factory=dict)
    program: str | None = None
    goal: str | None = None
    base_dir: Path | None = None

    def step(self, sid: str) -> Step:
        for s in self.steps:
            if s.id == sid:
                return s
        raise KeyError(sid)


def _subst_meta(obj: Any, env: Mapping[str, int]) -> Any:
    """Replace the meta-variable inside ``expr`` / ``index`` strings by its value, lazily."""
    if isinstance(obj, Mapping):
        if set(obj) == {"expr"}:
            return {"expr": obj["expr"], "env": dict(env)}
        out = {k: _subst_meta(v, env) for k, v in obj.items()}
        if "family" in obj and "index" in obj:
            out["index_env"] = dict(env)
        return out
    if isinstance(obj, list):
        return [_subst_meta(v, env) for v in obj]
    return obj


def parse_script(text: str | bytes | Mapping, base_dir: Path | None = None) -> ProofScript:
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8")
    try:
        data = json.loads(text) if isinstance(text, str) else dict(text)
    except json.JSONDecodeError as exc:
        raise QrvSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    steps = []
    seen: set[str] = set()
    for raw in data.get("steps", []):
        sid = str(raw["id"])
        if sid in seen:
            raise QrvSyntaxError(f"duplicate step id {sid!r}")
        seen.add(sid)
        steps.append(Step(sid, raw["rule"], tuple(str(p) for p in raw.get("premises", [])),
                          raw.get("conclusion"), dict(raw.get("side", {}))))
    assumptions = {}
    for a in data.get("assumptions", []):
        assumptions[str(a["label"])] = a["triple"]
    families = {}
    for f in data.get("families", []):
        mode = f.get("mode", "explicit")
        if mode not in ("explicit", "template"):
            raise QrvSyntaxError(f"family {f.get('name')!r} has unknown mode {mode!r}")
        if mode == "explicit" and not f.get("entries"):
            raise QrvSyntaxError(f"explicit family {f['name']!r} has no entries")
        families[f["name"]] = Family(f["name"], mode, tuple(f.get("entries", ())), f.get("template"),
                                     tuple(int(i) for i in f.get("probes", ())), f.get("meta", "n"))
    return ProofScript(tuple(steps), assumptions, families, dict(data.get("assertions", {})),
                       dict(data.get("matrices", {})), dict(data.get("dims", {})),
                       data.get("program"), data.get("goal"), base_dir)


def load_script(path: str | Path) -> ProofScript:
    p = resolve_path(path)
    return parse_script(p.read_bytes(), p.parent)


def script_program(script: ProofScript) -> Program:
    if script.program is None:
        raise QrvSyntaxError("the proof script names no program")
    path = script.program
    if not path.startswith("corpus:") and script.base_dir is not None and not Path(path).is_absolute():
        path = str(script.base_dir / path)
    from .lang import typecheck

    return typecheck(load_program(path))


@dataclass
class _Result:
    value: Any  # HoareTriple | OrderFormula | list[HoareTriple]
    open: frozenset[str]


class ProofChecker:
    """Replays a script against a type-checked program."""

    def __init__(self, script: ProofScript, env: Program, tol: float = TOL_FP,
                 max_iter: int = MAX_ITER, seed: int = ORDER_SEED):
        self.s = script
        self.seed = seed
        self.env = env
        self.tol = tol
        self.max_iter = max_iter
        self.dims = self._dims()
        self.memo: dict[tuple[str, int | None], _Result] = {}
        self.unknown: list[str] = []
        self.sampled: list[str] = []
        self.report: dict[str, str] = {}
        self.order = {st.id: i for i, st in enumerate(script.steps)}
        self._check_references()
        self.meta_dep = self._meta_dependence()

    # -- setup ---------------------------------------------------------------

    def _dims(self) -> dict[str, int]:
        dims = dict(zip(self.env.global_vars, self.env.global_dims))
        formal = self.env.formal_type_map() if self.env.formal_types is not None else {}
        for p in self.env.procs:
            for v, t in zip(p.formals, formal.get(p.name, ())):
                dims.setdefault(v, t.dim)
        dims.update(self.s.dims)
        return dims

    def _check_references(self) -> None:
        for st in self.s.steps:
            if st.rule not in RULES:
                raise RuleMismatch(st.id, f"unknown rule {st.rule!r}")
            for p in st.premises:
                if st.rule == "Assume":
                    if p not in self.s.assumptions:
                        raise RuleMismatch(st.id, f"unknown assumption {p!r}")
                    continue
                ref = p.split("#")[0]
                if ref not in self.order or self.order[ref] >= self.order[st.id]:
                    raise RuleMismatch(st.id, f"premise {p!r} is not an earlier step")
        counts = {a: 0 for a in self.s.assumptions}
        for st in self.s.steps:
            if st.rule in REC_RULES:
                for a in st.side.get("discharges", []):
                    if a not in counts:
                        raise RuleMismatch(st.id, f"discharges unknown assumption {a!r}")
                    counts[a] += 1
        for a, c in counts.items():
            if c != 1:
                raise UndischargedAssumption(
                    f"assumption {a!r} is discharged by {c} recursion steps (exactly one required)")

    def _meta_dependence(self) -> dict[str, bool]:
        def mentions(obj: Any) -> bool:
            if isinstance(obj, Mapping):
                if "expr" in obj or "family" in obj:
                    return True
                if "ref" in obj:
                    return mentions(self.s.assertions.get(obj["ref"]))
                return any(mentions(v) for v in obj.values())
            if isinstance(obj, list):
                return any(mentions(v) for v in obj)
            return False

        dep: dict[str, bool] = {}
        for st in self.s.steps:
            d = mentions(st.conclusion) or mentions(st.side)
            if st.rule == "Assume":
                d = d or any(mentions(self.s.assumptions[a]) for a in st.premises)
            elif st.rule not in PT_RULES and st.rule != "Rt Loop":
                d = d or any(dep[p.split("#")[0]] for p in st.premises)
            if st.rule in PT_RULES or st.rule == "Rt Loop":
                d = False
            dep[st.id] = d
        return dep

    # -- assertions ------------------------------------------------------------

    def assertion(self, obj: Any, sid: str, meta: Mapping[str, int]) -> Pqpt:
        obj = self._resolve(obj, sid, meta)
        try:
            return assertion_from_obj(obj, self.dims, self.s.matrices)
        except QrvError as exc:
            raise RuleMismatch(sid, f"bad assertion: {exc}") from None

    def _resolve(self, obj: Any, sid: str, meta: Mapping[str, int]) -> Any:
        if isinstance(obj, Mapping):
            if "expr" in obj:
                env = {**meta, **obj.get("env", {})}
                try:
                    return eval_expr(obj["expr"], env)
                except NameError as exc:
                    raise RuleMismatch(sid, f"meta-variable {exc.args[0]} is unbound here") from None
            if "ref" in obj:
                if obj["ref"] not in self.s.assertions:
                    raise RuleMismatch(sid, f"unknown assertion name {obj['ref']!r}")
                return self._resolve(self.s.assertions[obj["ref"]], sid, meta)
            if "family" in obj:
                fam = self.s.families.get(obj["family"])
                if fam is None:
                    raise RuleMismatch(sid, f"unknown family {obj['family']!r}")
                env = {**meta, **obj.get("index_env", {})}
                try:
                    j = int(eval_expr(str(obj.get("index", "n")), env))
                except NameError as exc:
                    raise RuleMismatch(sid, f"meta-variable {exc.args[0]} is unbound here") from None
                if j < 0:
                    raise RuleMismatch(sid, f"family index {j} is negative")
                return self._resolve(fam.raw(j), sid, meta)
            return {k: self._resolve(v, sid, meta) for k, v in obj.items()}
        if isinstance(obj, list):
            return [self._resolve(v, sid, meta) for v in obj]
        return obj

    def family_term(self, name: str, j: int, sid: str) -> Pqpt:
        return self.assertion({"family": name, "index": str(j)}, sid, {})

    def triple(self, obj: Any, sid: str, meta: Mapping[str, int]) -> HoareTriple:
        if not isinstance(obj, Mapping) or not {"pre", "stmt", "post"} <= set(obj):
            raise RuleMismatch(sid, "conclusion must be a triple with pre, stmt and post")
        try:
            stmt = parse_stmt(obj["stmt"])
        except QrvError as exc:
            raise RuleMismatch(sid, f"bad statement: {exc}") from None
        pre, post = self.assertion(obj["pre"], sid, meta), self.assertion(obj["post"], sid, meta)
        try:
            return HoareTriple(pre, stmt, post, obj.get("mode", PARTIAL))
        except IllegitimateFormula as exc:
            raise RuleMismatch(sid, str(exc)) from None

    # -- replay ----------------------------------------------------------------

    def premise(self, ref: str, meta: Mapping[str, int] | None, sid: str) -> _Result:
        base, _, idx = ref.partition("#")
        r = self.check(base, meta)
        if idx:
            if not isinstance(r.value, list) or not idx.isdigit() or int(idx) >= len(r.value):
                raise RuleMismatch(sid, f"premise {ref!r} selects a missing conjunct")
            return _Result(r.value[int(idx)], r.open)
        return r

    def check(self, sid: str, meta: Mapping[str, int] | None = None) -> _Result:
        meta = dict(meta or {}) if self.meta_dep.get(sid) else {}
        key = (sid, tuple(sorted(meta.items())))
        if key not in self.memo:
            st = self.s.step(sid)
            self.memo[key] = self._check(st, meta)
            self.report.setdefault(sid, "valid")
        return self.memo[key]

    def _check(self, st: Step, meta: dict[str, int]) -> _Result:
        rule = st.rule
        if rule == "Assume":
            return self._assume(st, meta)
        if rule == "Order":
            return self._order_step(st, meta)
        if rule in REC_RULES:
            return self._rec(st)
        if rule in LOOP_RULES:
            return self._loop(st)
        c = self.triple(st.conclusion, st.id, meta)
        prem = [self.premise(p, meta, st.id) for p in st.premises]
        opened = frozenset().union(*(p.open for p in prem)) if prem else frozenset()
        for p in prem:
            if not isinstance(p.value, HoareTriple):
                raise RuleMismatch(st.id, "premises of this rule must be triples")
            if p.value.mode != c.mode:
                raise RuleMismatch(st.id, f"premise mode {p.value.mode} differs from {c.mode}")
        handler = {"A Bot": self._a_bot, "A Skip": self._a_skip, "A Init": self._a_atomic,
                   "A Unit": self._a_atomic, "R Comp": self._r_comp, "R Case": self._r_case,
                   "R Order": self._r_order, "R Subst": self._r_subst, "R Loc": self._r_loc,
                   "R' Loc": self._r_loc2, "R Adap": self._r_adap}[rule]
        handler(st, c, [p.value for p in prem], meta)
        return _Result(c, opened)

    def _need(self, cond: bool, st: Step, reason: str) -> None:
        if not cond:
            raise RuleMismatch(st.id, reason)

    def _equal(self, a: Pqpt, b: Pqpt, st: Step, what: str) -> None:
        try:
            ok = pqpt_equal(a, b)
        except QrvError as exc:
            raise RuleMismatch(st.id, f"{what}: {exc}") from None
        self._need(ok, st, f"{what} does not match")

    def _premises(self, st: Step, prem: list, n: int) -> None:
        self._need(len(prem) == n, st, f"expected {n} premises, got {len(prem)}")

    # -- axioms ------------------------------------------------------------------

    def _a_bot(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 0)
        self._need(isinstance(c.stmt, Bot), st, "statement is not bot")
        want = identity_term(c.pre.vars, c.pre.dims) if c.mode == PARTIAL else zero_term(c.pre.vars, c.pre.dims)
        self._equal(c.pre, want, st, "precondition of bot")

    def _a_skip(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 0)
        self._need(isinstance(c.stmt, Skip), st, "statement is not skip")
        self._equal(c.pre, c.post, st, "pre and post of skip")

    def _scope(self, c: HoareTriple, *terms: Pqpt) -> tuple[tuple[str, ...], tuple[int, ...]]:
        vars, dims = union_space(c.pre, c.post, *terms)
        vars, dims = list(vars), list(dims)
        for v in sorted(free_vars(c.stmt)):
            if v not in vars:
                if v not in self.dims:
                    raise SideConditionViolated(f"unknown dimension of register {v}")
                vars.append(v)
                dims.append(self.dims[v])
        return tuple(vars), tuple(dims)

    def _a_atomic(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 0)
        kind = Init if st.rule == "A Init" else Unitary
        self._need(isinstance(c.stmt, kind), st, f"statement is not {'an initialisation' if kind is Init else 'a unitary'}")
        if kind is Unitary:
            u = self.env.bindings.unitaries.get(c.stmt.op) if self.env.bindings else None
            self._need(u is not None and check_unitary(u), st, f"{c.stmt.op} is not a bound unitary")
        try:
            want = Transformer(self.env).run(c.stmt, c.post, scope=self._scope(c)).value
        except QrvError as exc:
            raise RuleMismatch(st.id, str(exc)) from None
        self._equal(c.pre, want, st, "precondition of the axiom instance")

    # -- structural rules ----------------------------------------------------------

    def _r_comp(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 2)
        a, b = prem
        self._need(flatten_seq(c.stmt) == flatten_seq(a.stmt) + flatten_seq(b.stmt), st,
                   "statement is not the composition of the premises")
        self._equal(a.post, b.pre, st, "intermediate assertion")
        self._equal(c.pre, a.pre, st, "precondition")
        self._equal(c.post, b.post, st, "postcondition")

    def _r_case(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._need(isinstance(c.stmt, Case), st, "statement is not a case")
        s: Case = c.stmt
        outcomes = [m for m, _ in s.arms]
        self._premises(st, prem, len(outcomes))
        try:
            ops = _measurement(self.env, s.meas)
            vars, dims = self._scope(c, *[p.pre for p in prem])
            sub = tuple(dims[vars.index(v)] for v in s.vars)
            es = [embed_op(SuperOp(ops[m][None], s.vars, sub, check=False), vars, dims) for m in outcomes]
            for m, p in zip(outcomes, prem):
                self._need(p.stmt == s.arm(m), st, f"premise for outcome {m} is about another statement")
                self._equal(p.post, c.post, st, f"postcondition of arm {m}")
            want = pqpt_disj(es, [pad(p.pre, vars, dims) for p in prem])
        except (QrvError, KeyError) as exc:
            raise RuleMismatch(st.id, f"case rule: {exc}") from None
        self._equal(c.pre, want, st, "precondition of the case")

    def _order(self, st: Step, lhs: Pqpt, rhs: Pqpt, rel: str, what: str, tol: float = TOL_PSD) -> None:
        try:
            v = pqpt_order(OrderFormula(lhs, rhs, rel), seed=self.seed, tol=tol)
        except QrvError as exc:
            raise RuleMismatch(st.id, f"{what}: {exc}") from None
        if v.status == "invalid":
            raise RuleMismatch(st.id, f"{what} fails (eigenvalue {v.witness.get('eigenvalue')})")
        if v.status == "unknown":
            self.unknown.append(st.id)
            self.report[st.id] = "unknown"

    def _rel(self, st: Step, mode: str) -> str:
        rel = st.side.get("rel", EQ if mode == EXACT else LEQ)
        self._need(rel in (LEQ, EQ), st, f"unknown relation {rel!r}")
        self._need(not (mode == EXACT and rel != EQ), st, "exact derivations only admit equalities")
        return rel

    def _r_order(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 1)
        (p,) = prem
        self._need(p.stmt == c.stmt, st, "premise is about another statement")
        rel = self._rel(st, c.mode)
        self._order(st, c.pre, p.pre, rel, "weakening of the precondition")
        self._order(st, p.post, c.post, rel, "strengthening of the postcondition")

    def _r_subst(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 1)
        (p,) = prem
        self._need(p.stmt == c.stmt, st, "premise is about another statement")
        raw = st.side.get("subst")
        self._need(isinstance(raw, Mapping) and raw, st, "missing substitution")
        subs = {x: self.assertion(obj, st.id, meta) for x, obj in raw.items()}
        try:
            pre, post = subst_pqpt(p.pre, subs), subst_pqpt(p.post, subs)
        except QrvError as exc:
            raise RuleMismatch(st.id, f"substitution: {exc}") from None
        self._equal(c.pre, pre, st, "substituted precondition")
        self._equal(c.post, post, st, "substituted postcondition")

    def _locals(self, st: Step, c: HoareTriple) -> Local:
        self._need(isinstance(c.stmt, Local), st, "statement is not a local block")
        return c.stmt

    def _r_loc(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 1)
        s = self._locals(st, c)
        (p,) = prem
        rename = dict(st.side.get("fresh", {}))
        fresh = [rename.get(v, v) for v in s.vars]
        taken = set(c.pre.vars) | set(c.post.vars) | free_vars(c.stmt)
        self._need(not set(fresh) & taken, st, "fresh registers clash with the context")
        try:
            check_injective(dict(zip(s.vars, fresh)))
        except QrvError as exc:
            raise RuleMismatch(st.id, str(exc)) from None
        body = substitute_vars(s.body, dict(zip(s.vars, fresh)))
        want = flatten_seq(seq(*[Init(r) for r in fresh])) + flatten_seq(body)
        self._need(flatten_seq(p.stmt) == want, st, "premise statement is not r := |0>; S[r/q]")
        ldims = tuple(t.dim for t in s.types)
        vars, dims = c.pre.vars + tuple(fresh), c.pre.dims + ldims
        self._equal(p.pre, pad(c.pre, vars, dims), st, "padded precondition")
        self._equal(p.post, pad(c.post, c.post.vars + tuple(fresh), c.post.dims + ldims), st,
                    "padded postcondition")

    def _r_loc2(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 1)
        s = self._locals(st, c)
        (p,) = prem
        rename = dict(st.side.get("rename", {}))
        clash = (set(c.pre.vars) | set(c.post.vars)) & set(s.vars)
        self._need(clash <= set(rename), st, f"registers {sorted(clash)} need renaming")
        self._need(p.stmt == s.body, st, "premise is not about the block body")
        try:
            pre, post = rename_pqpt(c.pre, rename), rename_pqpt(c.post, rename)
            ldims = tuple(t.dim for t in s.types)
            zero = np.zeros((prod(ldims),) * 2)
            zero[0, 0] = 1.0
            want_pre = pqpt_conj(pre, literal(zero, s.vars, ldims))
            want_post = pad(post, post.vars + s.vars, post.dims + ldims)
        except QrvError as exc:
            raise RuleMismatch(st.id, str(exc)) from None
        self._equal(p.pre, want_pre, st, "precondition with the local register at |0>")
        self._equal(p.post, want_post, st, "postcondition with identity on the local register")

    def _r_adap(self, st: Step, c: HoareTriple, prem, meta) -> None:
        self._premises(st, prem, 1)
        (p,) = prem
        mapping = dict(st.side.get("rename", {}))
        try:
            check_injective(mapping)
            stmt = substitute_vars(p.stmt, mapping)
            pre, post = rename_pqpt(p.pre, mapping), rename_pqpt(p.post, mapping)
        except QrvError as exc:
            raise RuleMismatch(st.id, str(exc)) from None
        self._need(stmt == c.stmt, st, "statement is not the renamed premise statement")
        self._equal(c.pre, pre, st, "renamed precondition")
        self._equal(c.post, post, st, "renamed postcondition")

    # -- assumptions, order steps and recursion ----------------------------------------

    def _assume(self, st: Step, meta: dict[str, int]) -> _Result:
        self._need(len(st.premises) == 1, st, "an assumption step cites one label")
        label = st.premises[0]
        c = self.triple(st.conclusion, st.id, meta)
        a = self.triple(self.s.assumptions[label], st.id, meta)
        self._need(c.stmt == a.stmt and c.mode == a.mode, st, f"triple differs from assumption {label}")
        self._equal(c.pre, a.pre, st, f"precondition of assumption {label}")
        self._equal(c.post, a.post, st, f"postcondition of assumption {label}")
        return _Result(c, frozenset({label}))

    def _order_step(self, st: Step, meta: dict[str, int]) -> _Result:
        obj = st.conclusion
        self._need(isinstance(obj, Mapping) and {"lhs", "rhs"} <= set(obj), st,
                   "an order step concludes lhs <= rhs or lhs = rhs")
        lhs, rhs = self.assertion(obj["lhs"], st.id, meta), self.assertion(obj["rhs"], st.id, meta)
        rel = obj.get("rel", LEQ)
        self._order(st, lhs, rhs, rel, "order formula")
        return _Result(OrderFormula(lhs, rhs, rel), frozenset())

    def _conclusions(self, st: Step) -> list[HoareTriple]:
        raw = st.conclusion if isinstance(st.conclusion, list) else [st.conclusion]
        return [self.triple(t, st.id, {}) for t in raw]

    def _call_target(self, st: Step, t: HoareTriple) -> str:
        self._need(isinstance(t.stmt, Call), st, "recursion rules conclude triples about calls")
        proc = self.env.proc_map().get(t.stmt.proc)
        self._need(proc is not None, st, f"unknown procedure {t.stmt.proc}")
        self._need(t.stmt.args == proc.formals, st, f"call of {proc.name} must pass its formals")
        return proc.name

    def _rec(self, st: Step) -> _Result:
        concl = self._conclusions(st)
        total = st.rule in PT_RULES
        if st.rule.endswith(" Rec"):
            self._need(len(concl) == 1, st, "simple recursion concludes one triple")
        procs = [self._call_target(st, t) for t in concl]
        self._need(len(set(procs)) == len(procs), st, "a procedure occurs twice")
        if st.rule.endswith(" gRec"):
            for p in procs:
                self._need(not self.env.proc(p).formals, st, "general recursion is for parameterless procedures")
        modes = {t.mode for t in concl}
        self._need(len(modes) == 1 and (modes == {PARTIAL}) != total, st,
                   f"{st.rule} concludes {'total or exact' if total else 'partial'} triples")
        mode = modes.pop()
        discharges = list(st.side.get("discharges", []))
        self._need(len(st.premises) == len(procs), st, "one body derivation per procedure is required")
        by_proc: dict[str, str] = {}
        for a in discharges:
            at = self.triple(self.s.assumptions[a], st.id, {"n": 0} if total else {})
            self._need(isinstance(at.stmt, Call) and at.stmt.proc in procs, st,
                       f"assumption {a} is not about a procedure of this step")
            self._need(at.stmt.proc not in by_proc, st, f"two assumptions for {at.stmt.proc}")
            self._need(at.mode == mode, st, f"assumption {a} has mode {at.mode}")
            by_proc[at.stmt.proc] = a
        self._need(set(by_proc) == set(procs), st, "every procedure needs exactly one assumption")
        opened: set[str] = set()
        if not total:
            for t, ref in zip(concl, st.premises):
                a = self.triple(self.s.assumptions[by_proc[t.stmt.proc]], st.id, {})
                self._equal(a.pre, t.pre, st, f"assumption precondition for {t.stmt.proc}")
                self._equal(a.post, t.post, st, f"assumption postcondition for {t.stmt.proc}")
                opened |= self._body(st, ref, t, t.pre, {})
        else:
            fams = dict(st.side.get("families", {}))
            self._need(set(fams) == set(procs), st, "every procedure needs an indexed family")
            probes = self._probes(st, fams.values())
            for t, ref in zip(concl, st.premises):
                fam = fams[t.stmt.proc]
                a = self.s.assumptions[by_proc[t.stmt.proc]]
                self._need(isinstance(a.get("pre"), Mapping) and a["pre"].get("family") == fam
                           and str(a["pre"].get("index", "n")).replace(" ", "") == "n", st,
                           f"assumption for {t.stmt.proc} must have precondition {fam}^n")
                self._family_base(st, fam, t)
                for n in probes:
                    at = self.triple(a, st.id, {"n": n})
                    self._equal(at.post, t.post, st, f"assumption postcondition for {t.stmt.proc}")
                    nxt = self.family_term(fam, n + 1, st.id)
                    self._order(st, self.family_term(fam, n, st.id), nxt, LEQ,
                                f"monotonicity of {fam} at index {n}")
                    opened |= self._body(st, ref, t, nxt, {"n": n})
                self._limit(st, fam, t.pre, mode)
        remaining = frozenset(opened) - set(discharges)
        return _Result(concl if isinstance(st.conclusion, list) else concl[0], remaining)

    def _probes(self, st: Step, fams) -> tuple[int, ...]:
        out: set[int] = set()
        for name in fams:
            fam = self.s.families.get(name)
            self._need(fam is not None, st, f"unknown family {name!r}")
            if fam.mode == "template":
                self._need(bool(fam.probes), st, f"template family {name} has no probes")
                self.sampled.append(st.id)
            out |= set(fam.indices)
        if "probes" in st.side:
            out |= {int(i) for i in st.side["probes"]}
        return tuple(sorted(out))

    def _family_base(self, st: Step, fam: str, t: HoareTriple) -> None:
        p0 = self.family_term(fam, 0, st.id)
        self._equal(p0, zero_term(p0.vars, p0.dims), st, f"{fam}^0 must be 0")

    def _limit(self, st: Step, fam: str, pre: Pqpt, mode: str) -> None:
        rel = EQ if mode == EXACT else LEQ
        f = self.s.families[fam]
        if f.mode == "explicit":
            lim, tol = self.family_term(fam, len(f.entries) - 1, st.id), TOL_PSD
        else:
            try:
                res = limit_pqpt(lambda j: self.family_term(fam, j, st.id), "upper", self.tol, self.max_iter)
            except QrvError as exc:
                raise RuleMismatch(st.id, f"limit of {fam}: {exc}") from None
            lim, tol = res.value, max(TOL_PSD, res.value.dim * (res.tail + res.delta))
        self._order(st, pre, lim, rel, f"precondition against the limit of {fam}", tol)

    def _body(self, st: Step, ref: str, t: HoareTriple, pre: Pqpt, meta: dict[str, int]) -> set[str]:
        r = self.premise(ref, meta, st.id)
        b = r.value
        self._need(isinstance(b, HoareTriple), st, f"premise {ref} is not a triple")
        proc = self.env.proc(t.stmt.proc)
        self._need(b.stmt == proc.body, st, f"premise {ref} is not about the body of {proc.name}")
        self._need(b.mode == t.mode, st, f"premise {ref} has mode {b.mode}")
        self._equal(b.pre, pre, st, f"body precondition of {proc.name}" + (f" at n={meta['n']}" if meta else ""))
        self._equal(b.post, t.post, st, f"body postcondition of {proc.name}")
        return set(r.open)

    def _loop(self, st: Step) -> _Result:
        (c,) = self._conclusions(st)
        name = self._call_target(st, c)
        body = self.env.proc(name).body
        ok = (isinstance(body, Case) and [m for m, _ in body.arms] == [0, 1]
              and isinstance(body.arm(0), Skip) and isinstance(body.arm(1), Seq)
              and flatten_seq(body.arm(1))[-1] == Call(name, ()))
        self._need(ok, st, f"{name} is not a while loop in tail-recursive form")
        s_body = seq(*flatten_seq(body.arm(1))[:-1])
        total = st.rule == "Rt Loop"
        self._need((c.mode == PARTIAL) != total, st, f"{st.rule} has the wrong mode")
        self._need(len(st.premises) == 1, st, "a loop rule has one premise")
        ops = _measurement(self.env, body.meas)

        def invariant(p: Pqpt) -> Pqpt:
            vars, dims = self._scope(c, p)
            sub = tuple(dims[vars.index(v)] for v in body.vars)
            es = [embed_op(SuperOp(ops[m][None], body.vars, sub, check=False), vars, dims) for m in (0, 1)]
            try:
                return pqpt_disj(es, [pad(c.post, vars, dims), pad(p, vars, dims)])
            except QrvError as exc:
                raise RuleMismatch(st.id, f"loop invariant: {exc}") from None

        p_raw = st.side.get("P")
        self._need(p_raw is not None, st, "the loop rule needs the assertion P in its side data")
        P = self.assertion(p_raw, st.id, {})
        self._equal(c.pre, invariant(P), st, "precondition M0*Q + M1*P")
        if not total:
            r = self.premise(st.premises[0], {}, st.id)
            b = r.value
            self._need(isinstance(b, HoareTriple) and flatten_seq(b.stmt) == flatten_seq(s_body), st,
                       "premise is not about the loop body")
            self._equal(b.pre, P, st, "body precondition")
            self._equal(b.post, invariant(P), st, "body postcondition")
            return _Result(c, r.open)
        fam = st.side.get("family")
        self._need(fam in self.s.families, st, "the total loop rule needs an indexed family")
        self._family_base(st, fam, c)
        opened: set[str] = set()
        for n in self._probes(st, [fam]):
            r = self.premise(st.premises[0], {"n": n}, st.id)
            b = r.value
            self._need(isinstance(b, HoareTriple) and flatten_seq(b.stmt) == flatten_seq(s_body), st,
                       "premise is not about the loop body")
            cur, nxt = self.family_term(fam, n, st.id), self.family_term(fam, n + 1, st.id)
            self._order(st, cur, nxt, LEQ, f"monotonicity of {fam} at index {n}")
            self._equal(b.pre, nxt, st, f"body precondition at n={n}")
            self._equal(b.post, invariant(cur), st, f"body postcondition at n={n}")
            opened |= set(r.open)
        self._limit(st, fam, P, c.mode)
        return _Result(c, frozenset(opened))

    # -- driver ------------------------------------------------------------------------

    def run(self, strict: bool = False) -> Verdict:
        for st in self.s.steps:
            if not self.meta_dep[st.id]:
                self.check(st.id)
        goal = self.s.goal or self.s.steps[-1].id
        r = self.check(goal) if not self.meta_dep.get(goal) else None
        if r is None:
            raise RuleMismatch(goal, "the goal depends on the meta-variable")
        if r.open:
            raise UndischargedAssumption(f"goal {goal} still depends on {sorted(r.open)}")
        steps = [{"id": st.id, "rule": st.rule, "status": self.report.get(st.id, "unchecked")}
                 for st in self.s.steps]
        diag: dict = {"steps": steps, "goal": goal}
        if self.sampled:
            diag["inductive step sampled"] = sorted(set(self.sampled))
        if self.unknown:
            diag["unknown"] = sorted(set(self.unknown))
            if strict:
                raise UnknownSideCondition(self.unknown[0], "order side formula undecided")
            return Verdict("unknown", diagnostics=diag)
        return Verdict("valid", diagnostics=diag)


def check_proof(script: ProofScript, env: Program | None = None, strict: bool = False,
                tol: float = TOL_FP, max_iter: int = MAX_ITER, seed: int = ORDER_SEED) -> Verdict:
    """Replay ``script``; raises RuleMismatch at the first step that does not check."""
    env = env if env is not None else script_program(script)
    return ProofChecker(script, env, tol, max_iter, seed).run(strict)


def triple_from_obj(obj: Mapping, env: Program) -> HoareTriple:
    """A triple file: ``{"pre", "stmt", "post", "mode"}`` with assertions in JSON form."""
    dims = dict(zip(env.global_vars, env.global_dims))
    dims.update(obj.get("dims", {}))
    mats = obj.get("matrices", {})
    stmt = parse_stmt(obj["stmt"]) if "stmt" in obj else env.main
    return HoareTriple(assertion_from_obj(obj["pre"], dims, mats), stmt,
                       assertion_from_obj(obj["post"], dims, mats), obj.get("mode", PARTIAL))
