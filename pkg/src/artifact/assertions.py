"""Parameterized quantum predicate terms (PQPTs).

A term on registers q is ``E*(B) + F*(I)`` where the base ``B`` is a tensor
product of predicate variables (identity elsewhere) and ``E``, ``F`` are
quantum operations with ``E + F`` trace-non-increasing. Everything the logic
needs (substitution, conjunction, disjunction, weakest preconditions) acts
on the Kraus pair, so terms stay in this normal form throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    IllegitimateFormula,
    MissingAssignment,
    NotConverged,
    NotMonotone,
    SideConditionViolated,
)
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
    all_names,
    fresh_vars,
    substitute_vars,
)
from .operators import (
    MAX_ITER,
    TOL_EQ,
    TOL_FP,
    TOL_PSD,
    ComplexMatrix,
    SuperOp,
    add,
    apply_dual,
    choi_distance,
    compose,
    embed_op,
    expand,
    is_zero_op,
    max_abs,
    min_eig,
    qop_equal,
    qop_leq,
    random_qpred,
    reorder_op,
    tail_bound,
    tensor,
    tensor_op,
)
from .semantics import Denoter, _measurement, limit_slack

ORDER_SAMPLES = 64
ORDER_SEED = 42


@dataclass(frozen=True)
class BaseFactor:
    pvar: str
    vars: tuple[str, ...]


def _literal_kraus(m: np.ndarray) -> np.ndarray:
    """Kraus operators ``sqrt(a_k)|phi_k><phi_k|`` with ``sum = m`` under the dual."""
    herm = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(herm)
    w = np.clip(w, 0.0, 1.0)
    keep = w > 1e-15
    if not np.any(keep):
        return np.zeros((1,) + m.shape, dtype=complex)
    vecs = v[:, keep]
    return np.einsum("k,ak,bk->kab", np.sqrt(w[keep]), vecs, vecs.conj())


@dataclass(frozen=True, eq=False)
class Pqpt:
    vars: tuple[str, ...]
    dims: tuple[int, ...]
    base: tuple[BaseFactor, ...]
    E: SuperOp
    F: SuperOp

    def __post_init__(self) -> None:
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "base", tuple(self.base))
        if len(set(self.vars)) != len(self.vars) or len(self.vars) != len(self.dims):
            raise DimensionMismatch(f"bad register list {self.vars} / {self.dims}")
        seen_vars: set[str] = set()
        seen_p: set[str] = set()
        for f in self.base:
            if f.pvar in seen_p:
                raise SideConditionViolated(f"predicate variable {f.pvar} occurs twice in the base")
            if set(f.vars) & seen_vars:
                raise SideConditionViolated("base factors overlap")
            if not set(f.vars) <= set(self.vars):
                raise DimensionMismatch(f"base factor {f.pvar} on {f.vars} outside {self.vars}")
            seen_p.add(f.pvar)
            seen_vars |= set(f.vars)
        for name in ("E", "F"):
            op = getattr(self, name)
            if op.vars != self.vars:
                if set(op.vars) != set(self.vars):
                    raise DimensionMismatch(f"{name} acts on {op.vars}, term on {self.vars}")
                object.__setattr__(self, name, reorder_op(op, self.vars))
            if getattr(self, name).dims != self.dims:
                raise DimensionMismatch(f"{name} has dimensions {op.dims}, term {self.dims}")
        if not self.base and not is_zero_op(self.E, 0.0):
            # parameter-free terms keep everything in the constant part
            object.__setattr__(self, "F", add(self.E, self.F, check=False))
            object.__setattr__(self, "E", SuperOp.zero(self.vars, self.dims))

    @property
    def params(self) -> frozenset[str]:
        return frozenset(f.pvar for f in self.base)

    @property
    def dim(self) -> int:
        return prod(self.dims)

    def factor(self, pvar: str) -> BaseFactor:
        for f in self.base:
            if f.pvar == pvar:
                return f
        raise MissingAssignment(f"{pvar} is not a parameter of this term")

    def factor_dims(self, f: BaseFactor) -> tuple[int, ...]:
        return tuple(self.dims[self.vars.index(v)] for v in f.vars)

    def bound(self) -> float:
        """Largest eigenvalue of ``E*(I) + F*(I)`` (at most 1 for a valid term)."""
        return float(np.linalg.eigvalsh(self.E.dual_identity() + self.F.dual_identity())[-1])

    def check(self, tol: float = TOL_PSD) -> None:
        if self.bound() > 1 + tol:
            raise SideConditionViolated("E + F is not trace-non-increasing")

    def __repr__(self) -> str:
        b = ", ".join(f"{f.pvar}{list(f.vars)}" for f in self.base) or "-"
        return f"Pqpt(vars={self.vars}, base={b}, E={self.E.n_kraus}, F={self.F.n_kraus})"


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def literal(m: np.ndarray | ComplexMatrix, vars: Sequence[str] | None = None,
            dims: Sequence[int] | None = None) -> Pqpt:
    """Parameter-free term equal to the quantum predicate ``m``."""
    if isinstance(m, ComplexMatrix):
        vars, dims, m = m.vars, m.dims, m.data
    m = np.asarray(m, dtype=complex)
    if vars is None or dims is None:
        raise DimensionMismatch("a literal needs its registers and dimensions")
    if m.shape != (prod(dims), prod(dims)):
        raise DimensionMismatch(f"literal of shape {m.shape} on registers {tuple(vars)}")
    if max_abs(m - m.conj().T) > TOL_EQ:
        raise IllegitimateFormula("literal is not Hermitian")
    w = np.linalg.eigvalsh((m + m.conj().T) / 2)
    if w[0] < -TOL_PSD or w[-1] > 1 + TOL_PSD:
        raise IllegitimateFormula("literal is not a quantum predicate (spectrum outside [0, 1])")
    F = SuperOp(_literal_kraus(m), vars, dims, check=False)
    return Pqpt(tuple(vars), tuple(dims), (), SuperOp.zero(vars, dims), F)


def identity_term(vars: Sequence[str], dims: Sequence[int]) -> Pqpt:
    return Pqpt(tuple(vars), tuple(dims), (), SuperOp.zero(vars, dims), SuperOp.identity(vars, dims))


def zero_term(vars: Sequence[str], dims: Sequence[int]) -> Pqpt:
    return Pqpt(tuple(vars), tuple(dims), (), SuperOp.zero(vars, dims), SuperOp.zero(vars, dims))


def pvar(name: str, factor_vars: Sequence[str], vars: Sequence[str], dims: Sequence[int]) -> Pqpt:
    """The bare predicate variable ``name`` on ``factor_vars`` (identity elsewhere)."""
    return Pqpt(tuple(vars), tuple(dims), (BaseFactor(name, tuple(factor_vars)),),
                SuperOp.identity(vars, dims), SuperOp.zero(vars, dims))


def make_pqpt(base: Sequence[BaseFactor], E: Sequence[np.ndarray] | SuperOp,
              F: Sequence[np.ndarray] | SuperOp, vars: Sequence[str], dims: Sequence[int],
              check: bool = True) -> Pqpt:
    def op(x):
        if isinstance(x, SuperOp):
            return x
        return SuperOp.from_kraus(list(x), vars, dims, check=False)
    p = Pqpt(tuple(vars), tuple(dims), tuple(base), op(E), op(F))
    if check:
        p.check()
    return p


def with_base(p: Pqpt, base: Sequence[BaseFactor]) -> Pqpt:
    return Pqpt(p.vars, p.dims, tuple(base), p.E, p.F)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

Assignment = Mapping[str, "np.ndarray | ComplexMatrix"]


def base_matrix(p: Pqpt, v: Assignment) -> ComplexMatrix:
    out = None
    for f in p.base:
        if f.pvar not in v:
            raise MissingAssignment(f"no value for predicate variable {f.pvar}")
        val = v[f.pvar]
        data = val.data if isinstance(val, ComplexMatrix) else np.asarray(val, dtype=complex)
        fd = p.factor_dims(f)
        if data.shape != (prod(fd), prod(fd)):
            raise DimensionMismatch(f"value of {f.pvar} has shape {data.shape}, needs {prod(fd)}")
        m = ComplexMatrix(data, f.vars, fd)
        out = m if out is None else tensor(out, m)
    if out is None:
        return ComplexMatrix(np.eye(p.dim), p.vars, p.dims)
    return expand(out, p.vars, p.dims)


def eval_pqpt(p: Pqpt, v: Assignment | None = None) -> ComplexMatrix:
    v = v or {}
    b = base_matrix(p, v)
    ident = ComplexMatrix(np.eye(p.dim), p.vars, p.dims)
    return apply_dual(p.E, b) + apply_dual(p.F, ident)


def const_part(p: Pqpt) -> np.ndarray:
    """``F*(I)`` as a plain array."""
    return p.F.dual_identity()


def random_assignment(p: Pqpt, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {f.pvar: random_qpred(prod(p.factor_dims(f)), rng) for f in p.base}


def constant_assignment(p: Pqpt, value: float) -> dict[str, np.ndarray]:
    return {f.pvar: value * np.eye(prod(p.factor_dims(f))) for f in p.base}


# ---------------------------------------------------------------------------
# register bookkeeping
# ---------------------------------------------------------------------------


def pad(p: Pqpt, vars: Sequence[str], dims: Sequence[int]) -> Pqpt:
    """``p`` tensored with the identity predicate on the extra registers."""
    vars, dims = tuple(vars), tuple(dims)
    if p.vars == vars:
        return p
    return Pqpt(vars, dims, p.base, embed_op(p.E, vars, dims), embed_op(p.F, vars, dims))


def rename_pqpt(p: Pqpt, mapping: Mapping[str, str]) -> Pqpt:
    from .operators import rename_op

    vals = [mapping.get(v, v) for v in p.vars]
    if len(set(vals)) != len(vals):
        raise SideConditionViolated(f"renaming {dict(mapping)} merges registers")
    base = tuple(BaseFactor(f.pvar, tuple(mapping.get(v, v) for v in f.vars)) for f in p.base)
    return Pqpt(tuple(vals), p.dims, base, rename_op(p.E, dict(mapping)), rename_op(p.F, dict(mapping)))


def union_space(*items) -> tuple[tuple[str, ...], tuple[int, ...]]:
    vars: list[str] = []
    dims: list[int] = []
    for it in items:
        for v, d in zip(it.vars, it.dims):
            if v in vars:
                if dims[vars.index(v)] != d:
                    raise DimensionMismatch(f"register {v} has dimensions {dims[vars.index(v)]} and {d}")
            else:
                vars.append(v)
                dims.append(d)
    return tuple(vars), tuple(dims)


def align(p: Pqpt, q: Pqpt) -> tuple[Pqpt, Pqpt]:
    vars, dims = union_space(p, q)
    return pad(p, vars, dims), pad(q, vars, dims)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def transform(p: Pqpt, g: SuperOp) -> Pqpt:
    """``g*(p)``: precomposes both parts of the Kraus pair with ``g``."""
    vars, dims = union_space(p, g)
    p = pad(p, vars, dims)
    g = embed_op(g, vars, dims)
    return Pqpt(vars, dims, p.base, compose(g, p.E), compose(g, p.F))


def add_constant(p: Pqpt, m: np.ndarray) -> Pqpt:
    """``p + m`` for a constant ``m`` with ``E*(I) + F*(I) + m`` still below the identity."""
    total = const_part(p) + m
    F = SuperOp(_literal_kraus(total), p.vars, p.dims, check=False)
    return Pqpt(p.vars, p.dims, p.base, p.E, F)


def subst_pqpt(p: Pqpt, subs: Mapping[str, Pqpt]) -> Pqpt:
    """Simultaneous substitution of terms for predicate variables."""
    subs = {x: q for x, q in subs.items() if x in p.params}
    if not subs:
        return p
    prepared: dict[str, Pqpt] = {}
    for x, q in subs.items():
        f = p.factor(x)
        if set(q.vars) != set(f.vars):
            raise SideConditionViolated(f"substituend for {x} acts on {q.vars}, {x} on {f.vars}")
        if tuple(q.dims[q.vars.index(v)] for v in f.vars) != p.factor_dims(f):
            raise SideConditionViolated(f"substituend for {x} has the wrong dimensions")
        prepared[x] = Pqpt(f.vars, p.factor_dims(f), q.base, reorder_op(q.E, f.vars),
                           reorder_op(q.F, f.vars))
    kept = [f for f in p.base if f.pvar not in prepared]
    if len(p.params) <= 1:
        (x, q), = prepared.items()
        eq = embed_op(q.E, p.vars, p.dims)
        fq = embed_op(q.F, p.vars, p.dims)
        E = compose(p.E, eq)
        F = add(p.F, compose(p.E, fq), check=False)
        base = tuple(q.base)
    else:
        ops: list[SuperOp] = []
        base_l: list[BaseFactor] = list(kept)
        for x, q in prepared.items():
            if q.base and not is_zero_op(q.F):
                raise SideConditionViolated(
                    f"with several parameters each substituend must be E*(X) or F*(I); "
                    f"the one for {x} has both parts")
            if q.base:
                ops.append(q.E)
                base_l.extend(q.base)
            else:
                ops.append(q.F)
        g = ops[0]
        for o in ops[1:]:
            g = tensor_op(g, o)
        E = compose(p.E, embed_op(g, p.vars, p.dims))
        F = p.F
        base = tuple(base_l)
    names = [f.pvar for f in base]
    if len(set(names)) != len(names):
        raise SideConditionViolated("substitution makes parameter lists overlap")
    used = [v for f in base for v in f.vars]
    if len(set(used)) != len(used):
        raise SideConditionViolated("substitution makes base factors overlap")
    return Pqpt(p.vars, p.dims, base, E, F)


def pqpt_conj(p: Pqpt, q: Pqpt) -> Pqpt:
    """Quantum conjunction ``p (x) q`` on disjoint registers."""
    if set(p.vars) & set(q.vars):
        raise SideConditionViolated(f"conjuncts share registers {sorted(set(p.vars) & set(q.vars))}")
    vars, dims = p.vars + q.vars, p.dims + q.dims
    if not q.params:
        E, F, base = tensor_op(p.E, q.F), tensor_op(p.F, q.F), p.base
    elif not p.params:
        E, F, base = tensor_op(p.F, q.E), tensor_op(p.F, q.F), q.base
    elif is_zero_op(p.F) and is_zero_op(q.F):
        E, F, base = tensor_op(p.E, q.E), SuperOp.zero(vars, dims), p.base + q.base
    else:
        raise SideConditionViolated("conjunction needs both terms of the form E*(B) "
                                    "or one of them parameter-free")
    return Pqpt(vars, dims, base, E, F)


def pqpt_disj(es: Sequence[SuperOp], ps: Sequence[Pqpt]) -> Pqpt:
    """Quantum disjunction ``sum_m e_m*(p_m)`` under an exclusive case selection."""
    if len(es) != len(ps) or not ps:
        raise SideConditionViolated("disjunction needs one selector per term")
    if len({p.params for p in ps}) != 1:
        raise SideConditionViolated("disjuncts have different parameter sets")
    vars, dims = union_space(*ps, *es)
    ps = [pad(p, vars, dims) for p in ps]
    bases = {frozenset(p.base) for p in ps if not is_zero_op(p.E)}
    if len(bases) > 1:
        raise SideConditionViolated("disjuncts have different bases")
    base = ps[0].base if not bases else next(p.base for p in ps if not is_zero_op(p.E))
    es = [embed_op(e, vars, dims) for e in es]
    total = es[0]
    for e in es[1:]:
        total = add(total, e, check=False)
    if min_eig(np.eye(prod(dims)) - total.dual_identity())[0] < -TOL_PSD:
        raise SideConditionViolated("case selection is not trace-non-increasing")
    E = SuperOp.zero(vars, dims)
    F = SuperOp.zero(vars, dims)
    for e, p in zip(es, ps):
        E = add(E, compose(e, p.E), check=False)
        F = add(F, compose(e, p.F), check=False)
    return Pqpt(vars, dims, base, E, F)


def pqpt_equal(p: Pqpt, q: Pqpt, tol: float = TOL_EQ) -> bool:
    """Equality of normal forms: same base, Choi-equal E parts, equal constant parts."""
    try:
        p, q = align(p, q)
    except DimensionMismatch:
        return False
    zp, zq = is_zero_op(p.E, tol), is_zero_op(q.E, tol)
    if not (zp and zq):
        if set(p.base) != set(q.base) or not qop_equal(p.E, q.E, tol):
            return False
    return max_abs(const_part(p) - const_part(q)) <= tol


# ---------------------------------------------------------------------------
# order formulas
# ---------------------------------------------------------------------------

LEQ = "<="
EQ = "="


@dataclass
class Verdict:
    status: str  # valid | invalid | unknown
    witness: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.status == "valid"

    def to_json(self) -> dict:
        out: dict = {"status": self.status}
        if self.witness is not None:
            out["witness"] = self.witness
        if "iterations" in self.diagnostics:
            out["iterations"] = self.diagnostics["iterations"]
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out


@dataclass(frozen=True, eq=False)
class OrderFormula:
    lhs: Pqpt
    rhs: Pqpt
    rel: str = LEQ

    def __post_init__(self) -> None:
        if self.rel not in (LEQ, EQ):
            raise IllegitimateFormula(f"unknown relation {self.rel!r}")
        if self.lhs.params != self.rhs.params:
            raise IllegitimateFormula(f"parameter sets differ: {sorted(self.lhs.params)} vs "
                                      f"{sorted(self.rhs.params)}")


def _witness(p: Pqpt, v: Assignment, value: float, vec: np.ndarray) -> dict:
    from .semantics import matrix_to_json

    return {"assignment": {k: matrix_to_json(np.asarray(getattr(m, "data", m))) for k, m in v.items()},
            "eigenvalue": float(f"{value:.12g}"),
            "state": [[float(f"{z.real:.12g}"), float(f"{z.imag:.12g}")] for z in vec],
            "vars": list(p.vars)}


def _check_at(lhs: Pqpt, rhs: Pqpt, rel: str, v: Assignment, tol: float) -> tuple[bool, float, np.ndarray]:
    a, b = eval_pqpt(lhs, v).data, eval_pqpt(rhs, v).data
    if rel == LEQ:
        w, vec = min_eig(b - a)
        return w >= -tol, w, vec
    diff = (b - a + (b - a).conj().T) / 2
    w, vecs = np.linalg.eigh(diff)
    i = int(np.argmax(np.abs(w)))
    ok = max_abs(b - a) <= max(tol, TOL_EQ)
    return ok, float(w[i]), vecs[:, i]


def pqpt_order(f: OrderFormula, samples: int = ORDER_SAMPLES, seed: int = ORDER_SEED,
               tol: float = TOL_PSD) -> Verdict:
    """Decide ``lhs <= rhs`` (or ``=``) for all assignments, where possible."""
    lhs, rhs = align(f.lhs, f.rhs)
    for x in lhs.params:
        if lhs.factor(x).vars != rhs.factor(x).vars:
            return _sample(lhs, rhs, f.rel, samples, seed, tol, "bases differ")
    if not lhs.params:
        ok, w, vec = _check_at(lhs, rhs, f.rel, {}, tol)
        if ok:
            return Verdict("valid", diagnostics={"method": "matrix"})
        return Verdict("invalid", _witness(lhs, {}, w, vec), {"method": "matrix"})
    C, E = lhs.E, rhs.E
    le, ge = qop_leq(C, E, tol), qop_leq(E, C, tol)
    if not (le or ge):
        return _sample(lhs, rhs, f.rel, samples, seed, tol, "E parts incomparable")
    d_i, f_i = const_part(lhs), const_part(rhs)
    zero_v, one_v = constant_assignment(lhs, 0.0), constant_assignment(lhs, 1.0)
    diag = {"method": "restricted", "comparable": "<=" if le else ">="}
    if f.rel == EQ:
        if not (le and ge):
            ok, w, vec = _check_at(lhs, rhs, EQ, one_v, tol)
            return Verdict("invalid", _witness(lhs, one_v, w, vec), diag)
        ok, w, vec = _check_at(lhs, rhs, EQ, zero_v, tol)
        if max_abs(d_i - f_i) > max(tol, TOL_EQ):
            return Verdict("invalid", _witness(lhs, zero_v, w, vec), diag)
        return Verdict("valid", diagnostics=diag)
    if le:
        w, vec = min_eig(f_i - d_i)
        if w >= -tol:
            return Verdict("valid", diagnostics=diag)
        return Verdict("invalid", _witness(lhs, zero_v, w, vec), diag)
    w, vec = min_eig(E.dual_identity() + f_i - C.dual_identity() - d_i)
    if w >= -tol:
        return Verdict("valid", diagnostics=diag)
    return Verdict("invalid", _witness(lhs, one_v, w, vec), diag)


def _sample(lhs: Pqpt, rhs: Pqpt, rel: str, samples: int, seed: int, tol: float,
            reason: str) -> Verdict:
    rng = np.random.default_rng(seed)
    candidates = [constant_assignment(lhs, 0.0), constant_assignment(lhs, 1.0)]
    candidates += [random_assignment(lhs, rng) for _ in range(samples)]
    worst = None
    for v in candidates:
        ok, w, vec = _check_at(lhs, rhs, rel, v, tol)
        if not ok and (worst is None or abs(w) > abs(worst[1])):
            worst = (v, w, vec)
    diag = {"method": "sampled", "reason": reason, "samples": len(candidates)}
    if worst is not None:
        return Verdict("invalid", _witness(lhs, *worst), diag)
    return Verdict("unknown", diagnostics=diag)


# ---------------------------------------------------------------------------
# limits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PqptLimit:
    value: Pqpt
    iterations: int
    delta: float
    tail: float


def pqpt_distance(p: Pqpt, q: Pqpt) -> float:
    p, q = align(p, q)
    return max(choi_distance(p.E, q.E), float(np.linalg.norm(const_part(p) - const_part(q))))


def limit_pqpt(gen: Callable[[int], Pqpt], mode: str = "upper", tol: float = TOL_FP,
               max_iter: int = MAX_ITER, monotone_checks: int = 8, start: int = 0) -> PqptLimit:
    """Limit of a monotone sequence of terms (increasing for ``upper``, decreasing for ``lower``)."""
    if mode not in ("upper", "lower"):
        raise ValueError(f"unknown limit mode {mode!r}")
    prev = gen(start)
    deltas: list[float] = []
    for n in range(start + 1, start + max_iter + 1):
        cur = gen(n)
        if n - start <= monotone_checks:
            a, b = (prev, cur) if mode == "upper" else (cur, prev)
            if pqpt_order(OrderFormula(a, b, LEQ), samples=8, tol=max(TOL_PSD, tol)).status == "invalid":
                raise NotMonotone(f"sequence is not monotone between indices {n - 1} and {n}")
        delta = pqpt_distance(prev, cur)
        deltas.append(delta)
        if delta < tol:
            return PqptLimit(cur, n, delta, tail_bound(deltas))
        prev = cur
    raise NotConverged(f"term sequence did not converge after {max_iter} steps", max_iter,
                       deltas[-1] if deltas else float("nan"))


# ---------------------------------------------------------------------------
# weakest preconditions
# ---------------------------------------------------------------------------


@dataclass
class Transformed:
    value: Pqpt
    iterations: int
    slack: float


class Transformer:
    """Structural fwp / fwlp over the register space of a type-checked program."""

    def __init__(self, env: Program, params: Mapping[str, SuperOp] | None = None,
                 tol: float = TOL_FP, max_iter: int = MAX_ITER, denoter: Denoter | None = None):
        self.env = env
        self.den = denoter or Denoter(env, params, tol, max_iter)
        self.used_limit = False

    def scope_for(self, s: Stmt, *terms: Pqpt) -> tuple[tuple[str, ...], tuple[int, ...]]:
        vars = list(self.env.global_vars)
        dims = list(self.env.global_dims)
        for t in terms:
            for v, d in zip(t.vars, t.dims):
                if v not in vars:
                    vars.append(v)
                    dims.append(d)
        return tuple(vars), tuple(dims)

    def run(self, s: Stmt, post: Pqpt, liberal: bool = False,
            scope: tuple[Sequence[str], Sequence[int]] | None = None) -> Transformed:
        vars, dims = scope if scope is not None else self.scope_for(s, post)
        vars, dims = tuple(vars), tuple(dims)
        out = self._fxp(s, pad(post, vars, dims), liberal)
        iters, slack = 0, 0.0
        if self.used_limit:
            fix = self.den.fixpoint()
            iters, slack = fix.iterations, limit_slack(fix, prod(dims))
        return Transformed(out, iters, slack)

    def _fxp(self, s: Stmt, p: Pqpt, liberal: bool) -> Pqpt:
        vars, dims = p.vars, p.dims
        if isinstance(s, Bot):
            F = SuperOp.identity(vars, dims) if liberal else SuperOp.zero(vars, dims)
            return Pqpt(vars, dims, p.base, SuperOp.zero(vars, dims), F)
        if isinstance(s, Skip):
            return p
        if isinstance(s, (Init, Unitary)):
            return transform(p, self.den._den(s, vars, dims, None))
        if isinstance(s, Seq):
            return self._fxp(s.first, self._fxp(s.second, p, liberal), liberal)
        if isinstance(s, Case):
            sub_dims = tuple(dims[vars.index(v)] for v in s.vars)
            es, ps = [], []
            for m, op in sorted(_measurement(self.env, s.meas).items()):
                es.append(embed_op(SuperOp(op[None], s.vars, sub_dims, check=False), vars, dims))
                ps.append(self._fxp(s.arm(m), p, liberal))
            return pqpt_disj(es, ps)
        if isinstance(s, Local):
            return self._local(s, p, liberal)
        if isinstance(s, (Call, ParamHole)):
            self.used_limit = self.used_limit or isinstance(s, Call)
            g = self.den._den(s, vars, dims, None)
            out = transform(p, g)
            if liberal:
                out = add_constant(out, np.eye(prod(dims)) - g.dual_identity())
            return out
        if isinstance(s, Release):
            raise SideConditionViolated("release markers have no precondition")
        raise SideConditionViolated(f"unexpected statement {s!r}")

    def _local(self, s: Local, p: Pqpt, liberal: bool) -> Pqpt:
        vars, dims = p.vars, p.dims
        clash = [v for v in s.vars if v in vars]
        body, names = s.body, list(s.vars)
        if clash:
            fresh = fresh_vars([(v, t) for v, t in zip(s.vars, s.types) if v in clash],
                               set(vars) | all_names(s.body))
            rename = {v: n for v, (n, _) in zip(clash, fresh)}
            body = substitute_vars(body, rename)
            names = [rename.get(v, v) for v in names]
        ldims = tuple(t.dim for t in s.types)
        inner = self._fxp(body, pad(p, vars + tuple(names), dims + ldims), liberal)
        return sandwich_zero(inner, vars, dims)


def sandwich_zero(p: Pqpt, keep: Sequence[str], keep_dims: Sequence[int]) -> Pqpt:
    """``<0|_r p |0>_r`` for the registers r of ``p`` outside ``keep``."""
    keep, keep_dims = tuple(keep), tuple(keep_dims)
    rest = [v for v in p.vars if v not in keep]
    for f in p.base:
        if set(f.vars) & set(rest):
            raise SideConditionViolated("a base factor mentions a local register")
    order = keep + tuple(rest)
    E, F = reorder_op(p.E, order), reorder_op(p.F, order)
    d = prod(keep_dims)
    dl = prod(p.dims[p.vars.index(v)] for v in rest)

    def cut(op: SuperOp) -> SuperOp:
        k = op.kraus_array.reshape(-1, d, dl, d, dl)[:, :, :, :, 0]
        return SuperOp(k.transpose(0, 2, 1, 3).reshape(-1, d, d), keep, keep_dims, check=False)

    return Pqpt(keep, keep_dims, p.base, cut(E), cut(F))


def fwp(env: Program, s: Stmt, q: Pqpt, tol: float = TOL_FP, max_iter: int = MAX_ITER,
        params: Mapping[str, SuperOp] | None = None) -> Pqpt:
    return Transformer(env, params, tol, max_iter).run(s, q).value


def fwlp(env: Program, s: Stmt, q: Pqpt, tol: float = TOL_FP, max_iter: int = MAX_ITER,
         params: Mapping[str, SuperOp] | None = None) -> Pqpt:
    return Transformer(env, params, tol, max_iter).run(s, q, liberal=True).value


def check_invariants(p: Pqpt, rng: np.random.Generator, samples: int = 4, tol: float = 1e-8) -> bool:
    """Joint bound plus QPRED-valued evaluation at random assignments."""
    if p.bound() > 1 + tol:
        return False
    for _ in range(samples):
        m = eval_pqpt(p, random_assignment(p, rng)).data
        w = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if w[0] < -tol or w[-1] > 1 + tol or max_abs(m - m.conj().T) > tol:
            return False
    return True

