"""Parameterized predicate terms, order formulas, limits and fwp / fwlp."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.assertions import (
    EQ,
    LEQ,
    BaseFactor,
    OrderFormula,
    Transformer,
    check_invariants,
    eval_pqpt,
    fwlp,
    fwp,
    limit_pqpt,
    literal,
    make_pqpt,
    pqpt_conj,
    pqpt_disj,
    pqpt_equal,
    pqpt_order,
    pvar,
    random_assignment,
    subst_pqpt,
)
from artifact.errors import (
    IllegitimateFormula,
    MissingAssignment,
    NotConverged,
    NotMonotone,
    SideConditionViolated,
)
from artifact.instances import H, proj
from artifact.lang import Call, unroll_stmt
from artifact.operators import (
    ComplexMatrix,
    SuperOp,
    apply,
    random_density,
    random_kraus,
    random_qpred,
)
from artifact.parser import parse_stmt
from artifact.semantics import denote

from helpers import CORPUS, corpus

PLUS = np.full((2, 2), 0.5)
KET0, KET1 = proj(0, 2), proj(1, 2)
SEEDS = [42, 43, 44]


def diag_read(name="X", d=2, var="q", indices=None):
    """``sum_i <i|X|i> |i><i|`` over ``indices``."""
    idx = range(d) if indices is None else indices
    return make_pqpt([BaseFactor(name, (var,))], [proj(i, d) for i in idx], [], (var,), (d,))


def lit(m, vars=("q",)):
    return literal(np.asarray(m, dtype=complex), vars, (2,) * len(vars))


class TestEval:
    def test_pvar(self):
        p = pvar("X", ("q",), ("q",), (2,))
        assert np.allclose(eval_pqpt(p, {"X": KET0}).data, KET0)

    @pytest.mark.parametrize("n", range(4))
    def test_diagonal_read_of_projector(self, n):
        p = diag_read(d=4)
        assert np.allclose(eval_pqpt(p, {"X": proj(n, 4)}).data, proj(n, 4))

    def test_literal(self):
        assert np.allclose(eval_pqpt(lit(PLUS)).data, PLUS)

    def test_missing(self):
        with pytest.raises(MissingAssignment):
            eval_pqpt(pvar("X", ("q",), ("q",), (2,)), {})

    def test_literal_must_be_predicate(self):
        with pytest.raises(IllegitimateFormula):
            lit(2 * KET0)


class TestSubst:
    @pytest.mark.parametrize("n", range(4))
    def test_projector_into_diagonal(self, n):
        out = subst_pqpt(diag_read(d=4), {"X": literal(proj(n, 4), ("q",), (4,))})
        assert not out.params
        assert np.allclose(eval_pqpt(out).data, proj(n, 4))

    def test_self(self):
        p = diag_read()
        assert pqpt_equal(subst_pqpt(p, {"X": pvar("X", ("q",), ("q",), (2,))}), p)

    def test_shift_down(self):
        # A' = sum_{i >= 1} A_ii |i-1><i-1|, substituted into sum_i <i|A|i> |i><i|
        shift = [np.outer(np.eye(4)[i], np.eye(4)[i - 1]) for i in range(1, 4)]
        a_prime = make_pqpt([BaseFactor("A", ("q",))], shift, [], ("q",), (4,))
        out = subst_pqpt(diag_read("A", 4), {"A": a_prime})
        a = np.diag([0.1, 0.2, 0.3, 0.4])
        assert np.allclose(eval_pqpt(out, {"A": a}).data, np.diag([0.2, 0.3, 0.4, 0.0]))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_semantics_commute(self, seed):
        rng = np.random.default_rng(seed)
        p = diag_read()
        sub = make_pqpt([BaseFactor("X", ("q",))], [np.sqrt(0.5) * H], [np.sqrt(0.3) * np.eye(2)], ("q",), (2,))
        out = subst_pqpt(p, {"X": sub})
        for _ in range(5):
            v = {"X": random_qpred(2, rng)}
            inner = eval_pqpt(sub, v).data
            assert np.allclose(eval_pqpt(out, v).data, eval_pqpt(p, {"X": inner}).data, atol=1e-9)

    def test_wrong_register(self):
        with pytest.raises(SideConditionViolated):
            subst_pqpt(diag_read(), {"X": pvar("Y", ("p",), ("p",), (2,))})


class TestConnectives:
    def test_conj_literals(self):
        out = pqpt_conj(lit(KET0, ("q",)), lit(PLUS, ("p",)))
        assert np.allclose(eval_pqpt(out).data, np.kron(KET0, PLUS))

    def test_conj_shared_register(self):
        with pytest.raises(SideConditionViolated):
            pqpt_conj(lit(KET0), lit(PLUS))

    def test_case_precondition(self):
        env = corpus("rqmc")
        ms = env.bindings.measurements["M"]
        es = [SuperOp(ms[m][None], ("q",), (2,), check=False) for m in sorted(ms)]
        arms = [lit(KET0), lit(PLUS), lit(np.eye(2))]
        out = pqpt_disj(es, arms)
        want = sum(ms[m].conj().T @ eval_pqpt(a).data @ ms[m] for m, a in zip(sorted(ms), arms))
        assert np.allclose(eval_pqpt(out).data, want)

    def test_disj_needs_selectors(self):
        with pytest.raises(SideConditionViolated):
            pqpt_disj([], [lit(KET0)])


class TestOrder:
    def test_diagonal_part(self):
        lhs = diag_read(indices=[0])
        rhs = diag_read()
        v = pqpt_order(OrderFormula(lhs, rhs, LEQ))
        assert v.status == "valid"

    def test_rotated_equality(self):
        lhs = make_pqpt([BaseFactor("X", ("q",))], [KET0 @ H], [], ("q",), (2,))
        rhs = make_pqpt([BaseFactor("X", ("q",))], [np.outer([1, 0], [1, 1]) / np.sqrt(2)], [], ("q",), (2,))
        assert pqpt_order(OrderFormula(lhs, rhs, EQ)).status == "valid"

    def test_identity_not_below_projector(self):
        v = pqpt_order(OrderFormula(lit(np.eye(2)), lit(KET0)))
        assert v.status == "invalid"
        assert v.witness["eigenvalue"] == pytest.approx(-1.0)

    def test_comparable_violation(self):
        v = pqpt_order(OrderFormula(diag_read(), diag_read(indices=[0]), LEQ))
        assert v.status == "invalid" and v.witness is not None

    def test_param_mismatch(self):
        with pytest.raises(IllegitimateFormula):
            OrderFormula(diag_read("X"), diag_read("Y"))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_incomparable_is_unknown(self, seed):
        # 1/4 <0|X|0> |0><0| <= 1/4 HXH + 1/4 I holds, but no decision rule applies
        lhs = make_pqpt([BaseFactor("X", ("q",))], [0.5 * KET0], [], ("q",), (2,))
        rhs = make_pqpt([BaseFactor("X", ("q",))], [0.5 * H], [0.5 * np.eye(2)], ("q",), (2,))
        v = pqpt_order(OrderFormula(lhs, rhs), seed=seed)
        assert v.status == "unknown" and v.witness is None

    def test_incomparable_violation_found(self):
        lhs = make_pqpt([BaseFactor("X", ("q",))], [np.sqrt(0.5) * KET0], [np.sqrt(0.5) * np.eye(2)], ("q",), (2,))
        rhs = make_pqpt([BaseFactor("X", ("q",))], [H], [], ("q",), (2,))
        v = pqpt_order(OrderFormula(lhs, rhs))
        assert v.status == "invalid" and v.witness["eigenvalue"] < 0


class TestLimits:
    def test_constant(self):
        p = lit(PLUS)
        assert pqpt_equal(limit_pqpt(lambda n: p).value, p)

    def test_rqmc_family(self):
        def gen(n):
            a = (1 - 4.0 ** -((n + 1) // 2)) / 3
            b = (1 - 4.0 ** -(n // 2)) / 3
            return lit(np.diag([a, b]))
        lim = limit_pqpt(gen)
        assert eval_pqpt(lim.value).data[0, 0].real == pytest.approx(1 / 3, abs=1e-8)

    def test_almost_sure(self):
        lim = limit_pqpt(lambda n: lit((1 - 2.0 ** -n) * np.eye(2)))
        assert np.allclose(eval_pqpt(lim.value).data, np.eye(2), atol=1e-8)

    def test_lower(self):
        lim = limit_pqpt(lambda n: lit((0.5 + 2.0 ** -(n + 1)) * np.eye(2)), mode="lower")
        assert np.allclose(eval_pqpt(lim.value).data, np.eye(2) / 2, atol=1e-8)

    def test_not_monotone(self):
        with pytest.raises(NotMonotone):
            limit_pqpt(lambda n: lit((n % 2) * np.eye(2)))

    def test_not_converged(self):
        with pytest.raises(NotConverged):
            limit_pqpt(lambda n: lit((1 - 0.9 ** n) * np.eye(2)), max_iter=5)


class TestTransformers:
    def test_bot(self):
        env = corpus("bot")
        q = lit(PLUS)
        assert np.allclose(eval_pqpt(fwp(env, env.main, q)).data, 0)
        assert np.allclose(eval_pqpt(fwlp(env, env.main, q)).data, np.eye(2))

    def test_alice(self):
        env = corpus("rqmc")
        out = eval_pqpt(fwp(env, Call("Alice"), lit(PLUS))).data
        assert np.max(np.abs(out - np.eye(2) / 3)) <= 1e-6

    def test_hadamard(self):
        env = corpus("rqmc")
        assert np.allclose(eval_pqpt(fwp(env, parse_stmt("[q] *= H"), lit(PLUS))).data, KET0)

    def test_parametric_post(self):
        env = corpus("rqmc")
        out = fwp(env, parse_stmt("[q] *= H"), pvar("X", ("q",), ("q",), (2,)))
        x = random_qpred(2, np.random.default_rng(0))
        assert np.allclose(eval_pqpt(out, {"X": x}).data, H @ x @ H)

    def test_local_sandwich(self):
        env = corpus("localproc")
        out = eval_pqpt(fwp(env, env.main, lit(PLUS))).data
        assert np.allclose(out, PLUS, atol=1e-9)


def _random_posts(env, k, seed):
    rng = np.random.default_rng(seed)
    d = int(np.prod(env.global_dims))
    return [literal(random_qpred(d, rng), env.global_vars, env.global_dims) for _ in range(k)]


class TestDualitySuite:
    @pytest.mark.parametrize("name", CORPUS)
    def test_fwlp_is_dual_of_fwp(self, name):
        env = corpus(name)
        tr = Transformer(env)
        for q in _random_posts(env, 20, 42):
            comp = literal(np.eye(q.dim) - eval_pqpt(q).data, q.vars, q.dims)
            lhs = eval_pqpt(tr.run(env.main, q, liberal=True).value).data
            rhs = np.eye(q.dim) - eval_pqpt(tr.run(env.main, comp).value).data
            assert np.max(np.abs(lhs - rhs)) <= 1e-7

    @pytest.mark.parametrize("name", ["rqmc", "toy", "while", "grover", "localproc"])
    def test_wp_and_wlp_against_denotation(self, name):
        env = corpus(name)
        tr = Transformer(env)
        e = denote(env, env.main)
        rng = np.random.default_rng(7)
        d = int(np.prod(env.global_dims))
        for q in _random_posts(env, 3, 43):
            wp = eval_pqpt(tr.run(env.main, q).value).data
            wlp = eval_pqpt(tr.run(env.main, q, liberal=True).value).data
            for _ in range(3):
                rho = random_density(d, rng)
                out = apply(e, _cm(rho, env)).data
                qdata = eval_pqpt(q).data
                assert abs(np.trace(wp @ rho) - np.trace(qdata @ out)) <= 1e-7
                want = np.trace(qdata @ out) + np.trace(rho) - np.trace(out)
                assert abs(np.trace(wlp @ rho) - want) <= 1e-7

    @pytest.mark.parametrize("name, proc", [("rqmc", "Alice"), ("toy", "toy"), ("while", "T")])
    def test_approximants_monotone(self, name, proc):
        env = corpus(name)
        tr = Transformer(env)
        vars_, dims = env.global_vars, env.global_dims
        post = make_pqpt([BaseFactor("X", vars_)], [np.eye(int(np.prod(dims)))], [], vars_, dims)
        call = Call(proc)
        prev = None
        for k in range(5):
            cur = tr.run(unroll_stmt(env, call, k), post).value
            if prev is not None:
                assert pqpt_order(OrderFormula(prev, cur)).status != "invalid"
            prev = cur


def _cm(rho, env):
    return ComplexMatrix(rho, env.global_vars, env.global_dims)


class TestInvariants:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 20), k=st.integers(1, 3))
    def test_random_terms(self, seed, k):
        rng = np.random.default_rng(seed)
        ks = random_kraus(2, k + 1, rng, deficit=float(rng.uniform(0, 0.5)))
        p = make_pqpt([BaseFactor("X", ("q",))], ks[:k], ks[k:], ("q",), (2,))
        assert check_invariants(p, rng)
        v = random_assignment(p, rng)
        m = eval_pqpt(p, v).data
        w = np.linalg.eigvalsh(m)
        assert w[0] >= -1e-9 and w[-1] <= 1 + 1e-9

    def test_overfull_rejected(self):
        with pytest.raises(SideConditionViolated):
            make_pqpt([BaseFactor("X", ("q",))], [np.eye(2)], [np.eye(2)], ("q",), (2,))

    def test_repeated_pvar(self):
        with pytest.raises(SideConditionViolated):
            make_pqpt([BaseFactor("X", ("q",)), BaseFactor("X", ("p",))], [np.eye(4)], [], ("q", "p"), (2, 2))
