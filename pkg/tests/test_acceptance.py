"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test records a ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line; the lines are printed together at the end of the pytest run.
"""

import copy
import time
from contextlib import contextmanager

import numpy as np
import pytest

from artifact import instances, proofs
from artifact.assertions import (
    BaseFactor,
    OrderFormula,
    Transformer,
    check_invariants,
    eval_pqpt,
    literal,
    make_pqpt,
    pqpt_order,
    random_assignment,
)
from artifact.errors import RuleMismatch
from artifact.lang import Call, typecheck, unroll_stmt
from artifact.operators import (
    ComplexMatrix,
    SuperOp,
    apply,
    apply_dual,
    choi_distance,
    loewner_leq,
    qop_leq,
    random_density,
    random_kraus,
    random_psd,
    random_qpred,
    random_superop,
)
from artifact.parser import load_program
from artifact.semantics import EPS, Denoter, check_sem_agreement, replay
from artifact.verifier import (
    HoareTriple,
    check_proof,
    check_total,
    load_script,
    parse_script,
    prob_query,
    triple_from_obj,
)

from helpers import ACCEPTANCE, CORPUS, corpus, random_program

PLUS = np.full((2, 2), 0.5)
SEEDS = [42, 43, 44]


@contextmanager
def criterion(n, text):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        ACCEPTANCE.append(f"FAIL criterion {n}: {text}")
        print(ACCEPTANCE[-1])
        raise
    ACCEPTANCE.append(f"PASS criterion {n}: {text} ({time.perf_counter() - start:.1f} s)")
    print(ACCEPTANCE[-1])


def qlit(m):
    return literal(np.asarray(m, dtype=complex), ("q",), (2,))


def test_criterion_01_rqmc_denotation():
    with criterion(1, "Alice denotes 1/3 H.H + 1/3 HX.XH within 1e-6 in <= 30 iterations"):
        env = corpus("rqmc")
        den = Denoter(env)
        ref = SuperOp.from_kraus(instances.rqmc_alice_reference(), ("q",), (2,))
        assert choi_distance(den.denote(Call("Alice")), ref) <= 1e-6
        assert den.fixpoint().iterations <= 30


def test_criterion_02_rqmc_semantics():
    with criterion(2, "RQMC maps unit-trace states to I/3; exploration agrees within 1e-6 + slack"):
        env = corpus("rqmc")
        e = Denoter(env).denote(env.main)
        rng = np.random.default_rng(42)
        for _ in range(5):
            rho = ComplexMatrix(random_density(2, rng), ("q",), (2,))
            assert np.max(np.abs(apply(e, rho).data - np.eye(2) / 3)) <= 1e-6
            rep = check_sem_agreement(env, env.main, rho, max_steps=200)
            assert rep.max_dev <= 1e-6 + rep.dropped_mass


def test_criterion_03_rqmc_trace():
    with criterion(3, "the two-round winning run ends in |+><+|/16 within 1e-12"):
        env = corpus("rqmc")
        rng = np.random.default_rng(42)
        for _ in range(3):
            rho = ComplexMatrix(random_density(2, rng), ("q",), (2,))
            c = replay(env, env.main, rho, [EPS, EPS, 1, EPS, 0, EPS, 0, EPS])
            assert c is not None and c.terminal
            assert np.max(np.abs(c.state.data - PLUS / 16)) <= 1e-12


def test_criterion_04_probability_queries():
    with criterion(4, "prob(I, RQMC, |+><+|) = 1/3 and prob(I, RQMC, I) = 2/3, exact, within 1e-6"):
        env = corpus("rqmc")
        for post, want in [(PLUS, 1 / 3), (np.eye(2), 2 / 3)]:
            r = prob_query(env, qlit(np.eye(2)), env.main, qlit(post))
            assert r.exact and abs(r.delta - want) <= 1e-6


def test_criterion_05_semantics_agreement():
    with criterion(5, "50 random call-free programs: operational sum equals denotation within 1e-8"):
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            env = random_program(rng)
            rho = ComplexMatrix(random_density(4, rng), ("q", "p"), (2, 2))
            rep = check_sem_agreement(env, env.main, rho)
            assert not rep.truncated
            assert rep.max_dev <= 1e-8


def _corpus_statements():
    for name in CORPUS:
        env = corpus(name)
        yield env, env.main
        for p in env.procs:
            if not p.formals:
                yield env, Call(p.name)


def test_criterion_06_duality():
    with criterion(6, "fwlp = I - fwp(I - .) within 1e-7 on every corpus statement, 20 posts each"):
        for env, s in _corpus_statements():
            tr = Transformer(env)
            rng = np.random.default_rng(42)
            d = int(np.prod(env.global_dims))
            for _ in range(20):
                q = random_qpred(d, rng)
                post = literal(q, env.global_vars, env.global_dims)
                comp = literal(np.eye(d) - q, env.global_vars, env.global_dims)
                lhs = eval_pqpt(tr.run(s, post, liberal=True).value).data
                rhs = np.eye(d) - eval_pqpt(tr.run(s, comp).value).data
                assert np.max(np.abs(lhs - rhs)) <= 1e-7


def test_criterion_07_while_loop():
    with criterion(7, "fwp(while, I) = I within 1e-6; iterate n is (1 - 2^-n) I within 1e-9, n <= 20"):
        env = corpus("while")
        tr = Transformer(env)
        out = eval_pqpt(tr.run(env.main, qlit(np.eye(2))).value).data
        assert np.max(np.abs(out - np.eye(2))) <= 1e-6
        for n in range(21):
            it = eval_pqpt(tr.run(unroll_stmt(env, Call("T"), n), qlit(np.eye(2))).value).data
            assert np.max(np.abs(it - (1 - 2.0 ** -n) * np.eye(2))) <= 1e-9


def test_criterion_08_toy():
    with criterion(8, "<|n><n|> call toy <|n><n|> is totally correct for n = 0..15"):
        env = corpus("toy")
        for n in range(16):
            p = literal(instances.proj(n, 16), ("q",), (16,))
            assert check_total(env, HoareTriple(p, Call("toy"), p, "total")).status == "valid"


def test_criterion_09_grover():
    with criterion(9, "Grover success 1 - eps^(3^n) within 1e-6 and the counter triple for n = 0..2"):
        base = load_program("corpus:grover.qrp")
        for eps in (0.5, 0.25):
            g = instances.grover_instance(eps)
            for n in range(3):
                assert abs(g.success(n) - (1 - eps ** (3 ** n))) <= 1e-6
            env = typecheck(base.with_bindings(instances.grover(eps, 2)))
            for n in range(3):
                t = triple_from_obj(proofs.grover_triple(n, eps, 2), env)
                assert check_total(env, t).status == "valid"


def test_criterion_10_rqfs():
    with criterion(10, "RQFS returns g(s_root) with probability 1 within 1e-6 for 4 secrets"):
        base = load_program("corpus:rqfs_n1_l1.qrp")
        for sec in instances.random_secrets(4, np.random.default_rng(42)):
            env = typecheck(base.with_bindings(instances.rqfs(sec)))
            vars_, dims = env.global_vars, env.global_dims
            post = np.kron(np.kron(instances.proj(0, 2), instances.proj(sec.answer, 2)), np.eye(2))
            r = prob_query(env, literal(np.eye(8), vars_, dims), env.main, literal(post, vars_, dims))
            assert abs(r.delta - 1.0) <= 1e-6


MUTATIONS = {
    "rqmc_exact": ("1", lambda o: _step(o, "1")["conclusion"].update(pre=proofs._lit("|1><1|"))),
    "rqmc_term": ("alice_case", lambda o: o["assertions"]["alice_case"]["literal"][0][0].update(
        expr=o["assertions"]["alice_case"]["literal"][0][0]["expr"].replace("1 / 4", "1 / 5", 1))),
    "grover_partial": ("s.a", lambda o: _step(o, "s.a")["conclusion"].update(
        pre=_step(o, "s.c")["conclusion"]["pre"])),
}


def _step(obj, sid):
    return next(s for s in obj["steps"] if s["id"] == sid)


def test_criterion_11_proof_checker():
    with criterion(11, "RQMC winning and termination scripts and the Grover partial script validate; mutants fail at the mutated step"):
        for name in ("rqmc_exact", "rqmc_term"):
            script = load_script(f"corpus:proofs/{name}.prf")
            assert all(f.probes == tuple(range(7)) for f in script.families.values())
            assert check_proof(script).status == "valid"
        assert check_proof(load_script("corpus:proofs/grover_partial.prf")).status == "valid"
        for name, (sid, mutate) in MUTATIONS.items():
            obj = copy.deepcopy(proofs.SCRIPTS[name]())
            mutate(obj)
            with pytest.raises(RuleMismatch) as info:
                check_proof(parse_script(obj))
            assert info.value.step_id == sid


def test_criterion_12_property_suites():
    with criterion(12, "dual-trace, Loewner-order, unrolling and PQPT property suites at seeds 42-44"):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            # dual-trace identity
            for _ in range(10):
                e = random_superop(("q", "p"), (2, 2), rng, k=3)
                a = ComplexMatrix(random_qpred(4, rng), ("q", "p"), (2, 2))
                rho = ComplexMatrix(random_density(4, rng), ("q", "p"), (2, 2))
                lhs = np.trace(a.data @ apply(e, rho).data)
                rhs = np.trace(apply_dual(e, a).data @ rho.data)
                assert abs(lhs - rhs) <= 1e-9
            # Loewner order: reflexive, antisymmetric, transitive, lifted to QOPs
            for _ in range(10):
                x = ComplexMatrix(random_psd(3, rng), ("r",), (3,))
                y = ComplexMatrix(x.data + random_psd(3, rng), ("r",), (3,))
                z = ComplexMatrix(y.data + random_psd(3, rng), ("r",), (3,))
                assert loewner_leq(x, x) and loewner_leq(x, y) and loewner_leq(y, z) and loewner_leq(x, z)
                assert not loewner_leq(y, x) or np.allclose(x.data, y.data)
                ks = random_kraus(2, 2, rng, deficit=0.3)
                small = SuperOp(ks[:1], ("q",), (2,), check=False)
                big = SuperOp(ks, ("q",), (2,), check=False)
                assert qop_leq(small, big) and not qop_leq(big, small)
            # unrolling monotonicity of procedure approximants
            for name in ("rqmc", "toy", "while", "grover"):
                den = Denoter(corpus(name))
                tables = [den.approximant(k) for k in range(5)]
                for p in den.procs:
                    assert all(qop_leq(a[p], b[p]) for a, b in zip(tables, tables[1:]))
            # PQPT invariants and evaluation bounds
            for _ in range(10):
                k = int(rng.integers(1, 3))
                ks = random_kraus(2, k + 1, rng, deficit=float(rng.uniform(0, 0.5)))
                p = make_pqpt([BaseFactor("X", ("q",))], ks[:k], ks[k:], ("q",), (2,))
                assert check_invariants(p, rng)
                w = np.linalg.eigvalsh(eval_pqpt(p, random_assignment(p, rng)).data)
                assert w[0] >= -1e-9 and w[-1] <= 1 + 1e-9
                assert pqpt_order(OrderFormula(p, p)).status == "valid"
