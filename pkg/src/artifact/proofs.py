"""Builders for the proof scripts shipped in ``corpus/proofs``.

The scripts are plain JSON; they are produced here so the numbers in them
(Grover's search-engine matrices in particular) stay in sync with the
bindings in :mod:`artifact.instances`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import instances
from .parser import corpus_dir, matrix_json

# coefficient closed forms of the RQMC families: a(n) for |0><0|, b(n) for |1><1|
_A = "(1 - 4 ** -((({k}) + 1) // 2)) / 3"
_B = "(1 - 4 ** -(({k}) // 2)) / 3"


def _expr(s: str) -> dict:
    return {"expr": s}


def _diag(d0: str, d1: str) -> dict:
    return {"literal": [[_expr(d0), 0], [0, _expr(d1)]], "vars": ["q"]}


def _lit(m, vars=("q",)) -> dict:
    return {"literal": m if isinstance(m, str) else matrix_json(np.asarray(m)), "vars": list(vars)}


def _triple(pre, stmt: str, post, mode: str) -> dict:
    return {"pre": pre, "stmt": stmt, "post": post, "mode": mode}


ALICE = "case M[q] { 0 -> [q] *= H 1 -> call Bob() 2 -> bot }"
BOB = "case Mp[q] { 0 -> call Alice() 1 -> [q] *= HX }"


def rqmc_script(termination: bool = False, probes: range = range(7)) -> dict:
    """Derivation of ``<1/3 I> RQMC <|+><+|>`` or, with ``termination``, ``<2/3 I> RQMC <I>``.

    Both are exact (compact) derivations: every order side formula is an equality.
    """
    a, b = _A.format(k="n"), _B.format(k="n")
    a1, b1 = _A.format(k="n - 1"), _B.format(k="n - 1")
    if termination:
        post = {"const": "I", "vars": ["q"]}
        pa = _diag(f"{a} + {b}", f"{a} + {b}")
        pb = _diag(f"0 if n == 0 else ({a1} + {b1}) / 2 + 1 / 2",
                   f"0 if n == 0 else ({a1} + {b1}) / 2 + 1 / 2")
        h_pre, hx_pre = {"const": "I", "vars": ["q"]}, {"const": "I", "vars": ["q"]}
        alice_pre, bob_pre = _lit([[2 / 3, 0], [0, 2 / 3]]), _lit([[5 / 6, 0], [0, 5 / 6]])
    else:
        post = _lit("|+><+|")
        pa = _diag(a, b)
        pb = _diag(f"0 if n == 0 else ({a1}) / 2", f"0 if n == 0 else ({b1}) / 2 + 1 / 2")
        h_pre, hx_pre = _lit("|0><0|"), _lit("|1><1|")
        alice_pre, bob_pre = _lit([[1 / 3, 0], [0, 1 / 3]]), _lit([[1 / 6, 0], [0, 4 / 6]])
    # R Case preconditions before rewriting into the family members
    alice_case = {"ref": "alice_case"}
    bob_case = {"ref": "bob_case"}
    fam = lambda name, idx: {"family": name, "index": idx}  # noqa: E731
    pbn = fam("PB", "n")
    pan = fam("PA", "n")
    if termination:
        alice_case_def = _diag(f"1 / 4 + (0 if n == 0 else (({a1} + {b1}) / 2 + 1 / 2)) / 2",
                               f"1 / 4 + (0 if n == 0 else (({a1} + {b1}) / 2 + 1 / 2)) / 2")
        bob_case_def = _diag(f"({a} + {b}) / 2 + 1 / 2", f"({a} + {b}) / 2 + 1 / 2")
    else:
        alice_case_def = _diag(f"1 / 4 + (0 if n == 0 else ({a1}) / 2) / 2",
                               f"(0 if n == 0 else ({b1}) / 2 + 1 / 2) / 2")
        bob_case_def = _diag(f"({a}) / 2", f"({b}) / 2 + 1 / 2")
    init_pre = alice_pre
    mode = "exact"
    steps = [
        {"id": "1", "rule": "A Unit", "conclusion": _triple(h_pre, "[q] *= H", post, mode)},
        {"id": "2", "rule": "Assume", "premises": ["premB"],
         "conclusion": _triple(pbn, "call Bob()", post, mode)},
        {"id": "3", "rule": "A Bot", "conclusion": _triple({"const": "0", "vars": ["q"]}, "bot", post, mode)},
        {"id": "4", "rule": "Assume", "premises": ["premA"],
         "conclusion": _triple(pan, "call Alice()", post, mode)},
        {"id": "5", "rule": "A Unit", "conclusion": _triple(hx_pre, "[q] *= HX", post, mode)},
        {"id": "alice_case", "rule": "R Case", "premises": ["1", "2", "3"],
         "conclusion": _triple(alice_case, ALICE, post, mode)},
        {"id": "alice_body", "rule": "R Order", "premises": ["alice_case"],
         "conclusion": _triple(fam("PA", "n + 1"), ALICE, post, mode)},
        {"id": "bob_case", "rule": "R Case", "premises": ["4", "5"],
         "conclusion": _triple(bob_case, BOB, post, mode)},
        {"id": "bob_body", "rule": "R Order", "premises": ["bob_case"],
         "conclusion": _triple(fam("PB", "n + 1"), BOB, post, mode)},
        {"id": "rec", "rule": "Rt gRec", "premises": ["alice_body", "bob_body"],
         "side": {"discharges": ["premA", "premB"], "families": {"Alice": "PA", "Bob": "PB"}},
         "conclusion": [_triple(alice_pre, "call Alice()", post, mode),
                        _triple(bob_pre, "call Bob()", post, mode)]},
        {"id": "init", "rule": "A Init", "conclusion": _triple(init_pre, "q :=|0>", alice_pre, mode)},
        {"id": "main", "rule": "R Comp", "premises": ["init", "rec#0"],
         "conclusion": _triple(init_pre, "q :=|0>; call Alice()", post, mode)},
    ]
    return {
        "program": "corpus:rqmc.qrp",
        "assertions": {"alice_case": alice_case_def, "bob_case": bob_case_def},
        "families": [
            {"name": "PA", "mode": "template", "template": pa, "probes": list(probes)},
            {"name": "PB", "mode": "template", "template": pb, "probes": list(probes)},
        ],
        "assumptions": [
            {"label": "premA", "triple": _triple(pan, "call Alice()", post, mode)},
            {"label": "premB", "triple": _triple(pbn, "call Bob()", post, mode)},
        ],
        "steps": steps,
        "goal": "main",
    }


# ---------------------------------------------------------------------------
# fixed-point Grover, partial correctness
# ---------------------------------------------------------------------------

QSEARCH = ("case M[q1] { 0 -> [q2] *= V 1 -> [q1] *= Um1; call qSearch(); [q2] *= Rt; "
           "call qSearchDag(); [q2] *= Rs; call qSearch(); [q1] *= Up1 }")
QSEARCH_DAG = ("case M[q1] { 0 -> [q2] *= Vdag 1 -> [q1] *= Um1; call qSearchDag(); [q2] *= Rsdag; "
               "call qSearch(); [q2] *= Rtdag; call qSearchDag(); [q1] *= Up1 }")


def _ket(i: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[i] = 1.0
    return v


def _term(ls: list[np.ndarray]) -> dict:
    """``sum_i L_i Z L_i^dag`` over the joint register (q1, q2)."""
    return {"base": [{"pvar": "Z", "vars": ["q1", "q2"]}], "vars": ["q1", "q2"],
            "E": [matrix_json(l.conj().T) for l in ls]}


def grover_partial_script(eps: float = 0.25, m: int = 2, targets=(0, 1, 2)) -> dict:
    """Partial correctness of ``call qSearch`` via a joint predicate variable Z on (q1, q2).

    The body proofs follow the annotated derivation (a)-(k): A Unit for each
    rotation, the two procedure premises instantiated by R Subst, R Order to
    weaken the arm postconditions, R Case to join the arms.
    """
    g = instances.grover_instance(eps, m)
    d = g.counter_dim
    I2 = np.eye(2, dtype=complex)
    P = [np.outer(_ket(i, d), _ket(i, d)) for i in range(d)]
    step_down = [np.outer(_ket(k, d), _ket(k + 1, d)) for k in range(d - 1)]  # |k><k+1|
    Vs = [g.engine(i) for i in range(d)]
    pre = _term([np.kron(p, I2) for p in P])
    posts = {"qSearch": _term([np.kron(P[i], Vs[i]) for i in range(d)]),
             "qSearchDag": _term([np.kron(P[i], Vs[i].conj().T) for i in range(d)])}
    # action of each procedure on the search register at depth k
    engine = {"qSearch": Vs, "qSearchDag": [v.conj().T for v in Vs]}
    units = {"Rs": g.Rs, "Rt": g.Rt, "Rsdag": g.Rs.conj().T, "Rtdag": g.Rt.conj().T}
    arms = {
        "qSearch": (QSEARCH, "V", g.V, ["call qSearch()", "Rt", "call qSearchDag()", "Rs", "call qSearch()"]),
        "qSearchDag": (QSEARCH_DAG, "Vdag", g.V.conj().T,
                       ["call qSearchDag()", "Rsdag", "call qSearch()", "Rtdag", "call qSearchDag()"]),
    }
    steps: list[dict] = []
    mode = "partial"

    def add(sid, rule, concl, premises=(), side=None):
        st = {"id": sid, "rule": rule, "conclusion": concl}
        if premises:
            st["premises"] = list(premises)
        if side:
            st["side"] = side
        steps.append(st)
        return sid

    bodies = []
    for proc, (body, v_name, v_mat, middle) in arms.items():
        tag = "s" if proc == "qSearch" else "d"
        post = posts[proc]
        top = engine[proc]
        # arm 0: (a) unit, (b) weaken the postcondition
        a_post = _term([np.kron(P[0], top[0])])
        a_pre = _term([np.kron(P[0], v_mat.conj().T @ top[0])])
        add(f"{tag}.a", "A Unit", _triple(a_pre, f"[q2] *= {v_name}", a_post, mode))
        add(f"{tag}.b", "R Order", _triple(a_pre, f"[q2] *= {v_name}", post, mode), [f"{tag}.a"])
        # arm 1, backwards from (i): keep the factors A_k acting on q2 at depth k = i - 1
        A = [top[k + 1] for k in range(d - 1)]
        i_post = _term([np.kron(P[k + 1], top[k + 1]) for k in range(d - 1)])
        i_pre = _term([np.kron(step_down[k], A[k]) for k in range(d - 1)])
        chain = [add(f"{tag}.i", "A Unit", _triple(i_pre, "[q1] *= Up1", i_post, mode))]
        stmts = ["[q1] *= Up1"]
        for j, item in reversed(list(enumerate(middle))):
            label = f"{tag}.{'defgh'[j]}"
            cur_post = _term([np.kron(step_down[k], A[k]) for k in range(d - 1)])
            if item.startswith("call"):
                callee = item.split()[1].rstrip("()")
                # R Subst instance: Z := sum_k |k><k+1| (x) (engine_k^dag A_k) Z (...)^dag
                Y = [np.kron(step_down[k], engine[callee][k].conj().T @ A[k]) for k in range(d - 1)]
                add(f"{label}.prem", "Assume", _triple(pre, item, posts[callee], mode), [f"prem_{callee}"])
                A = [engine[callee][k].conj().T @ A[k] for k in range(d - 1)]
                cur_pre = _term(Y)
                chain.append(add(label, "R Subst", _triple(cur_pre, item, cur_post, mode), [f"{label}.prem"],
                                 {"subst": {"Z": _term(Y)}}))
            else:
                u = units[item]
                A = [u.conj().T @ a for a in A]
                cur_pre = _term([np.kron(step_down[k], A[k]) for k in range(d - 1)])
                chain.append(add(label, "A Unit", _triple(cur_pre, f"[q2] *= {item}", cur_post, mode)))
            stmts.insert(0, item if item.startswith("call") else f"[q2] *= {item}")
        c_post = _term([np.kron(step_down[k], A[k]) for k in range(d - 1)])
        c_pre = _term([np.kron(P[k + 1], A[k]) for k in range(d - 1)])
        chain.append(add(f"{tag}.c", "A Unit", _triple(c_pre, "[q1] *= Um1", c_post, mode)))
        stmts.insert(0, "[q1] *= Um1")
        # fold the chain right to left with R Comp
        acc, acc_stmt = chain[0], stmts[-1]
        for n, sid in enumerate(chain[1:], start=1):
            s_here = stmts[-1 - n]
            acc_stmt = f"{s_here}; {acc_stmt}"
            first = next(s for s in steps if s["id"] == sid)
            last = next(s for s in steps if s["id"] == acc)
            acc = add(f"{tag}.comp{n}", "R Comp",
                      _triple(first["conclusion"]["pre"], acc_stmt, last["conclusion"]["post"], mode),
                      [sid, acc])
        add(f"{tag}.j", "R Order", _triple(c_pre, acc_stmt, post, mode), [acc])
        bodies.append(add(f"{tag}.k", "R Case", _triple(pre, body, post, mode), [f"{tag}.b", f"{tag}.j"]))
    add("rec", "Rp gRec", [_triple(pre, "call qSearch()", posts["qSearch"], mode),
                           _triple(pre, "call qSearchDag()", posts["qSearchDag"], mode)],
        bodies, {"discharges": ["prem_qSearch", "prem_qSearchDag"]})
    s = g.s
    for n in targets:
        inst = np.kron(P[n], np.outer(s, s.conj()))
        vn = Vs[n] @ s
        out = np.kron(P[n], np.outer(vn, vn.conj()))
        add(f"eq8.{n}", "R Subst", _triple(_lit(inst, ("q1", "q2")), "call qSearch()",
                                           _lit(out, ("q1", "q2")), mode),
            ["rec#0"], {"subst": {"Z": _lit(inst, ("q1", "q2"))}})
    return {
        "program": "corpus:grover.qrp",
        "assumptions": [
            {"label": "prem_qSearch", "triple": _triple(pre, "call qSearch()", posts["qSearch"], mode)},
            {"label": "prem_qSearchDag", "triple": _triple(pre, "call qSearchDag()", posts["qSearchDag"], mode)},
        ],
        "steps": steps,
        "goal": f"eq8.{targets[-1]}",
    }


# ---------------------------------------------------------------------------
# almost-sure termination of the while loop
# ---------------------------------------------------------------------------


def while_script(probes: range = range(21)) -> dict:
    """``<I> while M[q] = 1 do skip <I>`` via (Rt Loop) with ``P_n = (1 - 2^-n) I``."""
    pn = {"literal": [[_expr("1 - 2 ** -n"), 0], [0, _expr("1 - 2 ** -n")]], "vars": ["q"]}
    nxt = {"family": "P", "index": "n + 1"}
    inv = {"literal": [[_expr("1 / 2 + (1 - 2 ** -n) / 2"), 0], [0, _expr("1 / 2 + (1 - 2 ** -n) / 2")]],
           "vars": ["q"]}
    ident = {"const": "I", "vars": ["q"]}
    return {
        "program": "corpus:while.qrp",
        "families": [{"name": "P", "mode": "template", "template": pn, "probes": list(probes)}],
        "steps": [
            {"id": "skip", "rule": "A Skip", "conclusion": _triple(inv, "skip", inv, "total")},
            {"id": "body", "rule": "R Order", "premises": ["skip"],
             "conclusion": _triple(nxt, "skip", inv, "total"), "side": {"rel": "="}},
            {"id": "loop", "rule": "Rt Loop", "premises": ["body"],
             "side": {"family": "P", "P": ident},
             "conclusion": _triple(ident, "call T()", ident, "total")},
        ],
        "goal": "loop",
    }


SCRIPTS = {
    "rqmc_exact": lambda: rqmc_script(False),
    "rqmc_term": lambda: rqmc_script(True),
    "grover_partial": grover_partial_script,
    "while_total": while_script,
}


# ---------------------------------------------------------------------------
# triple and assertion files for ``qrv check`` / ``qrv wp`` / ``qrv prob``
# ---------------------------------------------------------------------------

PLUS = [[0.5, 0.5], [0.5, 0.5]]


def grover_triple(n: int = 1, eps: float = 0.25, m: int = 2, mode: str = "total") -> dict:
    """``<|n><n| x |s><s|> call qSearch() <|n><n| x V_n|s><s|V_n^dag>``."""
    g = instances.grover_instance(eps, m)
    pn = np.zeros((g.counter_dim, g.counter_dim))
    pn[n, n] = 1.0
    vn = g.engine(n) @ g.s
    return _triple(_lit(np.kron(pn, np.outer(g.s, g.s.conj())), ("q1", "q2")), "call qSearch()",
                   _lit(np.kron(pn, np.outer(vn, vn.conj())), ("q1", "q2")), mode)


def toy_triple(n: int, dim: int = 16) -> dict:
    ket = f"|{n}><{n}|"
    return _triple(_lit(ket), "call toy()", _lit(ket), "total")


TRIPLES = {
    "rqmc_exact": lambda: _triple(_lit([[1 / 3, 0], [0, 1 / 3]]), "q :=|0>; call Alice()", _lit(PLUS), "exact"),
    "rqmc_term": lambda: _triple(_lit([[2 / 3, 0], [0, 2 / 3]]), "q :=|0>; call Alice()", _lit("I"), "exact"),
    "rqmc_half": lambda: _triple(_lit([[0.5, 0], [0, 0.5]]), "q :=|0>; call Alice()", _lit(PLUS), "exact"),
    "bot_total": lambda: _triple(_lit("I"), "bot", _lit("I"), "total"),
    "bot_partial": lambda: _triple(_lit("I"), "bot", _lit("I"), "partial"),
    "grover_eq8_n1": lambda: grover_triple(1),
    "toy_n3": lambda: toy_triple(3),
}

ASSERTIONS = {
    "I": {"const": "I"},
    "0": {"const": "0"},
    "plus": _lit(PLUS),
}


def render(script: dict) -> str:
    return json.dumps(script, indent=1) + "\n"


def write_proofs(directory: Path | None = None) -> list[Path]:
    directory = directory or corpus_dir() / "proofs"
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, build in SCRIPTS.items():
        path = directory / f"{name}.prf"
        path.write_text(render(build()), encoding="utf-8")
        out.append(path)
    return out


def write_triples(directory: Path | None = None) -> list[Path]:
    """``<name>.triple.json`` and ``assert/<name>.json`` files next to the programs."""
    directory = directory or corpus_dir()
    (directory / "assert").mkdir(parents=True, exist_ok=True)
    out = []
    for name, build in TRIPLES.items():
        out.append(directory / f"{name}.triple.json")
        out[-1].write_text(render(build()), encoding="utf-8")
    for name, obj in ASSERTIONS.items():
        out.append(directory / "assert" / f"{name}.json")
        out[-1].write_text(render(obj), encoding="utf-8")
    return out


if __name__ == "__main__":
    for p in write_proofs() + write_triples():
        print(p)
