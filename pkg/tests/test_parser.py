"""Concrete syntax: programs, bindings, assertions, printing and round trips."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.assertions import eval_pqpt, pqpt_equal
from artifact.errors import DimensionMismatch, MissingArm, QrvSyntaxError
from artifact.instances import CORPUS_BINDINGS, render_bindings
from artifact.lang import Bindings, Call, Case, Local, Seq, Skip, typecheck
from artifact.parser import (
    assertion_from_obj,
    corpus_dir,
    load_program,
    parse_assertion,
    parse_bindings,
    parse_matrix,
    parse_program,
    parse_stmt,
    pretty_print,
    resolve_path,
    state_from_text,
)

from helpers import CORPUS, random_stmt

PLUS = np.full((2, 2), 0.5)


class TestPrograms:
    def test_rqmc(self):
        prog = load_program("corpus:rqmc.qrp")
        assert [p.name for p in prog.procs] == ["Alice", "Bob"]
        assert isinstance(prog.proc("Alice").body, Case)
        assert prog.main == Seq(parse_stmt("q :=|0>"), Call("Alice"))

    def test_skip_only(self):
        prog = parse_program("skip")
        assert prog.main == Skip() and prog.vars == () and prog.procs == ()

    def test_missing_arm_is_static(self):
        prog = parse_program("var q : bool :: case M[q] { 0 -> skip }")
        b = Bindings(measurements={"M": {0: np.diag([1, 0]), 1: np.diag([0, 1])}})
        with pytest.raises(MissingArm):
            typecheck(prog.with_bindings(b))

    def test_local_types(self):
        s = parse_stmt("local a b:int[4]; skip; release a b")
        assert isinstance(s, Local) and [t.dim for t in s.types] == [2, 4]

    def test_grouping(self):
        assert parse_stmt("(skip; bot); skip") == Seq(Seq(Skip(), parse_stmt("bot")), Skip())

    @pytest.mark.parametrize("text, line", [
        ("var q : bool :: [q] *=", 1),
        ("var q : bool\n:: case M[q] { 0 -> }", 2),
        ("proc P() = skip", 1),
        ("local a; skip; release b", 1),
        ("var q : bool :: skip skip", 1),
    ])
    def test_syntax_errors_carry_position(self, text, line):
        with pytest.raises(QrvSyntaxError) as info:
            parse_program(text)
        assert info.value.line == line

    def test_non_utf8(self):
        with pytest.raises(QrvSyntaxError):
            parse_program(b"\xff\xfe skip")

    @settings(max_examples=300, deadline=None)
    @given(data=st.binary(max_size=80))
    def test_fuzz_bytes(self, data):
        try:
            parse_program(data)
        except QrvSyntaxError:
            pass

    @settings(max_examples=300, deadline=None)
    @given(text=st.text(alphabet="varboolintprocendcaseskipcall()[]{};:=*-><|0123 \nqMHx#", max_size=60))
    def test_fuzz_tokens(self, text):
        try:
            parse_program(text)
        except QrvSyntaxError:
            pass


class TestRoundTrip:
    @pytest.mark.parametrize("name", CORPUS)
    def test_corpus(self, name):
        prog = load_program(f"corpus:{name}.qrp")
        assert parse_program(pretty_print(prog)) == prog

    def test_qsearch_body(self):
        body = load_program("corpus:grover.qrp").proc("qSearch").body
        assert parse_stmt(pretty_print(body)) == body

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 20))
    def test_random_statements(self, seed):
        s = random_stmt(np.random.default_rng(seed), 3)
        assert parse_stmt(pretty_print(s)) == s

    def test_two_variable_pqpt(self):
        obj = {"base": [{"vars": ["q"], "pvar": "X"}, {"vars": ["p"], "pvar": "Y"}],
               "E": ["I"], "F": [], "vars": ["q", "p"]}
        p = assertion_from_obj(obj, {"q": 2, "p": 2})
        assert p.params == {"X", "Y"}
        assert pqpt_equal(parse_assertion(pretty_print(p)), p)


class TestAssertions:
    def test_literal_plus(self):
        p = parse_assertion(json.dumps({"literal": "|+><+|", "vars": ["q"]}), {"q": 2})
        assert not p.params
        assert np.allclose(eval_pqpt(p).data, PLUS)

    def test_pvar(self):
        p = parse_assertion('{"pvar": "X", "vars": ["q"]}', {"q": 2})
        assert p.params == {"X"}
        assert np.allclose(p.E.kraus_array[0], np.eye(2))
        assert np.allclose(p.F.choi(), 0)

    def test_diagonal_read(self):
        # sum_i <i|X|i> |i><i| as "measure, then X"
        obj = {"base": [{"vars": ["q"], "pvar": "X"}], "E": ["|0><0|", "|1><1|"], "F": [], "vars": ["q"]}
        p = assertion_from_obj(obj, {"q": 2})
        x = np.array([[0.3, 0.2], [0.2, 0.6]])
        assert np.allclose(eval_pqpt(p, {"X": x}).data, np.diag([0.3, 0.6]))

    def test_unknown_dims(self):
        with pytest.raises(DimensionMismatch):
            assertion_from_obj({"literal": "I", "vars": ["r"]})

    def test_not_an_object(self):
        with pytest.raises(QrvSyntaxError):
            parse_assertion("[1, 2]")

    @pytest.mark.parametrize("text, expected", [
        ("|0><0|", np.diag([1, 0])),
        ("I", np.eye(2)),
        ("0", np.zeros((2, 2))),
        ("|+><+|", PLUS),
    ])
    def test_matrix_literals(self, text, expected):
        assert np.allclose(parse_matrix(text, 2), expected)

    def test_pair_entries(self):
        assert np.allclose(parse_matrix([[[0, 1], 0], [0, [1, 0]]]), np.diag([1j, 1]))

    def test_decimal_kets(self):
        assert np.allclose(parse_matrix("|3><3|", 4), np.diag([0, 0, 0, 1]))

    def test_states(self):
        rho = state_from_text("I", ("q", "p"), (2, 2))
        assert np.allclose(rho.data, np.eye(4) / 4)


class TestBindings:
    @pytest.mark.parametrize("name", sorted(CORPUS_BINDINGS))
    def test_regenerated_files_match(self, name):
        on_disk = (corpus_dir() / f"{name}.bind.json").read_text(encoding="utf-8")
        assert on_disk == render_bindings(CORPUS_BINDINGS[name]())

    def test_round_trip(self):
        b = CORPUS_BINDINGS["rqmc"]()
        again = parse_bindings(render_bindings(b))
        assert np.allclose(again.unitaries["H"], b.unitaries["H"], atol=1e-12)
        assert set(again.measurements["M"]) == {0, 1, 2}

    def test_malformed(self):
        with pytest.raises(QrvSyntaxError):
            parse_bindings('{"unitaries": {"H": [[1, 2], [3]]}}')


class TestPaths:
    def test_corpus_prefix(self):
        assert resolve_path("corpus:rqmc.qrp") == corpus_dir() / "rqmc.qrp"

    def test_examples_alias(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert resolve_path("examples/rqmc.qrp") == corpus_dir() / "rqmc.qrp"
        (tmp_path / "examples").mkdir()
        (tmp_path / "examples" / "rqmc.qrp").write_text("skip")
        assert resolve_path("examples/rqmc.qrp").read_text() == "skip"
