"""Dense operator calculus: matrices, superoperators, orders and limits."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.errors import (
    DimensionMismatch,
    NotConverged,
    NotHermitian,
    NotMonotone,
    NotTraceNonIncreasing,
    UnknownVariable,
    VariableClash,
)
from artifact.instances import H, X, rqmc_alice_reference
from artifact.operators import (
    ComplexMatrix,
    SuperOp,
    add,
    apply,
    choi,
    choi_distance,
    compose,
    dual,
    eye,
    is_pdop,
    is_qpred,
    loewner_leq,
    lub_sequence,
    partial_trace,
    qop_equal,
    qop_leq,
    random_density,
    random_hermitian,
    random_psd,
    random_superop,
    scale,
    spectral_decompose,
    tensor,
    tensor_op,
)

KET0 = np.array([[1, 0], [0, 0]], dtype=complex)
KET1 = np.array([[0, 0], [0, 1]], dtype=complex)
PLUS = np.full((2, 2), 0.5, dtype=complex)
SEEDS = [42, 43, 44]


def cm(a, vars=("q",)):
    a = np.asarray(a, dtype=complex)
    dims = (2,) * len(vars) if a.shape[0] == 2 ** len(vars) else (a.shape[0],)
    return ComplexMatrix(a, vars, dims)


def unitary(u, vars=("q",)):
    return SuperOp.unitary(np.asarray(u, dtype=complex), vars, (2,) * len(vars))


def alice():
    return SuperOp.from_kraus(rqmc_alice_reference(), ("q",), (2,))


class TestTensorAndTrace:
    def test_projector_product(self):
        out = tensor(cm(KET0, ("q",)), cm(KET1, ("p",)))
        expected = np.zeros((4, 4))
        expected[1, 1] = 1
        assert out.vars == ("q", "p")
        assert np.allclose(out.data, expected)

    def test_identity_gives_block_diagonal(self):
        a = random_hermitian(2, np.random.default_rng(0))
        out = tensor(cm(np.eye(2), ("q",)), cm(a, ("p",)))
        assert np.allclose(out.data[:2, :2], a)
        assert np.allclose(out.data[2:, 2:], a)
        assert np.allclose(out.data[:2, 2:], 0)

    def test_plus_plus_is_uniform(self):
        out = tensor(cm(PLUS, ("q",)), cm(PLUS, ("p",)))
        assert np.allclose(out.data, np.full((4, 4), 0.25))

    def test_overlap_rejected(self):
        with pytest.raises(VariableClash):
            tensor(cm(KET0, ("q",)), cm(KET1, ("q",)))

    def test_trace_out_product(self):
        rng = np.random.default_rng(1)
        rho, sigma = random_density(2, rng), random_density(2, rng, trace=0.5)
        out = partial_trace(tensor(cm(rho, ("q",)), cm(sigma, ("p",))), ["p"])
        assert out.vars == ("q",)
        assert np.allclose(out.data, 0.5 * rho)

    def test_bell_reduces_to_maximally_mixed(self):
        v = np.array([1, 0, 0, 1]) / np.sqrt(2)
        bell = ComplexMatrix(np.outer(v, v), ("q", "p"), (2, 2))
        assert np.allclose(partial_trace(bell, ["p"]).data, np.eye(2) / 2)

    def test_empty_trace_is_identity(self):
        rho = cm(random_density(2, np.random.default_rng(2)))
        assert np.allclose(partial_trace(rho, []).data, rho.data)

    def test_unknown_register(self):
        with pytest.raises(UnknownVariable):
            partial_trace(cm(KET0), ["r"])

    @pytest.mark.parametrize("seed", SEEDS)
    def test_trace_and_positivity_preserved(self, seed):
        rng = np.random.default_rng(seed)
        rho = ComplexMatrix(random_density(8, rng), ("a", "b", "c"), (2, 2, 2))
        out = partial_trace(rho, ["b"])
        assert abs(out.trace() - rho.trace()) <= 1e-9
        assert is_pdop(out)


class TestSpectral:
    def test_projector(self):
        pairs = spectral_decompose(cm(PLUS))
        assert [round(w, 12) for w, _ in pairs] == [1.0, 0.0]
        assert abs(abs(pairs[0][1] @ np.array([1, 1]) / np.sqrt(2)) - 1) < 1e-12

    def test_degenerate_identity(self):
        pairs = spectral_decompose(cm(np.eye(2)))
        vecs = np.array([v for _, v in pairs])
        assert [w for w, _ in pairs] == pytest.approx([1, 1])
        assert np.allclose(vecs @ vecs.conj().T, np.eye(2))

    def test_pauli_x(self):
        pairs = spectral_decompose(cm(X))
        assert [w for w, _ in pairs] == pytest.approx([1, -1])
        minus = np.array([1, -1]) / np.sqrt(2)
        assert abs(abs(pairs[1][1].conj() @ minus) - 1) < 1e-12

    def test_non_hermitian(self):
        with pytest.raises(NotHermitian):
            spectral_decompose(cm([[0, 1], [0, 0]]))

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("d", [2, 4, 8, 16])
    def test_reconstruction(self, seed, d):
        h = random_hermitian(d, np.random.default_rng(seed))
        pairs = spectral_decompose(ComplexMatrix(h, ("r",), (d,)))
        rec = sum(w * np.outer(v, v.conj()) for w, v in pairs)
        vecs = np.array([v for _, v in pairs])
        assert np.max(np.abs(rec - h)) <= 1e-9
        assert np.max(np.abs(vecs.conj() @ vecs.T - np.eye(d))) <= 1e-9


class TestLoewner:
    @pytest.mark.parametrize("a, b, expected", [
        (KET0, np.eye(2), True),
        (np.eye(2), KET0, False),
        (np.eye(2) / 4, np.eye(2) / 3, True),
    ])
    def test_examples(self, a, b, expected):
        assert loewner_leq(cm(a), cm(b)) is expected

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            loewner_leq(cm(KET0), ComplexMatrix(np.eye(4), ("q",), (4,)))

    def test_predicates(self):
        assert is_pdop(cm(np.eye(2) / 2))
        assert is_qpred(cm(np.eye(2)))
        assert not is_qpred(cm(2 * KET0))
        assert is_pdop(cm(np.eye(2) / 3))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_partial_order_laws(self, seed):
        rng = np.random.default_rng(seed)
        for d in (2, 4):
            a = random_hermitian(d, rng)
            p1, p2 = random_psd(d, rng), random_psd(d, rng)
            A, B, C = (ComplexMatrix(m, ("r",), (d,)) for m in (a, a + p1, a + p1 + p2))
            assert loewner_leq(A, A)
            assert loewner_leq(A, B) and loewner_leq(B, C) and loewner_leq(A, C)
            # antisymmetry up to tolerance
            tiny = ComplexMatrix(a + 1e-12 * np.eye(d), ("r",), (d,))
            assert loewner_leq(A, tiny) and loewner_leq(tiny, A)
            assert np.max(np.abs(tiny.data - A.data)) <= 2 * d * 1e-9


class TestSuperOp:
    def test_hadamard_on_zero(self):
        assert np.allclose(apply(unitary(H), cm(KET0)).data, PLUS)

    def test_zero_map(self):
        rho = cm(random_density(2, np.random.default_rng(3)))
        assert np.allclose(apply(SuperOp.zero(("q",), (2,)), rho).data, 0)

    def test_measurement_branch(self):
        m1 = SuperOp.from_kraus([np.sqrt(0.5) * np.eye(2)], ("q",), (2,))
        assert np.allclose(apply(m1, cm(KET0)).data, 0.5 * KET0)

    def test_apply_pads_with_identity(self):
        rho = tensor(cm(KET0, ("q",)), cm(KET1, ("p",)))
        out = apply(unitary(X, ("p",)), rho)
        assert np.allclose(out.data, np.kron(KET0, KET0))

    def test_apply_unknown_register(self):
        with pytest.raises(UnknownVariable):
            apply(unitary(H, ("r",)), cm(KET0))

    def test_dual_of_unitary(self):
        u = random_superop(("q",), (2,), np.random.default_rng(4))
        assert qop_equal(dual(dual(u)), u)
        assert qop_equal(dual(unitary(H @ X)), unitary((H @ X).conj().T))

    def test_dual_reverses_composition(self):
        rng = np.random.default_rng(5)
        f, g = random_superop(("q",), (2,), rng), random_superop(("q",), (2,), rng)
        # compose(f, g) runs f first, so its dual runs g* first
        assert qop_equal(dual(compose(f, g)), compose(dual(g), dual(f)))

    def test_identity_is_neutral(self):
        e = random_superop(("q",), (2,), np.random.default_rng(6))
        assert qop_equal(compose(SuperOp.identity(("q",), (2,)), e), e)

    def test_alice_sum(self):
        third = [scale(1 / 3, unitary(H)), scale(1 / 3, unitary(H @ X))]
        assert choi_distance(add(*third), alice()) < 1e-12

    def test_scale_quarter(self):
        rho = cm(random_density(2, np.random.default_rng(7)))
        out = apply(scale(0.25, SuperOp.identity(("q",), (2,))), rho)
        assert np.allclose(out.data, rho.data / 4)

    def test_add_overflow(self):
        ident = SuperOp.identity(("q",), (2,))
        with pytest.raises(NotTraceNonIncreasing):
            add(ident, ident)

    def test_scale_negative(self):
        with pytest.raises(ValueError):
            scale(-1.0, SuperOp.identity(("q",), (2,)))

    def test_choi_identity(self):
        c = choi(SuperOp.identity(("q",), (2,))).data
        v = np.array([1, 0, 0, 1])
        assert np.allclose(c, np.outer(v, v))
        assert np.linalg.matrix_rank(c) == 1 and np.trace(c).real == pytest.approx(2)

    def test_choi_zero(self):
        assert np.allclose(choi(SuperOp.zero(("q",), (2,))).data, 0)


class TestQopOrder:
    def test_reflexive(self):
        e = random_superop(("q",), (2,), np.random.default_rng(8))
        assert qop_leq(e, e)

    def test_quarter_hadamard_below_alice(self):
        assert qop_leq(scale(0.25, unitary(H)), alice())

    def test_identity_not_below_zero(self):
        assert not qop_leq(SuperOp.identity(("q",), (2,)), SuperOp.zero(("q",), (2,)))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            qop_leq(SuperOp.identity(("q",), (2,)), SuperOp.identity(("q",), (4,)))


class TestLub:
    def test_constant(self):
        e = alice()
        lim = lub_sequence(lambda n: e)
        assert lim.iterations == 1 and qop_equal(lim.value, e)

    def test_alice_unrolling(self):
        # F(Y) = 1/4 H + 1/2 (1/2 HX + 1/2 Y): the approximants of call Alice
        def gen(n):
            ops = [np.zeros((2, 2))]
            for _ in range(n):
                ops = [0.5 * H] + [0.5 * H @ X] + [0.5 * k for k in ops]
            return SuperOp.from_kraus(ops, ("q",), (2,), check=False)

        lim = lub_sequence(gen)
        assert choi_distance(lim.value, alice()) < 1e-6
        assert lim.iterations <= 30
        assert lim.delta < 1e-8

    def test_alternating(self):
        ops = [SuperOp.zero(("q",), (2,)), SuperOp.identity(("q",), (2,))]
        with pytest.raises(NotMonotone):
            lub_sequence(lambda n: ops[n % 2])

    def test_not_converged(self):
        with pytest.raises(NotConverged):
            lub_sequence(lambda n: scale(1 - 0.5 ** (n / 50 + 1), SuperOp.identity(("q",), (2,))),
                         max_iter=5)


class TestProperties:
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("d", [2, 4])
    def test_dual_trace_identity(self, seed, d):
        rng = np.random.default_rng(seed)
        for _ in range(100):
            e = random_superop(("r",), (d,), rng, k=int(rng.integers(1, 4)))
            a = ComplexMatrix(random_hermitian(d, rng), ("r",), (d,))
            rho = ComplexMatrix(random_density(d, rng), ("r",), (d,))
            lhs = np.trace(a.data @ apply(e, rho).data)
            rhs = np.trace(apply(dual(e), a).data @ rho.data)
            assert abs(lhs - rhs) <= 1e-9

    @pytest.mark.parametrize("seed", SEEDS)
    def test_dual_distributes(self, seed):
        rng = np.random.default_rng(seed)
        f, g = random_superop(("q",), (2,), rng), random_superop(("q",), (2,), rng)
        h = random_superop(("p",), (2,), rng)
        assert qop_equal(dual(tensor_op(f, h)), tensor_op(dual(f), dual(h)))
        assert qop_equal(dual(scale(0.3, f)), scale(0.3, dual(f), check=False))
        half = scale(0.5, f), scale(0.5, g)
        assert qop_equal(dual(add(*half)), add(dual(half[0]), dual(half[1]), check=False))
        assert qop_equal(dual(compose(f, g)), compose(dual(g), dual(f)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 16), d=st.sampled_from([2, 4]))
    def test_apply_trace_non_increasing(self, seed, d):
        rng = np.random.default_rng(seed)
        e = random_superop(("r",), (d,), rng)
        rho = ComplexMatrix(random_density(d, rng), ("r",), (d,))
        assert apply(e, rho).trace().real <= 1 + 1e-9
        assert is_pdop(apply(e, rho))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 16))
    def test_eye_is_top_qpred(self, seed):
        rng = np.random.default_rng(seed)
        p = random_psd(2, rng)
        p = p / (np.linalg.eigvalsh(p)[-1] + 1e-3)
        assert loewner_leq(cm(p), eye(("q",), (2,)))
