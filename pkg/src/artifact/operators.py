"""Dense complex linear algebra and the superoperator calculus.

Matrices always carry the ordered list of registers they act on together
with the per-register dimensions.  Superoperators are kept in Kraus form;
a Liouville (transfer-matrix) form is derived on demand and used whenever
Kraus lists would grow past the Choi rank bound d**2.

Conventions
-----------
* ``vec`` is row-major: ``vec(A)[i*d + j] = A[i, j]``, so
  ``vec(K rho K^dag) = (K kron conj(K)) vec(rho)``.
* ``choi(E) = sum_ij |i><j| kron E(|i><j|)``.
* ``compose(e, f)`` means "first e, then f" (Kraus products ``F_j E_k``).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NotConverged,
    NotHermitian,
    NotMonotone,
    NotTraceNonIncreasing,
    UnknownVariable,
    VariableClash,
)

TOL_PSD = 1e-9
TOL_EQ = 1e-9
TOL_FP = 1e-8
MAX_ITER = 10_000

# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ComplexMatrix:
    """Square complex matrix acting on the joint space of ``vars``."""

    data: np.ndarray
    vars: tuple[str, ...]
    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.vars) != len(self.dims):
            raise DimensionMismatch("vars and dims differ in length")
        if len(set(self.vars)) != len(self.vars):
            raise VariableClash(f"repeated register in {self.vars}")
        data = np.asarray(self.data)
        d = prod(self.dims)
        if data.shape != (d, d):
            raise DimensionMismatch(f"matrix shape {data.shape} does not match dims {self.dims}")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def dim(self) -> int:
        return prod(self.dims)

    @property
    def dag(self) -> "ComplexMatrix":
        return ComplexMatrix(self.data.conj().T, self.vars, self.dims)

    def with_data(self, data: np.ndarray) -> "ComplexMatrix":
        return ComplexMatrix(data, self.vars, self.dims)

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def __add__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        other = reorder(other, self.vars)
        return self.with_data(self.data + other.data)

    def __sub__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        other = reorder(other, self.vars)
        return self.with_data(self.data - other.data)

    def __mul__(self, scalar: complex) -> "ComplexMatrix":
        return self.with_data(self.data * scalar)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"ComplexMatrix(vars={self.vars}, dims={self.dims})"


def eye(vars: Sequence[str], dims: Sequence[int]) -> ComplexMatrix:
    return ComplexMatrix(np.eye(prod(dims)), tuple(vars), tuple(dims))


def zeros(vars: Sequence[str], dims: Sequence[int]) -> ComplexMatrix:
    d = prod(dims)
    return ComplexMatrix(np.zeros((d, d)), tuple(vars), tuple(dims))


def basis_projector(index: int, vars: Sequence[str], dims: Sequence[int]) -> ComplexMatrix:
    d = prod(dims)
    m = np.zeros((d, d))
    m[index, index] = 1.0
    return ComplexMatrix(m, tuple(vars), tuple(dims))


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def is_hermitian(a: ComplexMatrix, tol: float = TOL_EQ) -> bool:
    return max_abs(a.data - a.data.conj().T) <= tol


def _check_disjoint(a: Sequence[str], b: Sequence[str]) -> None:
    clash = set(a) & set(b)
    if clash:
        raise VariableClash(f"registers {sorted(clash)} appear on both sides")


def _permute_stack(ops: np.ndarray, from_vars: Sequence[str], from_dims: Sequence[int],
                   to_vars: Sequence[str]) -> np.ndarray:
    """Reorder tensor factors of a stack of square operators (k, d, d)."""
    from_vars = list(from_vars)
    if list(to_vars) == from_vars:
        return ops
    n = len(from_vars)
    perm = [from_vars.index(v) for v in to_vars]
    k, d, _ = ops.shape
    t = ops.reshape((k,) + tuple(from_dims) * 2)
    axes = [0] + [1 + p for p in perm] + [1 + n + p for p in perm]
    return t.transpose(axes).reshape(k, d, d)


def reorder(a: ComplexMatrix, vars: Sequence[str]) -> ComplexMatrix:
    """Permute the tensor factors of ``a`` into the register order ``vars``."""
    vars = tuple(vars)
    if vars == a.vars:
        return a
    if set(vars) != set(a.vars) or len(vars) != len(a.vars):
        raise DimensionMismatch(f"cannot reorder {a.vars} into {vars}")
    dims = tuple(a.dims[a.vars.index(v)] for v in vars)
    data = _permute_stack(a.data[None], a.vars, a.dims, vars)[0]
    return ComplexMatrix(data, vars, dims)


def embed_stack(ops: np.ndarray, sub_vars: Sequence[str], sub_dims: Sequence[int],
                full_vars: Sequence[str], full_dims: Sequence[int]) -> np.ndarray:
    """Pad a stack of operators on ``sub_vars`` with identities up to ``full_vars``."""
    sub_vars, full_vars = list(sub_vars), list(full_vars)
    missing = [v for v in sub_vars if v not in full_vars]
    if missing:
        raise UnknownVariable(f"registers {missing} not in {full_vars}")
    for v, dv in zip(sub_vars, sub_dims):
        if full_dims[full_vars.index(v)] != dv:
            raise DimensionMismatch(f"register {v} has dimension {dv}, expected "
                                    f"{full_dims[full_vars.index(v)]}")
    if sub_vars == full_vars:
        return ops
    rest = [v for v in full_vars if v not in sub_vars]
    rest_dims = [full_dims[full_vars.index(v)] for v in rest]
    dr = prod(rest_dims)
    k, ds, _ = ops.shape
    big = np.einsum("kab,cd->kacbd", ops, np.eye(dr)).reshape(k, ds * dr, ds * dr)
    return _permute_stack(big, sub_vars + rest, list(sub_dims) + rest_dims, full_vars)


def expand(a: ComplexMatrix, vars: Sequence[str], dims: Sequence[int]) -> ComplexMatrix:
    """``a`` tensored with identities on the registers of ``vars`` it does not mention."""
    data = embed_stack(a.data[None], a.vars, a.dims, vars, dims)[0]
    return ComplexMatrix(data, tuple(vars), tuple(dims))


def tensor(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Kronecker product; the registers of ``b`` follow those of ``a``."""
    _check_disjoint(a.vars, b.vars)
    return ComplexMatrix(np.kron(a.data, b.data), a.vars + b.vars, a.dims + b.dims)


def partial_trace(rho: ComplexMatrix, traced_vars: Iterable[str]) -> ComplexMatrix:
    traced = list(dict.fromkeys(traced_vars))
    unknown = [v for v in traced if v not in rho.vars]
    if unknown:
        raise UnknownVariable(f"cannot trace out {unknown}: not in {rho.vars}")
    if not traced:
        return rho
    keep = [v for v in rho.vars if v not in traced]
    keep_dims = [rho.dims[rho.vars.index(v)] for v in keep]
    tr_dims = [rho.dims[rho.vars.index(v)] for v in traced]
    dk, dt = prod(keep_dims), prod(tr_dims)
    t = _permute_stack(rho.data[None], rho.vars, rho.dims, keep + traced)[0]
    out = np.einsum("aibi->ab", t.reshape(dk, dt, dk, dt))
    return ComplexMatrix(out, tuple(keep), tuple(keep_dims))


def spectral_decompose(h: ComplexMatrix, tol: float = TOL_EQ) -> list[tuple[float, np.ndarray]]:
    """Eigen-pairs of a Hermitian matrix, eigenvalues descending."""
    if not is_hermitian(h, tol):
        raise NotHermitian("spectral decomposition needs a Hermitian matrix")
    herm = (h.data + h.data.conj().T) / 2
    w, v = np.linalg.eigh(herm)
    order = np.argsort(-w, kind="stable")
    return [(float(w[i]), v[:, i].copy()) for i in order]


def min_eig(a: np.ndarray) -> tuple[float, np.ndarray]:
    herm = (a + a.conj().T) / 2
    w, v = np.linalg.eigh(herm)
    return float(w[0]), v[:, 0]


def _aligned(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    if a.vars != b.vars:
        if set(a.vars) != set(b.vars):
            raise DimensionMismatch(f"registers differ: {a.vars} vs {b.vars}")
        b = reorder(b, a.vars)
    if a.dims != b.dims:
        raise DimensionMismatch(f"dimensions differ: {a.dims} vs {b.dims}")
    return b


def loewner_leq(a: ComplexMatrix, b: ComplexMatrix, tol: float = TOL_PSD) -> bool:
    b = _aligned(a, b)
    return min_eig(b.data - a.data)[0] >= -tol


def loewner_gap(a: ComplexMatrix, b: ComplexMatrix) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of ``b - a`` with its eigenvector (the violation witness)."""
    b = _aligned(a, b)
    return min_eig(b.data - a.data)


def matrix_equal(a: ComplexMatrix, b: ComplexMatrix, tol: float = TOL_EQ) -> bool:
    b = _aligned(a, b)
    return max_abs(a.data - b.data) <= tol


def is_pdop(rho: ComplexMatrix, tol: float = TOL_EQ) -> bool:
    if not is_hermitian(rho, tol):
        return False
    tr = rho.trace().real
    return min_eig(rho.data)[0] >= -tol and -tol <= tr <= 1 + tol


def is_qpred(m: ComplexMatrix, tol: float = TOL_PSD) -> bool:
    if not is_hermitian(m, tol):
        return False
    w = np.linalg.eigvalsh((m.data + m.data.conj().T) / 2)
    return bool(w[0] >= -tol and w[-1] <= 1 + tol)


# ---------------------------------------------------------------------------
# superoperators
# ---------------------------------------------------------------------------


def _kraus_to_liouville(ops: np.ndarray) -> np.ndarray:
    k, d, _ = ops.shape
    return np.einsum("kab,kcd->acbd", ops, ops.conj()).reshape(d * d, d * d)


def _liouville_to_choi(liou: np.ndarray, d: int) -> np.ndarray:
    # L[(a,b),(i,j)] = E(|i><j|)[a,b];  C[(i,a),(j,b)] = the same number
    return liou.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)


def _kraus_to_choi(ops: np.ndarray) -> np.ndarray:
    k, d, _ = ops.shape
    vecs = ops.transpose(0, 2, 1).reshape(k, d * d)  # v_k[(i,a)] = K[a,i]
    return vecs.T @ vecs.conj()


def _choi_to_kraus(choi: np.ndarray, d: int, cutoff: float = 1e-14) -> np.ndarray:
    herm = (choi + choi.conj().T) / 2
    w, v = np.linalg.eigh(herm)
    scale = max(float(np.max(np.abs(w))) if w.size else 0.0, 1.0)
    keep = w > cutoff * scale
    if not np.any(keep):
        return np.zeros((1, d, d), dtype=complex)
    vecs = v[:, keep] * np.sqrt(w[keep])
    return vecs.T.reshape(-1, d, d).transpose(0, 2, 1).copy()


class SuperOp:
    """Completely positive, trace-non-increasing map on the registers ``vars``."""

    __slots__ = ("vars", "dims", "_kraus", "_liou")

    def __init__(self, kraus: np.ndarray | None, vars: Sequence[str], dims: Sequence[int],
                 liou: np.ndarray | None = None, check: bool = True):
        self.vars = tuple(vars)
        self.dims = tuple(int(x) for x in dims)
        d = prod(self.dims)
        if kraus is None and liou is None:
            raise ValueError("need Kraus operators or a Liouville matrix")
        if kraus is not None:
            kraus = np.asarray(kraus, dtype=complex)
            if kraus.ndim == 2:
                kraus = kraus[None]
            if kraus.shape[0] == 0:
                kraus = np.zeros((1, d, d), dtype=complex)
            if kraus.shape[1:] != (d, d):
                raise DimensionMismatch(f"Kraus shape {kraus.shape[1:]} vs dimension {d}")
            kraus.setflags(write=False)
        if liou is not None:
            liou = np.asarray(liou, dtype=complex)
            liou.setflags(write=False)
        self._kraus = kraus
        self._liou = liou
        if check:
            gap = min_eig(np.eye(d) - self.dual_identity())[0]
            if gap < -TOL_PSD:
                raise NotTraceNonIncreasing(f"I - sum E^dag E has eigenvalue {gap:.3e}")

    # constructors -------------------------------------------------------
    @classmethod
    def from_kraus(cls, ops: Sequence[np.ndarray | ComplexMatrix], vars: Sequence[str],
                   dims: Sequence[int], check: bool = True) -> "SuperOp":
        arrs = [o.data if isinstance(o, ComplexMatrix) else np.asarray(o) for o in ops]
        d = prod(dims)
        stack = np.array(arrs, dtype=complex) if arrs else np.zeros((1, d, d), dtype=complex)
        return cls(stack, vars, dims, check=check)

    @classmethod
    def identity(cls, vars: Sequence[str], dims: Sequence[int]) -> "SuperOp":
        return cls(np.eye(prod(dims))[None], vars, dims, check=False)

    @classmethod
    def zero(cls, vars: Sequence[str], dims: Sequence[int]) -> "SuperOp":
        d = prod(dims)
        return cls(np.zeros((1, d, d)), vars, dims, check=False)

    @classmethod
    def unitary(cls, u: np.ndarray, vars: Sequence[str], dims: Sequence[int]) -> "SuperOp":
        return cls(np.asarray(u)[None], vars, dims, check=False)

    # views --------------------------------------------------------------
    @property
    def dim(self) -> int:
        return prod(self.dims)

    @property
    def kraus_array(self) -> np.ndarray:
        if self._kraus is None:
            ops = _choi_to_kraus(_liouville_to_choi(self._liou, self.dim), self.dim)
            ops.setflags(write=False)
            self._kraus = ops
        return self._kraus

    @property
    def kraus(self) -> list[ComplexMatrix]:
        return [ComplexMatrix(k, self.vars, self.dims) for k in self.kraus_array]

    @property
    def liouville(self) -> np.ndarray:
        if self._liou is None:
            liou = _kraus_to_liouville(self._kraus)
            liou.setflags(write=False)
            self._liou = liou
        return self._liou

    @property
    def n_kraus(self) -> int:
        return self._kraus.shape[0] if self._kraus is not None else self.dim ** 2

    def dual_identity(self) -> np.ndarray:
        """``E*(I) = sum_k E_k^dag E_k``."""
        if self._kraus is not None:
            return np.einsum("kba,kbc->ac", self._kraus.conj(), self._kraus)
        d = self.dim
        return (self._liou.conj().T @ np.eye(d).reshape(-1)).reshape(d, d)

    def compressed(self) -> "SuperOp":
        """Same map with a minimal Kraus list (at most d**2 operators)."""
        ops = _choi_to_kraus(self.choi(), self.dim)
        return SuperOp(ops, self.vars, self.dims, check=False)

    def choi(self) -> np.ndarray:
        if self._kraus is not None and self._kraus.shape[0] <= self.dim ** 2:
            return _kraus_to_choi(self._kraus)
        return _liouville_to_choi(self.liouville, self.dim)

    def __repr__(self) -> str:
        return f"SuperOp(vars={self.vars}, dims={self.dims}, kraus={self.n_kraus})"


def _same_space(e: SuperOp, f: SuperOp) -> SuperOp:
    """Return ``f`` expressed in the register order of ``e``."""
    if e.vars == f.vars and e.dims == f.dims:
        return f
    if set(e.vars) != set(f.vars) or len(e.vars) != len(f.vars):
        raise DimensionMismatch(f"superoperators act on {e.vars} and {f.vars}")
    f = reorder_op(f, e.vars)
    if f.dims != e.dims:
        raise DimensionMismatch(f"dimensions differ: {e.dims} vs {f.dims}")
    return f


def reorder_op(e: SuperOp, vars: Sequence[str]) -> SuperOp:
    vars = tuple(vars)
    if vars == e.vars:
        return e
    dims = tuple(e.dims[e.vars.index(v)] for v in vars)
    ops = _permute_stack(e.kraus_array, e.vars, e.dims, vars)
    return SuperOp(ops, vars, dims, check=False)


def embed_op(e: SuperOp, vars: Sequence[str], dims: Sequence[int]) -> SuperOp:
    """``e`` tensored with the identity map on the remaining registers of ``vars``."""
    ops = embed_stack(e.kraus_array, e.vars, e.dims, vars, dims)
    return SuperOp(ops, vars, dims, check=False)


def rename_op(e: SuperOp, mapping: dict[str, str]) -> SuperOp:
    return SuperOp(e._kraus, [mapping.get(v, v) for v in e.vars], e.dims, liou=e._liou,
                   check=False)


def apply(e: SuperOp, rho: ComplexMatrix) -> ComplexMatrix:
    """``sum_k (E_k kron I) rho (E_k kron I)^dag`` in the register order of ``rho``."""
    missing = [v for v in e.vars if v not in rho.vars]
    if missing:
        raise UnknownVariable(f"registers {missing} are not part of the state {rho.vars}")
    if e.vars == rho.vars and e._kraus is None:
        out = (e.liouville @ rho.data.reshape(-1)).reshape(rho.dim, rho.dim)
        return rho.with_data(out)
    ops = embed_stack(e.kraus_array, e.vars, e.dims, rho.vars, rho.dims)
    out = np.einsum("kab,bc,kdc->ad", ops, rho.data, ops.conj())
    return rho.with_data(out)


def dual(e: SuperOp) -> SuperOp:
    """Schroedinger-Heisenberg dual: Kraus operators ``E_k^dag``."""
    kraus = None if e._kraus is None else e._kraus.conj().transpose(0, 2, 1)
    liou = None if e._liou is None else e._liou.conj().T
    return SuperOp(kraus, e.vars, e.dims, liou=liou, check=False)


def apply_dual(e: SuperOp, a: ComplexMatrix) -> ComplexMatrix:
    """``E*(A) = sum_k E_k^dag A E_k`` (``a`` padded to the registers of ``e``)."""
    if set(a.vars) <= set(e.vars):
        a = expand(a, e.vars, e.dims)
        if e._kraus is None:
            d = e.dim
            out = (e.liouville.conj().T @ a.data.reshape(-1)).reshape(d, d)
            return a.with_data(out)
        ops = e._kraus
        out = np.einsum("kba,bc,kcd->ad", ops.conj(), a.data, ops)
        return a.with_data(out)
    return apply(dual(e), a)


def compose(e: SuperOp, f: SuperOp) -> SuperOp:
    """Sequential composition: apply ``e`` first, then ``f``."""
    f = _same_space(e, f)
    d = e.dim
    if e._kraus is not None and f._kraus is not None and e.n_kraus * f.n_kraus <= d * d:
        ops = np.einsum("jab,kbc->jkac", f._kraus, e._kraus).reshape(-1, d, d)
        return SuperOp(ops, e.vars, e.dims, check=False)
    return SuperOp(None, e.vars, e.dims, liou=f.liouville @ e.liouville, check=False)


def add(e: SuperOp, f: SuperOp, check: bool = True) -> SuperOp:
    f = _same_space(e, f)
    d = e.dim
    if e._kraus is not None and f._kraus is not None and e.n_kraus + f.n_kraus <= d * d:
        out = SuperOp(np.concatenate([e._kraus, f._kraus]), e.vars, e.dims, check=False)
    else:
        out = SuperOp(None, e.vars, e.dims, liou=e.liouville + f.liouville, check=False)
    if check:
        gap = min_eig(np.eye(d) - out.dual_identity())[0]
        if gap < -TOL_PSD:
            raise NotTraceNonIncreasing(f"sum is not trace-non-increasing (gap {gap:.3e})")
    return out


def add_all(ops: Sequence[SuperOp], vars: Sequence[str], dims: Sequence[int],
            check: bool = False) -> SuperOp:
    out = SuperOp.zero(vars, dims)
    for op in ops:
        out = add(out, op, check=False)
    if check:
        gap = min_eig(np.eye(out.dim) - out.dual_identity())[0]
        if gap < -TOL_PSD:
            raise NotTraceNonIncreasing(f"sum is not trace-non-increasing (gap {gap:.3e})")
    return out


def scale(lam: float, e: SuperOp, check: bool = True) -> SuperOp:
    if lam < 0:
        raise ValueError("scale factor must be non-negative")
    kraus = None if e._kraus is None else e._kraus * np.sqrt(lam)
    liou = None if e._liou is None else e._liou * lam
    out = SuperOp(kraus, e.vars, e.dims, liou=liou, check=False)
    if check and lam > 1:
        gap = min_eig(np.eye(e.dim) - out.dual_identity())[0]
        if gap < -TOL_PSD:
            raise NotTraceNonIncreasing(f"scaled map is not trace-non-increasing (gap {gap:.3e})")
    return out


def tensor_op(e: SuperOp, f: SuperOp) -> SuperOp:
    _check_disjoint(e.vars, f.vars)
    a, b = e.kraus_array, f.kraus_array
    ops = np.einsum("iab,jcd->ijacbd", a, b).reshape(
        a.shape[0] * b.shape[0], e.dim * f.dim, e.dim * f.dim)
    out = SuperOp(ops, e.vars + f.vars, e.dims + f.dims, check=False)
    return out.compressed() if out.n_kraus > out.dim ** 2 else out


def choi(e: SuperOp) -> ComplexMatrix:
    """Choi matrix on two copies of the registers; the input copy is primed."""
    primed = tuple(v + "'" for v in e.vars)
    return ComplexMatrix(e.choi(), primed + e.vars, e.dims + e.dims)


def choi_distance(e: SuperOp, f: SuperOp) -> float:
    f = _same_space(e, f)
    return float(np.linalg.norm(e.choi() - f.choi()))


def qop_leq(e: SuperOp, f: SuperOp, tol: float = TOL_PSD) -> bool:
    """``e`` below ``f``: the difference ``f - e`` is completely positive."""
    f = _same_space(e, f)
    return min_eig(f.choi() - e.choi())[0] >= -tol


def qop_equal(e: SuperOp, f: SuperOp, tol: float = TOL_EQ) -> bool:
    f = _same_space(e, f)
    return max_abs(e.choi() - f.choi()) <= tol


def is_zero_op(e: SuperOp, tol: float = TOL_EQ) -> bool:
    return max_abs(e.dual_identity()) <= tol


# ---------------------------------------------------------------------------
# monotone limits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Limit:
    """Converged member of a monotone sequence, with diagnostics."""

    value: SuperOp
    iterations: int
    delta: float
    tail: float


def tail_bound(deltas: Sequence[float]) -> float:
    """Estimate of the remaining distance to the limit from step sizes.

    The geometric rate is read off the last few steps (over a window, so
    that sequences which advance on alternate steps are handled).
    """
    last = deltas[-1] if deltas else 0.0
    if last == 0.0:
        return 0.0
    window = min(4, len(deltas) - 1)
    if window < 1 or deltas[-1 - window] <= 0:
        return last
    rate = min((last / deltas[-1 - window]) ** (1.0 / window), 0.999)
    return last * rate / (1.0 - rate)


def lub_sequence(gen: Callable[[int], SuperOp], tol: float = TOL_FP, max_iter: int = MAX_ITER,
                 monotone_checks: int = 8) -> Limit:
    """Least upper bound of an increasing sequence of superoperators.

    Stops at the first ``N`` with ``|choi(gen(N)) - choi(gen(N-1))|_F < tol``.
    Monotonicity is verified for the first ``monotone_checks`` steps.
    """
    prev = gen(0)
    deltas: list[float] = []
    for n in range(1, max_iter + 1):
        cur = gen(n)
        if n <= monotone_checks and not qop_leq(prev, cur, tol=max(TOL_PSD, tol)):
            raise NotMonotone(f"sequence decreases between steps {n - 1} and {n}")
        delta = choi_distance(prev, cur)
        deltas.append(delta)
        if delta < tol:
            return Limit(cur, n, delta, tail_bound(deltas))
        prev = cur
    raise NotConverged(f"no convergence after {max_iter} iterations", max_iter,
                       deltas[-1] if deltas else float("nan"))


# ---------------------------------------------------------------------------
# random instances (tests and sampling-based checks)
# ---------------------------------------------------------------------------


def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def random_psd(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = rank or d
    a = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    return a @ a.conj().T


def random_density(d: int, rng: np.random.Generator, trace: float = 1.0) -> np.ndarray:
    p = random_psd(d, rng)
    return trace * p / np.trace(p).real


def random_qpred(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random PSD matrix normalised into the interval [0, I]."""
    p = random_psd(d, rng, rank=int(rng.integers(1, d + 1)))
    top = np.linalg.eigvalsh(p)[-1]
    return p / (top * float(rng.uniform(1.0, 1.5)))


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_kraus(d: int, k: int, rng: np.random.Generator, deficit: float = 0.0) -> np.ndarray:
    """``k`` Kraus operators with ``sum E^dag E = (1 - deficit) I``-ish (never above I)."""
    ops = rng.normal(size=(k, d, d)) + 1j * rng.normal(size=(k, d, d))
    s = np.einsum("kba,kbc->ac", ops.conj(), ops)
    w, v = np.linalg.eigh(s)
    inv_sqrt = v @ np.diag(w ** -0.5) @ v.conj().T
    return ops @ inv_sqrt * np.sqrt(1.0 - deficit)


def random_superop(vars: Sequence[str], dims: Sequence[int], rng: np.random.Generator,
                   k: int = 2) -> SuperOp:
    d = prod(dims)
    return SuperOp(random_kraus(d, k, rng, deficit=float(rng.uniform(0, 0.5))), vars, dims,
                   check=False)
