"""Operator bindings for the example programs, plus corpus regeneration.

Program sources live in ``corpus/*.qrp``; the matrices they reference are
built here so that parameterised families (Grover's overlap, RQFS secrets,
toy truncation) can be instantiated on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .lang import Bindings
from .parser import bindings_json, corpus_dir

H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def proj(i: int, d: int) -> np.ndarray:
    p = np.zeros((d, d), dtype=complex)
    p[i, i] = 1.0
    return p


def shift(k: int, d: int) -> np.ndarray:
    """``|x> -> |(x + k) mod d>``."""
    u = np.zeros((d, d), dtype=complex)
    for x in range(d):
        u[(x + k) % d, x] = 1.0
    return u


def zero_test(d: int) -> dict[int, np.ndarray]:
    return {0: proj(0, d), 1: np.eye(d) - proj(0, d)}


# ---------------------------------------------------------------------------
# RQMC
# ---------------------------------------------------------------------------


def rqmc() -> Bindings:
    return Bindings(
        unitaries={"H": H, "HX": H @ X},
        measurements={"M": {0: np.sqrt(1 / 4) * I2, 1: np.sqrt(1 / 2) * I2, 2: np.sqrt(1 / 4) * I2},
                      "Mp": {0: np.sqrt(1 / 2) * I2, 1: np.sqrt(1 / 2) * I2}},
    )


def rqmc_alice_reference() -> list[np.ndarray]:
    """Kraus operators of the closed-form denotation of ``call Alice``."""
    return [np.sqrt(1 / 3) * H, np.sqrt(1 / 3) * H @ X]


# ---------------------------------------------------------------------------
# toy counter, while loop, trivial programs
# ---------------------------------------------------------------------------


def toy(dim: int = 16) -> Bindings:
    return Bindings(unitaries={"Um1": shift(-1, dim), "Up1": shift(1, dim)},
                    measurements={"M": zero_test(dim)})


def while_loop() -> Bindings:
    half = I2 / np.sqrt(2)
    return Bindings(measurements={"M": {0: half, 1: half}})


def trivial() -> Bindings:
    return Bindings(unitaries={"H": H}, measurements={"MZ": {0: proj(0, 2), 1: proj(1, 2)}})


# ---------------------------------------------------------------------------
# fixed-point Grover search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroverInstance:
    eps: float
    m: int
    s: np.ndarray
    t: np.ndarray
    V: np.ndarray

    @property
    def counter_dim(self) -> int:
        return 2 ** self.m

    def phase(self, v: np.ndarray) -> np.ndarray:
        return np.eye(len(v)) - (1 - np.exp(1j * np.pi / 3)) * np.outer(v, v.conj())

    @property
    def Rs(self) -> np.ndarray:
        return self.phase(self.s)

    @property
    def Rt(self) -> np.ndarray:
        return self.phase(self.t)

    def engine(self, n: int) -> np.ndarray:
        """``V_0 = V``, ``V_{n+1} = V_n R_s V_n^dag R_t V_n``."""
        v = self.V
        for _ in range(n):
            v = v @ self.Rs @ v.conj().T @ self.Rt @ v
        return v

    def success(self, n: int) -> float:
        return float(abs(self.t.conj() @ self.engine(n) @ self.s) ** 2)


def grover_instance(eps: float = 0.25, m: int = 2) -> GroverInstance:
    """Search space of dimension 2 with ``|<t|V|s>|^2 = 1 - eps`` and ``V = I``."""
    s = np.array([1, 0], dtype=complex)
    t = np.array([np.sqrt(1 - eps), np.sqrt(eps)], dtype=complex)
    return GroverInstance(eps, m, s, t, np.eye(2, dtype=complex))


def grover(eps: float = 0.25, m: int = 2) -> Bindings:
    g = grover_instance(eps, m)
    d = g.counter_dim
    return Bindings(
        unitaries={"V": g.V, "Vdag": g.V.conj().T, "Rs": g.Rs, "Rsdag": g.Rs.conj().T,
                   "Rt": g.Rt, "Rtdag": g.Rt.conj().T, "Um1": shift(-1, d), "Up1": shift(1, d)},
        measurements={"M": zero_test(d)},
    )


# ---------------------------------------------------------------------------
# recursive quantum Fourier sampling, n = 1, l = 1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RqfsSecret:
    g: tuple[int, int]  # truth table of g on {0, 1}
    s_root: int

    def leaf_bit(self, x: int) -> int:
        """``g(s_(x)) = s_root . x``; the oracle only ever needs this bit."""
        return (self.s_root * x) % 2

    @property
    def answer(self) -> int:
        return self.g[self.s_root]

    def consistent(self) -> bool:
        return all(self.leaf_bit(x) in self.g for x in (0, 1))


def consistent_secrets() -> list[RqfsSecret]:
    out = [RqfsSecret((a, b), s) for a, b, s in product((0, 1), (0, 1), (0, 1))]
    return [sec for sec in out if sec.consistent()]


def random_secrets(k: int, rng: np.random.Generator) -> list[RqfsSecret]:
    pool = consistent_secrets()
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def _xor_oracle(f) -> np.ndarray:
    """``|x>|y> -> |x>|y xor f(x)>`` on two qubits."""
    u = np.zeros((4, 4), dtype=complex)
    for x, y in product((0, 1), (0, 1)):
        u[2 * x + (y ^ f(x)), 2 * x + y] = 1.0
    return u


def rqfs(secret: RqfsSecret = RqfsSecret((0, 1), 1)) -> Bindings:
    if not secret.consistent():
        raise ValueError(f"secret {secret} violates the promise")
    d = 2  # counter space: depth index 0..l with l = 1
    return Bindings(
        unitaries={"INC": shift(1, d), "DEC": shift(-1, d), "Hn": H,
                   "HnHX": np.kron(H, H @ X), "HnXH": np.kron(H, X @ H),
                   "G": _xor_oracle(lambda s: secret.g[s]), "O": _xor_oracle(secret.leaf_bit)},
        measurements={"M": {0: proj(0, d), 1: proj(1, d), 2: np.zeros((d, d))},
                      "MZ": {0: proj(0, 2), 1: proj(1, 2)}},
    )


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

CORPUS_BINDINGS = {
    "rqmc": rqmc,
    "skip": trivial,
    "bot": trivial,
    "pbot": trivial,
    "localproc": trivial,
    "toy": toy,
    "while": while_loop,
    "grover": grover,
    "rqfs_n1_l1": rqfs,
}


def render_bindings(b: Bindings) -> str:
    return json.dumps(bindings_json(b), indent=1) + "\n"


def write_corpus(directory: Path | None = None) -> list[Path]:
    directory = directory or corpus_dir()
    out = []
    for name, factory in CORPUS_BINDINGS.items():
        path = directory / f"{name}.bind.json"
        path.write_text(render_bindings(factory()), encoding="utf-8")
        out.append(path)
    return out


if __name__ == "__main__":
    for p in write_corpus():
        print(p)
