"""Shared builders for the test suites: random programs and corpus access."""

from __future__ import annotations

import numpy as np

from artifact.lang import (
    BOOL,
    Bindings,
    Bot,
    Case,
    Init,
    Local,
    Program,
    Seq,
    Skip,
    Stmt,
    Unitary,
    VarDecl,
    typecheck,
)
from artifact.operators import random_kraus, random_unitary
from artifact.parser import load_program

REGS = ("q", "p")
CORPUS = ["rqmc", "skip", "bot", "pbot", "localproc", "toy", "while", "grover", "rqfs_n1_l1"]


def corpus(name: str) -> Program:
    return typecheck(load_program(f"corpus:{name}.qrp"))


def random_bindings(rng: np.random.Generator) -> Bindings:
    us = {f"U{i}": random_unitary(2, rng) for i in range(3)}
    us["W"] = random_unitary(4, rng)
    ms = {}
    for i in range(2):
        ks = random_kraus(2, 2, rng)
        ms[f"M{i}"] = {0: ks[0], 1: ks[1]}
    return Bindings(us, ms)


def random_stmt(rng: np.random.Generator, depth: int, regs=REGS) -> Stmt:
    """A call-free statement of nesting depth at most ``depth``."""
    leaves = ["skip", "bot", "init", "unit", "unit2"]
    kinds = leaves if depth <= 0 else leaves + ["seq", "seq", "case", "case", "local"]
    kind = kinds[int(rng.integers(len(kinds)))]
    reg = regs[int(rng.integers(len(regs)))]
    if kind == "skip":
        return Skip()
    if kind == "bot":
        return Bot() if rng.random() < 0.5 else Skip()  # keep most runs non-trivial
    if kind == "init":
        return Init(reg)
    if kind == "unit":
        return Unitary((reg,), f"U{int(rng.integers(3))}")
    if kind == "unit2":
        a, b = rng.permutation(list(regs))[:2]
        return Unitary((str(a), str(b)), "W")
    if kind == "seq":
        return Seq(random_stmt(rng, depth - 1, regs), random_stmt(rng, depth - 1, regs))
    if kind == "case":
        return Case(f"M{int(rng.integers(2))}", (reg,),
                    ((0, random_stmt(rng, depth - 1, regs)), (1, random_stmt(rng, depth - 1, regs))))
    # local register shadowing a global one
    return Local((reg,), (BOOL,), random_stmt(rng, depth - 1, regs))


def random_program(rng: np.random.Generator, depth: int = 3) -> Program:
    prog = Program(tuple(VarDecl(r, BOOL) for r in REGS), (), random_stmt(rng, depth))
    return typecheck(prog.with_bindings(random_bindings(rng)))


# "PASS/FAIL criterion N: ..." lines, printed by the terminal-summary hook in conftest.py
ACCEPTANCE: list[str] = []
