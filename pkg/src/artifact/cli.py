"""``qrv``: batch front-end over parsing, semantics, transformers and verification.

Exit codes: 0 valid / success, 1 invalid (or a rejected proof step),
2 static errors (parse, type, ill-formed input), 3 resource limits
(non-convergence, exploration cap), 4 unknown.

All JSON is written with sorted keys and numbers rounded to 12 significant
digits, so identical inputs and seed give byte-identical output.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import click
import numpy as np

from .assertions import Transformer, eval_pqpt
from .errors import (
    IllTyped,
    LimitExceeded,
    NotConverged,
    NotMonotone,
    QrvError,
    RuleMismatch,
    UndischargedAssumption,
    UnknownSideCondition,
)
from .lang import Program, Stmt, typecheck
from .operators import MAX_ITER, TOL_FP, choi
from .parser import (
    assertion_from_obj,
    corpus_dir,
    load_program,
    matrix_json,
    parse_stmt,
    pqpt_to_json,
    resolve_path,
    state_from_text,
)
from .semantics import PRUNE_TRACE, Denoter, explore, limit_slack
from .verifier import check_proof, check_triple, load_script, prob_query, script_program, triple_from_obj

EXIT_VALID, EXIT_INVALID, EXIT_STATIC, EXIT_LIMIT, EXIT_UNKNOWN = 0, 1, 2, 3, 4
STATUS_EXIT = {"valid": EXIT_VALID, "invalid": EXIT_INVALID, "unknown": EXIT_UNKNOWN}
DIGITS = 12


@dataclass(frozen=True)
class RunConfig:
    command: str
    program: str | None = None
    bindings: str | None = None
    tol: float = TOL_FP
    max_iter: int = int(MAX_ITER)
    max_steps: int = 200
    prune_trace: float = PRUNE_TRACE
    seed: int = 42
    output: str | None = None

    def __post_init__(self) -> None:
        if self.tol <= 0 or self.prune_trace < 0:
            raise click.BadParameter("tolerances must be positive")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _round(x: Any) -> Any:
    if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
        return x
    if isinstance(x, (float, np.floating)):
        return float(f"{float(x):.{DIGITS}g}") + 0.0
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, Mapping):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    return str(x)


def dumps(obj: Any) -> str:
    return json.dumps(_round(obj), sort_keys=True, ensure_ascii=False)


class _Sink:
    def __init__(self, path: str | None):
        self.fh = open(path, "w", encoding="utf-8") if path else None

    def line(self, obj: Any) -> None:
        text = obj if isinstance(obj, str) else dumps(obj)
        if self.fh:
            self.fh.write(text + "\n")
        else:
            click.echo(text)

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def _fail(exc: BaseException, code: int) -> None:
    click.echo(dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
    sys.exit(code)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (RuleMismatch, UndischargedAssumption)):
        return EXIT_INVALID
    if isinstance(exc, UnknownSideCondition):
        return EXIT_UNKNOWN
    if isinstance(exc, (NotConverged, NotMonotone, LimitExceeded)):
        return EXIT_LIMIT
    return EXIT_STATIC


def guarded(fn: Callable) -> Callable:
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RuleMismatch as exc:
            click.echo(dumps({"status": "invalid", "step": exc.step_id, "reason": exc.reason}))
            sys.exit(EXIT_INVALID)
        except QrvError as exc:
            _fail(exc, exit_code_for(exc))
        except (OSError, json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
            _fail(exc, EXIT_STATIC)

    return wrapper


# ---------------------------------------------------------------------------
# input helpers
# ---------------------------------------------------------------------------


def _program(cfg: RunConfig) -> Program:
    return typecheck(load_program(cfg.program, cfg.bindings))


def _stmt(env: Program, text: str | None) -> Stmt:
    return parse_stmt(text) if text else env.main


def _with_globals(obj: Any, env: Program) -> Any:
    """Assertions without ``vars`` range over all global registers."""
    if isinstance(obj, Mapping) and "vars" not in obj and "base" not in obj and "ref" not in obj \
            and ("literal" in obj or "const" in obj or "pvar" in obj):
        return {**obj, "vars": list(env.global_vars)}
    return obj


def _read_json(path: str) -> Any:
    p = resolve_path(path)
    if not p.exists() and (corpus_dir() / "assert" / p.name).exists():
        p = corpus_dir() / "assert" / p.name  # bundled I.json, 0.json, plus.json
    return json.loads(p.read_text(encoding="utf-8"))


def _assertion(path: str, env: Program):
    obj = _with_globals(_read_json(path), env)
    return assertion_from_obj(obj, dict(zip(env.global_vars, env.global_dims)))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


@click.group()
@click.option("--seed", envvar="QRV_SEED", default=42, show_default=True, type=int,
              help="Seed for sampled order checks (env: QRV_SEED).")
@click.option("--tol", default=TOL_FP, show_default=True, type=float, help="Fixed-point tolerance.")
@click.option("--max-iter", default=int(MAX_ITER), show_default=True, type=int,
              help="Fixed-point iteration cap.")
@click.pass_context
def main(ctx: click.Context, seed: int, tol: float, max_iter: int) -> None:
    """Verifier for recursive quantum programs."""
    ctx.obj = {"seed": seed, "tol": tol, "max_iter": max_iter}


def _cfg(ctx: click.Context, command: str, **kw) -> RunConfig:
    return RunConfig(command, seed=ctx.obj["seed"], tol=ctx.obj["tol"], max_iter=ctx.obj["max_iter"], **kw)


@main.command()
@click.argument("program")
@click.option("--bindings", default=None, help="Bindings JSON (default: <program>.bind.json).")
@click.option("--input", "input_state", default=None, help='Input state: "|a><b|", "I" or a JSON matrix.')
@click.option("--max-steps", default=200, show_default=True, type=int)
@click.option("--prune", "prune_trace", default=PRUNE_TRACE, show_default=True, type=float,
              help="Drop branches whose trace falls below this value.")
@click.option("--max-configs", default=None, type=int, help="Cap on live configurations (exit 3).")
@click.option("--output", default=None, help="Write JSON lines here instead of stdout.")
@click.pass_context
@guarded
def run(ctx, program, bindings, input_state, max_steps, prune_trace, max_configs, output):
    """Enumerate labelled runs; print one JSON line per trace and a summary."""
    cfg = _cfg(ctx, "run", program=program, bindings=bindings, max_steps=max_steps,
               prune_trace=prune_trace, output=output)
    env = _program(cfg)
    vars_, dims = env.global_vars, env.global_dims
    rho = state_from_text(input_state or "|0><0|", vars_, dims)
    ex = explore(env, env.main, rho, cfg.max_steps, cfg.prune_trace, max_configs)
    sink = _Sink(cfg.output)
    for t in ex.traces:
        sink.line(t.to_json())
    sink.line({"summary": {"output_sum": matrix_json(ex.output_sum.data), "vars": list(vars_),
                           "traces": len(ex.traces), "truncated": ex.truncated,
                           "dropped_mass": ex.dropped_mass, "pruned": ex.pruned, "cut": ex.cut}})
    sink.close()


@main.command()
@click.argument("program")
@click.option("--bindings", default=None)
@click.option("--proc", default=None, help="Denote a procedure on its own register space.")
@click.option("--stmt", default=None, help="Denote this statement instead of the main body.")
@click.pass_context
@guarded
def denote(ctx, program, bindings, proc, stmt):
    """Print the Choi matrix of a denotation plus fixed-point diagnostics."""
    cfg = _cfg(ctx, "denote", program=program, bindings=bindings)
    env = _program(cfg)
    den = Denoter(env, tol=cfg.tol, max_iter=cfg.max_iter)
    fix = den.fixpoint()
    if proc is not None:
        if proc not in fix.ops:
            raise IllTyped(f"no procedure {proc!r}")
        op = fix.ops[proc]
    else:
        op = den.denote(_stmt(env, stmt), env.global_vars)
    click.echo(dumps({"vars": list(op.vars), "dims": list(op.dims), "choi": matrix_json(choi(op).data),
                      "iterations": fix.iterations, "delta": fix.delta,
                      "slack": limit_slack(fix, int(np.prod(op.dims)))}))


def _transform(ctx, program, bindings, post, stmt, liberal: bool) -> None:
    cfg = _cfg(ctx, "wlp" if liberal else "wp", program=program, bindings=bindings)
    env = _program(cfg)
    q = _assertion(post, env)
    res = Transformer(env, tol=cfg.tol, max_iter=cfg.max_iter).run(_stmt(env, stmt), q, liberal=liberal)
    out: dict = {"pqpt": pqpt_to_json(res.value), "iterations": res.iterations, "slack": res.slack}
    if not res.value.params:
        out["matrix"] = matrix_json(eval_pqpt(res.value).data)
    click.echo(dumps(out))


@main.command()
@click.argument("program")
@click.option("--post", required=True, help="Postcondition assertion JSON.")
@click.option("--stmt", default=None)
@click.option("--bindings", default=None)
@click.pass_context
@guarded
def wp(ctx, program, post, stmt, bindings):
    """Weakest precondition (total correctness) of a postcondition."""
    _transform(ctx, program, bindings, post, stmt, liberal=False)


@main.command()
@click.argument("program")
@click.option("--post", required=True, help="Postcondition assertion JSON.")
@click.option("--stmt", default=None)
@click.option("--bindings", default=None)
@click.pass_context
@guarded
def wlp(ctx, program, post, stmt, bindings):
    """Weakest liberal precondition (partial correctness) of a postcondition."""
    _transform(ctx, program, bindings, post, stmt, liberal=True)


@main.command()
@click.argument("program")
@click.argument("triple")
@click.option("--bindings", default=None)
@click.option("--slack", default=0.0, show_default=True, type=float,
              help="Extra tolerance added to the order comparison.")
@click.pass_context
@guarded
def check(ctx, program, triple, bindings, slack):
    """Check a Hoare triple file semantically (exit 0 valid / 1 invalid / 4 unknown)."""
    cfg = _cfg(ctx, "check", program=program, bindings=bindings)
    env = _program(cfg)
    obj = dict(_read_json(triple))
    obj["pre"], obj["post"] = _with_globals(obj["pre"], env), _with_globals(obj["post"], env)
    t = triple_from_obj(obj, env)
    v = check_triple(env, t, tol=cfg.tol, max_iter=cfg.max_iter, slack=slack, seed=cfg.seed)
    click.echo(dumps({"mode": t.mode, **v.to_json()}))
    sys.exit(STATUS_EXIT[v.status])


@main.command()
@click.argument("program")
@click.option("--pre", required=True, help="Projector assertion JSON for the inputs.")
@click.option("--post", required=True, help="Projector assertion JSON for the outputs.")
@click.option("--stmt", default=None)
@click.option("--bindings", default=None)
@click.option("--slack", default=0.0, show_default=True, type=float)
@click.pass_context
@guarded
def prob(ctx, program, pre, post, stmt, bindings, slack):
    """Probability that outputs satisfy POST for inputs in the range of PRE."""
    cfg = _cfg(ctx, "prob", program=program, bindings=bindings)
    env = _program(cfg)
    r = prob_query(env, _assertion(pre, env), _stmt(env, stmt), _assertion(post, env),
                   tol=cfg.tol, max_iter=cfg.max_iter, slack=slack)
    click.echo(dumps(r.to_json()))


@main.command()
@click.argument("script")
@click.option("--program", default=None, help="Override the program named in the script.")
@click.option("--strict", is_flag=True, help="Treat an undecided side formula as an error.")
@click.pass_context
@guarded
def prove(ctx, script, program, strict):
    """Replay a proof script; exit 1 at the first rejected step."""
    cfg = _cfg(ctx, "prove", program=program)
    s = load_script(script)
    env = _program(cfg) if program else script_program(s)
    v = check_proof(s, env, strict=strict, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed)
    for st in v.diagnostics.get("steps", []):
        click.echo(dumps(st))
    click.echo(dumps({"status": v.status, "goal": v.diagnostics.get("goal"),
                      "inductive step sampled": v.diagnostics.get("inductive step sampled", [])}))
    sys.exit(STATUS_EXIT[v.status])


SELFTESTS: list[tuple[str, list[str], int]] = [
    ("rqmc exact triple", ["check", "corpus:rqmc.qrp", "corpus:rqmc_exact.triple.json"], EXIT_VALID),
    ("bot total triple", ["check", "corpus:bot.qrp", "corpus:bot_total.triple.json"], EXIT_INVALID),
    ("rqmc prob", ["prob", "corpus:rqmc.qrp", "--pre", "corpus:assert/I.json",
                   "--post", "corpus:assert/plus.json"], EXIT_VALID),
    ("bot wp", ["wp", "corpus:bot.qrp", "--post", "corpus:assert/I.json"], EXIT_VALID),
    ("skip run", ["run", "corpus:skip.qrp"], EXIT_VALID),
    ("rqmc proof", ["prove", "corpus:proofs/rqmc_exact.prf"], EXIT_VALID),
]


@main.command()
@click.pass_context
def selftest(ctx):
    """Run a handful of corpus checks and report pass/fail per item."""
    from click.testing import CliRunner

    runner = CliRunner()
    failed = 0
    for name, args, want in SELFTESTS:
        res = runner.invoke(main, ["--seed", str(ctx.obj["seed"]), *args])
        ok = res.exit_code == want
        failed += not ok
        click.echo(f"{'PASS' if ok else 'FAIL'} {name} (exit {res.exit_code}, expected {want})")
    sys.exit(EXIT_INVALID if failed else EXIT_VALID)


if __name__ == "__main__":
    main()
