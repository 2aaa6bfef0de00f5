"""Command-line front end: ``hamcheck {check,q,adjoint,euler,oracle,supports}``.

Exit codes: 0 on success (for ``check``: Hamiltonian), 1 when ``check`` finds
the operator is not Hamiltonian, 2 on any error.  Errors are written to stderr
as a JSON object.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from . import jacobi, oracle
from .algebra import DivisionByZero
from .calculus import euler
from .operators import DimensionMismatch, NotSkewAdjoint, Unsupported, adjoint, serialize
from .parser import (
    DSLError,
    SessionConfig,
    parse_config,
    parse_expr,
    parse_operator,
    render_expr,
    render_operator,
    split_header,
)


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _read_source(args) -> str:
    if args.file:
        try:
            with open(args.file, encoding="utf-8") as fh:
                return fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {args.file}: {exc.strerror}") from None
    src = getattr(args, "source", None)
    if src == "-":
        return sys.stdin.read()
    if src is None:
        raise UsageError("no input given")
    return src


def _config(args) -> Optional[SessionConfig]:
    if not args.config:
        return None
    try:
        with open(args.config, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None


def _cmd_check(args, out) -> int:
    parsed = parse_operator(_read_source(args), _config(args))
    verdict = jacobi.is_hamiltonian(parsed.op, max_order=args.max_order, fast_path=args.fast_path)
    report = verdict.to_json(parsed.config.depvars)
    if args.json:
        out.write(_dump(report) + "\n")
    else:
        out.write(f"skew-adjoint: {str(verdict.skew).lower()}\n")
        if not verdict.skew:
            out.write(f"defect: {render_operator(verdict.defect, parsed.config)}\n")
        out.write(f"hamiltonian: {str(verdict.hamiltonian).lower()}\n")
        for e in report["entries"]:
            out.write(_entry_line(e, parsed.config) + "\n")
    return 0 if verdict.hamiltonian else 1


def _entry_line(e: dict, cfg: SessionConfig) -> str:
    k, l = e["k"], e["l"]
    kk = k[0] if len(k) == 1 else tuple(k)
    ll = l[0] if len(l) == 1 else tuple(l)
    labels = "" if cfg.n_dep == 1 else f"^({e['alpha']},{e['beta']},{e['gamma']})"
    return f"Q{labels}[{kk},{ll}] = {e['expr']}"


def _cmd_q(args, out) -> int:
    parsed = parse_operator(_read_source(args), _config(args))
    if args.fast_path:
        Q = jacobi.q_tensor_firstorder(jacobi.first_order_lambda(parsed.op))
    else:
        Q = jacobi.q_tensor(parsed.op, max_order=args.max_order)
    entries = Q.to_json(parsed.config.depvars)
    if args.json:
        out.write(_dump({"entries": entries}) + "\n")
    else:
        for e in entries:
            out.write(_entry_line(e, parsed.config) + "\n")
        if not entries:
            out.write("Q = 0\n")
    return 0


def _cmd_adjoint(args, out) -> int:
    parsed = parse_operator(_read_source(args), _config(args))
    adj = adjoint(parsed.op)
    if args.json:
        out.write(_dump({"adjoint": serialize(adj, n_dep=parsed.config.n_dep, names=parsed.config.depvars)}) + "\n")
    else:
        out.write(render_operator(adj, parsed.config) + "\n")
    return 0


def _cmd_euler(args, out) -> int:
    if args.expr is not None:
        src = args.expr
    else:
        src = _read_source(args)
    cfg, _ = split_header(src, _config(args))
    e = parse_expr(src, cfg)
    results = [render_expr(euler(e, a), cfg) for a in range(cfg.n_dep)]
    if args.json:
        out.write(_dump({"euler": dict(zip(cfg.depvars, results))}) + "\n")
    elif len(results) == 1:
        out.write(results[0] + "\n")
    else:
        for name, r in zip(cfg.depvars, results):
            out.write(f"{name}: {r}\n")
    return 0


def _cmd_oracle(args, out) -> int:
    parsed = parse_operator(_read_source(args), _config(args))
    report = oracle.run_trials(parsed.op, seed=args.seed, trials=args.trials)
    if args.json:
        out.write(_dump(report.to_json()) + "\n")
    else:
        out.write(f"seed {report.seed}, {report.trials} trials\n")
        for n, r in enumerate(report.residuals):
            out.write(f"trial {n}: {r}\n")
        nonzero = sum(1 for r in report.residuals if r != 0)
        out.write(f"nonzero residuals: {nonzero}\n")
    return 0


def _cmd_supports(args, out) -> int:
    parsed = parse_operator(_read_source(args), _config(args))
    sup = jacobi.supports(parsed.op)
    if args.json:
        out.write(_dump(sup.to_json()) + "\n")
    else:
        for name, pts in (("R", sup.R), ("Q'", sup.Q_prime), ("Q''", sup.Q_double_prime)):
            out.write(f"supp {name}: " + " ".join(f"({k},{l})" for k, l in pts) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamcheck", description="Exact checks for Hamiltonian operators.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, source=True):
        if source:
            sp.add_argument("source", nargs="?", help="operator text, or '-' for stdin")
        sp.add_argument("-f", "--file", help="read the input from a file")
        sp.add_argument("--config", help="key=value session config file")
        sp.add_argument("--json", action="store_true", help="emit a JSON report")
        return sp

    for name, helptext in (
        ("check", "decide whether the operator is Hamiltonian"),
        ("q", "print the nonzero entries of the Q-tensor"),
    ):
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--max-order", type=int, default=None, help="cap on derivatives in the Q scatter")
        sp.add_argument("--fast-path", action="store_true", help="use the closed first-order formulas")
    common(sub.add_parser("adjoint", help="Lagrange adjoint in normal form"))
    sp = common(sub.add_parser("euler", help="variational derivative of a density"))
    sp.add_argument("-e", "--expr", help="density text")
    sp = common(sub.add_parser("oracle", help="strengthened Jacobi residuals on random periodic data"))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=20)
    common(sub.add_parser("supports", help="support sets of R, Q' and Q''"))
    return p


_COMMANDS = {
    "check": _cmd_check,
    "q": _cmd_q,
    "adjoint": _cmd_adjoint,
    "euler": _cmd_euler,
    "oracle": _cmd_oracle,
    "supports": _cmd_supports,
}


def _error_json(exc: BaseException) -> dict:
    if isinstance(exc, DSLError):
        return exc.to_json()
    kinds = [
        (NotSkewAdjoint, "not_skew_adjoint"),
        (jacobi.ScatterLimitExceeded, "scatter_limit"),
        (oracle.OpaqueSymbolPresent, "opaque_symbol"),
        (oracle.NonConstantDenominator, "non_constant_denominator"),
        (oracle.UnsupportedDimension, "unsupported_dimension"),
        (oracle.NonPeriodicAtom, "non_periodic"),
        (Unsupported, "unsupported"),
        (DimensionMismatch, "dimension"),
        (DivisionByZero, "division_by_zero"),
        (UsageError, "usage"),
    ]
    kind = next((k for cls, k in kinds if isinstance(exc, cls)), "internal")
    out = {"error": kind, "message": str(exc)}
    if isinstance(exc, NotSkewAdjoint):
        out["defect"] = serialize(exc.defect)
    return out


def main(argv: Optional[List[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return _COMMANDS[args.command](args, stdout)
    except Exception as exc:  # every failure becomes a structured error
        stderr.write(_dump(_error_json(exc)) + "\n")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
