"""The ``lbp`` command: check, eval, grad, transform, trace and validate.

Exit status is 0 on success, 1 on a user error (bad input, ill-typed
term, bad bindings, exhausted fuel) and 2 on an internal failure or a
failed validation suite.  Machine output is one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .functions import RegistryError, load_registry, set_registry
from .graphad import BP_RULES, GraphADError, bp_numeric, bp_transform, fwd_transform, seed_backward, seed_forward
from .revad import ReadBackError, RevConfig, RevError, gradient, rev_term
from .rewrite import DEFAULT_RULES, FuelExhausted, RewriteError, apply, normalize, parse_rules, reduce_to_graph
from .semantics import EvalError, RealV, TupleV, eval as sem_eval, flatten
from .syntax import Num, Pair, ParseError, Term, input_order, parse, pretty, size, tuple_items
from .typing import LbpTypeError, infer_open, is_ground


class UserError(Exception):
    """Reported with exit status 1."""


USER_ERRORS = (
    UserError,
    ParseError,
    LbpTypeError,
    EvalError,
    RegistryError,
    RevError,
    GraphADError,
    RewriteError,
    FuelExhausted,
    OSError,
)

STRATEGY_ALIASES = {
    "eager": "eager_factoring",
    "eager_factoring": "eager_factoring",
    "lo": "leftmost_outermost",
    "leftmost_outermost": "leftmost_outermost",
    "bottom_up": "bottom_up",
}


def parse_point(text: str) -> dict:
    """``name=real[,name=real]*`` as a dict."""
    out: dict = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, value = part.partition("=")
        name = name.strip()
        if not sep or not name:
            raise UserError(f"bad binding {part!r}, expected name=real")
        if name in out:
            raise UserError(f"{name} is bound twice")
        try:
            out[name] = float(value)
        except ValueError:
            raise UserError(f"bad real {value.strip()!r} for {name}") from None
    return out


def point_for(t: Term, bindings: dict) -> tuple[list, list]:
    """Input names in first-occurrence order and their values; bindings must match exactly."""
    names = input_order(t)
    missing = [x for x in names if x not in bindings]
    if missing:
        raise UserError(f"missing binding for {', '.join(missing)}")
    extra = sorted(set(bindings) - set(names))
    if extra:
        raise UserError(f"no free variable named {', '.join(extra)}")
    return names, [bindings[x] for x in names]


def read_term(path: str) -> Term:
    text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
    return parse(text)


def _emit(obj: dict) -> None:
    print(json.dumps(obj))


def _value_json(v) -> object:
    if isinstance(v, RealV):
        return v.value
    if isinstance(v, TupleV):
        try:
            return flatten(v)
        except EvalError:
            return str(v)
    return str(v)


# ---------------------------------------------------------------- subcommands


def cmd_check(args) -> int:
    t = read_term(args.file)
    ty = infer_open(t)
    if args.format == "machine":
        _emit({"type": str(ty), "size": size(t), "ground": is_ground(t)})
    else:
        print(ty)
    return 0


def cmd_eval(args) -> int:
    t = read_term(args.file)
    infer_open(t)
    names, point = point_for(t, parse_point(args.at or ""))
    v = sem_eval(t, dict(zip(names, point)))
    if args.format == "machine":
        _emit({"value": _value_json(v)})
    else:
        print(v)
    return 0


def _graph(t: Term, fuel):
    g, tr = reduce_to_graph(t, fuel)
    if not is_ground(g):
        raise UserError("term does not reduce to a computational graph (is it of type R?)")
    return g, tr


def _no_steps() -> dict:
    return {"beta": 0, "ell": 0, "fn": 0, "structural": 0}


def _add_steps(acc: dict, counts: dict) -> None:
    for k in acc:
        acc[k] += counts.get(k, 0)


def grad_report(t: Term, names: list, point: list, mode: str, cfg: RevConfig) -> dict:
    """Value, gradient and step accounting for one differentiation route."""
    if mode == "rev":
        _, rep = gradient(t, point, cfg, names)
        return rep.as_dict()
    value_v = sem_eval(t, dict(zip(names, point)))
    value = value_v.value if isinstance(value_v, RealV) else float("nan")
    g, tr = _graph(t, cfg.fuel)
    steps = _no_steps()
    if mode == "fwd":
        grad = []
        for j in range(1, len(names) + 1):
            nf, trace = normalize(seed_forward(fwd_transform(g), names, point, j), DEFAULT_RULES, "bottom_up", cfg.fuel)
            if not (isinstance(nf, Pair) and isinstance(nf.snd, Num)):
                raise GraphADError(f"forward program did not reduce to a numeral pair: {nf}")
            grad.append(nf.snd.value)
            _add_steps(steps, trace.by_class())
    elif mode == "bp":
        if names:
            term = seed_backward(bp_transform(g, names), names, point)
            nf, trace = normalize(term, BP_RULES, "bottom_up", cfg.fuel)
            if not (isinstance(nf, Pair) and isinstance(nf.fst, Num)):
                raise GraphADError(f"backpropagation term did not reduce to numerals: {nf}")
            grad = [c.value for c in tuple_items(nf.snd, len(names))]
            _add_steps(steps, trace.by_class())
        else:
            grad = []
    elif mode == "bp_numeric":
        value, grad = bp_numeric(g, point, names)
    else:
        from .validate import extrapolated_diff

        grad = extrapolated_diff(t, point, names) if names else []
    return {"value": value, "gradient": list(grad), "steps": steps, "m": tr.total, "sizeG": size(g), "fallback": False}


def _rev_config(args) -> RevConfig:
    rules = parse_rules(args.rules) if getattr(args, "rules", None) else DEFAULT_RULES
    return RevConfig(rules=rules, fuel=args.fuel, prereduce=args.prereduce)


def cmd_grad(args) -> int:
    t = read_term(args.file)
    infer_open(t)
    names, point = point_for(t, parse_point(args.at or ""))
    report = grad_report(t, names, point, args.mode, _rev_config(args))
    if args.report or args.format == "machine":
        _emit(report)
    else:
        print(f"value {report['value']!r}")
        print("gradient (" + ", ".join(repr(g) for g in report["gradient"]) + ")")
    return 0


def transformed(t: Term, mode: str, dim: int | None = None) -> Term:
    names = input_order(t)
    if mode == "rev":
        return rev_term(t, dim or max(1, len(names)))
    g, _ = _graph(t, None)
    if mode == "fwd":
        return fwd_transform(g)
    return bp_transform(g, names).assemble()


def cmd_transform(args) -> int:
    t = read_term(args.file)
    infer_open(t)
    u = transformed(t, args.mode, args.dim)
    if args.emit:
        print(pretty(u))
    elif args.format == "machine":
        _emit({"mode": args.mode, "size": size(u)})
    else:
        print(f"{args.mode} transform of size {size(u)}")
    return 0


def _path_str(path) -> str:
    return ".".join(str(i) for i in path) if path else "root"


def cmd_trace(args) -> int:
    t = read_term(args.file)
    infer_open(t)
    rules = parse_rules(args.rules) if args.rules else DEFAULT_RULES
    strategy = STRATEGY_ALIASES.get(args.strategy)
    if strategy is None or strategy == "bottom_up":
        raise UserError(f"trace needs a positional strategy (eager or lo), got {args.strategy!r}")
    try:
        _, trace = normalize(t, rules, strategy, args.max_steps)
        complete = True
    except FuelExhausted as exc:
        trace, complete = exc.trace, False
    cur = t
    for rule, path in trace.steps:
        cur = apply(cur, rule, path)
        if args.format == "machine":
            _emit({"rule": str(rule), "path": list(path), "term": pretty(cur)})
        else:
            print(f"[{rule} @ {_path_str(path)}] {pretty(cur)}")
    if not complete:
        print(f"stopped after {len(trace.steps)} steps", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    from .validate import ValidationError, run_suites

    try:
        results = run_suites(args.suite, args.seed)
    except ValidationError as exc:
        raise UserError(str(exc)) from None
    for res in results:
        print(json.dumps(res.as_dict(), default=str))
    return 0 if all(r.passed for r in results) else 2


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    # common flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--registry", default=argparse.SUPPRESS, help="function-symbol registry file")
    common.add_argument("--format", choices=("text", "machine"), default=argparse.SUPPRESS)
    common.add_argument("--fuel", type=int, default=argparse.SUPPRESS, help="step budget (default LBP_FUEL or 1e6)")
    p = argparse.ArgumentParser(prog="lbp", description="Differentiation by rewriting of lambda terms.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def with_file(name, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.add_argument("file", help="term file, or - for standard input")
        return sp

    with_file("check", "print the type of a term")
    sp = with_file("eval", "evaluate a term at a point")
    sp.add_argument("--at", default="", help="bindings name=real[,name=real]*")

    sp = with_file("grad", "gradient of a real-valued term")
    sp.add_argument("--at", default="", help="bindings name=real[,name=real]*")
    sp.add_argument("--mode", choices=("rev", "fwd", "bp", "bp_numeric", "fd"), default="rev")
    sp.add_argument("--report", action="store_true", help="print one JSON line")
    sp.add_argument("--rules", help="rule set for the rev pipeline, e.g. beta,fn")
    sp.add_argument("--prereduce", action="store_true", help="differentiate the ground reduct")

    sp = with_file("transform", "print a differentiated program")
    sp.add_argument("--mode", choices=("rev", "fwd", "bp"), default="rev")
    sp.add_argument("--emit", action="store_true", help="print the term in concrete syntax")
    sp.add_argument("--dim", type=int, default=None, help="dimension of the backpropagator type")

    sp = with_file("trace", "print each reduction step")
    sp.add_argument("--rules", default="beta,ell,fn")
    sp.add_argument("--strategy", default="eager")
    sp.add_argument("--max-steps", type=int, default=1000)

    sp = sub.add_parser("validate", help="run validation suites", parents=[common])
    sp.add_argument("--suite", default="all", help="oracles, complexity, rnn, metatheory, commutation or all")
    sp.add_argument("--seed", type=int, default=0)
    return p


COMMANDS = {
    "check": cmd_check,
    "eval": cmd_eval,
    "grad": cmd_grad,
    "transform": cmd_transform,
    "trace": cmd_trace,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    for name, default in (("registry", None), ("format", "text"), ("fuel", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        if args.registry:
            set_registry(load_registry(args.registry))
        return COMMANDS[args.command](args)
    except ReadBackError as exc:
        print(f"lbp: internal error: {exc}", file=sys.stderr)
        return 2
    except USER_ERRORS as exc:
        print(f"lbp: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # unknown rule names and strategies
        print(f"lbp: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"lbp: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
