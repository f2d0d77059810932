"""A linear-logic-typed lambda calculus with explicit substitutions and
reverse-mode differentiation by rewriting.

Submodules:

* ``syntax``: types, terms, parser and pretty printer
* ``typing``: type inference and the ground fragment
* ``semantics``: a denotational evaluator and numeric oracles
* ``rewrite``: reduction rules, strategies and structural equivalence
* ``graphad``: forward and backward differentiation of ground terms
* ``revad``: the reverse transformation of higher-order terms
* ``validate``: route comparison, the example corpus, property checks
* ``cli``: the ``lbp`` command
"""

from .functions import BUILTINS, Registry, load_registry, registry, set_registry
from .graphad import bp_numeric, bp_transform, fwd_numeric, fwd_transform
from .revad import GradReport, RevConfig, gradient, rev_term, rev_type
from .rewrite import (
    DEFAULT_RULES,
    FuelExhausted,
    ReductionTrace,
    RuleId,
    apply,
    canonical,
    equivalent,
    find_redexes,
    normalize,
    reduce_to_graph,
    struct_step,
)
from .semantics import eval, sem_gradient  # noqa: A004
from .syntax import REAL, Arrow, Neg, Prod, Term, alpha_eq, parse, parse_type, pretty, size
from .typing import infer, infer_open, is_ground

__version__ = "0.1.0"

__all__ = [
    "BUILTINS",
    "DEFAULT_RULES",
    "REAL",
    "Arrow",
    "FuelExhausted",
    "GradReport",
    "Neg",
    "Prod",
    "ReductionTrace",
    "Registry",
    "RevConfig",
    "RuleId",
    "Term",
    "alpha_eq",
    "apply",
    "bp_numeric",
    "bp_transform",
    "canonical",
    "equivalent",
    "eval",
    "find_redexes",
    "fwd_numeric",
    "fwd_transform",
    "gradient",
    "infer",
    "infer_open",
    "is_ground",
    "load_registry",
    "normalize",
    "parse",
    "parse_type",
    "pretty",
    "reduce_to_graph",
    "registry",
    "rev_term",
    "rev_type",
    "sem_gradient",
    "set_registry",
    "size",
    "struct_step",
]
