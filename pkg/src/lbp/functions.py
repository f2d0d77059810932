"""Real function symbols: numeric bodies, arities and partial-derivative maps.

A symbol's derivative list has one entry per argument.  An entry is one of

* a symbol name ``g``: the partial derivative is ``g`` applied to the same
  arguments (``g`` must have the same arity);
* a float ``c``: the partial derivative is the constant numeral ``c``;
* ``"#j"``: the partial derivative is the ``j``-th argument itself
  (1-based), the shape of the derivatives of a product.

Symbols without a derivative list are derivative-only: they may appear in
transformed programs but cannot themselves be differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

DerivEntry = Union[str, float]


class RegistryError(ValueError):
    """Bad registry file or inconsistent symbol definition."""


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _d_sigmoid(x: float) -> float:
    s = _sigmoid(x)
    return s * (1.0 - s)


def _d_tanh(x: float) -> float:
    t = math.tanh(x)
    return 1.0 - t * t


# Every numeric body a symbol may be bound to, keyed by body name.
BODIES: dict[str, tuple[int, Callable[..., float]]] = {
    "sin": (1, math.sin),
    "cos": (1, math.cos),
    "neg_sin": (1, lambda x: -math.sin(x)),
    "exp": (1, math.exp),
    "log": (1, math.log),
    "recip": (1, lambda x: 1.0 / x),
    "sigmoid": (1, _sigmoid),
    "d1_sigmoid": (1, _d_sigmoid),
    "tanh": (1, math.tanh),
    "d1_tanh": (1, _d_tanh),
    "relu": (1, lambda x: x if x > 0 else 0.0),
    "step": (1, lambda x: 1.0 if x > 0 else 0.0),
    "sub": (2, lambda x, y: x - y),
    "sq": (1, lambda x: x * x),
    "twice": (1, lambda x: 2.0 * x),
    "neg": (1, lambda x: -x),
}


@dataclass(frozen=True)
class FuncSym:
    name: str
    arity: int
    fn: Callable[..., float] = field(compare=False)
    deriv: tuple[DerivEntry, ...] | None = None

    @property
    def differentiable(self) -> bool:
        return self.deriv is not None

    def __call__(self, *xs: float) -> float:
        return self.fn(*xs)


class Registry:
    """Name to symbol table, checked for derivative consistency."""

    def __init__(self, syms=()):
        self._syms: dict[str, FuncSym] = {}
        for s in syms:
            self._syms[s.name] = s
        self.check()

    def __contains__(self, name: str) -> bool:
        return name in self._syms

    def __getitem__(self, name: str) -> FuncSym:
        return self._syms[name]

    def get(self, name: str):
        return self._syms.get(name)

    def names(self) -> list[str]:
        return list(self._syms)

    def differentiable(self) -> list[FuncSym]:
        return [s for s in self._syms.values() if s.differentiable]

    def extended(self, syms) -> "Registry":
        return Registry(list(self._syms.values()) + list(syms))

    def check(self) -> None:
        for s in self._syms.values():
            if s.deriv is None:
                continue
            if len(s.deriv) != s.arity:
                raise RegistryError(f"{s.name}: {len(s.deriv)} derivatives for arity {s.arity}")
            for d in s.deriv:
                if isinstance(d, float):
                    continue
                if d.startswith("#"):
                    j = int(d[1:])
                    if not 1 <= j <= s.arity:
                        raise RegistryError(f"{s.name}: projection {d} out of range")
                    continue
                target = self._syms.get(d)
                if target is None:
                    raise RegistryError(f"{s.name}: derivative symbol {d!r} is not registered")
                if target.arity != s.arity:
                    raise RegistryError(f"{s.name}: derivative {d} has arity {target.arity}")


def _builtin_syms() -> list[FuncSym]:
    def sym(name, deriv=None, body=None):
        arity, fn = BODIES[body or name]
        return FuncSym(name, arity, fn, None if deriv is None else tuple(deriv))

    return [
        sym("sin", ["cos"]),
        sym("cos", ["neg_sin"]),
        sym("neg_sin"),
        sym("exp", ["exp"]),
        sym("log", ["recip"]),
        sym("recip"),
        sym("sigmoid", ["d1_sigmoid"]),
        sym("d1_sigmoid"),
        sym("tanh", ["d1_tanh"]),
        sym("d1_tanh"),
        sym("relu", ["step"]),
        sym("step"),
        sym("sub", [1.0, -1.0]),
    ]


BUILTINS = Registry(_builtin_syms())
_current = [BUILTINS]


def registry() -> Registry:
    """The registry consulted by parsing, evaluation and rewriting."""
    return _current[0]


def set_registry(reg: Registry) -> None:
    _current[0] = reg


def _parse_deriv(tok: str) -> DerivEntry:
    if tok.startswith("#"):
        return tok
    try:
        return float(tok)
    except ValueError:
        return tok


def parse_registry(text: str, base: Registry = BUILTINS) -> Registry:
    """Parse lines ``name arity deriv1 ... derivK`` on top of ``base``.

    A line with no derivative entries declares a derivative-only symbol.
    The name must be one of the known numeric bodies.  Blank lines and lines
    starting with ``//`` are skipped.
    """
    syms = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        parts = line.split()
        name = parts[0]
        if name not in BODIES:
            raise RegistryError(f"line {lineno}: no numeric body named {name!r}")
        try:
            arity = int(parts[1])
        except (IndexError, ValueError):
            raise RegistryError(f"line {lineno}: missing or bad arity") from None
        body_arity, fn = BODIES[name]
        if arity != body_arity:
            raise RegistryError(f"line {lineno}: {name} has arity {body_arity}, not {arity}")
        derivs = [_parse_deriv(t) for t in parts[2:]]
        if derivs and len(derivs) != arity:
            raise RegistryError(f"line {lineno}: expected {arity} derivative entries")
        syms.append(FuncSym(name, arity, fn, tuple(derivs) if derivs else None))
    try:
        return base.extended(syms)
    except RegistryError as exc:
        raise RegistryError(str(exc)) from None


def load_registry(path: str, base: Registry = BUILTINS) -> Registry:
    with open(path, encoding="utf-8") as fh:
        return parse_registry(fh.read(), base)
