"""Nonlinearities f(phi, x, u, u_x, u_xx, u_xxx) for the forced third-order flow.

An expression over {phi_1..phi_9, x, z0, z1, z2, z3} is parsed into a sympy
tree, optionally synthesized from a potential (total x-derivative of g, or a
Hamiltonian density F), and then evaluated on grids, differentiated for
linearization coefficients, and probed for structural symmetries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

from .spectral import (
    FourierField,
    Frequency,
    Truncation,
    analyze,
    dx_pow,
    omega_dphi,
    synthesize,
)

_X = sp.Symbol("x", real=True)
_PHI = [sp.Symbol(f"phi_{k}", real=True) for k in range(1, 10)]
_Z = [sp.Symbol(f"z{k}", real=True) for k in range(4)]
_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_IDENTS = {"x": _X, **{f"phi_{k}": _PHI[k - 1] for k in range(1, 10)},
           **{f"z{k}": _Z[k] for k in range(4)}}


class ParseError(ValueError):
    """Syntax error carrying the character offset in the source text."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


def _tokenize(text: str):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] in ".eE" or
                             (text[j] in "+-" and j > i and text[j - 1] in "eE")):
                j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ParseError(f"bad number {text[i:j]!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    """Recursive descent over: expr = term (('+'|'-') term)*,
    term = factor (('*'|'/') factor)*, factor = base ('^' integer)?,
    base = number | ident | '(' expr ')' | func '(' expr ')'."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.advance()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse(self) -> sp.Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected trailing input {tok[1]!r}", tok[2])
        return e

    def expr(self) -> sp.Expr:
        sign = 1
        if self.peek()[0] in "+-":
            sign = -1 if self.advance()[0] == "-" else 1
        e = sign * self.term()
        while self.peek()[0] in "+-":
            op = self.advance()[0]
            t = self.term()
            e = e + t if op == "+" else e - t
        return e

    def term(self) -> sp.Expr:
        e = self.factor()
        while self.peek()[0] in "*/":
            op = self.advance()[0]
            f = self.factor()
            e = e * f if op == "*" else e / f
        return e

    def factor(self) -> sp.Expr:
        e = self.base()
        if self.peek()[0] == "^":
            self.advance()
            sign = 1
            if self.peek()[0] in "+-":
                sign = -1 if self.advance()[0] == "-" else 1
            tok = self.advance()
            if tok[0] != "num" or tok[1] != int(tok[1]):
                raise ParseError("exponent must be an integer", tok[2])
            e = e ** (sign * int(tok[1]))
        return e

    def base(self) -> sp.Expr:
        tok = self.advance()
        if tok[0] == "num":
            v = tok[1]
            return sp.Integer(int(v)) if v == int(v) else sp.Float(v)
        if tok[0] == "(":
            e = self.expr()
            self.expect(")")
            return e
        if tok[0] == "ident":
            name = tok[1]
            if name in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _FUNCS[name](arg)
            if name in _IDENTS:
                return _IDENTS[name]
            raise ParseError(f"unknown identifier {name!r}", tok[2])
        raise ParseError(f"expected a value, found {tok[1]!r}", tok[2])


def _total_dx(expr: sp.Expr) -> sp.Expr:
    """Total x-derivative along solutions: z_k picks up z_{k+1}."""
    out = sp.diff(expr, _X)
    for k in range(3):
        out += _Z[k + 1] * sp.diff(expr, _Z[k])
    if sp.diff(expr, _Z[3]) != 0:
        raise ValueError("total x-derivative would need a fourth derivative slot")
    return sp.expand(out)


def _synthesize(expr: sp.Expr, declared_form: str) -> sp.Expr:
    if declared_form == "raw_f":
        return expr
    if declared_form == "dx_of_g":
        if sp.diff(expr, _Z[3]) != 0:
            raise ValueError("g may depend on z0, z1, z2 only")
        return _total_dx(expr)
    if declared_form == "hamiltonian_F":
        for z in _Z[2:]:
            if sp.diff(expr, z) != 0:
                raise ValueError("a Hamiltonian density may depend on z0, z1 only")
        dz0 = sp.diff(expr, _Z[0])
        dz1 = sp.diff(expr, _Z[1])
        return sp.expand(-_total_dx(dz0) + _total_dx(_total_dx(dz1)))
    raise ValueError(f"unknown declared_form {declared_form!r}")


@dataclass(frozen=True)
class NonlinearitySpec:
    """A parsed nonlinearity and its strength epsilon.

    ``f`` is the synthesized expression actually entering the equation;
    ``source`` keeps the text that was parsed (g or F for derived forms).
    """

    f: sp.Expr
    declared_form: str
    epsilon: float
    source: str = ""

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        free = self.f.free_symbols - set(_IDENTS.values())
        if free:
            raise ValueError(f"unexpected free symbols: {free}")

    @cached_property
    def _callable(self):
        return _lambdify(self.f)

    @cached_property
    def _z_derivative_callables(self):
        return tuple(_lambdify(sp.diff(self.f, z)) for z in _Z)

    def z_derivative(self, k: int) -> sp.Expr:
        return sp.diff(self.f, _Z[k])


def _lambdify(expr: sp.Expr):
    args = [_X, *_PHI, *_Z]
    fn = sp.lambdify(args, expr, modules="numpy")

    def call(x, phi, z):
        # phi: list of nu arrays, padded with zeros for unused angles
        phis = list(phi) + [0.0] * (9 - len(phi))
        out = fn(x, *phis, *z)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()

    return call


def parse_nonlinearity(text: str, declared_form: str = "raw_f",
                       epsilon: float = 1e-3) -> NonlinearitySpec:
    expr = _Parser(text).parse()
    f = _synthesize(sp.expand(expr), declared_form)
    return NonlinearitySpec(f=f, declared_form=declared_form,
                            epsilon=epsilon, source=text)


BUILTINS = {
    "quasilinear_cubic": ("z0^2 * z3", "raw_f"),
    "hamiltonian_cubic": ("z1^3", "hamiltonian_F"),
    "fully_nonlinear_F": ("cos(phi_1 + x) * z3 + sin(phi_1 + x) * z0^3", "raw_f"),
}


def builtin(name: str, epsilon: float = 1e-3) -> NonlinearitySpec:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin {name!r}; have {sorted(BUILTINS)}")
    text, form = BUILTINS[name]
    return parse_nonlinearity(text, form, epsilon)


# --------------------------------------------------------------- evaluation


def _grid_coords(trunc: Truncation):
    """Angle meshes (phi_1..phi_nu, x) matching the synthesis grid."""
    axes = [2.0 * np.pi * np.arange(m) / m for m in trunc.grid_shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return mesh[: trunc.nu], mesh[-1]


def _jet_on_grid(u: FourierField):
    """Samples of (u, u_x, u_xx, u_xxx) on the standard grid."""
    return [synthesize(dx_pow(u, k)) for k in range(4)]


def evaluate_f(spec: NonlinearitySpec, u: FourierField) -> FourierField:
    """f(phi, x, u, u_x, u_xx, u_xxx) sampled on the grid and re-truncated."""
    phis, xg = _grid_coords(u.trunc)
    z = _jet_on_grid(u)
    samples = spec._callable(xg, phis, z)
    return analyze(u.trunc, samples)


def residual(spec: NonlinearitySpec, freq: Frequency, u: FourierField) -> FourierField:
    """F(u) = lambda omega_bar . d_phi u + u_xxx + epsilon f(phi, x, jet u)."""
    return omega_dphi(u, freq) + dx_pow(u, 3) + evaluate_f(spec, u) * spec.epsilon


def linearized_coefficients(spec: NonlinearitySpec, u: FourierField):
    """Fields a_i = epsilon * (d f / d z_i) along u, for i = 3, 2, 1, 0."""
    phis, xg = _grid_coords(u.trunc)
    z = _jet_on_grid(u)
    out = []
    for k in (3, 2, 1, 0):
        samples = spec._z_derivative_callables[k](xg, phis, z)
        out.append(analyze(u.trunc, samples) * spec.epsilon)
    return tuple(out)


def apply_linearized(spec: NonlinearitySpec, freq: Frequency,
                     u: FourierField, h: FourierField) -> FourierField:
    """Directional derivative of the residual: L(u) h."""
    a3, a2, a1, a0 = linearized_coefficients(spec, u)
    from .spectral import multiply

    out = omega_dphi(h, freq) + dx_pow(h, 3)
    out = out + multiply(a3, dx_pow(h, 3)) + multiply(a2, dx_pow(h, 2))
    out = out + multiply(a1, dx_pow(h, 1)) + multiply(a0, h)
    return out


# ---------------------------------------------------------- structure flags


@dataclass(frozen=True)
class StructureFlags:
    cond_F: bool
    cond_Q: bool
    alpha: object  # float for constant alpha, callable phi -> value otherwise
    reversible: bool
    total_derivative: bool
    hamiltonian: bool
    diagnostic: dict = field(default_factory=dict)


def _is_zero(expr: sp.Expr, rng: np.random.Generator, tol: float = 1e-10) -> bool:
    simplified = sp.simplify(expr)
    if simplified == 0:
        return True
    fn = _lambdify(expr)
    for _ in range(64):
        x = rng.uniform(0, 2 * np.pi)
        phi = rng.uniform(0, 2 * np.pi, size=9)
        z = rng.uniform(-1, 1, size=4)
        if abs(fn(np.array(x), phi, z)) > tol:
            return False
    return True


def _q_right_factor(f: sp.Expr) -> sp.Expr:
    dz3 = sp.diff(f, _Z[3])
    out = sp.diff(dz3, _X)
    for k in range(3):
        out += _Z[k + 1] * sp.diff(dz3, _Z[k])
    return sp.expand(out)


def structure_flags(spec: NonlinearitySpec, seed: int = 0) -> StructureFlags:
    rng = np.random.default_rng(seed)
    f = spec.f
    diagnostic = {}

    cond_F = _is_zero(sp.diff(f, _Z[2]), rng)

    # reversibility: f(-phi, -x, z0, -z1, z2, -z3) = -f(phi, x, z0, z1, z2, z3)
    flipped = f.subs(
        {**{p: -p for p in _PHI}, _X: -_X, _Z[1]: -_Z[1], _Z[3]: -_Z[3]},
        simultaneous=True,
    )
    reversible = _is_zero(sp.expand(flipped + f), rng)

    # (Q): d_{z2} f = alpha(phi) * (total x-derivative of d_{z3} f),
    # requiring d^2_{z3 z3} f = 0
    cond_Q = False
    alpha = 0.0
    if _is_zero(sp.diff(f, _Z[3], 2), rng):
        lhs = sp.diff(f, _Z[2])
        rhs = _q_right_factor(f)
        if _is_zero(lhs, rng):
            cond_Q = True
            alpha = 0.0
        else:
            ratio = _probe_ratio(lhs, rhs, rng)
            if ratio is not None:
                cond_Q = True
                alpha = ratio
            else:
                diagnostic["cond_Q"] = "ratio d_{z2}f / D_x d_{z3}f is not a function of phi"

    total_derivative = spec.declared_form in ("dx_of_g", "hamiltonian_F")
    if not total_derivative:
        total_derivative = _numeric_total_derivative(spec, rng)

    hamiltonian = spec.declared_form == "hamiltonian_F"

    return StructureFlags(
        cond_F=cond_F,
        cond_Q=cond_Q,
        alpha=alpha,
        reversible=reversible,
        total_derivative=total_derivative,
        hamiltonian=hamiltonian,
        diagnostic=diagnostic,
    )


def _probe_ratio(lhs: sp.Expr, rhs: sp.Expr, rng: np.random.Generator,
                 tol: float = 1e-10):
    """alpha with lhs = alpha(phi) * rhs on probe points, or None."""
    flhs, frhs = _lambdify(lhs), _lambdify(rhs)

    def ratio_at(phi):
        vals = []
        for _ in range(16):
            x = np.array(rng.uniform(0, 2 * np.pi))
            z = rng.uniform(-1, 1, size=4)
            den = frhs(x, phi, z)
            if abs(den) < 1e-8:
                continue
            vals.append(flhs(x, phi, z) / den)
        if len(vals) < 4:
            return None
        vals = np.array(vals, dtype=float)
        if np.max(np.abs(vals - vals.mean())) > tol * max(1.0, np.abs(vals).max()):
            return None
        return float(vals.mean())

    probes = [rng.uniform(0, 2 * np.pi, size=9) for _ in range(4)]
    ratios = [ratio_at(p) for p in probes]
    if any(r is None for r in ratios):
        return None
    if np.max(np.abs(np.diff(ratios))) < tol * max(1.0, np.max(np.abs(ratios))):
        return float(ratios[0])

    # phi-dependent alpha: return a callable sampling the ratio
    def alpha_fn(phi):
        return ratio_at(np.asarray(phi, dtype=float))

    return alpha_fn


def _numeric_total_derivative(spec: NonlinearitySpec, rng: np.random.Generator,
                              tol: float = 1e-10) -> bool:
    """Check that the x-average of f vanishes along random trigonometric u."""
    trunc = Truncation(nu=1, n_phi=2, n_x=4)
    from .spectral import random_real_field, x_average

    for seed in range(3):
        u = random_real_field(trunc, np.random.default_rng(seed), decay=2.0, scale=0.3)
        avg = x_average(evaluate_f(spec, u))
        if np.max(np.abs(avg.c)) > tol:
            return False
    return True
