"""Affine-in-control QP constraint rows for each barrier certificate family.

Every certificate condition has the common shape a(x) + c(x).u {<=,>=} 0,
so each builder returns one AffineConstraint over the QP decision variables
(u, optionally a slack).  Families:

  reciprocal (SRCBF):  A B(x) <= alpha3(h(x)) with B = 1/h, valid on h > 0
  zeroing   (SZCBF):   A h(x) >= -alpha(h(x))
  plain     (SCBF):    A h(x) >= 0
  high-order variants: the same conditions applied to the top chain level

plus the quadratic-Lyapunov performance row A V(x) <= delta used by the
cruise-control benchmark.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .generator import BarrierChain, SmoothFunction, decompose
from .sde import SdeModel

__all__ = [
    "ClassKFunction",
    "AffineConstraint",
    "CertificateSpec",
    "BoundaryError",
    "DegenerateConstraintError",
    "InfeasibleRowError",
    "reciprocal_of",
    "srcbf_row",
    "szcbf_row",
    "scbf_row",
    "ho_scbf_row",
    "ho_szcbf_row",
    "clf_row",
]

FAMILIES = ("srcbf", "szcbf", "scbf", "ho_scbf", "ho_szcbf")

#: top-level control coefficients at or below this norm are degenerate
DEGENERATE_COEFF_TOL = 1e-9


class BoundaryError(ValueError):
    """Reciprocal certificate evaluated outside the safe interior (h <= 0)."""


class DegenerateConstraintError(RuntimeError):
    """Top-level control coefficient vanished pointwise; row cannot bind."""

    def __init__(self, message: str, state: np.ndarray):
        super().__init__(message)
        self.state = state

    def __reduce__(self):
        return (self.__class__, (self.args[0], self.state))


class InfeasibleRowError(RuntimeError):
    """A constraint with no control authority is violated outright."""


@dataclass(frozen=True)
class ClassKFunction:
    """Strictly increasing map with value zero at zero, odd-extended.

    kinds: linear k*s, power k*s**exponent, cubic k*s**3.
    """

    kind: str
    k: float
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "power", "cubic"):
            raise ValueError(f"unknown class-K kind {self.kind!r}")
        if self.k <= 0.0:
            raise ValueError(f"class-K gain must be positive, got {self.k}")
        if self.kind == "power" and self.exponent <= 0.0:
            raise ValueError(f"power exponent must be positive, got {self.exponent}")

    @classmethod
    def linear(cls, k: float = 1.0) -> "ClassKFunction":
        return cls("linear", k)

    @classmethod
    def power(cls, k: float, exponent: float) -> "ClassKFunction":
        return cls("power", k, exponent)

    @classmethod
    def cubic(cls, k: float = 1.0) -> "ClassKFunction":
        return cls("cubic", k)

    def __call__(self, s: float) -> float:
        mag = abs(s)
        if self.kind == "linear":
            out = self.k * mag
        elif self.kind == "cubic":
            out = self.k * mag**3
        else:
            out = self.k * mag**self.exponent
        return math.copysign(out, s) if s != 0.0 else 0.0


@dataclass(frozen=True)
class AffineConstraint:
    """One row coeffs.u + slack_coeff*delta {<=,>=} rhs."""

    coeffs: np.ndarray
    rhs: float
    sense: str  # "<=" or ">="
    label: str
    slack_coeff: float = 0.0

    def __post_init__(self):
        c = self.coeffs
        if not isinstance(c, np.ndarray) or c.dtype != np.float64:
            c = np.asarray(c, dtype=float)
            object.__setattr__(self, "coeffs", c)
        if self.sense not in ("<=", ">="):
            raise ValueError(f"sense must be '<=' or '>=', got {self.sense!r}")
        any_nonzero = False
        finite = math.isfinite(self.rhs) and math.isfinite(self.slack_coeff)
        for v in c.tolist():
            finite = finite and math.isfinite(v)
            any_nonzero = any_nonzero or v != 0.0
        if not finite:
            raise ValueError(f"non-finite constraint row {self.label!r}")
        if not any_nonzero and self.slack_coeff == 0.0:
            raise ValueError(
                f"row {self.label!r} has no decision-variable coefficients; "
                "trivial rows must be resolved by the builder"
            )

    def violation(self, u: np.ndarray, slack: float = 0.0) -> float:
        lhs = float(self.coeffs @ u) + self.slack_coeff * slack
        return max(0.0, lhs - self.rhs) if self.sense == "<=" else max(0.0, self.rhs - lhs)


@dataclass(frozen=True)
class CertificateSpec:
    """Certificate family plus the data its row builder needs.

    alphas arity is family-dependent: srcbf and szcbf take one class-K
    function (srcbf defaults to linear(gamma)), scbf and ho_scbf none,
    ho_szcbf one per chain level.
    """

    family: str
    h: SmoothFunction
    chain: Optional[BarrierChain] = None
    alphas: tuple[ClassKFunction, ...] = ()
    gamma: float = 1.0
    ho_szcbf_uses_h1: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown certificate family {self.family!r}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        alphas = tuple(self.alphas)
        if self.family == "srcbf" and not alphas:
            alphas = (ClassKFunction.linear(self.gamma),)
        object.__setattr__(self, "alphas", alphas)
        arity = {"srcbf": 1, "szcbf": 1, "scbf": 0, "ho_scbf": 0}.get(self.family)
        if self.family in ("ho_scbf", "ho_szcbf"):
            if self.chain is None:
                raise ValueError(f"{self.family} requires a barrier chain")
            if self.family == "ho_szcbf":
                arity = self.chain.relative_degree
        if arity is not None and len(alphas) != arity:
            raise ValueError(
                f"{self.family} takes {arity} class-K function(s), got {len(alphas)}"
            )


@functools.lru_cache(maxsize=128)
def reciprocal_of(h: SmoothFunction) -> SmoothFunction:
    """B = 1/h with derivatives from h's (valid on h > 0)."""

    def value(x):
        return 1.0 / h.value(x)

    def gradient(x):
        hv = h.value(x)
        return -np.asarray(h.gradient(x), dtype=float) / (hv * hv)

    def hessian(x):
        hv = h.value(x)
        g = np.asarray(h.gradient(x), dtype=float)
        return 2.0 * np.outer(g, g) / (hv * hv * hv) - np.asarray(
            h.hessian(x), dtype=float
        ) / (hv * hv)

    return SmoothFunction(value, gradient, hessian, name=f"1/({h.name or 'h'})")


def _resolve_trivial(
    coeffs: np.ndarray, rhs: float, sense: str, label: str
) -> Optional[AffineConstraint]:
    """Rows without control authority are decided now: drop or raise."""
    for v in coeffs.tolist():
        if v != 0.0:
            return AffineConstraint(coeffs, rhs, sense, label)
    holds = (0.0 <= rhs) if sense == "<=" else (0.0 >= rhs)
    if holds:
        return None
    raise InfeasibleRowError(f"row {label!r} reduces to 0 {sense} {rhs}, which fails")


def srcbf_row(model: SdeModel, spec: CertificateSpec, x) -> AffineConstraint:
    """Reciprocal-barrier row: A B(x) <= alpha3(h(x)) with B = 1/h.

    Defined only on the safe interior; as h -> 0+ the admissible control
    set collapses (the rhs diverges to -inf), which is exactly the
    boundary blow-up this family is known for.
    """
    hv = float(spec.h.value(x.values if hasattr(x, "values") else np.asarray(x, dtype=float)))
    if hv <= 0.0:
        raise BoundaryError(f"reciprocal barrier undefined at h = {hv} <= 0")
    dec = decompose(model, reciprocal_of(spec.h), x)
    rhs = spec.alphas[0](hv) - dec.drift_part
    return AffineConstraint(dec.control_part, rhs, "<=", "srcbf")


def szcbf_row(model: SdeModel, spec: CertificateSpec, x) -> Optional[AffineConstraint]:
    """Zeroing-barrier row: A h(x) >= -alpha(h(x)).

    Returns None when the row has no control authority and already holds.
    """
    hv = float(spec.h.value(x.values if hasattr(x, "values") else np.asarray(x, dtype=float)))
    dec = decompose(model, spec.h, x)
    rhs = -dec.drift_part - spec.alphas[0](hv)
    return _resolve_trivial(dec.control_part, rhs, ">=", "szcbf")


def scbf_row(model: SdeModel, spec: CertificateSpec, x) -> Optional[AffineConstraint]:
    """Supermartingale row: A h(x) >= 0."""
    dec = decompose(model, spec.h, x)
    return _resolve_trivial(dec.control_part, -dec.drift_part, ">=", "scbf")


def ho_scbf_row(model: SdeModel, chain: BarrierChain, x) -> AffineConstraint:
    """High-order supermartingale row: A b_{r-1}(x) >= 0.

    For r = 1 this is exactly the first-order row.  Raises
    DegenerateConstraintError where the control coefficient vanishes
    pointwise (the caller decides whether to drop the row for that step).
    """
    dec = decompose(model, chain.levels[-1], x)
    if np.abs(dec.control_part).max() <= DEGENERATE_COEFF_TOL:
        xv = x.values if hasattr(x, "values") else np.asarray(x, dtype=float)
        raise DegenerateConstraintError(
            f"top-level control coefficient {dec.control_part} vanishes at {xv}",
            state=xv,
        )
    label = f"ho_scbf[{chain.relative_degree - 1}]"
    return AffineConstraint(dec.control_part, -dec.drift_part, ">=", label)


def ho_szcbf_row(
    model: SdeModel,
    h: SmoothFunction,
    alphas: Sequence[ClassKFunction],
    x,
    chain: BarrierChain,
    uses_h1: bool = False,
) -> AffineConstraint:
    """Relative-degree-2 zeroing row: h2(x) >= 0 expanded in u, where

        h1 = A h + alpha1 h,   h2 = A h1 + alpha2 h.

    Linear alphas are required so that A(alpha1 h) = alpha1 A h.  With
    ``uses_h1`` the second shift multiplies h1 instead of h (the common
    alternative construction); the default keeps the literal form above.
    alpha1 = alpha2 = 0 would reduce to the high-order supermartingale row.
    """
    if chain.relative_degree != 2:
        raise ValueError("this construction is specific to relative degree 2")
    if len(alphas) != 2:
        raise ValueError(f"need exactly 2 class-K functions, got {len(alphas)}")
    for a in alphas:
        if a.kind != "linear":
            raise ValueError("the relative-degree-2 zeroing construction needs linear alphas")
    k1, k2 = alphas[0].k, alphas[1].k
    xv = x.values if hasattr(x, "values") else np.asarray(x, dtype=float)
    b1 = chain.levels[1]
    dec = decompose(model, b1, x)
    if np.abs(dec.control_part).max() <= DEGENERATE_COEFF_TOL:
        raise DegenerateConstraintError(
            f"top-level control coefficient {dec.control_part} vanishes at {xv}",
            state=xv,
        )
    hv = float(h.value(xv))
    b1v = float(b1.value(xv))
    shift = k2 * (b1v + k1 * hv) if uses_h1 else k2 * hv
    rhs = -dec.drift_part - k1 * b1v - shift
    return AffineConstraint(dec.control_part, rhs, ">=", "ho_szcbf[1]")


def clf_row(model: SdeModel, V: SmoothFunction, x) -> AffineConstraint:
    """Performance row A V(x) <= delta over (u, delta)."""
    dec = decompose(model, V, x)
    return AffineConstraint(dec.control_part, -dec.drift_part, "<=", "clf", slack_coeff=-1.0)


def certificate_row(model: SdeModel, spec: CertificateSpec, x) -> Optional[AffineConstraint]:
    """Dispatch to the family's row builder."""
    if spec.family == "srcbf":
        return srcbf_row(model, spec, x)
    if spec.family == "szcbf":
        return szcbf_row(model, spec, x)
    if spec.family == "scbf":
        return scbf_row(model, spec, x)
    if spec.family == "ho_scbf":
        return ho_scbf_row(model, spec.chain, x)
    return ho_szcbf_row(
        model, spec.h, spec.alphas, x, spec.chain, uses_h1=spec.ho_szcbf_uses_h1
    )
