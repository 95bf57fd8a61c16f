"""Closed-form worst-case safety-probability lower bounds.

The supermartingale argument behind each certificate family yields a
probability that the state stays in the safe interior:

  zeroing  (finite horizon):  (h(xi)/c) * exp(-c*T)
  plain    (infinite horizon): h(xi)/c
  high-order (infinite horizon): product over chain levels of b_j(xi)/c_j

where c (resp. c_j) is the supremum of the barrier over the safe set,
estimated here by a tensor grid plus local refinement over a declared
compact operating region.  Grid estimates are maxima over evaluated points
and therefore never exceed the true supremum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .generator import SmoothFunction

__all__ = [
    "SupEstimate",
    "BoundReport",
    "HypothesisViolationError",
    "estimate_sup",
    "szcbf_bound",
    "scbf_bound",
    "ho_scbf_bound",
    "kushner_supermartingale_bound",
    "find_hypothesis_point",
]


class HypothesisViolationError(ValueError):
    """The product bound's standing hypothesis fails; names the level."""

    def __init__(self, message: str, level: int):
        super().__init__(message)
        self.level = level

    def __reduce__(self):
        return (self.__class__, (self.args[0], self.level))


@dataclass(frozen=True)
class SupEstimate:
    """Estimated supremum of a barrier over the operating region."""

    value: float
    method: str  # "analytic" | "grid" | "sampled"
    region: tuple[tuple[float, float], ...]
    sample_count: int
    justification: str = ""

    def __post_init__(self):
        if self.method == "analytic" and not self.justification:
            raise ValueError("analytic sup estimates must carry a justification")


@dataclass(frozen=True)
class BoundReport:
    """Worst-case safety probability with the inputs that produced it."""

    family: str
    bound: float
    horizon: Optional[float]  # None means infinite horizon
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.bound <= 1.0:
            raise ValueError(f"bound {self.bound} outside [0, 1]")


def estimate_sup(
    fn: SmoothFunction,
    region: Sequence[Sequence[float]],
    resolution: int | Sequence[int] = 33,
) -> SupEstimate:
    """Max of fn over a tensor grid, then one coordinate-ascent refinement.

    The refinement starts from the best grid point with steps of one cell
    per dimension, halving on failure, for 50 iterations; it never leaves
    the region, so the estimate remains a max over evaluated points.
    """
    region = np.asarray(region, dtype=float)
    if region.ndim != 2 or region.shape[1] != 2:
        raise ValueError("region must be a sequence of (lo, hi) pairs")
    if not np.isfinite(region).all():
        raise ValueError("region must be bounded")
    if (region[:, 0] > region[:, 1]).any():
        raise ValueError(f"invalid region {region.tolist()}")
    ndim = region.shape[0]
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (ndim,))
    if (res < 2).any():
        raise ValueError("resolution must be at least 2 per dimension")

    axes = [np.linspace(region[i, 0], region[i, 1], res[i]) for i in range(ndim)]
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    values = np.fromiter((fn.value(p) for p in points), dtype=float, count=len(points))
    best_idx = int(values.argmax())
    best_x = points[best_idx].copy()
    best_v = float(values[best_idx])
    evals = len(points)

    steps = (region[:, 1] - region[:, 0]) / (res - 1)
    for _ in range(50):
        improved = False
        for i in range(ndim):
            if steps[i] == 0.0:
                continue
            for sign in (1.0, -1.0):
                cand = best_x.copy()
                cand[i] = min(max(cand[i] + sign * steps[i], region[i, 0]), region[i, 1])
                v = float(fn.value(cand))
                evals += 1
                if v > best_v:
                    best_v, best_x = v, cand
                    improved = True
        if not improved:
            steps = steps / 2.0
    return SupEstimate(best_v, "grid", tuple(map(tuple, region)), evals)


def szcbf_bound(h_xi: float, c: float, T: float) -> float:
    """Finite-horizon zeroing-certificate bound (h_xi/c) * exp(-c*T)."""
    if c <= 0.0:
        raise ValueError(f"c must be positive, got {c}")
    if not 0.0 <= h_xi <= c:
        raise ValueError(f"need 0 <= h(xi) <= c, got h(xi)={h_xi}, c={c}")
    if T < 0.0:
        raise ValueError(f"horizon must be nonnegative, got {T}")
    return min(1.0, max(0.0, (h_xi / c) * math.exp(-c * T)))


def scbf_bound(h_xi: float, c: float) -> float:
    """Infinite-horizon supermartingale bound h_xi/c."""
    if c <= 0.0:
        raise ValueError(f"c must be positive, got {c}")
    if not 0.0 <= h_xi <= c:
        raise ValueError(f"need 0 <= h(xi) <= c, got h(xi)={h_xi}, c={c}")
    return h_xi / c


def ho_scbf_bound(chain_values_at_xi: Sequence[float], sups: Sequence[float]) -> float:
    """Product bound over chain levels, prod_j b_j(xi)/c_j.

    Requires the initial point to lie in every level's strict superlevel
    interior (0 < b_j(xi) <= c_j); otherwise the bound does not apply and a
    HypothesisViolationError names the first failing level.
    """
    values = list(chain_values_at_xi)
    cs = list(sups)
    if len(values) != len(cs):
        raise ValueError(f"{len(values)} chain values but {len(cs)} sups")
    if not values:
        raise ValueError("need at least one chain level")
    out = 1.0
    for j, (bj, cj) in enumerate(zip(values, cs)):
        if bj <= 0.0:
            raise HypothesisViolationError(
                f"level {j}: b_{j}(xi) = {bj} <= 0, initial point is outside "
                f"the level-{j} interior so the product bound does not apply",
                level=j,
            )
        if cj <= 0.0 or bj > cj:
            raise ValueError(f"level {j}: need 0 < b_{j}(xi) <= c_{j}, got {bj} vs {cj}")
        out *= bj / cj
    return out


def kushner_supermartingale_bound(v0: float, c: float, lam: float) -> float:
    """Supermartingale excursion bound: P[sup V >= lam] <= v0/lam.

    Exposed for diagnostics; v0 is the initial value of the nonnegative
    supermartingale V (bounded by c) and lam the excursion threshold, so
    min(1, v0/lam) complements the safety bounds above via V = c - h.
    """
    if lam <= 0.0:
        raise ValueError(f"threshold must be positive, got {lam}")
    if not 0.0 <= v0 <= c:
        raise ValueError(f"need 0 <= v0 <= c, got v0={v0}, c={c}")
    return min(1.0, v0 / lam)


def find_hypothesis_point(
    levels: Sequence[SmoothFunction],
    sups: Sequence[float],
    region: Sequence[Sequence[float]],
    resolution: int | Sequence[int] = 17,
) -> tuple[np.ndarray, np.ndarray]:
    """Search the region grid for the point maximizing min_j b_j(x)/c_j.

    Returns (point, level values there).  Raises HypothesisViolationError
    when no grid point lies in the intersection of the level interiors.
    """
    region = np.asarray(region, dtype=float)
    ndim = region.shape[0]
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (ndim,))
    axes = [np.linspace(region[i, 0], region[i, 1], res[i]) for i in range(ndim)]
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)

    best_margin = -np.inf
    best_point = None
    best_values = None
    for p in points:
        vals = np.array([lvl.value(p) for lvl in levels])
        margin = float((vals / sups).min())
        if margin > best_margin:
            best_margin, best_point, best_values = margin, p, vals
    if best_margin <= 0.0:
        worst = int(np.argmin(best_values))
        raise HypothesisViolationError(
            f"no grid point lies in every level interior; best candidate "
            f"{best_point} fails at level {worst} with b_{worst} = {best_values[worst]}",
            level=worst,
        )
    return best_point, best_values
