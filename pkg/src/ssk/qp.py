"""Min-norm quadratic program over (u, slack) with affine certificate rows.

Solves  min 0.5 * sum_i w_i u_i^2 + 0.5 * w_d * delta^2  subject to a handful
of affine rows and optional per-control box bounds.  Problems are tiny (a few
rows, at most a few controls), so the solver enumerates candidate active sets
in (size, lexicographic) order, solves each equality-constrained subproblem
in closed form through the diagonal-weight Schur complement, and returns the
first candidate satisfying the full KKT conditions -- which for a strictly
convex QP is the unique global minimizer.  Determinism, including tie-breaks
by lowest row index, follows from the enumeration order.

The per-step safety filter calls this millions of times per ensemble, so the
inner arithmetic stays in plain Python floats; numpy appears only at the
interface.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    _HAVE_NUMBA = False

from .certificates import AffineConstraint

__all__ = ["QpProblem", "QpSolution", "solve", "saturate"]

_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-8
_PIVOT_TOL = 1e-13
_SUBSET_CACHE: dict[tuple[int, int], tuple[tuple[int, ...], ...]] = {}
_SUBSET_ARRAY_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


@dataclass
class QpProblem:
    """Problem data for one safety-filter step."""

    num_controls: int
    rows: Sequence[AffineConstraint]
    slack_present: bool = False
    weight_u: float | Sequence[float] = 1.0
    weight_slack: float = 1.0
    box: Optional[Sequence[tuple[Optional[float], Optional[float]]]] = None

    def __post_init__(self):
        p = self.num_controls
        if isinstance(self.weight_u, (int, float)):
            w = [float(self.weight_u)] * p
        else:
            w = [float(v) for v in self.weight_u]
            if len(w) != p:
                raise ValueError(f"{len(w)} control weights for {p} controls")
        if any(v <= 0.0 for v in w) or self.weight_slack <= 0.0:
            raise ValueError("objective weights must be strictly positive")
        self.weight_u = np.array(w)
        if self.box is not None:
            if len(self.box) != p:
                raise ValueError("box must give one (lo, hi) pair per control")
            for lo, hi in self.box:
                if lo is not None and hi is not None and lo > hi:
                    raise ValueError(f"box lower bound {lo} exceeds upper bound {hi}")


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    slack: Optional[float]
    objective: float
    active_set: tuple[str, ...]
    kkt_residual: float
    status: str  # "optimal" | "infeasible" | "degenerate_row_dropped"
    infeasible_rows: tuple[str, ...] = ()


def saturate(u: np.ndarray, box: Sequence[tuple[Optional[float], Optional[float]]]) -> np.ndarray:
    """Componentwise clamp of u into the box (None means unbounded)."""
    u = np.asarray(u, dtype=float)
    out = u.copy()
    for i, (lo, hi) in enumerate(box):
        if lo is not None and out[i] < lo:
            out[i] = lo
        if hi is not None and out[i] > hi:
            out[i] = hi
    return out


def _normalized_constraints(
    problem: QpProblem,
) -> tuple[list[tuple[float, ...]], list[float], list[str]]:
    """All constraints as c . z >= d over z = (u[, slack])."""
    p = problem.num_controls
    m = p + (1 if problem.slack_present else 0)
    cs: list[tuple[float, ...]] = []
    ds: list[float] = []
    labels: list[str] = []
    for row in problem.rows:
        if row.slack_coeff != 0.0 and not problem.slack_present:
            raise ValueError(f"row {row.label!r} uses a slack the problem does not have")
        c = [float(v) for v in row.coeffs]
        if len(c) != p:
            raise ValueError(
                f"row {row.label!r} has {len(row.coeffs)} coefficients for {p} controls"
            )
        if problem.slack_present:
            c.append(float(row.slack_coeff))
        if row.sense == ">=":
            cs.append(tuple(c))
            ds.append(float(row.rhs))
        else:
            cs.append(tuple(-v for v in c))
            ds.append(-float(row.rhs))
        labels.append(row.label)
    if problem.box is not None:
        for i, (lo, hi) in enumerate(problem.box):
            if lo is not None and math.isfinite(lo):
                c = [0.0] * m
                c[i] = 1.0
                cs.append(tuple(c))
                ds.append(float(lo))
                labels.append(f"box_lo[{i}]")
            if hi is not None and math.isfinite(hi):
                c = [0.0] * m
                c[i] = -1.0
                cs.append(tuple(c))
                ds.append(-float(hi))
                labels.append(f"box_hi[{i}]")
    return cs, ds, labels


def _subsets(k: int, max_size: int) -> tuple[tuple[int, ...], ...]:
    key = (k, max_size)
    cached = _SUBSET_CACHE.get(key)
    if cached is None:
        idx = range(k)
        cached = tuple(
            s for size in range(1, max_size + 1) for s in itertools.combinations(idx, size)
        )
        _SUBSET_CACHE[key] = cached
    return cached


def _equality_solve(
    winv: list[float],
    cs: list[tuple[float, ...]],
    ds: list[float],
    subset: tuple[int, ...],
) -> Optional[tuple[list[float], list[float]]]:
    """Minimize 0.5 z'Wz subject to c_i . z = d_i for i in subset.

    Returns (z, lambda) from the Schur system (C Winv C') lambda = d,
    z = Winv C' lambda, or None when the subset is rank deficient.  The
    arithmetic mirrors the jitted kernel operation for operation so both
    paths produce bit-identical results.
    """
    m = len(winv)
    s = len(subset)
    S = [[0.0] * (s + 1) for _ in range(s)]
    scale = 0.0
    for a in range(s):
        ca = cs[subset[a]]
        for b in range(s):
            cb = cs[subset[b]]
            acc = 0.0
            for j in range(m):
                acc += ca[j] * winv[j] * cb[j]
            S[a][b] = acc
            if abs(acc) > scale:
                scale = abs(acc)
        S[a][s] = ds[subset[a]]
    if scale == 0.0:
        return None
    # Gaussian elimination with partial pivoting on the augmented system
    for col in range(s):
        piv = col
        best = abs(S[col][col])
        for r2 in range(col + 1, s):
            mag = abs(S[r2][col])
            if mag > best:
                best, piv = mag, r2
        if best <= _PIVOT_TOL * scale:
            return None
        if piv != col:
            S[col], S[piv] = S[piv], S[col]
        prow = S[col]
        inv = 1.0 / prow[col]
        for r2 in range(col + 1, s):
            factor = S[r2][col] * inv
            if factor != 0.0:
                row = S[r2]
                for j in range(col, s + 1):
                    row[j] -= factor * prow[j]
    lam = [0.0] * s
    for i in range(s - 1, -1, -1):
        acc = S[i][s]
        for j in range(i + 1, s):
            acc -= S[i][j] * lam[j]
        lam[i] = acc / S[i][i]
    z = [0.0] * m
    for j in range(m):
        acc = 0.0
        for a in range(s):
            acc += lam[a] * cs[subset[a]][j]
        z[j] = winv[j] * acc
    return z, lam


def _feasible(z: list[float], cs: list[tuple[float, ...]], ds: list[float]) -> bool:
    for c, d in zip(cs, ds):
        lhs = 0.0
        for cj, zj in zip(c, z):
            lhs += cj * zj
        if lhs < d - _FEAS_TOL * max(1.0, abs(d), abs(lhs)):
            return False
    return True


def _min_norm(
    w: list[float], cs: list[tuple[float, ...]], ds: list[float]
) -> Optional[tuple[list[float], list[float], tuple[int, ...]]]:
    """Projection of the origin onto the polyhedron {c . z >= d}.

    Enumerates active subsets by (size, lex); the first candidate passing
    primal and dual feasibility satisfies the full KKT system and is the
    unique minimizer.  Returns None when the polyhedron is empty.
    """
    m = len(w)
    z0 = [0.0] * m
    if _feasible(z0, cs, ds):
        return z0, [], ()
    winv = [1.0 / v for v in w]
    for subset in _subsets(len(cs), min(m, len(cs))):
        sol = _equality_solve(winv, cs, ds, subset)
        if sol is None:
            continue
        z, lam = sol
        lam_scale = max(1.0, max(abs(v) for v in lam))
        if min(lam) < -_DUAL_TOL * lam_scale:
            continue
        if _feasible(z, cs, ds):
            return z, lam, subset
    return None


def _kkt_residual(
    w: list[float],
    z: list[float],
    lam: list[float],
    cs: list[tuple[float, ...]],
    ds: list[float],
    active: tuple[int, ...],
) -> float:
    """Scaled max violation over stationarity, primal and dual feasibility,
    and complementary slackness."""
    m = len(w)
    grad = [w[j] * z[j] for j in range(m)]
    scale = 1.0
    for j in range(m):
        mag = abs(grad[j])
        if mag > scale:
            scale = mag
    for lam_i, i in zip(lam, active):
        c = cs[i]
        for j in range(m):
            grad[j] -= lam_i * c[j]
    res = 0.0
    for v in grad:
        if abs(v) > res:
            res = abs(v)
    res /= scale
    for v in lam:
        if -v > res:
            res = -v
    for k, i in enumerate(active):
        c = cs[i]
        lhs = 0.0
        for j in range(m):
            lhs += c[j] * z[j]
        cs_viol = abs(lam[k] * (lhs - ds[i])) / max(1.0, abs(lam[k] * ds[i]))
        if cs_viol > res:
            res = cs_viol
    for c, d in zip(cs, ds):
        lhs = 0.0
        for j in range(m):
            lhs += c[j] * z[j]
        viol = (d - lhs) / max(1.0, abs(d))
        if viol > res:
            res = viol
    return res


def _subset_arrays(k: int, max_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Subsets as a padded int64 matrix plus sizes, for the jitted kernel."""
    key = (k, max_size)
    cached = _SUBSET_ARRAY_CACHE.get(key)
    if cached is None:
        subs = _subsets(k, max_size)
        mat = np.full((len(subs), max_size), -1, dtype=np.int64)
        sizes = np.empty(len(subs), dtype=np.int64)
        for r, s in enumerate(subs):
            sizes[r] = len(s)
            mat[r, : len(s)] = s
        cached = (mat, sizes)
        _SUBSET_ARRAY_CACHE[key] = cached
    return cached


if _HAVE_NUMBA:

    @_njit(cache=True)
    def _kernel(C, d, w, subsets, sizes):  # pragma: no cover - exercised via solve()
        """Jitted twin of _min_norm/_kkt_residual; same enumeration order.

        Returns (status, z, lam_full, active_mask, residual) with status
        0 = optimal, 1 = infeasible.
        """
        k, m = C.shape
        z = np.zeros(m)
        lam_full = np.zeros(k)
        active = np.zeros(k, dtype=np.int64)

        feasible0 = True
        for i in range(k):
            di = d[i]
            tol = _FEAS_TOL * max(1.0, abs(di))
            if 0.0 < di - tol:
                feasible0 = False
                break
        if feasible0:
            return 0, z, lam_full, active[:0], 0.0

        winv = np.empty(m)
        for j in range(m):
            winv[j] = 1.0 / w[j]
        S = np.empty((m, m + 1))
        lam = np.empty(m)
        zc = np.empty(m)

        for row in range(subsets.shape[0]):
            s = sizes[row]
            # Gram matrix of the candidate active set, augmented with d
            scale = 0.0
            for a in range(s):
                ia = subsets[row, a]
                for b in range(s):
                    ib = subsets[row, b]
                    acc = 0.0
                    for j in range(m):
                        acc += C[ia, j] * winv[j] * C[ib, j]
                    S[a, b] = acc
                    if abs(acc) > scale:
                        scale = abs(acc)
                S[a, s] = d[ia]
            if scale == 0.0:
                continue
            # Gaussian elimination with partial pivoting on S[:s, :s+1]
            singular = False
            for col in range(s):
                piv = col
                best = abs(S[col, col])
                for r2 in range(col + 1, s):
                    mag = abs(S[r2, col])
                    if mag > best:
                        best = mag
                        piv = r2
                if best <= _PIVOT_TOL * scale:
                    singular = True
                    break
                if piv != col:
                    for j in range(col, s + 1):
                        tmp = S[col, j]
                        S[col, j] = S[piv, j]
                        S[piv, j] = tmp
                inv = 1.0 / S[col, col]
                for r2 in range(col + 1, s):
                    factor = S[r2, col] * inv
                    if factor != 0.0:
                        for j in range(col, s + 1):
                            S[r2, j] -= factor * S[col, j]
            if singular:
                continue
            for i in range(s - 1, -1, -1):
                acc = S[i, s]
                for j in range(i + 1, s):
                    acc -= S[i, j] * lam[j]
                lam[i] = acc / S[i, i]
            lam_scale = 1.0
            lam_min = 0.0
            for a in range(s):
                if abs(lam[a]) > lam_scale:
                    lam_scale = abs(lam[a])
                if lam[a] < lam_min:
                    lam_min = lam[a]
            if lam_min < -_DUAL_TOL * lam_scale:
                continue
            for j in range(m):
                acc = 0.0
                for a in range(s):
                    acc += lam[a] * C[subsets[row, a], j]
                zc[j] = winv[j] * acc
            feasible = True
            for i in range(k):
                lhs = 0.0
                for j in range(m):
                    lhs += C[i, j] * zc[j]
                if lhs < d[i] - _FEAS_TOL * max(1.0, abs(d[i]), abs(lhs)):
                    feasible = False
                    break
            if not feasible:
                continue
            # winner: assemble outputs and the scaled KKT residual
            for j in range(m):
                z[j] = zc[j]
            nact = 0
            for a in range(s):
                lam_full[subsets[row, a]] = lam[a]
                active[nact] = subsets[row, a]
                nact += 1
            grad_scale = 1.0
            for j in range(m):
                mag = abs(w[j] * z[j])
                if mag > grad_scale:
                    grad_scale = mag
            res = 0.0
            for j in range(m):
                acc = w[j] * z[j]
                for a in range(s):
                    acc -= lam[a] * C[subsets[row, a], j]
                if abs(acc) > res:
                    res = abs(acc)
            res /= grad_scale
            for a in range(s):
                if -lam[a] > res:
                    res = -lam[a]
            for i in range(k):
                lhs = 0.0
                for j in range(m):
                    lhs += C[i, j] * z[j]
                viol = (d[i] - lhs) / max(1.0, abs(d[i]))
                if viol > res:
                    res = viol
                if lam_full[i] != 0.0:
                    csv = abs(lam_full[i] * (lhs - d[i])) / max(1.0, abs(lam_full[i] * d[i]))
                    if csv > res:
                        res = csv
            return 0, z, lam_full, active[:nact], res
        return 1, z, lam_full, active[:0], 0.0


def _minimal_conflict(
    w: list[float], cs: list[tuple[float, ...]], ds: list[float], labels: list[str]
) -> tuple[str, ...]:
    """Smallest (by size, then lex) constraint subset with empty intersection."""
    k = len(cs)
    for size in range(2, k + 1):
        for subset in itertools.combinations(range(k), size):
            sub_cs = [cs[i] for i in subset]
            sub_ds = [ds[i] for i in subset]
            if _min_norm(w, sub_cs, sub_ds) is None:
                return tuple(labels[i] for i in subset)
    return tuple(labels)


def solve(problem: QpProblem, _force_python: bool = False) -> QpSolution:
    """Solve the min-norm QP; returns the unique optimum or infeasibility.

    On status "optimal" the solution carries the active row labels and a
    scaled KKT residual (stationarity, dual feasibility, complementary
    slackness), which for the closed-form subproblem solves is at rounding
    level.  On infeasibility the irreducible conflicting row set is
    reported for problems with at most 4 rows.

    Typical safety-filter problems dispatch to a jitted kernel (same
    enumeration, same tolerances); _force_python pins the interpreted
    reference path, which the test suite checks for equivalence.
    """
    cs, ds, labels = _normalized_constraints(problem)
    w = [float(v) for v in problem.weight_u]
    if problem.slack_present:
        w.append(float(problem.weight_slack))
    p = problem.num_controls
    m = len(w)
    k = len(cs)

    if _HAVE_NUMBA and not _force_python and 0 < k <= 12 and m <= 6:
        C = np.array(cs, dtype=float)
        subsets, sizes = _subset_arrays(k, min(m, k))
        status, z_arr, _, active_idx, resid = _kernel(
            C, np.array(ds, dtype=float), np.array(w, dtype=float), subsets, sizes
        )
        if status == 0:
            zl = z_arr.tolist()
            return QpSolution(
                u=z_arr[:p].copy(),
                slack=zl[-1] if problem.slack_present else None,
                objective=0.5 * sum(w[j] * zl[j] * zl[j] for j in range(m)),
                active_set=tuple(labels[i] for i in active_idx),
                kkt_residual=float(resid),
                status="optimal",
            )
    else:
        result = _min_norm(w, cs, ds)
        if result is not None:
            z, lam, active = result
            return QpSolution(
                u=np.array(z[:p]),
                slack=z[-1] if problem.slack_present else None,
                objective=0.5 * sum(w[j] * z[j] * z[j] for j in range(m)),
                active_set=tuple(labels[i] for i in active),
                kkt_residual=_kkt_residual(w, z, lam, cs, ds, active),
                status="optimal",
            )
    conflict = ()
    if len(problem.rows) <= 4:
        conflict = _minimal_conflict(w, cs, ds, labels)
    return QpSolution(
        u=np.full(p, np.nan),
        slack=np.nan if problem.slack_present else None,
        objective=np.nan,
        active_set=(),
        kkt_residual=np.nan,
        status="infeasible",
        infeasible_rows=conflict,
    )
