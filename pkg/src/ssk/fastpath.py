"""Fused trajectory kernel for cruise-control ensembles.

The public pipeline (certificate row -> min-norm QP -> saturation -> Euler
step -> exit test) is pure Python per step, which is too slow for the
hundreds of long-horizon trajectories the saturation study needs.  This
module jit-compiles the identical computation for the cruise-control model:
every expression mirrors the corresponding line in generator.decompose,
certificates, qp, and sde._step_values, in the same evaluation order, so a
kernel trajectory is bit-identical to the composed pipeline (asserted by
the test suite).  The model's dynamics are polynomial, which keeps libm out
of the loop and makes exact agreement attainable.

Only the cruise-control scenario dispatches here; the disk benchmark uses
trigonometric dynamics whose jitted cos/sin differ from CPython's in the
last bit, so it stays on the interpreted path.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    from numba import njit as _njit

    HAVE_FASTPATH = True
except ImportError:  # pragma: no cover
    HAVE_FASTPATH = False

from .qp import _subset_arrays

if HAVE_FASTPATH:
    from .qp import _kernel as _qp_kernel

__all__ = ["HAVE_FASTPATH", "AccFastParams", "acc_fast_params", "run_acc_trajectory"]

_FAMILY_CODES = {"srcbf": 0, "szcbf": 1, "scbf": 2}


@dataclass(frozen=True)
class AccFastParams:
    """Scenario constants prepared for the kernel."""

    f0: float
    f1: float
    f2: float
    M: float
    tau: float
    x_d: float
    s1: float
    s2: float
    family: int
    gamma: float
    alpha_k: float
    weight_u: float
    lo: float
    hi: float
    box_in_qp: bool
    clamp: bool  # clamp after solve (post-saturation or infeasible fallback)
    subsets: np.ndarray
    sizes: np.ndarray


def acc_fast_params(config, spec) -> Optional[AccFastParams]:
    """Build kernel parameters when the scenario qualifies, else None."""
    if not HAVE_FASTPATH or os.environ.get("SSK_FASTPATH") == "0":
        return None
    if config.model != "acc" or not config.stop_on_exit:
        return None
    if spec.family not in _FAMILY_CODES:
        return None
    alpha_k = 1.0
    if spec.family == "szcbf":
        alpha = spec.alphas[0]
        if alpha.kind != "linear":
            return None
        alpha_k = alpha.k
    lo = hi = math.nan
    if config.control_box is not None:
        if len(config.control_box) != 1:
            return None
        blo, bhi = config.control_box[0]
        lo = math.nan if blo is None else float(blo)
        hi = math.nan if bhi is None else float(bhi)
    p = config.model_params
    box_present = config.control_box is not None
    box_in_qp = box_present and not config.saturate_after
    k = 2
    if box_in_qp:
        k += (0 if math.isnan(lo) else 1) + (0 if math.isnan(hi) else 1)
    subsets, sizes = _subset_arrays(k, 2)
    return AccFastParams(
        f0=float(p["f0"]),
        f1=float(p["f1"]),
        f2=float(p["f2"]),
        M=float(p["M"]),
        tau=float(p["tau"]),
        x_d=float(p["x_d"]),
        s1=float(p["sigma1"]),
        s2=float(p["sigma2"]),
        family=_FAMILY_CODES[spec.family],
        gamma=float(spec.gamma),
        alpha_k=float(alpha_k),
        weight_u=float(config.resolved_control_weight()),
        lo=lo,
        hi=hi,
        box_in_qp=box_in_qp,
        clamp=box_present,
        subsets=subsets,
        sizes=sizes,
    )


if HAVE_FASTPATH:

    @_njit(cache=True)
    def _acc_kernel(  # noqa: PLR0915 - mirrors the whole per-step pipeline
        x0,
        n_steps,
        dt,
        dws,
        f0,
        f1,
        f2,
        M,
        tau,
        x_d,
        s1,
        s2,
        family,
        gamma,
        alpha_k,
        w_u,
        lo,
        hi,
        box_in_qp,
        clamp,
        subsets,
        sizes,
    ):
        x1 = x0[0]
        x2 = x0[1]
        x3 = x0[2]
        t = 0.0
        g00 = 1.0 / M

        k = 2
        if box_in_qp:
            if not math.isnan(lo):
                k += 1
            if not math.isnan(hi):
                k += 1
        C = np.empty((k, 2))
        d = np.empty(k)
        w = np.empty(2)
        w[0] = w_u
        w[1] = 1.0

        infeasible = 0
        peak = 0.0
        acc_eff = 0.0
        count = 0

        if not (x3 - tau * x1 > 0.0):
            return 0, 1, 0.0, 0.0, 0.0, 0, 0

        # reciprocal-barrier work arrays (family 0)
        gh = np.empty(3)
        gh[0] = -tau
        gh[1] = 0.0
        gh[2] = 1.0
        gB = np.empty(3)
        hB = np.empty((3, 3))
        sig = np.zeros((3, 3))
        sig[0, 0] = s1
        sig[2, 2] = s2

        for step in range(n_steps):
            fr = f0 + f1 * x1 + f2 * x1 * x1
            fd0 = -fr / M
            fd2 = x2 - x1
            hv = x3 - tau * x1

            # certificate row, mirroring certificates.{srcbf,szcbf,scbf}_row
            if family == 2:
                drift = 0.0
                drift += (-tau) * fd0
                drift += 0.0 * 0.0
                drift += 1.0 * fd2
                coeff_c = g00 * (-tau) + 0.0 * 0.0 + 0.0 * 1.0
                rhs_c = -drift
                cert_le = False
            elif family == 1:
                drift = 0.0
                drift += (-tau) * fd0
                drift += 0.0 * 0.0
                drift += 1.0 * fd2
                coeff_c = g00 * (-tau) + 0.0 * 0.0 + 0.0 * 1.0
                if hv != 0.0:
                    alpha_v = math.copysign(alpha_k * abs(hv), hv)
                else:
                    alpha_v = 0.0
                rhs_c = -drift - alpha_v
                cert_le = False
            else:
                # B = 1/h derivatives as in certificates.reciprocal_of
                h2 = hv * hv
                h3 = hv * hv * hv
                for i in range(3):
                    gB[i] = -gh[i] / h2
                for i in range(3):
                    for j in range(3):
                        hB[i, j] = (2.0 * (gh[i] * gh[j])) / h3 - 0.0 / h2
                drift = 0.0
                drift += gB[0] * fd0
                drift += gB[1] * 0.0
                drift += gB[2] * fd2
                acc_tr = 0.0
                for i in range(3):
                    for j in range(3):
                        hsym = 0.5 * (hB[i, j] + hB[j, i])
                        if hsym != 0.0:
                            inner = 0.0
                            for kk in range(3):
                                inner += sig[i, kk] * sig[j, kk]
                            acc_tr += hsym * inner
                drift += 0.5 * acc_tr
                coeff_c = g00 * gB[0] + 0.0 * gB[1] + 0.0 * gB[2]
                if hv != 0.0:
                    alpha3 = math.copysign(gamma * abs(hv), hv)
                else:
                    alpha3 = 0.0
                rhs_c = alpha3 - drift
                cert_le = True

            # performance row, mirroring certificates.clf_row
            gV0 = 2.0 * (x1 - x_d)
            drift_v = 0.0
            drift_v += gV0 * fd0
            drift_v += 0.0 * 0.0
            drift_v += 0.0 * fd2
            acc_tr = 0.0
            hsym = 0.5 * (2.0 + 2.0)
            inner = 0.0
            inner += s1 * s1
            inner += 0.0 * 0.0
            inner += 0.0 * 0.0
            acc_tr += hsym * inner
            drift_v += 0.5 * acc_tr
            coeff_v = g00 * gV0 + 0.0 * 0.0 + 0.0 * 0.0
            rhs_v = -drift_v

            # normalized constraints (c . z >= d), as in qp._normalized_constraints
            if cert_le:
                C[0, 0] = -coeff_c
                C[0, 1] = -0.0
                d[0] = -rhs_c
            else:
                C[0, 0] = coeff_c
                C[0, 1] = 0.0
                d[0] = rhs_c
            C[1, 0] = -coeff_v
            C[1, 1] = 1.0
            d[1] = -rhs_v
            idx = 2
            if box_in_qp:
                if not math.isnan(lo):
                    C[idx, 0] = 1.0
                    C[idx, 1] = 0.0
                    d[idx] = lo
                    idx += 1
                if not math.isnan(hi):
                    C[idx, 0] = -1.0
                    C[idx, 1] = 0.0
                    d[idx] = -hi
                    idx += 1

            status, z, _, _, _ = _qp_kernel(C, d, w, subsets, sizes)
            if status == 0:
                u0 = z[0]
                do_clamp = clamp and not box_in_qp
            else:
                infeasible += 1
                # least-squares point of the certificate row as equality
                nrm = 0.0
                nrm += coeff_c * coeff_c
                if nrm == 0.0:
                    u0 = 0.0
                else:
                    u0 = (coeff_c * rhs_c) / nrm
                do_clamp = clamp
            if do_clamp:
                if not math.isnan(lo) and u0 < lo:
                    u0 = lo
                if not math.isnan(hi) and u0 > hi:
                    u0 = hi

            eff = u0 * u0
            acc_eff += eff
            if eff > peak:
                peak = eff
            count += 1

            # Euler-Maruyama step, mirroring sde._step_values
            d0 = dws[step, 0]
            d1 = dws[step, 1]
            d2 = dws[step, 2]
            mu = fd0
            mu += g00 * u0
            diff = 0.0
            diff += s1 * d0
            diff += 0.0 * d1
            diff += 0.0 * d2
            nx1 = x1 + mu * dt + diff
            mu = 0.0
            mu += 0.0 * u0
            diff = 0.0
            diff += 0.0 * d0
            diff += 0.0 * d1
            diff += 0.0 * d2
            nx2 = x2 + mu * dt + diff
            mu = fd2
            mu += 0.0 * u0
            diff = 0.0
            diff += 0.0 * d0
            diff += 0.0 * d1
            diff += s2 * d2
            nx3 = x3 + mu * dt + diff
            t = t + dt
            if not (math.isfinite(nx1) and math.isfinite(nx2) and math.isfinite(nx3)):
                return 0, 1, t, 0.0, 0.0, infeasible, 1
            x1 = nx1
            x2 = nx2
            x3 = nx3
            if not (x3 - tau * x1 > 0.0):
                mean = acc_eff / count if count > 0 else 0.0
                return 0, 1, t, peak, mean, infeasible, 0

        mean = acc_eff / count if count > 0 else 0.0
        return 1, 0, 0.0, peak, mean, infeasible, 0


def run_acc_trajectory(
    params: AccFastParams, x0: np.ndarray, n_steps: int, dt: float, dws: np.ndarray
):
    """One kernel trajectory; returns the same summary fields as the
    interpreted pipeline (safe, exit_time, effort peak/mean, infeasible
    count, overflow flag)."""
    safe, has_exit, exit_time, peak, mean, infeasible, overflow = _acc_kernel(
        np.asarray(x0, dtype=float),
        n_steps,
        dt,
        dws,
        params.f0,
        params.f1,
        params.f2,
        params.M,
        params.tau,
        params.x_d,
        params.s1,
        params.s2,
        params.family,
        params.gamma,
        params.alpha_k,
        params.weight_u,
        params.lo,
        params.hi,
        params.box_in_qp,
        params.clamp,
        params.subsets,
        params.sizes,
    )
    return (
        bool(safe),
        exit_time if has_exit else None,
        peak,
        mean,
        int(infeasible),
        bool(overflow),
    )
