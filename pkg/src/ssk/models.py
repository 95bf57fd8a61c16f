"""Benchmark models: adaptive cruise control, disk-bounded unicycle, and the
one-dimensional boundary blow-up system.

Constant matrices and gradients are allocated once and shared across calls;
callers must treat model outputs as read-only (the integrator does).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .generator import BarrierChain, SmoothFunction, build_chain
from .sde import SdeModel

__all__ = [
    "ACC_DEFAULTS",
    "UNICYCLE_DEFAULTS",
    "AccBundle",
    "UnicycleBundle",
    "acc_bundle",
    "unicycle_bundle",
    "scalar_blowup_system",
    "scalar_blowup_h",
]

# Cruise control: follower velocity x1, lead velocity x2, headway distance x3.
# The follower tracks a desired speed while keeping x3 - tau*x1 positive.
ACC_DEFAULTS: dict = {
    "f0": 0.1,
    "f1": 5.0,
    "f2": 0.25,
    "M": 1650.0,
    "gravity": 9.81,
    "x_d": 22.0,
    "tau": 1.8,
    "sigma1": 1.0,
    "sigma2": 1.0,
    "x0": [18.0, 10.0, 150.0],
}

# Differential drive at fixed forward speed v inside a disk of radius r;
# the angular velocity is the only control.
UNICYCLE_DEFAULTS: dict = {
    "v": 2.0,
    "r": 3.0,
    "sigma1": 0.1,
    "sigma2": 0.1,
    "x0": [0.0, 1.5, 0.0],
}


@dataclass(frozen=True)
class AccBundle:
    model: SdeModel
    h: SmoothFunction
    V: SmoothFunction
    params: dict


@dataclass(frozen=True)
class UnicycleBundle:
    model: SdeModel
    h: SmoothFunction
    b1: SmoothFunction
    params: dict

    def chain(self, region=None) -> BarrierChain:
        return build_chain(self.model, self.h, 2, derivative_supplier=[self.b1], region=region)


def acc_bundle(params: Optional[dict] = None) -> AccBundle:
    p = {**ACC_DEFAULTS, **(params or {})}
    f0, f1, f2 = float(p["f0"]), float(p["f1"]), float(p["f2"])
    M = float(p["M"])
    tau = float(p["tau"])
    x_d = float(p["x_d"])
    s1, s2 = float(p["sigma1"]), float(p["sigma2"])

    g_mat = np.array([[1.0 / M], [0.0], [0.0]])
    sigma_mat = np.array([[s1, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, s2]])
    zeros33 = np.zeros((3, 3))

    def drift(x):
        v = x[0]
        fr = f0 + f1 * v + f2 * v * v
        return np.array([-fr / M, 0.0, x[1] - v])

    model = SdeModel(
        state_dim=3,
        control_dim=1,
        noise_dim=3,
        drift=drift,
        control_matrix=lambda x: g_mat,
        diffusion=lambda x: sigma_mat,
        probe=np.asarray(p["x0"], dtype=float),
    )

    grad_h = np.array([-tau, 0.0, 1.0])
    h = SmoothFunction(
        value=lambda x: x[2] - tau * x[0],
        gradient=lambda x: grad_h,
        hessian=lambda x: zeros33,
        name="headway",
    )
    hess_V = np.diag([2.0, 0.0, 0.0])
    V = SmoothFunction(
        value=lambda x: (x[0] - x_d) ** 2,
        gradient=lambda x: np.array([2.0 * (x[0] - x_d), 0.0, 0.0]),
        hessian=lambda x: hess_V,
        name="speed_error",
    )
    return AccBundle(model, h, V, p)


def unicycle_bundle(params: Optional[dict] = None) -> UnicycleBundle:
    p = {**UNICYCLE_DEFAULTS, **(params or {})}
    v = float(p["v"])
    r = float(p["r"])
    s1, s2 = float(p["sigma1"]), float(p["sigma2"])

    g_mat = np.array([[0.0], [0.0], [1.0]])
    sigma_mat = np.array([[s1, 0.0, 0.0], [0.0, s2, 0.0], [0.0, 0.0, 0.0]])
    hess_h = np.diag([-2.0, -2.0, 0.0])
    noise_bias = s1 * s1 + s2 * s2  # Ito correction picked up by the chain

    def drift(x):
        return np.array([v * math.cos(x[2]), v * math.sin(x[2]), 0.0])

    model = SdeModel(
        state_dim=3,
        control_dim=1,
        noise_dim=3,
        drift=drift,
        control_matrix=lambda x: g_mat,
        diffusion=lambda x: sigma_mat,
        probe=np.asarray(p["x0"], dtype=float),
    )

    h = SmoothFunction(
        value=lambda x: r * r - x[0] * x[0] - x[1] * x[1],
        gradient=lambda x: np.array([-2.0 * x[0], -2.0 * x[1], 0.0]),
        hessian=lambda x: hess_h,
        name="disk",
    )

    def b1_value(x):
        return -2.0 * v * (x[0] * math.cos(x[2]) + x[1] * math.sin(x[2])) - noise_bias

    def b1_gradient(x):
        c, s = math.cos(x[2]), math.sin(x[2])
        return np.array([-2.0 * v * c, -2.0 * v * s, 2.0 * v * (x[0] * s - x[1] * c)])

    def b1_hessian(x):
        c, s = math.cos(x[2]), math.sin(x[2])
        tc = 2.0 * v * s
        ts = -2.0 * v * c
        return np.array(
            [
                [0.0, 0.0, tc],
                [0.0, 0.0, ts],
                [tc, ts, 2.0 * v * (x[0] * c + x[1] * s)],
            ]
        )

    b1 = SmoothFunction(b1_value, b1_gradient, b1_hessian, name="disk_rate")
    return UnicycleBundle(model, h, b1, p)


def scalar_blowup_system(sigma: float = 1.0) -> SdeModel:
    """dx = (x + u) dt + sigma dW, the boundary blow-up example."""
    g_mat = np.array([[1.0]])
    sigma_mat = np.array([[float(sigma)]])
    return SdeModel(
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=lambda x: x.copy(),
        control_matrix=lambda x: g_mat,
        diffusion=lambda x: sigma_mat,
        probe=np.array([0.5]),
    )


def scalar_blowup_h() -> SmoothFunction:
    """Safe set x < 1 encoded as h(x) = 1 - x."""
    grad = np.array([-1.0])
    hess = np.zeros((1, 1))
    return SmoothFunction(
        value=lambda x: 1.0 - x[0],
        gradient=lambda x: grad,
        hessian=lambda x: hess,
        name="unit_margin",
    )
