"""Control-affine SDE models and Euler-Maruyama sample-path integration.

The system class is dX = (f(X) + g(X) u) dt + sigma(X) dW with a bounded
measurable control u and a d-dimensional Brownian motion W.  Integration is
explicit Euler-Maruyama on a fixed grid; Brownian increments come from a
counter-addressed Philox stream so that trajectories are reproducible and
independent across ensemble members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.random import Philox

__all__ = [
    "State",
    "SdeModel",
    "NoiseStream",
    "Trajectory",
    "IntegrationOverflowError",
    "ControllerStepError",
    "gaussian_increments",
    "gaussian_increment_block",
    "euler_maruyama_step",
    "simulate",
]

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi


class IntegrationOverflowError(ArithmeticError):
    """A step produced a non-finite state.  Carries the offending state."""

    def __init__(self, message: str, state: "State"):
        super().__init__(message)
        self.state = state

    def __reduce__(self):  # keep picklable across worker-pool boundaries
        return (self.__class__, (self.args[0], self.state))


class ControllerStepError(RuntimeError):
    """Controller failure during simulation, annotated with the step index."""

    def __init__(self, step: int, time: float, cause: BaseException):
        super().__init__(f"controller failed at step {step} (t={time:.6g}): {cause}")
        self.step = step
        self.time = time
        self.cause = cause

    def __reduce__(self):
        return (self.__class__, (self.step, self.time, self.cause))


@dataclass(frozen=True)
class State:
    """State vector plus simulation time."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if not np.isfinite(v).all():
            raise ValueError(f"non-finite state entries: {v}")
        if self.time < 0.0:
            raise ValueError(f"negative time: {self.time}")

    @classmethod
    def _unchecked(cls, values: np.ndarray, time: float) -> "State":
        # integrator-internal fast path; caller guarantees finiteness
        obj = object.__new__(cls)
        object.__setattr__(obj, "values", values)
        object.__setattr__(obj, "time", time)
        return obj


@dataclass(frozen=True)
class SdeModel:
    """Control-affine diffusion dX = (f(X) + g(X)u) dt + sigma(X) dW.

    ``drift`` maps a state vector to shape (n,), ``control_matrix`` to
    (n, p) and ``diffusion`` to (n, d).  Shapes and finiteness are checked
    once at construction against ``probe``, a representative point of the
    operating region.
    """

    state_dim: int
    control_dim: int
    noise_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    control_matrix: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    probe: np.ndarray = field(repr=False)

    def __post_init__(self):
        n, p, d = self.state_dim, self.control_dim, self.noise_dim
        if min(n, p, d) < 1:
            raise ValueError(f"dimensions must be positive, got n={n} p={p} d={d}")
        probe = np.asarray(self.probe, dtype=float)
        object.__setattr__(self, "probe", probe)
        if probe.shape != (n,):
            raise ValueError(f"probe shape {probe.shape} != ({n},)")
        for name, fn, shape in (
            ("drift", self.drift, (n,)),
            ("control_matrix", self.control_matrix, (n, p)),
            ("diffusion", self.diffusion, (n, d)),
        ):
            out = np.asarray(fn(probe), dtype=float)
            if out.shape != shape:
                raise ValueError(f"{name}(probe) has shape {out.shape}, expected {shape}")
            if not np.isfinite(out).all():
                raise ValueError(f"{name}(probe) returned non-finite values")


@dataclass(frozen=True)
class NoiseStream:
    """Addressable Gaussian increment source.

    (seed, stream_id) selects an independent Philox stream; ``counter``
    addresses the increment block for one integration step.  Draws are a
    pure function of (seed, stream_id, counter), so trajectories can be
    generated in any order, in parallel, with bit-identical results.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def advanced(self, steps: int = 1) -> "NoiseStream":
        return replace(self, counter=self.counter + steps)


def _word_layout(d: int) -> tuple[int, int]:
    """(words used, Philox blocks reserved) per step for d increments."""
    words = 2 * ((d + 1) // 2)  # Box-Muller consumes uniforms in pairs
    blocks = (words + 3) // 4  # Philox emits 4 uint64 words per block
    return words, blocks


def _box_muller(words: np.ndarray, d: int) -> np.ndarray:
    """Map raw uint64 words (last axis even-sized) to d standard normals."""
    u = ((words >> np.uint64(11)) + np.uint64(1)) * 2.0**-53  # (0, 1]
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = _TWO_PI * u2
    z = np.empty(u.shape, dtype=float)
    z[..., 0::2] = radius * np.cos(angle)
    z[..., 1::2] = radius * np.sin(angle)
    return z[..., :d]


def gaussian_increments(stream: NoiseStream, d: int, dt: float) -> np.ndarray:
    """Draw the d-dimensional Brownian increment block at ``stream.counter``.

    Returns d independent Normal(0, dt) draws.  Deterministic given
    (seed, stream_id, counter); distinct counters use disjoint Philox
    counter ranges, distinct stream_ids distinct keys.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if d < 1:
        raise ValueError(f"d must be positive, got {d}")
    words, blocks = _word_layout(d)
    bg = Philox(
        key=[stream.seed & _MASK64, stream.stream_id & _MASK64],
        counter=[(stream.counter * blocks) & _MASK64, 0, 0, 0],
    )
    raw = bg.random_raw(4 * blocks)[:words]
    return _box_muller(raw, d) * math.sqrt(dt)


def gaussian_increment_block(stream: NoiseStream, d: int, dt: float, count: int) -> np.ndarray:
    """Increments for ``count`` consecutive steps starting at ``stream.counter``.

    Row k equals gaussian_increments(stream.advanced(k), d, dt) bit-exactly;
    this is the fast path for whole-trajectory integration.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    if count == 0:
        return np.empty((0, d))
    words, blocks = _word_layout(d)
    bg = Philox(
        key=[stream.seed & _MASK64, stream.stream_id & _MASK64],
        counter=[(stream.counter * blocks) & _MASK64, 0, 0, 0],
    )
    raw = bg.random_raw(4 * blocks * count).reshape(count, 4 * blocks)[:, :words]
    return _box_muller(raw, d) * math.sqrt(dt)


def _step_values(
    model: SdeModel, xv: np.ndarray, u: np.ndarray, dw: np.ndarray, dt: float
) -> list[float]:
    """Scalar-ordered Euler-Maruyama update shared by the step function and
    the rollout loop, so both produce bit-identical states.

    new_i = x_i + (f_i + sum_j g_ij u_j) * dt + sum_k sigma_ik dw_k
    """
    n = model.state_dim
    fl = np.asarray(model.drift(xv), dtype=float).tolist()
    gl = np.asarray(model.control_matrix(xv), dtype=float).tolist()
    sl = np.asarray(model.diffusion(xv), dtype=float).tolist()
    ul = u.tolist()
    dwl = dw.tolist()
    p = model.control_dim
    d = model.noise_dim
    xl = xv.tolist()
    out = [0.0] * n
    for i in range(n):
        mu = fl[i]
        gi = gl[i]
        for j in range(p):
            mu += gi[j] * ul[j]
        diff = 0.0
        si = sl[i]
        for k in range(d):
            diff += si[k] * dwl[k]
        out[i] = xl[i] + mu * dt + diff
    return out


def euler_maruyama_step(
    model: SdeModel, x: State, u: np.ndarray, dw: np.ndarray, dt: float
) -> State:
    """One explicit step: x + (f(x) + g(x)u) dt + sigma(x) dw.

    With sigma identically zero the diffusion term contributes an exact
    additive zero, so the scheme reduces to explicit Euler on the ODE.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    u = np.asarray(u, dtype=float)
    dw = np.asarray(dw, dtype=float)
    if u.shape != (model.control_dim,):
        raise ValueError(f"control shape {u.shape} != ({model.control_dim},)")
    if dw.shape != (model.noise_dim,):
        raise ValueError(f"increment shape {dw.shape} != ({model.noise_dim},)")
    new = _step_values(model, x.values, u, dw, dt)
    t_new = x.time + dt
    for v in new:
        if not math.isfinite(v):
            arr = np.nan_to_num(np.array(new), nan=0.0, posinf=0.0, neginf=0.0)
            raise IntegrationOverflowError(
                f"non-finite state after step at t={t_new:.6g}: {new}",
                State(arr, t_new),
            )
    return State(np.array(new), t_new)


@dataclass
class Trajectory:
    """A sample path on a fixed grid.

    ``exit_time`` is the first grid time at which the exit test failed
    (h <= 0 for the safety harness); ``safe`` is true iff it never did.
    """

    states: list[State]
    controls: list[np.ndarray]
    dt: float
    exit_time: Optional[float] = None
    safe: bool = True

    def __post_init__(self):
        if len(self.controls) != len(self.states) - 1:
            raise ValueError(
                f"{len(self.controls)} controls for {len(self.states)} states"
            )
        if self.safe != (self.exit_time is None):
            raise ValueError("safe must hold exactly when exit_time is absent")

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def values(self) -> np.ndarray:
        return np.array([s.values for s in self.states])


def simulate(
    model: SdeModel,
    controller: Callable[[State], np.ndarray],
    x0: State,
    T: float,
    dt: float,
    stream: NoiseStream,
    stop_on_exit: bool = True,
    exit_test: Optional[Callable[[State], bool]] = None,
) -> Trajectory:
    """Roll out one controlled sample path over [0, T].

    The controller is applied zero-order-hold over each step.  ``exit_test``
    is evaluated at the initial state and after every step; the first state
    failing it fixes ``exit_time``.  With ``stop_on_exit`` the path is
    truncated there, otherwise integration continues to T with safe=False.
    Controller exceptions are re-raised as ControllerStepError with the
    step index attached.
    """
    if dt <= 0.0 or T < dt:
        raise ValueError(f"need T >= dt > 0, got T={T} dt={dt}")
    n_steps = int(round(T / dt))
    dws = gaussian_increment_block(stream, model.noise_dim, dt, n_steps)

    states = [x0]
    controls: list[np.ndarray] = []
    exit_time: Optional[float] = None
    x = x0
    if exit_test is not None and not exit_test(x):
        exit_time = x.time
        if stop_on_exit:
            return Trajectory(states, controls, dt, exit_time, False)
    # shares _step_values with euler_maruyama_step, so rollouts are
    # bit-identical to composing the public step function
    u_shape = (model.control_dim,)
    for k in range(n_steps):
        try:
            u = np.asarray(controller(x), dtype=float)
        except IntegrationOverflowError:
            raise
        except Exception as exc:
            raise ControllerStepError(k, x.time, exc) from exc
        if u.shape != u_shape:
            raise ControllerStepError(
                k, x.time, ValueError(f"control shape {u.shape} != {u_shape}")
            )
        new = _step_values(model, x.values, u, dws[k], dt)
        t_new = x.time + dt
        finite = True
        for v in new:
            if not math.isfinite(v):
                finite = False
                break
        if not finite:
            arr = np.nan_to_num(np.array(new), nan=0.0, posinf=0.0, neginf=0.0)
            raise IntegrationOverflowError(
                f"non-finite state after step at t={t_new:.6g}: {new}",
                State(arr, t_new),
            )
        x = State._unchecked(np.array(new), t_new)
        states.append(x)
        controls.append(u)
        if exit_time is None and exit_test is not None and not exit_test(x):
            exit_time = x.time
            if stop_on_exit:
                break
    return Trajectory(states, controls, dt, exit_time, exit_time is None)
