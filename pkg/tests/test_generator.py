"""Generator evaluation, affine decomposition, and barrier chains."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ssk.generator import (
    ChainConstructionError,
    SmoothFunction,
    apply_generator,
    build_chain,
    decompose,
    finite_difference_check,
    sobol_probes,
    validate_smooth_function,
)
from ssk.models import (
    acc_bundle,
    scalar_blowup_h,
    scalar_blowup_system,
    unicycle_bundle,
)
from ssk.certificates import reciprocal_of
from ssk.sde import SdeModel

UNICYCLE_REGION = [[-3.0, 3.0], [-3.0, 3.0], [0.0, 2.0 * math.pi]]


def generator_reference(model, fn, x, u):
    """Independent full-formula oracle: grad.(f+gu) + 0.5 tr(s' H s)."""
    x = np.asarray(x, dtype=float)
    grad = np.asarray(fn.gradient(x), dtype=float)
    hess = np.asarray(fn.hessian(x), dtype=float)
    sig = model.diffusion(x)
    first = grad @ (model.drift(x) + model.control_matrix(x) @ np.asarray(u, float))
    second = 0.5 * np.trace(sig.T @ hess @ sig)
    return float(first + second)


def quadratic_fn():
    return SmoothFunction(
        value=lambda x: float(x @ x),
        gradient=lambda x: 2.0 * x,
        hessian=lambda x: 2.0 * np.eye(x.size),
        name="sumsq",
    )


class TestApplyGenerator:
    def test_zero_diffusion_is_lie_derivative(self):
        model = scalar_blowup_system(sigma=0.0)
        h = scalar_blowup_h()
        # grad(h).(f + g u) with h = 1 - x at x = 0.5, u = 0
        assert apply_generator(model, h, np.array([0.5]), np.zeros(1)) == -0.5
        assert apply_generator(model, h, np.array([0.5]), np.array([2.0])) == -2.5

    def test_affine_function_drops_trace_term(self):
        model = scalar_blowup_system(sigma=1.0)
        h = scalar_blowup_h()
        # Hessian of h vanishes, so sigma never enters
        assert apply_generator(model, h, np.array([0.5]), np.zeros(1)) == -0.5

    def test_reciprocal_barrier_value(self):
        # B = 1/h: dB/dx = 1/h^2, d2B/dx2 = 2/h^3, so at x=0.5, sigma=1:
        # A B = (x+u)/h^2 + sigma^2/h^3 = 0.5/0.25 + 1/0.125 = 10
        model = scalar_blowup_system(sigma=1.0)
        B = reciprocal_of(scalar_blowup_h())
        assert abs(apply_generator(model, B, np.array([0.5]), np.zeros(1)) - 10.0) < 1e-12

    def test_dimension_check(self):
        model = scalar_blowup_system()
        with pytest.raises(ValueError):
            apply_generator(model, scalar_blowup_h(), np.array([0.5]), np.zeros(2))

    def test_linearity_in_control(self):
        bundle = acc_bundle()
        rng = np.random.default_rng(3)
        x = np.array([17.0, 11.0, 90.0])
        for _ in range(20):
            u1, u2 = rng.normal(size=(2, 1))
            lam = rng.uniform()
            mix = apply_generator(bundle.model, bundle.V, x, lam * u1 + (1 - lam) * u2)
            split = lam * apply_generator(bundle.model, bundle.V, x, u1) + (
                1 - lam
            ) * apply_generator(bundle.model, bundle.V, x, u2)
            assert abs(mix - split) < 1e-9 * max(1.0, abs(split))

    def test_linearity_in_function(self):
        model = scalar_blowup_system(sigma=0.7)
        h = scalar_blowup_h()
        q = quadratic_fn()
        lam = 0.37
        combo = SmoothFunction(
            value=lambda x: lam * h.value(x) + (1 - lam) * q.value(x),
            gradient=lambda x: lam * h.gradient(x) + (1 - lam) * q.gradient(x),
            hessian=lambda x: lam * h.hessian(x) + (1 - lam) * q.hessian(x),
        )
        x, u = np.array([0.3]), np.array([0.8])
        direct = apply_generator(model, combo, x, u)
        split = lam * apply_generator(model, h, x, u) + (1 - lam) * apply_generator(
            model, q, x, u
        )
        assert abs(direct - split) < 1e-12


class TestDecompose:
    def test_zero_control_matrix(self):
        model = SdeModel(
            state_dim=2,
            control_dim=2,
            noise_dim=1,
            drift=lambda x: -x,
            control_matrix=lambda x: np.zeros((2, 2)),
            diffusion=lambda x: np.ones((2, 1)),
            probe=np.zeros(2),
        )
        dec = decompose(model, quadratic_fn(), np.array([1.0, 2.0]))
        assert np.array_equal(dec.control_part, np.zeros(2))

    def test_acc_headway_control_coefficient(self):
        bundle = acc_bundle()
        dec = decompose(bundle.model, bundle.h, np.array([18.0, 10.0, 150.0]))
        assert abs(dec.control_part[0] - (-1.8 / 1650.0)) < 1e-15

    def test_unicycle_disk_has_no_direct_control(self):
        # heading control cannot move the radius directly: relative degree >= 2
        bundle = unicycle_bundle()
        dec = decompose(bundle.model, bundle.h, np.array([1.0, 1.0, 0.3]))
        assert dec.control_part[0] == 0.0

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(11)
        bundle = unicycle_bundle()
        for fn in (bundle.h, bundle.b1):
            for _ in range(50):
                x = rng.uniform([-2.0, -2.0, 0.0], [2.0, 2.0, 6.28], size=3)
                u = rng.normal(size=1)
                dec = decompose(bundle.model, fn, x)
                recon = dec.drift_part + float(dec.control_part @ u)
                ref = generator_reference(bundle.model, fn, x, u)
                assert abs(recon - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_exactness_on_acc(self):
        rng = np.random.default_rng(12)
        bundle = acc_bundle()
        for fn in (bundle.h, bundle.V):
            for _ in range(50):
                x = rng.uniform([5.0, 5.0, 10.0], [30.0, 30.0, 200.0])
                u = rng.normal(size=1) * 1e3
                dec = decompose(bundle.model, fn, x)
                recon = dec.drift_part + float(dec.control_part @ u)
                ref = generator_reference(bundle.model, fn, x, u)
                assert abs(recon - ref) <= 1e-12 * max(1.0, abs(ref))


class TestBarrierChain:
    def test_r1_chain_is_just_h(self):
        bundle = acc_bundle()
        chain = build_chain(bundle.model, bundle.h, 1)
        assert chain.relative_degree == 1
        assert chain.levels == (bundle.h,)

    def test_unicycle_level1_closed_form(self):
        # drift-only generator of 9 - x^2 - y^2 with Hessian -2I on (x, y):
        # b1 = -2 v (x cos(t) + y sin(t)) - s1^2 - s2^2
        bundle = unicycle_bundle({"sigma1": 0.1, "sigma2": 0.1})
        chain = build_chain(bundle.model, bundle.h, 2, region=UNICYCLE_REGION)
        v = 2.0
        rng = np.random.default_rng(5)
        for _ in range(32):
            x = rng.uniform([-3, -3, 0], [3, 3, 2 * math.pi])
            expected = -2.0 * v * (x[0] * math.cos(x[2]) + x[1] * math.sin(x[2])) - 0.02
            assert abs(chain.levels[1].value(x) - expected) < 1e-9

    def test_supplied_levels_match_fd_levels(self):
        bundle = unicycle_bundle()
        analytic = build_chain(
            bundle.model, bundle.h, 2, derivative_supplier=[bundle.b1], region=UNICYCLE_REGION
        )
        synthesized = build_chain(bundle.model, bundle.h, 2, region=UNICYCLE_REGION)
        x = np.array([1.2, -0.4, 2.0])
        assert abs(analytic.levels[1].value(x) - synthesized.levels[1].value(x)) < 1e-12
        g_a = analytic.levels[1].gradient(x)
        g_s = synthesized.levels[1].gradient(x)
        assert np.abs(g_a - g_s).max() < 1e-6
        h_a = analytic.levels[1].hessian(x)
        h_s = synthesized.levels[1].hessian(x)
        assert np.abs(h_a - h_s).max() < 1e-4

    def test_top_level_control_appears(self):
        # d(b1)/d(theta) times the heading row of g: 2 v (x sin - y cos) = -4
        bundle = unicycle_bundle()
        chain = bundle.chain(region=UNICYCLE_REGION)
        dec = decompose(bundle.model, chain.levels[1], np.array([1.0, 1.0, 0.0]))
        assert abs(dec.control_part[0] - (-4.0)) < 1e-9

    def test_relative_degree_violation_detected(self):
        # headway h sees the control already at level 0, so r=2 must fail
        bundle = acc_bundle()
        with pytest.raises(ChainConstructionError) as info:
            build_chain(
                bundle.model,
                bundle.h,
                2,
                region=[[5.0, 30.0], [5.0, 30.0], [10.0, 200.0]],
            )
        assert info.value.level == 0

    def test_r3_needs_supplier(self):
        bundle = unicycle_bundle()
        with pytest.raises(ValueError):
            build_chain(bundle.model, bundle.h, 3)

    def test_wrong_supplier_rejected(self):
        bundle = unicycle_bundle()
        bogus = SmoothFunction(
            value=lambda x: 1.0 + bundle.b1.value(x),
            gradient=bundle.b1.gradient,
            hessian=bundle.b1.hessian,
        )
        with pytest.raises(ChainConstructionError):
            build_chain(
                bundle.model, bundle.h, 2, derivative_supplier=[bogus], region=UNICYCLE_REGION
            )


class TestSmoothFunctionValidation:
    def test_valid_functions_pass(self):
        bundle = unicycle_bundle()
        probes = sobol_probes(UNICYCLE_REGION, 16)
        validate_smooth_function(bundle.h, probes)
        validate_smooth_function(bundle.b1, probes)

    def test_wrong_gradient_caught(self):
        bad = SmoothFunction(
            value=lambda x: float(x @ x),
            gradient=lambda x: 3.0 * x,  # should be 2x
            hessian=lambda x: 2.0 * np.eye(x.size),
        )
        with pytest.raises(ValueError):
            validate_smooth_function(bad, np.array([[1.0, 2.0]]))

    def test_asymmetric_hessian_caught(self):
        bad = SmoothFunction(
            value=lambda x: float(x @ x),
            gradient=lambda x: 2.0 * x,
            hessian=lambda x: np.array([[2.0, 1.0], [0.0, 2.0]]),
        )
        with pytest.raises(ValueError):
            validate_smooth_function(bad, np.array([[1.0, 2.0]]))

    def test_sobol_probes_deterministic_and_inside(self):
        region = [[-1.0, 2.0], [0.0, 4.0]]
        a = sobol_probes(region, 32)
        b = sobol_probes(region, 32)
        assert np.array_equal(a, b)
        assert (a[:, 0] >= -1.0).all() and (a[:, 0] <= 2.0).all()
        assert (a[:, 1] >= 0.0).all() and (a[:, 1] <= 4.0).all()


class TestFiniteDifferenceCheck:
    def test_deterministic_linear_function_tight(self):
        model = scalar_blowup_system(sigma=0.0)
        h = scalar_blowup_h()
        report = finite_difference_check(
            model, h, np.array([0.5]), np.zeros(1), [1e-3, 1e-4], samples=200
        )
        # no noise and an affine state map: the quotient is exact
        assert report.passed
        for row in report.rows:
            assert abs(row.mc_estimate - row.analytic) < 1e-9

    def test_gbm_quadratic_function(self):
        # dX = a X dt + s X dW, fn = x^2: A fn = 2 a x^2 + s^2 x^2
        a, s = 0.05, 0.2
        model = SdeModel(
            state_dim=1,
            control_dim=1,
            noise_dim=1,
            drift=lambda x: a * x,
            control_matrix=lambda x: np.zeros((1, 1)),
            diffusion=lambda x: np.array([[s * x[0]]]),
            probe=np.ones(1),
        )
        fn = quadratic_fn()
        report = finite_difference_check(
            model, fn, np.array([1.0]), np.zeros(1), [1e-4], samples=40_000
        )
        assert abs(report.analytic - (2 * a + s * s)) < 1e-12
        assert report.passed

    def test_unicycle_chain_level(self):
        bundle = unicycle_bundle()
        report = finite_difference_check(
            bundle.model,
            bundle.b1,
            np.array([1.0, 1.0, 0.0]),
            np.zeros(1),
            [1e-4],
            samples=40_000,
        )
        assert report.passed
