"""Min-norm QP solver: spec cases, KKT certificates, and the grid oracle."""

from __future__ import annotations

import math

import numpy as np
import pytest

from _qp_oracle import grid_oracle, random_problem, resolution_allowance
from ssk.certificates import AffineConstraint
from ssk.qp import QpProblem, saturate, solve


class TestSpecExamples:
    def test_unconstrained_minimum(self):
        sol = solve(QpProblem(2, [], slack_present=True))
        assert np.array_equal(sol.u, np.zeros(2))
        assert sol.slack == 0.0
        assert sol.objective == 0.0
        assert sol.status == "optimal"
        assert sol.active_set == ()

    def test_halfspace_projection(self):
        row = AffineConstraint(np.array([1.0]), 3.0, ">=", "floor")
        sol = solve(QpProblem(1, [row]))
        assert sol.u[0] == 3.0
        assert sol.objective == 4.5
        assert sol.active_set == ("floor",)
        assert sol.kkt_residual <= 1e-8

    def test_conflicting_rows_reported(self):
        rows = [
            AffineConstraint(np.array([1.0]), 3.0, ">=", "floor"),
            AffineConstraint(np.array([1.0]), -1.0, "<=", "ceiling"),
        ]
        sol = solve(QpProblem(1, rows))
        assert sol.status == "infeasible"
        assert sol.infeasible_rows == ("floor", "ceiling")
        assert math.isnan(sol.objective)

    def test_minimal_conflict_is_irreducible(self):
        rows = [
            AffineConstraint(np.array([1.0, 0.0]), -5.0, ">=", "loose"),
            AffineConstraint(np.array([0.0, 1.0]), 2.0, ">=", "lo"),
            AffineConstraint(np.array([0.0, 1.0]), 1.0, "<=", "hi"),
        ]
        sol = solve(QpProblem(2, rows))
        assert sol.status == "infeasible"
        assert sol.infeasible_rows == ("lo", "hi")

    def test_box_infeasibility(self):
        rows = [AffineConstraint(np.array([1.0]), 3.0, ">=", "floor")]
        sol = solve(QpProblem(1, rows, box=[(-1.0, 1.0)]))
        assert sol.status == "infeasible"
        assert set(sol.infeasible_rows) == {"floor", "box_hi[0]"}


class TestKktCertificates:
    @pytest.mark.parametrize("force_python", [False, True])
    def test_random_instances(self, force_python):
        rng = np.random.default_rng(100)
        optimal = 0
        for _ in range(300):
            prob, _, _ = random_problem(rng)
            sol = solve(prob, _force_python=force_python)
            if sol.status != "optimal":
                continue
            optimal += 1
            assert sol.kkt_residual <= 1e-8
            for row in prob.rows:
                assert row.violation(sol.u, sol.slack or 0.0) <= 1e-7
            if prob.box is not None:
                for i, (lo, hi) in enumerate(prob.box):
                    assert lo - 1e-9 <= sol.u[i] <= hi + 1e-9
        assert optimal > 200

    def test_kernel_matches_python_bitwise(self):
        rng = np.random.default_rng(101)
        for _ in range(500):
            prob, _, _ = random_problem(rng, force_feasible=bool(rng.integers(0, 2)))
            a = solve(prob)
            b = solve(prob, _force_python=True)
            assert a.status == b.status
            if a.status == "optimal":
                assert np.array_equal(a.u, b.u)
                assert a.objective == b.objective
                assert a.active_set == b.active_set
                assert a.kkt_residual == b.kkt_residual


class TestOracleEquivalence:
    def test_small_sample_against_grid(self):
        rng = np.random.default_rng(102)
        checked = 0
        for _ in range(60):
            prob, anchor, r_ball = random_problem(rng)
            sol = solve(prob)
            if sol.status != "optimal":
                continue
            oracle = grid_oracle(prob)
            if oracle is None:
                continue
            oracle_obj, _, cell_diag = oracle
            # every oracle point is feasible, so it can only overshoot
            assert sol.objective <= oracle_obj + 1e-9
            allowance = resolution_allowance(prob, sol, anchor, r_ball, cell_diag)
            assert oracle_obj - sol.objective <= allowance
            checked += 1
        assert checked >= 30


class TestInvariances:
    def test_row_scaling_covariance(self):
        rng = np.random.default_rng(103)
        for _ in range(50):
            prob, _, _ = random_problem(rng, max_rows=3)
            if not prob.rows:
                continue
            sol = solve(prob)
            scaled_rows = [
                AffineConstraint(
                    7.5 * r.coeffs, 7.5 * r.rhs, r.sense, r.label, 7.5 * r.slack_coeff
                )
                for r in prob.rows
            ]
            sol2 = solve(
                QpProblem(
                    prob.num_controls,
                    scaled_rows,
                    slack_present=prob.slack_present,
                    weight_u=prob.weight_u,
                    box=prob.box,
                )
            )
            assert sol.status == sol2.status
            if sol.status == "optimal":
                assert np.allclose(sol.u, sol2.u, atol=1e-9)
                assert abs(sol.objective - sol2.objective) < 1e-9

    def test_determinism_and_tie_break(self):
        # duplicate rows describe the same optimum; the lowest index wins
        rows = [
            AffineConstraint(np.array([1.0]), 2.0, ">=", "first"),
            AffineConstraint(np.array([2.0]), 4.0, ">=", "second"),
        ]
        sol = solve(QpProblem(1, rows))
        assert sol.u[0] == 2.0
        assert sol.active_set == ("first",)
        repeat = solve(QpProblem(1, rows))
        assert repeat.active_set == sol.active_set
        assert np.array_equal(repeat.u, sol.u)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            QpProblem(1, [], weight_u=0.0)
        with pytest.raises(ValueError):
            QpProblem(2, [], weight_u=[1.0])
        with pytest.raises(ValueError):
            QpProblem(1, [], box=[(2.0, 1.0)])


class TestSaturate:
    def test_inside_box_unchanged(self):
        u = np.array([0.3, -0.7])
        out = saturate(u, [(-1.0, 1.0), (-1.0, 1.0)])
        assert np.array_equal(out, u)

    def test_scaled_control_clamp(self):
        # braking demand at -0.7 of normalized weight clamps to the -0.5 floor
        Mg = 1650.0 * 9.81
        u = np.array([-0.7 * Mg])
        out = saturate(u, [(-0.5 * Mg, None)])
        assert out[0] == -0.5 * Mg

    def test_boundary_exact(self):
        out = saturate(np.array([-1.0]), [(-1.0, 1.0)])
        assert out[0] == -1.0

    def test_one_sided(self):
        out = saturate(np.array([5.0]), [(None, 2.0)])
        assert out[0] == 2.0
