from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from splitkit.errors import DimensionMismatchError, NumericalError, ParameterError
from splitkit.modeling import ProblemSpec, SolverConfig
from splitkit.operators import (
    BoxBounds,
    ResolventOp,
    identity_map,
    project_box,
    prox_l1,
    prox_op,
    shifted_identity_op,
    zero_op,
)
from splitkit.splitting import (
    SolverState,
    check_averaged_inequality,
    extract_solution,
    fixed_point_from_solution,
    initial_state,
    malitsky_tam_step,
    residual_norm_gamma,
    run,
    step,
)

from instances import affine_instance, random_state, validated


def _toy_spec():
    # 0 = (x - 1) + (x - 3) + x has the unique solution x = 4/3 with dual 4/3
    return ProblemSpec(
        primal_ops=[shifted_identity_op([1.0]), shifted_identity_op([3.0])],
        composed_ops=[shifted_identity_op([0.0])],
        linear_maps=[identity_map(1)],
    )


def _zero_spec(n, m, dim):
    return ProblemSpec(
        primal_ops=[zero_op(dim) for _ in range(n)],
        composed_ops=[zero_op(dim) for _ in range(m)],
        linear_maps=[identity_map(dim) for _ in range(m)],
    )


class TestStep:
    def test_hand_computed_iteration(self):
        spec = _toy_spec()
        config = validated(spec, lam=0.5, gamma=1.0)
        state, diag = step(initial_state(spec), spec, config)
        assert diag.x[0][0] == pytest.approx(0.5)
        assert diag.x[1][0] == pytest.approx(1.75)
        assert diag.y[0][0] == pytest.approx(1.125)
        assert state.z[0][0] == pytest.approx(0.625)
        assert state.v[0][0] == pytest.approx(-0.3125)
        assert state.iteration == 1

    def test_zero_operators_fix_origin(self):
        spec = _zero_spec(n=3, m=2, dim=2)
        config = validated(spec, lam=0.5, gamma=0.5)
        state, diag = step(initial_state(spec), spec, config)
        assert diag.residual_gamma == 0.0
        assert all(np.array_equal(z, np.zeros(2)) for z in state.z)
        assert all(np.array_equal(v, np.zeros(2)) for v in state.v)

    def test_zero_operators_no_dual_any_start(self):
        spec = ProblemSpec(primal_ops=[zero_op(3), zero_op(3)])
        config = validated(spec, lam=0.7, gamma=1.0)
        rng = np.random.default_rng(0)
        state = initial_state(spec, z=[rng.standard_normal(3)])
        _, diag = step(state, spec, config)
        assert diag.residual_gamma == 0.0

    def test_diagnostics_weighted_norm_identity(self):
        instance = affine_instance(1, n=3, m=2)
        config = validated(instance.spec, lam=0.5, gamma=instance.gamma_max / 3)
        rng = np.random.default_rng(2)
        state = random_state(instance.spec, rng)
        _, diag = step(state, instance.spec, config)
        assert diag.residual_gamma**2 == pytest.approx(
            diag.residual_primal**2 + diag.residual_dual**2 / config.gamma, rel=1e-12
        )

    def test_detects_nan_with_stage_name(self):
        bad = ResolventOp(lambda p, s: np.full_like(p, np.nan), 1)
        spec = ProblemSpec(
            primal_ops=[shifted_identity_op([1.0]), bad],
            composed_ops=[shifted_identity_op([0.0])],
            linear_maps=[identity_map(1)],
        )
        config = validated(spec, lam=0.5, gamma=1.0)
        with pytest.raises(NumericalError) as info:
            step(initial_state(spec), spec, config)
        assert info.value.stage == "x_2"

    def test_state_shape_mismatch(self):
        spec = _toy_spec()
        config = validated(spec, lam=0.5, gamma=1.0)
        bad = SolverState([np.zeros(1), np.zeros(1)], [np.zeros(1)])
        with pytest.raises(DimensionMismatchError):
            step(bad, spec, config)

    def test_single_primal_operator_scheme(self):
        # n = 1: 0 = (x - c) + L^T(Lx - d) solved by (I + L^T L) x = c + L^T d
        rng = np.random.default_rng(3)
        c = rng.standard_normal(3)
        d = rng.standard_normal(2)
        mat = rng.standard_normal((2, 3))
        from splitkit.operators import matrix_map

        spec = ProblemSpec(
            primal_ops=[shifted_identity_op(c)],
            composed_ops=[shifted_identity_op(d)],
            linear_maps=[matrix_map(mat)],
        )
        gamma = 1.0 / spec.linear_norm_bound_sq()
        config = SolverConfig(
            lam=0.9, gamma=gamma, max_iterations=20000, residual_tolerance=1e-12
        )
        solution, trace = run(spec, config)
        expected = np.linalg.solve(np.eye(3) + mat.T @ mat, c + mat.T @ d)
        assert np.max(np.abs(solution.x_bar - expected)) <= 1e-9
        assert np.max(np.abs(solution.u_bar[0] - (mat @ expected - d))) <= 1e-9


class TestRun:
    def test_huge_tolerance_stops_after_one_iteration(self):
        spec = _toy_spec()
        config = SolverConfig(lam=0.5, gamma=1.0, max_iterations=50, residual_tolerance=1e6)
        _, trace = run(spec, config)
        assert len(trace) == 1

    def test_converges_to_closed_form(self):
        spec = _toy_spec()
        config = SolverConfig(
            lam=0.9, gamma=1.0, max_iterations=2000, residual_tolerance=1e-12
        )
        solution, trace = run(spec, config)
        assert abs(solution.x_bar[0] - 4.0 / 3.0) <= 1e-10
        assert abs(solution.u_bar[0][0] - 4.0 / 3.0) <= 1e-10
        residuals = [d.residual_gamma for d in trace]
        assert all(b <= a + 1e-12 for a, b in zip(residuals, residuals[1:]))

    def test_budget_exhaustion_is_not_an_error(self):
        spec = _toy_spec()
        config = SolverConfig(lam=0.9, gamma=1.0, max_iterations=3, residual_tolerance=0.0)
        _, trace = run(spec, config)
        assert len(trace) == 3
        assert trace[-1].residual_gamma > 0.0

    def test_initial_state_not_mutated(self):
        spec = _toy_spec()
        start = initial_state(spec, z=[[5.0]], v=[[2.0]])
        config = SolverConfig(lam=0.9, gamma=1.0, max_iterations=10)
        run(spec, config, initial=start)
        assert start.z[0][0] == 5.0 and start.v[0][0] == 2.0

    def test_consensus_and_dual_recovery_at_convergence(self):
        instance = affine_instance(11, n=4, m=2)
        spec = instance.spec
        config = validated(spec, lam=0.9, gamma=instance.gamma_max)
        # drive the solver and inspect the x chain once the residual is small
        state = initial_state(spec)
        for _ in range(100000):
            state, diag = step(state, spec, config)
            if diag.residual_gamma <= 1e-8:
                break
        spread = max(
            float(np.max(np.abs(xi - diag.x[0]))) for xi in diag.x
        )
        assert spread <= 1e-6
        for j, lin in enumerate(spec.linear_maps):
            duals = [
                config.gamma * lin.forward(xi) - state.v[j] for xi in diag.x
            ]
            worst = max(
                float(np.max(np.abs(a - b))) for a in duals for b in duals
            )
            assert worst <= 1e-6


class TestExtractSolution:
    def test_toy_fixed_point_values(self):
        spec = _toy_spec()
        config = SolverConfig(
            lam=0.9, gamma=1.0, max_iterations=5000, residual_tolerance=1e-13
        )
        solution, _ = run(spec, config)
        assert solution.x_bar[0] == pytest.approx(4.0 / 3.0, abs=1e-10)
        # dual consistency: -u equals the sum of the two primal slopes at x
        x = solution.x_bar[0]
        assert -solution.u_bar[0][0] == pytest.approx((x - 1.0) + (x - 3.0), abs=1e-9)

    def test_zero_problem_extracts_zero(self):
        spec = _zero_spec(n=2, m=1, dim=2)
        config = validated(spec, lam=0.5, gamma=1.0)
        solution = extract_solution(initial_state(spec), spec, config)
        assert np.array_equal(solution.x_bar, np.zeros(2))
        assert np.array_equal(solution.u_bar[0], np.zeros(2))

    def test_no_dual_block_gives_empty_list(self):
        spec = ProblemSpec(primal_ops=[shifted_identity_op([2.0]), zero_op(1)])
        config = validated(spec, lam=0.5, gamma=1.0)
        solution = extract_solution(initial_state(spec), spec, config)
        assert solution.u_bar == []
        assert solution.x_bar[0] == pytest.approx(1.0)  # J_{A_1}(0) = (0+2)/2


class TestFixedPointFromSolution:
    def test_toy_construction_literal_values(self):
        spec = _toy_spec()
        config = validated(spec, lam=0.9, gamma=1.0)
        x = np.array([4.0 / 3.0])
        u = [np.array([4.0 / 3.0])]
        a = [np.array([1.0 / 3.0]), np.array([4.0 / 3.0 - 3.0])]
        state = fixed_point_from_solution(x, u, a, spec, config)
        assert state.z[0][0] == pytest.approx(5.0 / 3.0)
        assert state.v[0][0] == pytest.approx(1.0 * 4.0 / 3.0 - 4.0 / 3.0)
        new_state, _ = step(state, spec, config)
        assert residual_norm_gamma(state, new_state, config.gamma) <= 1e-12

    def test_zero_solution_zero_state(self):
        spec = _zero_spec(n=2, m=1, dim=3)
        config = validated(spec, lam=0.5, gamma=1.0)
        state = fixed_point_from_solution(
            np.zeros(3), [np.zeros(3)], [np.zeros(3), np.zeros(3)], spec, config
        )
        assert all(np.array_equal(z, np.zeros(3)) for z in state.z)
        assert all(np.array_equal(v, np.zeros(3)) for v in state.v)
        new_state, diag = step(state, spec, config)
        assert diag.residual_gamma == 0.0

    def test_three_block_chain_with_arbitrary_split(self):
        # any decomposition a_1 + a_2 + a_3 = -sum L^T u with a_i in A_i(x)
        # must encode a fixed point; for shifted identities the a_i are forced,
        # so perturbing the middle term must break it while the true one holds
        instance = affine_instance(21, n=3, m=1)
        spec = instance.spec
        config = validated(spec, lam=0.9, gamma=instance.gamma_max)
        state = fixed_point_from_solution(
            instance.x_solution, instance.u_solution, instance.a_decomposition,
            spec, config,
        )
        new_state, _ = step(state, spec, config)
        assert residual_norm_gamma(state, new_state, config.gamma) <= 1e-12


class TestResidualNormGamma:
    def test_equal_states_zero(self):
        a = SolverState([np.array([1.0, 2.0])], [np.array([3.0])])
        assert residual_norm_gamma(a, a, 0.7) == 0.0

    def test_pythagoras(self):
        old = SolverState([np.array([0.0, 0.0])], [np.array([0.0])])
        new = SolverState([np.array([3.0, 0.0])], [np.array([4.0])])
        assert residual_norm_gamma(old, new, 1.0) == pytest.approx(5.0)

    def test_gamma_weighting(self):
        old = SolverState([np.array([0.0])], [np.array([0.0])])
        new = SolverState([np.array([0.0])], [np.array([1.0])])
        assert residual_norm_gamma(old, new, 0.25) == pytest.approx(2.0)

    def test_nonpositive_gamma(self):
        a = SolverState([np.array([0.0])], [])
        with pytest.raises(ParameterError):
            residual_norm_gamma(a, a, 0.0)


class TestMalitskyTamEquivalence:
    def _mixed_ops(self, rng, count, dim):
        ops = []
        for index in range(count):
            kind = index % 3
            if kind == 0:
                ops.append(shifted_identity_op(rng.standard_normal(dim)))
            elif kind == 1:
                weight = float(rng.uniform(0.2, 1.5))
                ops.append(prox_op(lambda p, s, w=weight: prox_l1(p, w * s), dim))
            else:
                lo = float(rng.uniform(-1.0, 0.0))
                hi = float(rng.uniform(0.1, 1.5))
                box = BoxBounds(lo, hi)
                ops.append(prox_op(lambda p, s, b=box: project_box(p, b), dim))
        return ops

    @pytest.mark.parametrize("count", [3, 4, 6])
    def test_matches_general_step_at_identity_coupling(self, count):
        rng = np.random.default_rng(count)
        dim = 3
        ops = self._mixed_ops(rng, count, dim)
        spec = ProblemSpec(
            primal_ops=ops[:-1],
            composed_ops=[ops[-1]],
            linear_maps=[identity_map(dim)],
        )
        config = validated(spec, lam=0.6, gamma=1.0)
        start = [rng.standard_normal(dim) for _ in range(count - 1)]
        state = initial_state(spec, z=start[:-1], v=[start[-1]])
        blocks = [b.copy() for b in start]
        for _ in range(50):
            state, _ = step(state, spec, config)
            blocks = malitsky_tam_step(blocks, ops, 0.6)
            deviation = max(
                float(np.max(np.abs(a - b)))
                for a, b in zip(state.z + state.v, blocks)
            )
            assert deviation <= 1e-12

    def test_zero_operators_fixed(self):
        ops = [zero_op(2) for _ in range(4)]
        blocks = [np.zeros(2) for _ in range(3)]
        out = malitsky_tam_step(blocks, ops, 0.5)
        assert all(np.array_equal(b, np.zeros(2)) for b in out)

    def test_two_operators_solve_the_pair(self):
        # the 2-operator case: iterate to a fixed point and check the
        # extracted x zeroes A_1 + A_2 for shifted identities
        c1, c2 = np.array([0.8]), np.array([-2.0])
        ops = [shifted_identity_op(c1), shifted_identity_op(c2)]
        blocks = [np.zeros(1)]
        for _ in range(400):
            blocks = malitsky_tam_step(blocks, ops, 0.5)
        x = ops[0].eval(blocks[0], 1.0)
        assert np.max(np.abs(x - (c1 + c2) / 2.0)) <= 1e-10
        # fixed-point pattern x = J_{A_1}(w) = J_{A_2}(2x - w)
        assert np.max(np.abs(x - ops[1].eval(2 * x - blocks[0], 1.0))) <= 1e-10

    def test_wrong_block_count_rejected(self):
        with pytest.raises(DimensionMismatchError):
            malitsky_tam_step([np.zeros(1)], [zero_op(1)] * 3, 0.5)


class TestAveragedInequality:
    def test_equal_points_zero_slack(self):
        instance = affine_instance(31, n=3, m=2)
        config = validated(instance.spec, lam=0.5, gamma=instance.gamma_max)
        rng = np.random.default_rng(0)
        point = random_state(instance.spec, rng)
        slack = check_averaged_inequality(instance.spec, config, point, point.copy())
        assert slack == pytest.approx(0.0, abs=1e-14)

    def test_zero_operators_affine_map(self):
        spec = _zero_spec(n=2, m=1, dim=2)
        config = validated(spec, lam=0.5, gamma=1.0)
        rng = np.random.default_rng(1)
        worst = np.inf
        for _ in range(1000):
            a = random_state(spec, rng)
            b = random_state(spec, rng)
            worst = min(worst, check_averaged_inequality(spec, config, a, b))
        assert worst >= -1e-10

    def test_toy_problem_slack_nonnegative(self):
        spec = _toy_spec()
        config = validated(spec, lam=0.9, gamma=1.0)
        rng = np.random.default_rng(2)
        worst = np.inf
        for _ in range(1000):
            a = random_state(spec, rng, spread=5.0)
            b = random_state(spec, rng, spread=5.0)
            worst = min(worst, check_averaged_inequality(spec, config, a, b))
        assert worst >= -1e-10


class TestConcurrency:
    def test_parallel_runs_match_serial(self):
        instance = affine_instance(41, n=3, m=1)
        config = SolverConfig(
            lam=0.8, gamma=instance.gamma_max, max_iterations=200,
            residual_tolerance=0.0,
        )

        def solve(_):
            solution, trace = run(instance.spec, config)
            return solution.x_bar, trace[-1].residual_gamma

        serial = solve(None)
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(solve, range(4)))
        for x, residual in results:
            assert np.array_equal(x, serial[0])
            assert residual == serial[1]
