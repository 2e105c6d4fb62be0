import math

import numpy as np
import pytest

from qbsde.errors import NoConvergence, SmallnessViolated, StageCapExceeded
from qbsde.model import GeneratorSpec, GridSpec, TerminalCondition
from qbsde.paths import generate, terminal_values
from qbsde.regress import BasisSpec
from qbsde.solver import (
    SolutionTriple,
    SolverOptions,
    apply_F,
    make_transform_params,
    problem_from_generator,
    solve,
    solve_chain,
    solve_small,
    split_terminal,
    transform_generator,
    untransform_solution,
)

BASIS = BasisSpec(degree=3)


@pytest.fixture(scope="module")
def ens():
    return generate(GridSpec(T=1.0, n_steps=16, n_paths=8_000, seed=300))


def quad_gen(scale=0.001):
    return GeneratorSpec(
        terminal=TerminalCondition(family="tanh", scale=scale, driver="w1"), gamma_q=1.0
    )


def zero_triple(ens):
    shape = (ens.n_paths, ens.n_steps + 1)
    return SolutionTriple(y=np.zeros(shape), z=np.zeros(shape), zeta=np.zeros(shape))


class TestApplyF:
    def test_zero_data(self, ens):
        gen = GeneratorSpec(terminal=TerminalCondition(family="constant", scale=0.0))
        out = apply_F(zero_triple(ens), gen, ens, None, BASIS)
        assert np.abs(out.y).max() == 0.0
        assert np.abs(out.z).max() <= 1e-12
        assert np.abs(out.zeta).max() <= 1e-12

    def test_martingale_representation(self, ens):
        # terminal effectively equal to W1_T: Y tracks W1, Z near 1, zeta near 0
        gen = GeneratorSpec(
            terminal=TerminalCondition(family="clipped_poly", coeffs=(0.0, 1.0), clip=100.0)
        )
        frozen = zero_triple(ens)
        out = apply_F(frozen, gen, ens, None, BASIS)
        mid = ens.n_steps // 2
        dev = np.abs(out.y[:, mid] - ens.w1_levels[:, mid])
        assert dev.mean() <= 0.02
        assert dev.max() <= 0.2  # extreme-path regression noise
        assert abs(out.z[:, mid].mean() - 1.0) <= 0.02
        assert abs(out.zeta[:, mid].mean()) <= 0.02

    def test_first_iterate_is_conditional_mean(self, ens):
        gen = quad_gen()
        out = apply_F(zero_triple(ens), gen, ens, None, BASIS)
        xi = terminal_values(ens, gen.terminal)
        se = xi.std() / math.sqrt(ens.n_paths)
        assert abs(out.y[0, 0] - xi.mean()) <= 3 * se + 1e-12


class TestSolveSmall:
    def test_zero_terminal_one_iteration(self, ens):
        gen = GeneratorSpec(
            terminal=TerminalCondition(family="constant", scale=0.0), gamma_q=1.0
        )
        sol, trace = solve_small(gen, ens, BASIS, SolverOptions(tol=1e-12))
        assert trace.iterations == 1
        assert trace.converged
        assert np.abs(sol.y).max() == 0.0

    def test_terminal_exact_and_residual(self, ens):
        opts = SolverOptions(tol=1e-9)
        sol, trace = solve_small(quad_gen(), ens, BASIS, opts)
        np.testing.assert_array_equal(sol.y[:, -1], terminal_values(ens, quad_gen().terminal))
        assert sol.residual <= opts.tol
        assert trace.converged
        assert trace.ball_violations == 0
        assert all(r < 1.0 for r in trace.ratios[:2])

    def test_smallness_hard_check(self, ens):
        with pytest.raises(SmallnessViolated):
            solve_small(quad_gen(scale=0.1), ens, BASIS)

    def test_no_convergence_carries_trace(self, ens):
        with pytest.raises(NoConvergence) as err:
            solve_small(quad_gen(), ens, BASIS, SolverOptions(tol=1e-12, max_iter=1))
        assert err.value.trace.iterations == 1
        assert not err.value.trace.converged

    def test_restart_reaches_same_fixed_point(self, ens):
        tol = 1e-8
        a, _ = solve_small(quad_gen(), ens, BASIS, SolverOptions(tol=tol, initial="zero"))
        b, _ = solve_small(quad_gen(), ens, BASIS, SolverOptions(tol=tol, initial="cond-mean"))
        assert np.abs(a.y - b.y).max() <= 3 * tol


class TestTransform:
    def test_identity_transform(self, ens):
        gen = quad_gen()
        params = make_transform_params(ens, 0.0, 0.0)
        problem, weights = transform_generator(gen, params, ens)
        assert weights is None
        np.testing.assert_array_equal(problem.terminal, terminal_values(ens, gen.terminal))
        sol = SolutionTriple(y=np.tanh(ens.w1_levels), z=0.1 * ens.w1_levels, zeta=0.0 * ens.w2_levels)
        back = untransform_solution(sol, params)
        np.testing.assert_array_equal(back.y, sol.y)

    def test_constant_alpha_formulas(self, ens):
        a = 0.4
        gen = GeneratorSpec(
            terminal=TerminalCondition(family="constant", scale=0.3), b=a, g=0.2
        )
        params = make_transform_params(ens, a, 0.0)
        problem, _ = transform_generator(gen, params, ens)
        assert problem.terminal[0] == pytest.approx(0.3 * math.exp(a * ens.grid.T), rel=1e-12)
        np.testing.assert_allclose(
            problem.g_col(ens.n_steps // 2),
            0.2 * math.exp(-a * ens.grid.times[ens.n_steps // 2]),
            rtol=1e-12,
        )

    def test_untransform_constant_field(self, ens):
        a = 0.7
        params = make_transform_params(ens, a, 0.0)
        n1 = ens.n_steps + 1
        sol = SolutionTriple(
            y=np.full((ens.n_paths, n1), 2.0),
            z=np.zeros((ens.n_paths, n1)),
            zeta=np.zeros((ens.n_paths, n1)),
        )
        back = untransform_solution(sol, params)
        np.testing.assert_allclose(back.y[0], 2.0 * np.exp(-a * ens.grid.times), rtol=1e-12)

    def test_round_trip_matches_chain(self, ens):
        gen = GeneratorSpec(
            terminal=TerminalCondition(family="tanh", scale=0.0005, driver="w1"),
            b=0.3,
            c=0.2,
            gamma_q=1.0,
        )
        opts = SolverOptions(tol=1e-10)
        params = make_transform_params(ens, gen.b, gen.c)
        problem, _ = transform_generator(gen, params, ens)
        bar, _ = solve_small(problem, ens, BASIS, opts)
        manual = untransform_solution(bar, params)
        chain = solve_chain(gen, ens, BASIS, opts)
        np.testing.assert_allclose(manual.y, chain.y, atol=1e-9)


class TestSplitTerminal:
    def test_equal_pieces(self):
        tc = TerminalCondition(family="tanh", scale=0.1)
        pieces = split_terminal(tc, 0.03125)
        assert len(pieces) == 4
        assert pieces[0].sup_norm == pytest.approx(0.025)

    def test_zero_terminal(self):
        tc = TerminalCondition(family="constant", scale=0.0)
        assert len(split_terminal(tc, 0.01)) == 1

    def test_large_split_count(self):
        tc = TerminalCondition(family="tanh", scale=1.0)
        assert len(split_terminal(tc, 1.0 / 256.0)) == 320

    def test_unrestricted_threshold(self):
        tc = TerminalCondition(family="tanh", scale=1.0)
        assert len(split_terminal(tc, math.inf)) == 1

    def test_pieces_sum_back(self, ens):
        tc = TerminalCondition(family="tanh", scale=0.1, offset=0.02)
        pieces = split_terminal(tc, 0.03125)
        total = sum(terminal_values(ens, p) for p in pieces)
        np.testing.assert_allclose(total, terminal_values(ens, tc), atol=1e-15)


class TestSolveChain:
    def test_degenerates_to_solve_small_bitwise(self, ens):
        gen = quad_gen()
        opts = SolverOptions(tol=1e-9)
        direct, _ = solve_small(gen, ens, BASIS, opts)
        chain = solve_chain(gen, ens, BASIS, opts)
        assert chain.info["m"] == 1
        np.testing.assert_array_equal(chain.y, direct.y)
        np.testing.assert_array_equal(chain.z, direct.z)

    def test_constant_generator(self, ens):
        c = 0.1
        gen = GeneratorSpec(
            terminal=TerminalCondition(family="tanh", scale=0.2, driver="w1"), a=c
        )
        sol = solve_chain(gen, ens, BASIS, SolverOptions(tol=1e-10))
        xi = terminal_values(ens, gen.terminal)
        se = xi.std() / math.sqrt(ens.n_paths)
        assert abs(sol.y[0, 0] - (xi.mean() + c * ens.grid.T)) <= 3 * se + 1e-12

    def test_two_piece_additivity(self, ens):
        # terminal small enough for a direct solve but above the split
        # safety margin, so the chain uses two stages
        gen = quad_gen(scale=0.0035)
        opts = SolverOptions(tol=1e-10)
        direct, _ = solve_small(gen, ens, BASIS, opts)
        chain = solve_chain(gen, ens, BASIS, opts)
        assert chain.info["m"] == 2
        assert np.abs(chain.y - direct.y).max() <= 1e-5

    def test_stage_cap(self, ens):
        with pytest.raises(StageCapExceeded):
            solve_chain(quad_gen(scale=0.5), ens, BASIS, SolverOptions(max_stages=10))

    def test_terminal_exact_bitwise(self, ens):
        gen = quad_gen(scale=0.02)
        sol = solve_chain(gen, ens, BASIS, SolverOptions(tol=1e-8))
        np.testing.assert_array_equal(sol.y[:, -1], terminal_values(ens, gen.terminal))


class TestSolve:
    def test_zero_everything(self):
        gen = GeneratorSpec(terminal=TerminalCondition(family="constant", scale=0.0))
        grid = GridSpec(T=1.0, n_steps=8, n_paths=2_000, seed=9)
        sol, traces = solve(gen, grid, BASIS)
        assert np.abs(sol.y).max() == 0.0
        assert sol.info["certificate"] == {"applicable": False}
        assert len(traces) == 1

    def test_linear_matches_oracle(self):
        from qbsde.analysis import oracle_linear

        gen = GeneratorSpec(
            terminal=TerminalCondition(family="tanh", scale=0.2, driver="w1"), a=0.1, b=0.5
        )
        grid = GridSpec(T=1.0, n_steps=16, n_paths=8_000, seed=10)
        sol, _ = solve(gen, grid, BASIS, SolverOptions(tol=1e-10))
        ref = oracle_linear(gen.b, gen.a, generate(grid), gen.terminal, BASIS)
        comb = 3.0 * float(sol.y_se[0]) + 1e-10
        assert abs(float(sol.y[0, 0]) - float(ref[0, 0])) <= comb
