from collections import deque
from dataclasses import replace

import numpy as np
from pytest import approx, mark, raises

from betheadmm.datagen import potts_grid3d, random_tree_mrf
from betheadmm.decomposition import (
    DecompositionPlan,
    edge_decomposition,
    split_potentials,
    tree_cover,
)
from betheadmm.mrf import PairwiseMRF, Pseudomarginal, layout_violation, to_cost
from betheadmm.oracles import binary_lp_optimum, brute_force_map
from betheadmm.solver import (
    CONVERGED,
    MAX_ITERS_REACHED,
    ConfigError,
    IterationTrace,
    SolverConfig,
    TraceRow,
    TreeWorkers,
    bench,
    bethe_parameters,
    bethe_step_m,
    centered_duals,
    converged,
    dual_bound,
    dual_residual,
    ergodic_objective,
    init_state,
    primal_residual,
    relative_error,
    residuals,
    run,
    update_lambda,
    update_mu,
)
from betheadmm.trees import max_product_map


def prepared(mrf, plan, rho=1.0):
    return split_potentials(to_cost(mrf), plan, rho)


def iterate(state, config, workers, steps):
    """run the update loop by hand, returning the duals before the last step."""
    before = state.lam
    for _ in range(steps):
        state.accumulate()
        state.m = workers.marginals(bethe_parameters(state, config))
        state.mu = update_mu(state)
        before, state.lam = state.lam, update_lambda(state, config)
        state.t += 1
    return before


def node_rows(plan, tau, u):
    """rows of global node `u` inside tree `tau`'s block."""
    tree = plan.trees[tau]
    local = tree.layout.node_slice(tree.position[u])
    start = plan.block(tau).start
    return slice(start + local.start, start + local.stop)


def test_config_defaults_and_validation():
    config = SolverConfig()
    assert (config.alpha, config.beta, config.rho) == (0.05, 0.05, 1.0)
    assert (config.max_iters, config.tol, config.threads) == (10000, 1e-3, 1)
    assert (config.gap_tol, config.lp_window, config.lp_tol) == (1e-4, 100, 1e-6)
    for bad in [dict(alpha=0), dict(beta=-1), dict(rho=0), dict(tol=-1), dict(threads=0)]:
        with raises(ConfigError):
            SolverConfig(**bad)
    for bad in [dict(gap_tol=-1), dict(lp_tol=-1), dict(lp_window=0)]:
        with raises(ConfigError):
            SolverConfig(**bad)
    with raises(ConfigError):
        SolverConfig(executor="gpu")


def test_safe_alpha(triangle):
    plan = edge_decomposition(triangle)
    config = SolverConfig(safe_alpha=True)
    assert config.effective_alpha(plan) == approx(0.05 * 9)
    cover = tree_cover(potts_grid3d(3, 3, 1, 2, 1.0))
    alpha = config.effective_alpha(cover)
    assert all(alpha >= 0.05 * (2 * tree.n - 1) ** 2 for tree in cover.trees)
    assert SolverConfig().effective_alpha(plan) == 0.05


def test_init_state(triangle):
    plan = edge_decomposition(triangle)
    state = init_state(plan, SolverConfig())
    assert np.all(state.mu[: triangle.layout.node_size] == 0.5)
    assert np.all(state.mu[triangle.layout.node_size :] == 0.25)
    assert np.array_equal(state.m, state.mu[plan.index])
    assert layout_violation(triangle.layout, state.mu) == 0.0
    assert state.zero_sum_defect() == 0.0
    assert state.t == 0 and not state.sum_m.any()


def test_bethe_step_keeps_zero_cost_uniform(triangle):
    zero = PairwiseMRF(triangle.layout, np.zeros(triangle.layout.size))
    plan = prepared(zero, edge_decomposition(zero))
    state = init_state(plan)
    for tau in range(len(plan)):
        m = bethe_step_m(state, tau, SolverConfig())
        assert np.abs(m - state.m[plan.block(tau)]).max() < 1e-12


def test_bethe_step_moves_toward_lower_cost():
    mrf = PairwiseMRF.from_tables((2, 2), [(0, 1)], [[1.0, 0.0], [0.0, 0.0]])
    plan = prepared(mrf, edge_decomposition(mrf))
    state = init_state(plan)
    config = SolverConfig(alpha=100.0)
    m = Pseudomarginal(plan.trees[0].layout, bethe_step_m(state, 0, config))
    assert m.node(0)[0] > 0.5
    assert m.node(0)[0] - 0.5 == approx(0.5 * 0.5 / 100.0, rel=0.05)
    assert np.allclose(m.node(1), 0.5)
    assert layout_violation(m.layout, m.values) < 1e-9


def test_bethe_step_matches_the_vectorized_parameters(triangle):
    plan = prepared(triangle, edge_decomposition(triangle))
    state = init_state(plan)
    config = SolverConfig()
    with TreeWorkers(plan) as workers:
        iterate(state, config, workers, 3)
        everything = workers.marginals(bethe_parameters(state, config))
    for tau in range(len(plan)):
        assert np.allclose(bethe_step_m(state, tau, config), everything[plan.block(tau)])


def test_update_mu_averages_copies(path3):
    plan = edge_decomposition(path3)
    state = init_state(plan)
    state.m[node_rows(plan, 0, 1)] = [0.6, 0.4]
    state.m[node_rows(plan, 1, 1)] = [0.8, 0.2]
    state.m[node_rows(plan, 0, 0)] = [0.9, 0.1]
    mu = update_mu(state)
    assert mu[path3.node_slice(1)] == approx([0.7, 0.3])
    assert list(mu[path3.node_slice(0)]) == [0.9, 0.1]


def test_update_mu_on_a_single_tree():
    mrf = random_tree_mrf(6, 3, seed=0)
    plan = prepared(mrf, DecompositionPlan.from_trees(mrf.layout, [(range(6), range(5))]))
    state = init_state(plan)
    state.m = bethe_step_m(state, 0, SolverConfig())
    state.mu = update_mu(state)
    assert np.array_equal(state.mu, state.m)
    assert primal_residual(state) == 0.0


def test_update_lambda():
    mrf = PairwiseMRF.from_tables((2, 2), [(0, 1)])
    plan = edge_decomposition(mrf)
    state = init_state(plan)
    state.m = state.m.copy()
    state.m[:2] = [0.6, 0.4]
    lam = update_lambda(state, SolverConfig(beta=1.0))
    assert lam[:2] == approx([0.1, -0.1])
    assert not lam[2:].any()
    state.m = state.mu[plan.index]
    assert np.array_equal(update_lambda(state, SolverConfig()), state.lam)


def test_duals_keep_summing_to_zero():
    mrf = potts_grid3d(3, 3, 2, 3, 1.0, seed=1)
    plan = prepared(mrf, edge_decomposition(mrf))
    state, config = init_state(plan), SolverConfig()
    with TreeWorkers(plan) as workers:
        for _ in range(20):
            iterate(state, config, workers, 10)
            assert state.zero_sum_defect() < 1e-8
            assert np.all(state.m >= 0)
            for tau in range(0, len(plan), 7):
                layout = plan.trees[tau].layout
                assert layout_violation(layout, state.m[plan.block(tau)]) < 1e-8


def test_residuals_at_the_start(triangle):
    plan = prepared(triangle, edge_decomposition(triangle))
    found = residuals(init_state(plan), plan, triangle)
    assert found.primal_residual_inf == 0.0
    assert found.max_violation == 0.0
    assert found.lp_objective == approx(0.5 * 0.5 + 3 * 0.5)
    assert found.assignment == (0, 0, 0)


def test_dual_bound_on_a_single_tree():
    mrf = random_tree_mrf(7, 3, seed=9)
    plan = prepared(mrf, DecompositionPlan.from_trees(mrf.layout, [(range(7), range(6))]))
    bound = dual_bound(init_state(plan), plan, mrf)
    assert bound == approx(max_product_map(mrf.layout, mrf.potentials)[1], abs=1e-12)
    assert bound == approx(brute_force_map(mrf)[1], abs=1e-12)


def test_dual_bound_is_an_upper_bound(triangle):
    frustrated = PairwiseMRF.from_tables(
        (2, 2, 2),
        [(0, 1), (0, 2), (1, 2)],
        [[0.2, 0.0], [0.0, 0.1], [0.0, 0.0]],
        [[[0.0, 1.0], [1.0, 0.0]]] * 3,
    )
    for mrf in (triangle, frustrated):
        plan = prepared(mrf, edge_decomposition(mrf))
        state, config = init_state(plan), SolverConfig()
        optimum, _ = binary_lp_optimum(mrf)
        with TreeWorkers(plan) as workers:
            for _ in range(10):
                iterate(state, config, workers, 5)
                assert dual_bound(state, plan, mrf) >= optimum - 1e-9


def test_dual_bound_centers_drifted_duals(triangle):
    plan = prepared(triangle, edge_decomposition(triangle))
    state = init_state(plan)
    state.lam = np.full_like(state.m, 0.3)
    optimum, _ = binary_lp_optimum(triangle)
    assert state.zero_sum_defect() > 1e-6
    assert dual_bound(state, plan, triangle) >= optimum - 1e-9


def test_centered_duals(triangle):
    plan = prepared(triangle, edge_decomposition(triangle))
    state = init_state(plan)
    state.lam = np.full_like(state.m, 0.3)
    centered = centered_duals(state)
    assert np.abs(centered).max() < 1e-12
    state.lam = centered
    assert centered_duals(state) is state.lam


def test_ergodic_consensus_identity():
    mrf = potts_grid3d(2, 3, 2, 2, 1.0, seed=3)
    config = SolverConfig()
    plan = prepared(mrf, edge_decomposition(mrf))
    state = init_state(plan)
    with TreeWorkers(plan) as workers:
        before = iterate(state, config, workers, 40)
    expected = np.dot(before, before) / (config.beta**2 * 40**2)
    assert state.ergodic_consensus() == approx(expected, rel=1e-9)
    m_bar, _ = state.ergodic_means()
    assert ergodic_objective(state) == approx(np.dot(plan.rho_entries * plan.theta, m_bar))


def test_run_on_zero_potentials(triangle):
    zero = PairwiseMRF(triangle.layout, np.zeros(triangle.layout.size))
    state, trace, status = run(zero, edge_decomposition(zero))
    assert status == CONVERGED
    assert state.t == 1
    assert len(trace) == 1
    row = trace.rows[0]
    assert row.lp_obj == 0.0 and row.primal_residual < 1e-12 and row.max_violation < 1e-12


def test_dual_residual(triangle):
    state = init_state(prepared(triangle, edge_decomposition(triangle)))
    previous = state.mu.copy()
    assert dual_residual(state, previous, SolverConfig()) == 0.0
    state.mu = state.mu.copy()
    state.mu[0] += 0.2
    assert dual_residual(state, previous, SolverConfig(beta=0.5)) == approx(0.1)


def test_converged_needs_a_closed_gap(two_node):
    plan = prepared(two_node, edge_decomposition(two_node))
    state, config = init_state(plan), SolverConfig()
    previous = state.mu.copy()
    assert dual_bound(state) == 3.5
    assert not converged(state, previous, deque([1.625, 1.625]), two_node, config)
    assert converged(state, previous, deque([1.625]), two_node, replace(config, gap_tol=2.0))


def test_converged_needs_a_stable_objective():
    zero = PairwiseMRF.from_tables((2, 2), [(0, 1)])
    state, config = init_state(prepared(zero, edge_decomposition(zero))), SolverConfig()
    previous = state.mu.copy()
    assert converged(state, previous, deque([0.0, 0.0]), zero, config)
    assert not converged(state, previous, deque([0.5, 0.0]), zero, config)
    moved = state.mu + 0.1
    assert not converged(state, moved, deque([0.0, 0.0]), zero, replace(config, beta=1.0))


def test_run_waits_for_the_objective_to_settle(two_node):
    config = SolverConfig(lp_window=10)
    state, trace, status = run(two_node, edge_decomposition(two_node), config)
    assert status == CONVERGED
    assert state.t > 10
    assert state.best_value == 3.5
    last = trace.rows[-1]
    assert abs(last.dual_bound - last.lp_obj) < config.gap_tol


def test_run_decodes_an_attractive_triangle(triangle):
    config = SolverConfig(max_iters=500, trace_every=1)
    state, trace, _ = run(triangle, edge_decomposition(triangle), config)
    assert state.best_assignment == (0, 0, 0)
    assert state.best_value == brute_force_map(triangle)[1]
    assert trace.column("dual_bound").min() >= 3.5 - 1e-9


def test_run_stops_at_max_iters(triangle):
    config = SolverConfig(max_iters=7, tol=0.0, trace_every=3)
    state, trace, status = run(triangle, tree_cover(triangle), config)
    assert status == MAX_ITERS_REACHED
    assert state.t == 7
    assert list(trace.column("iter")) == [3, 6, 7]


def test_run_without_iterations(triangle):
    state, trace, status = run(triangle, edge_decomposition(triangle), SolverConfig(max_iters=0))
    assert status == MAX_ITERS_REACHED
    assert [row.iter for row in trace] == [0]
    assert state.best_assignment == (0, 0, 0)


def test_trace_rows_must_increase():
    trace = IterationTrace()
    row = TraceRow(1, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    trace.append(row)
    with raises(ValueError):
        trace.append(row)
    assert trace.without_timings().rows[0].seconds == 0.0


@mark.parametrize("executor", ["thread", "process"])
def test_parallel_runs_are_identical(executor):
    mrf = potts_grid3d(3, 3, 2, 3, 1.0, seed=7)
    plan = edge_decomposition(mrf)
    config = SolverConfig(max_iters=30, tol=0.0, trace_every=5, executor=executor)
    first = run(mrf, plan, config, timings=False)
    for threads in (2, 4):
        other = run(mrf, plan, replace(config, threads=threads), timings=False)
        assert other.trace.rows == first.trace.rows
        assert np.array_equal(other.state.m, first.state.m)
        assert np.array_equal(other.state.lam, first.state.lam)


def test_bench(triangle):
    rows = bench(triangle, edge_decomposition(triangle), threads=(1, 2), iterations=5)
    assert [row.threads for row in rows] == [1, 2]
    assert rows[0].speedup == 1.0
    assert all(row.identical for row in rows)


def test_relative_error():
    assert relative_error(1.1, 1.0) == approx(0.1)
    assert relative_error(0.0, 0.0) == 0.0
