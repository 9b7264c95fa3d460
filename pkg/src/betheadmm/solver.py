"""the bethe-admm iteration for the local polytope relaxation.

per-tree vectors (`m`, `lam`, `theta`) are concatenated in tree order and addressed
through `plan.index`; only the sum-product subproblems touch trees one at a time.
the subproblems read a frozen snapshot and write disjoint blocks, so they run on a
worker pool, and every reduction happens afterwards in ascending tree order. the
result is bit-identical for any number of workers.
"""

import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from time import perf_counter
from typing import NamedTuple

import numpy as np

from .decomposition import split_potentials
from .mrf import Pseudomarginal, eval_assignment, layout_violation, round_solution, to_cost
from .trees import CLAMP, check_tree, gradient, max_product_map, sum_product

__all__ = (
    "ConfigError",
    "SolverConfig",
    "SolverState",
    "TraceRow",
    "IterationTrace",
    "Residuals",
    "Solution",
    "TreeWorkers",
    "init_state",
    "bethe_step_m",
    "update_mu",
    "update_lambda",
    "residuals",
    "primal_residual",
    "dual_residual",
    "converged",
    "dual_bound",
    "ergodic_objective",
    "relative_error",
    "run",
    "bench",
    "BenchRow",
    "CONVERGED",
    "MAX_ITERS_REACHED",
)

logger = logging.getLogger(__name__)

CONVERGED, MAX_ITERS_REACHED = "converged", "max_iters_reached"
EXECUTORS = ("thread", "process")


class ConfigError(ValueError):
    """an invalid solver configuration."""


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.05
    beta: float = 0.05
    rho: float = 1.0
    max_iters: int = 10000
    tol: float = 1e-3
    threads: int = 1
    safe_alpha: bool = False
    trace_every: int = 10
    executor: str = "thread"
    gap_tol: float = 1e-4
    lp_window: int = 100
    lp_tol: float = 1e-6

    def __post_init__(self):
        for name in ("alpha", "beta", "rho"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("tol", "gap_tol", "lp_tol"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.max_iters < 0 or min(self.threads, self.trace_every, self.lp_window) < 1:
            raise ConfigError(
                "max_iters >= 0 and threads, trace_every, lp_window >= 1 are required"
            )
        if self.executor not in EXECUTORS:
            raise ConfigError(f"executor must be one of {EXECUTORS}, got {self.executor!r}")

    def effective_alpha(self, plan):
        """alpha, raised to `beta (2 n_tau - 1)^2` for the largest tree when safe."""
        if not self.safe_alpha:
            return self.alpha
        return max(self.alpha, self.beta * (2 * plan.max_tree_nodes - 1) ** 2)


@dataclass(eq=False)
class SolverState:
    """iterates of one run; owned by the runner between iterations."""

    plan: object
    m: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    t: int = 0
    sum_m: np.ndarray = None
    sum_mu: np.ndarray = None
    terms: int = 0
    best_assignment: object = None
    best_value: float = -np.inf

    def accumulate(self):
        """add the current `m` and `mu` to the ergodic sums."""
        self.sum_m += self.m
        self.sum_mu += self.mu
        self.terms += 1

    def ergodic_means(self):
        terms = max(self.terms, 1)
        return self.sum_m / terms, self.sum_mu / terms

    def ergodic_consensus(self):
        """`sum_tau ||m_bar_tau - mu_bar_tau||^2`."""
        m_bar, mu_bar = self.ergodic_means()
        gap = m_bar - mu_bar[self.plan.index]
        return float(np.dot(gap, gap))

    def zero_sum_defect(self):
        """largest `|sum_{tau in S} lam_tau|` over global entries."""
        totals = np.bincount(self.plan.index, weights=self.lam, minlength=self.plan.graph.size)
        return float(np.abs(totals).max(initial=0.0))


class TraceRow(NamedTuple):
    iter: int
    seconds: float
    lp_obj: float
    decoded_value: float
    max_violation: float
    primal_residual: float
    dual_bound: float
    ergodic_consensus: float


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row.iter <= self.rows[-1].iter:
            raise ValueError(f"trace rows must increase, got {row.iter} after {self.rows[-1].iter}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name):
        return np.array([getattr(row, name) for row in self.rows])

    def without_timings(self):
        return IterationTrace([row._replace(seconds=0.0) for row in self.rows])


class Residuals(NamedTuple):
    primal_residual_inf: float
    max_violation: float
    lp_objective: float
    decoded_value: float
    assignment: tuple


class Solution(NamedTuple):
    state: SolverState
    trace: IterationTrace
    status: str


def _blocks(plan, chunks):
    ids = np.arange(len(plan))
    return [block.tolist() for block in np.array_split(ids, min(chunks, len(plan))) if block.size]


_LAYOUTS = None


def _remember_layouts(layouts):
    global _LAYOUTS
    _LAYOUTS = layouts


def _solve_block(block, etas):
    return [sum_product(_LAYOUTS[tau], eta)[0] for tau, eta in zip(block, etas)]


class TreeWorkers:
    """solves the per-tree sum-product subproblems, in parallel when asked.

    workers receive contiguous blocks of tree ids and write disjoint slices, so the
    output does not depend on the number of workers or on completion order.
    """

    def __init__(self, plan, threads=1, executor="thread"):
        self.plan, self.threads, self.executor = plan, threads, executor
        self.layouts = [check_tree(tree) for tree in plan.trees]
        self.blocks = _blocks(plan, 4 * threads)
        self.pool = None

    def __enter__(self):
        if self.threads > 1:
            if self.executor == "process":
                self.pool = ProcessPoolExecutor(
                    self.threads, initializer=_remember_layouts, initargs=(self.layouts,)
                )
            else:
                self.pool = ThreadPoolExecutor(self.threads)
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    def _thread_block(self, block, eta, out):
        for tau in block:
            s = self.plan.block(tau)
            out[s] = sum_product(self.layouts[tau], eta[s])[0]

    def marginals(self, eta):
        """the sum-product marginals of every tree for concatenated parameters."""
        out = np.empty_like(eta)
        if self.pool is None:
            self._thread_block(range(len(self.plan)), eta, out)
        elif self.executor == "process":
            args = [[eta[self.plan.block(tau)] for tau in block] for block in self.blocks]
            for block, results in zip(self.blocks, self.pool.map(_solve_block, self.blocks, args)):
                for tau, values in zip(block, results):
                    out[self.plan.block(tau)] = values
        else:
            list(self.pool.map(lambda block: self._thread_block(block, eta, out), self.blocks))
        return out


def _prepared(plan):
    if not plan.has_potentials:
        raise ValueError("the plan carries no potentials; run split_potentials first")
    return plan


def init_state(plan, config=None):
    """uniform tree marginals, uniform `mu`, zero duals."""
    m = np.concatenate([Pseudomarginal.uniform(tree.layout).values for tree in plan.trees])
    mu = Pseudomarginal.uniform(plan.graph).values
    return SolverState(
        plan=plan,
        m=m,
        lam=np.zeros_like(m),
        mu=mu,
        sum_m=np.zeros_like(m),
        sum_mu=np.zeros_like(mu),
    )


def _linear_terms(state, beta, rows=slice(None)):
    """`y = rho theta + lam + beta (m - mu_tau)`."""
    plan = _prepared(state.plan)
    index = plan.index[rows]
    return (
        plan.rho_entries[rows] * plan.theta[rows]
        + state.lam[rows]
        + beta * (state.m[rows] - state.mu[index])
    )


def bethe_parameters(state, config, alpha=None, rows=slice(None)):
    """`eta = grad phi(m) - y / alpha`, for all trees or one block."""
    alpha = config.effective_alpha(state.plan) if alpha is None else alpha
    y = _linear_terms(state, config.beta, rows)
    grad = state.plan.phi_coef[rows] * (1.0 + np.log(np.maximum(state.m[rows], CLAMP)))
    return grad - y / alpha


def bethe_step_m(state, tau, config, alpha=None):
    """the new `m_tau`: the bregman proximal step solved by sum-product."""
    plan = state.plan
    layout = check_tree(plan.trees[tau])
    rows = plan.block(tau)
    alpha = config.effective_alpha(plan) if alpha is None else alpha
    y = _linear_terms(state, config.beta, rows)
    eta = gradient(layout, state.m[rows]) - y / alpha
    return sum_product(layout, eta)[0]


def update_mu(state, plan=None):
    """average the tree copies of every entry, summed in ascending tree order."""
    plan = state.plan if plan is None else plan
    totals = np.bincount(plan.index, weights=state.m, minlength=plan.graph.size)
    return totals / plan.replication


def update_lambda(state, config):
    """`lam + beta (m - mu_tau)`."""
    return state.lam + config.beta * (state.m - state.mu[state.plan.index])


def primal_residual(state):
    if not state.m.size:
        return 0.0
    return float(np.abs(state.m - state.mu[state.plan.index]).max())


def dual_residual(state, previous, config):
    """`beta max |mu^{t+1} - mu^t|`, the admm dual residual."""
    if not state.mu.size:
        return 0.0
    return config.beta * float(np.abs(state.mu - previous).max())


def residuals(state, plan, mrf):
    """primal residual, violation, `<mu, f>` and the rounded score of `mu`."""
    mu = Pseudomarginal(plan.graph, state.mu)
    x = round_solution(mu)
    return Residuals(
        primal_residual_inf=primal_residual(state),
        max_violation=layout_violation(plan.graph, state.mu),
        lp_objective=float(np.dot(state.mu, mrf.potentials)),
        decoded_value=eval_assignment(mrf, x),
        assignment=x,
    )


def centered_duals(state, plan=None, tolerance=1e-6):
    """the duals, mean-centered over copies when the zero-sum property drifted."""
    plan = state.plan if plan is None else plan
    if state.zero_sum_defect() <= tolerance:
        return state.lam
    means = np.bincount(plan.index, weights=state.lam, minlength=plan.graph.size)
    return state.lam - (means / plan.replication)[plan.index]


def dual_bound(state, plan=None, mrf=None):
    """the tree lagrangian bound, as an upper bound on `max_{mu in L(G)} <mu, f>`.

    each tree contributes `max_x -(rho theta + lam)(x)`, solved exactly by max-product.
    """
    plan = _prepared(state.plan if plan is None else plan)
    lam = centered_duals(state, plan)
    scores = -(plan.rho_entries * plan.theta + lam)
    total = 0.0
    for tau, tree in enumerate(plan.trees):
        total += max_product_map(tree, scores[plan.block(tau)])[1]
    return total


def ergodic_objective(state, plan=None):
    """`sum_tau rho_tau <m_bar_tau, theta_tau>` in cost sign."""
    plan = _prepared(state.plan if plan is None else plan)
    m_bar, _ = state.ergodic_means()
    return float(np.dot(plan.rho_entries * plan.theta, m_bar))


def relative_error(value, reference):
    return abs(value - reference) / max(abs(reference), 1e-12)


def converged(state, previous, history, mrf, config):
    """the stopping test after one iteration.

    the primal residual, the dual residual and the polytope violation are below `tol`,
    `<mu, f>` moved less than `lp_tol` over the last `lp_window` iterations, and the
    tree bound is within `gap_tol` of `<mu, f>`. `history` holds the recent `<mu, f>`,
    newest last; the bound is only computed once everything else holds.
    """
    plan = state.plan
    if max(primal_residual(state), dual_residual(state, previous, config)) >= config.tol:
        return False
    if layout_violation(plan.graph, state.mu) >= config.tol:
        return False
    if max(history) - min(history) >= config.lp_tol:
        return False
    return abs(dual_bound(state, plan, mrf) - history[-1]) < config.gap_tol


def run(mrf, plan, config=None, *, timings=True):
    """iterate bethe-admm until `converged` holds or `max_iters` is reached.

    returns the final state, the recorded trace and a status; hitting `max_iters`
    is a normal return with status `max_iters_reached`.
    """
    config = SolverConfig() if config is None else config
    plan = split_potentials(to_cost(mrf), plan, config.rho)
    alpha = config.effective_alpha(plan)
    state = init_state(plan, config)
    trace = IterationTrace()
    status = MAX_ITERS_REACHED
    logger.info(
        "bethe-admm on %d nodes with %d trees, alpha=%g beta=%g threads=%d",
        mrf.num_nodes,
        len(plan),
        alpha,
        config.beta,
        config.threads,
    )
    history = deque([float(np.dot(state.mu, mrf.potentials))], maxlen=config.lp_window + 1)
    start = perf_counter()
    with TreeWorkers(plan, config.threads, config.executor) as workers:
        while state.t < config.max_iters:
            previous = state.mu
            state.accumulate()
            state.m = workers.marginals(bethe_parameters(state, config, alpha))
            state.mu = update_mu(state, plan)
            state.lam = update_lambda(state, config)
            state.t += 1
            history.append(float(np.dot(state.mu, mrf.potentials)))

            done = converged(state, previous, history, mrf, config)
            if done or state.t % config.trace_every == 0 or state.t == config.max_iters:
                _record(state, plan, mrf, trace, perf_counter() - start if timings else 0.0)
            if done:
                status = CONVERGED
                break
    if state.best_assignment is None:
        _record(state, plan, mrf, trace, perf_counter() - start if timings else 0.0)
    logger.info("%s after %d iterations, decoded value %r", status, state.t, state.best_value)
    return Solution(state, trace, status)


class BenchRow(NamedTuple):
    threads: int
    seconds: float
    speedup: float
    identical: bool


def bench(mrf, plan, config=None, threads=(1, 2, 4), iterations=50):
    """time `iterations` steps for each worker count, without early stopping.

    `identical` compares each run's untimed trace and final iterates to the first run.
    """
    config = SolverConfig() if config is None else config
    rows, first = [], None
    for count in threads:
        settings = replace(
            config, threads=count, max_iters=iterations, tol=0.0, trace_every=max(iterations, 1)
        )
        start = perf_counter()
        solution = run(mrf, plan, settings, timings=False)
        seconds = perf_counter() - start
        if first is None:
            first, baseline = solution, seconds
        identical = (
            solution.trace.rows == first.trace.rows
            and np.array_equal(solution.state.m, first.state.m)
            and np.array_equal(solution.state.lam, first.state.lam)
        )
        rows.append(BenchRow(count, seconds, baseline / seconds, identical))
        logger.info("%d workers: %.3fs for %d iterations", count, seconds, iterations)
    return rows


def _record(state, plan, mrf, trace, seconds):
    found = residuals(state, plan, mrf)
    if found.decoded_value > state.best_value:
        state.best_assignment, state.best_value = found.assignment, found.decoded_value
    row = TraceRow(
        iter=state.t,
        seconds=seconds,
        lp_obj=found.lp_objective,
        decoded_value=found.decoded_value,
        max_violation=found.max_violation,
        primal_residual=found.primal_residual_inf,
        dual_bound=dual_bound(state, plan, mrf),
        ergodic_consensus=state.ergodic_consensus(),
    )
    trace.append(row)
    logger.debug("%s", row)
