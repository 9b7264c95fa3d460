import logging
import sys

from ._argparser import parser
from .config import ConfigError
from .decomposition import DecompositionError
from .formats import FormatError
from .mrf import ModelError
from .oracles import StateSpaceError
from .trees import TreeError

ERRORS = (ConfigError, DecompositionError, FormatError, ModelError, StateSpaceError, TreeError)
RICH = False

try:
    # set up rich
    from rich import print
    from rich.traceback import install

    install(suppress=[])
    RICH = True
except ModuleNotFoundError:
    pass

logger = logging.getLogger("betheadmm")


def configure_logging(verbose=0, quiet=False):
    levels = (logging.WARNING, logging.INFO, logging.DEBUG)
    level = logging.ERROR if quiet else levels[min(verbose, 2)]
    if RICH:
        from rich.logging import RichHandler

        handler = RichHandler(show_path=False, rich_tracebacks=verbose > 0)
        logging.basicConfig(level=level, format="%(message)s", handlers=[handler], force=True)
    else:
        logging.basicConfig(
            level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True
        )


def get_plan(mrf, decomp, seed=0):
    from .decomposition import edge_decomposition, tree_cover
    from .formats import read_plan

    if decomp == "edge":
        return edge_decomposition(mrf)
    if decomp == "cover":
        return tree_cover(mrf, seed)
    return read_plan(decomp, mrf)


def gen(args):
    from . import datagen
    from .formats import write_model, write_plan

    if args.family == "potts3d":
        mrf = datagen.potts_grid3d(args.m, args.n, args.t, args.k, args.a, args.seed)
    elif args.family == "treecross":
        mrf, plan = datagen.tree_cross_graph(
            args.trees, args.size, args.cross, args.k, args.a, args.seed
        )
        if args.plan_out:
            write_plan(plan, args.plan_out)
    else:
        mrf = datagen.random_tree_mrf(args.nodes, args.k, args.a, args.seed)
    write_model(mrf, args.out)
    print(f"{args.out}: {mrf.num_nodes} nodes, {len(mrf.edges)} edges")
    return 0


def plan(args):
    from .formats import read_model, write_plan

    mrf = read_model(args.model)
    found = get_plan(mrf, args.decomp, args.seed)
    write_plan(found, args.out)
    print(f"{args.out}: {len(found)} trees")
    return 0


def solve(args):
    from .config import merge_config
    from .formats import read_model, write_assignment, write_trace
    from .solver import CONVERGED, relative_error, run

    mrf = read_model(args.model)
    config = merge_config(
        args.config,
        **{
            name: getattr(args, name)
            for name in (
                "alpha",
                "beta",
                "rho",
                "tol",
                "max_iters",
                "threads",
                "executor",
                "trace_every",
                "safe_alpha",
                "gap_tol",
                "lp_window",
                "lp_tol",
            )
        },
    )
    solution = run(mrf, get_plan(mrf, args.decomp, args.seed), config, timings=args.timings)
    state, trace = solution.state, solution.trace
    if args.trace:
        write_trace(trace, args.trace, timings=args.timings)
    if args.out:
        write_assignment(state.best_assignment, args.out)
    last = trace.rows[-1]
    print(f"status: {solution.status} after {state.t} iterations")
    print(f"decoded value: {state.best_value!r}")
    print(f"lp objective: {last.lp_obj!r}")
    print(f"dual bound: {last.dual_bound!r}")
    print(f"max violation: {last.max_violation!r}")
    if args.reference is not None:
        print(f"relative error: {relative_error(last.lp_obj, args.reference)!r}")
    return 0 if solution.status == CONVERGED else 2


def oracle(args):
    from .formats import read_model, write_assignment
    from .oracles import brute_force_map

    x, value = brute_force_map(read_model(args.model))
    if args.out:
        write_assignment(x, args.out)
    print(" ".join(map(str, x)))
    print(f"value: {value!r}")
    return 0


def evaluate(args):
    from .formats import read_assignment, read_model
    from .mrf import eval_assignment

    mrf = read_model(args.model)
    print(repr(eval_assignment(mrf, read_assignment(args.assignment, mrf))))
    return 0


def bench(args):
    from .config import merge_config
    from .formats import read_model
    from .solver import bench as time_iterations

    mrf = read_model(args.model)
    config = merge_config(args.config, executor=args.executor)
    found = get_plan(mrf, args.decomp, args.seed)
    rows = time_iterations(mrf, found, config, args.threads, args.iters)
    for row in rows:
        print(
            f"threads={row.threads} seconds={row.seconds:.3f} "
            f"speedup={row.speedup:.2f} identical={row.identical}"
        )
    return 0 if all(row.identical for row in rows) else 1


COMMANDS = dict(gen=gen, plan=plan, solve=solve, oracle=oracle, eval=evaluate, bench=bench)


def main(argv=None, parser=parser):
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except (*ERRORS, OSError) as error:
        if args.verbose:
            logger.exception("%s failed", args.command)
        sys.stderr.write(f"error: {error}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
