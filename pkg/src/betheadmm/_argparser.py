from argparse import ArgumentParser

from .solver import EXECUTORS

parser = ArgumentParser("betheadmm", description="approximate map inference with bethe-admm")
parser.add_argument(
    "-v", "--verbose", action="count", default=0, help="more logging, repeat for debug"
)
parser.add_argument("-q", "--quiet", action="store_true", default=False, help="only log errors")
sub = parser.add_subparsers(dest="command", required=True)


def add_seed(parser):
    parser.add_argument("--seed", type=int, default=0, help="the random seed")


def add_decomp(parser):
    parser.add_argument(
        "--decomp",
        default="edge",
        help="edge, cover or a plan file",
    )


gen = sub.add_parser("gen", help="generate a synthetic model")
families = gen.add_subparsers(dest="family", required=True)

potts3d = families.add_parser("potts3d", help="a 3d grid with potts couplings")
potts3d.add_argument("--m", type=int, default=4)
potts3d.add_argument("--n", type=int, default=4)
potts3d.add_argument("--t", type=int, default=4)
potts3d.add_argument("--k", type=int, default=3, help="labels per node")
potts3d.add_argument("--a", type=float, default=1.0, help="unary range [-a, a]")
add_seed(potts3d)
potts3d.add_argument("-o", "--out", required=True, help="the model file")

treecross = families.add_parser("treecross", help="binary trees joined by cross edges")
treecross.add_argument("--trees", type=int, default=2)
treecross.add_argument("--size", type=int, default=7, help="nodes per tree")
treecross.add_argument("--cross", type=int, default=3, help="cross samples per tree pair")
treecross.add_argument("--k", type=int, default=3)
treecross.add_argument("--a", type=float, default=1.0)
add_seed(treecross)
treecross.add_argument("-o", "--out", required=True, help="the model file")
treecross.add_argument("--plan", dest="plan_out", help="write the augmented tree plan here")

tree = families.add_parser("tree", help="a uniformly random spanning tree")
tree.add_argument("--nodes", type=int, default=10)
tree.add_argument("--k", type=int, default=3)
tree.add_argument("--a", type=float, default=1.0)
add_seed(tree)
tree.add_argument("-o", "--out", required=True, help="the model file")

plan = sub.add_parser("plan", help="write a tree decomposition of a model")
plan.add_argument("model")
plan.add_argument("--decomp", choices=("edge", "cover"), default="edge")
add_seed(plan)
plan.add_argument("-o", "--out", required=True, help="the plan file")

solve = sub.add_parser("solve", help="run bethe-admm on a model")
solve.add_argument("model")
add_decomp(solve)
add_seed(solve)
solve.add_argument("--config", help="a toml file with a [solve] table")
solve.add_argument("--alpha", type=float)
solve.add_argument("--beta", type=float)
solve.add_argument("--rho", type=float)
solve.add_argument("--tol", type=float)
solve.add_argument("--max-iters", type=int, dest="max_iters")
solve.add_argument("--threads", type=int)
solve.add_argument("--executor", choices=EXECUTORS)
solve.add_argument("--trace-every", type=int, dest="trace_every")
solve.add_argument("--gap-tol", type=float, dest="gap_tol", help="largest accepted bound gap")
solve.add_argument(
    "--lp-window", type=int, dest="lp_window", help="iterations the objective must hold still"
)
solve.add_argument("--lp-tol", type=float, dest="lp_tol", help="allowed objective drift")
solve.add_argument(
    "--safe-alpha",
    action="store_true",
    default=None,
    dest="safe_alpha",
    help="raise alpha to the largest tree's safe step",
)
solve.add_argument("--trace", help="write the iteration trace as csv")
solve.add_argument(
    "--no-timings", action="store_false", dest="timings", default=True, help="write 0 seconds"
)
solve.add_argument("--out", help="write the decoded assignment")
solve.add_argument("--reference", type=float, help="a known optimum for the relative error")

oracle = sub.add_parser("oracle", help="exact map by enumeration")
oracle.add_argument("model")
oracle.add_argument("--out", help="write the assignment")

evaluate = sub.add_parser("eval", help="score an assignment")
evaluate.add_argument("model")
evaluate.add_argument("assignment")

bench = sub.add_parser("bench", help="time a fixed number of iterations per worker count")
bench.add_argument("model")
add_decomp(bench)
add_seed(bench)
bench.add_argument("--config", help="a toml file with a [solve] table")
bench.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4])
bench.add_argument("--iters", type=int, default=50)
bench.add_argument("--executor", choices=EXECUTORS)
