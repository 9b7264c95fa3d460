"""line based text formats for models, plans, traces and assignments.

reals are written with `repr`, the shortest text that parses back to the same double,
so model and plan round-trips are bitwise. trace columns use 17 significant digits.
"""

import logging
from pathlib import Path

import numpy as np

from .decomposition import DecompositionError, DecompositionPlan, validate_cover
from .mrf import ModelError, PairwiseMRF
from .types import Assignment

__all__ = (
    "FormatError",
    "read_model",
    "write_model",
    "read_uai",
    "write_uai",
    "read_plan",
    "write_plan",
    "write_trace",
    "read_assignment",
    "write_assignment",
    "TRACE_HEADER",
)

logger = logging.getLogger(__name__)

TRACE_HEADER = (
    "iter",
    "seconds",
    "lp_obj",
    "decoded_value",
    "max_violation",
    "primal_residual",
    "dual_bound",
    "ergodic_consensus",
)


class FormatError(ValueError):
    """a file that does not parse; `line` is 1-based."""

    def __init__(self, message, path=None, line=None):
        self.path, self.line, self.reason = path, line, message
        where = ":".join(str(x) for x in (path, line) if x is not None)
        super().__init__(f"{where}: {message}" if where else message)


class Tokens:
    """whitespace separated tokens that remember their line numbers."""

    def __init__(self, text, path=None):
        self.path = path
        self.items = [
            (token, number)
            for number, line in enumerate(text.splitlines(), 1)
            for token in line.split()
        ]
        self.position = 0

    @property
    def line(self):
        if self.position < len(self.items):
            return self.items[self.position][1]
        return self.items[-1][1] if self.items else 1

    def remaining(self):
        return len(self.items) - self.position

    def error(self, message, line=None):
        return FormatError(message, self.path, self.line if line is None else line)

    def next(self, what):
        if self.position >= len(self.items):
            raise self.error(f"unexpected end of file, expected {what}")
        token, _ = self.items[self.position]
        self.position += 1
        return token

    def int(self, what, minimum=0):
        line = self.line
        token = self.next(what)
        try:
            value = int(token)
        except ValueError:
            raise self.error(f"expected an integer for {what}, got {token!r}", line) from None
        if value < minimum:
            raise self.error(f"{what} must be at least {minimum}, got {value}", line)
        return value

    def reals(self, count, what):
        line = self.line
        if self.remaining() < count:
            raise self.error(f"{what}: expected {count} values, got {self.remaining()}", line)
        tokens = [self.next(what) for _ in range(count)]
        try:
            return np.array([float(x) for x in tokens])
        except ValueError:
            raise self.error(f"{what}: malformed real in {' '.join(tokens)}", line) from None

    def finish(self):
        if self.remaining():
            raise self.error(f"unexpected trailing content {self.items[self.position][0]!r}")


def _model(tokens, *args):
    try:
        return PairwiseMRF.from_tables(*args)
    except ModelError as error:
        raise tokens.error(str(error)) from error


def _read_native(tokens):
    header_line = tokens.line
    tokens.next("header")
    n = tokens.int("node count")
    cardinalities = [tokens.int(f"cardinality of node {u}", 2) for u in range(n)]
    num_edges = tokens.int("edge count")
    edges = []
    for e in range(num_edges):
        line = tokens.line
        u, v = tokens.int(f"edge {e} endpoint"), tokens.int(f"edge {e} endpoint")
        if u >= n or v >= n:
            raise tokens.error(f"edge {e} references missing node {max(u, v)}", line)
        edges.append((u, v))
    node = [tokens.reals(k, f"table for node {u}") for u, k in enumerate(cardinalities)]
    edge = [
        tokens.reals(cardinalities[u] * cardinalities[v], f"table for edge {e}").reshape(
            cardinalities[u], cardinalities[v]
        )
        for e, (u, v) in enumerate(edges)
    ]
    tokens.finish()
    logger.debug("read model with %d nodes from line %d", n, header_line)
    return _model(tokens, cardinalities, edges, node, edge)


def _read_markov(tokens):
    tokens.next("header")
    n = tokens.int("variable count")
    cardinalities = [tokens.int(f"cardinality of variable {u}", 2) for u in range(n)]
    num_cliques = tokens.int("clique count")
    cliques = []
    for c in range(num_cliques):
        line = tokens.line
        size = tokens.int(f"size of clique {c}", 1)
        if size > 2:
            raise tokens.error(f"clique {c} has {size} variables; only pairwise models", line)
        scope = [tokens.int(f"variable of clique {c}") for _ in range(size)]
        if any(u >= n for u in scope):
            raise tokens.error(f"clique {c} references missing variable {max(scope)}", line)
        if size == 2 and scope[0] == scope[1]:
            raise tokens.error(f"clique {c} is a self-loop on variable {scope[0]}", line)
        cliques.append(scope)

    node = [np.zeros(k) for k in cardinalities]
    pairs = {}
    for c, scope in enumerate(cliques):
        line = tokens.line
        expected = int(np.prod([cardinalities[u] for u in scope]))
        declared = tokens.int(f"entry count of clique {c}")
        if declared != expected:
            raise tokens.error(
                f"table for clique {c}: expected {expected} values, got {declared}", line
            )
        table = tokens.reals(expected, f"table for clique {c}")
        if np.any(table <= 0):
            raise tokens.error(f"table for clique {c}: entries must be positive", line)
        table = np.log(table)
        if len(scope) == 1:
            node[scope[0]] = node[scope[0]] + table
            continue
        u, v = scope
        table = table.reshape(cardinalities[u], cardinalities[v])
        if u > v:
            u, v, table = v, u, table.T
        pairs[u, v] = pairs.get((u, v), 0.0) + table
    tokens.finish()
    edges = list(pairs)
    return _model(tokens, cardinalities, edges, node, [pairs[e] for e in edges])


def read_model(path):
    """read a native `PMRF` model or a pairwise uai `MARKOV` file."""
    path = Path(path)
    tokens = Tokens(path.read_text(), path)
    if not tokens.remaining():
        raise FormatError("empty model file", path, 1)
    header = tokens.items[0][0]
    if header == "PMRF":
        return _read_native(tokens)
    if header.upper() == "MARKOV":
        return _read_markov(tokens)
    raise FormatError(f"unknown model header {header!r}, expected PMRF or MARKOV", path, 1)


def read_uai(path):
    """read a pairwise uai `MARKOV` file, taking logs of the product-form tables."""
    path = Path(path)
    tokens = Tokens(path.read_text(), path)
    if not tokens.remaining() or tokens.items[0][0].upper() != "MARKOV":
        raise FormatError("expected a MARKOV header", path, 1)
    return _read_markov(tokens)


def _reals(values):
    return " ".join(repr(float(x)) for x in np.ravel(values))


def write_model(mrf, path):
    lines = [
        "PMRF",
        str(mrf.num_nodes),
        " ".join(map(str, mrf.cardinalities)),
        str(len(mrf.edges)),
        *(f"{u} {v}" for u, v in mrf.edges),
        *map(_reals, mrf.node_potentials),
        *map(_reals, mrf.edge_potentials),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def write_uai(mrf, path):
    """write the model as a uai `MARKOV` file with tables `exp(f)`."""
    lines = [
        "MARKOV",
        str(mrf.num_nodes),
        " ".join(map(str, mrf.cardinalities)),
        str(mrf.num_nodes + len(mrf.edges)),
        *(f"1 {u}" for u in range(mrf.num_nodes)),
        *(f"2 {u} {v}" for u, v in mrf.edges),
    ]
    for table in [*mrf.node_potentials, *mrf.edge_potentials]:
        lines += ["", str(table.size), _reals(np.exp(table))]
    Path(path).write_text("\n".join(lines) + "\n")


def _ids(line, path, number, what):
    try:
        return [int(x) for x in line.split()]
    except ValueError:
        raise FormatError(f"malformed {what} line {line.strip()!r}", path, number) from None


def read_plan(path, mrf):
    """read a plan for `mrf`; cover defects raise `DecompositionError`."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "PLAN":
        raise FormatError("expected a PLAN header", path, 1)
    if len(lines) < 2:
        raise FormatError("missing tree count", path, 2)
    try:
        count = int(lines[1])
    except ValueError:
        raise FormatError(f"malformed tree count {lines[1].strip()!r}", path, 2) from None
    end = 2 + 3 * count
    if count and len(lines) == end - 1:
        # an empty edge line at the end of the file
        lines.append("")
    if len(lines) < end:
        raise FormatError(
            f"expected 3 lines for each of {count} trees, found {len(lines) - 2} lines",
            path,
            len(lines) + 1,
        )
    for number, line in enumerate(lines[end:], end + 1):
        if line.strip():
            raise FormatError(f"unexpected content after {count} trees", path, number)
    trees = []
    for tau in range(count):
        first = 2 + 3 * tau
        head = lines[first].split()
        if len(head) != 2 or head[0] != "TREE" or head[1] != str(tau):
            raise FormatError(f"expected 'TREE {tau}'", path, first + 1)
        nodes = _ids(lines[first + 1], path, first + 2, "node id")
        edges = _ids(lines[first + 2], path, first + 3, "edge id")
        trees.append((nodes, edges))
    plan = DecompositionPlan.from_trees(mrf.layout, trees)
    defects = validate_cover(plan, mrf)
    if defects:
        raise DecompositionError(f"{path}: invalid plan: " + "; ".join(defects), defects)
    return plan


def write_plan(plan, path):
    lines = ["PLAN", str(len(plan))]
    for tree in plan.trees:
        lines += [
            f"TREE {tree.tree_id}",
            " ".join(map(str, tree.nodes)),
            " ".join(map(str, tree.edges)),
        ]
    Path(path).write_text("\n".join(lines) + "\n")


def _trace_line(row):
    return ",".join([str(row.iter), *(format(float(x), ".17g") for x in row[1:])])


def write_trace(trace, path, timings=True):
    """csv with one row per recorded iteration; `timings=False` writes 0 seconds."""
    if not timings:
        trace = trace.without_timings()
    lines = [",".join(TRACE_HEADER), *map(_trace_line, trace)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_assignment(path, mrf=None):
    """one label per line; checked against `mrf` when given."""
    path = Path(path)
    labels = []
    for number, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise FormatError(f"malformed label {line.strip()!r}", path, number) from None
    x = Assignment(labels)
    if mrf is not None:
        mrf.layout.check_assignment(x)
    return x


def write_assignment(x, path):
    Path(path).write_text("".join(f"{label}\n" for label in x))
