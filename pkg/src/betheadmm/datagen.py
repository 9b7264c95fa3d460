"""synthetic benchmark instances.

every generator splits its seed into independent PCG64 streams, one for structure,
one for node potentials and one for edge potentials, so changing the edge set of a
family does not reshuffle the unary draws.
"""

import logging

import numpy as np

from .decomposition import DecompositionPlan
from .mrf import Layout, PairwiseMRF

__all__ = ("potts_grid3d", "tree_cross_graph", "random_tree_mrf", "streams", "grid_edge_count")

logger = logging.getLogger(__name__)


def streams(seed):
    """`(structure, unary, pairwise)` generators for one seed."""
    return tuple(
        np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(3)
    )


def grid_edge_count(m, n, t):
    return t * m * (n - 1) + t * n * (m - 1) + m * n * (t - 1)


def _potts(cardinalities, edges, unary_rng, pairwise_rng, a):
    """uniform `[-a, a]` unaries and potts couplings `b_uv ~ U[-1, 1]` on the diagonal."""
    node = [unary_rng.uniform(-a, a, k) for k in cardinalities]
    couplings = pairwise_rng.uniform(-1.0, 1.0, len(edges))
    edge = []
    for (u, v), b in zip(edges, couplings):
        table = np.zeros((cardinalities[u], cardinalities[v]))
        np.fill_diagonal(table, b)
        edge.append(table)
    return PairwiseMRF.from_tables(cardinalities, edges, node, edge)


def potts_grid3d(m, n, t, k, a, seed=0):
    """an `m x n x t` six-neighbour grid with potts couplings.

    node `(x, y, z)` has id `x + m (y + n z)`.
    """
    if min(m, n, t) < 1 or k < 2 or a <= 0:
        raise ValueError("potts_grid3d needs m, n, t >= 1, k >= 2 and a > 0")
    _, unary, pairwise = streams(seed)
    edges = []
    for z in range(t):
        for y in range(n):
            for x in range(m):
                u = x + m * (y + n * z)
                if x + 1 < m:
                    edges.append((u, u + 1))
                if y + 1 < n:
                    edges.append((u, u + m))
                if z + 1 < t:
                    edges.append((u, u + m * n))
    mrf = _potts((k,) * (m * n * t), edges, unary, pairwise, a)
    logger.debug("potts grid %dx%dx%d with %d edges", m, n, t, len(edges))
    return mrf


def _binary_tree_edges(s, offset=0):
    return [(offset + (i - 1) // 2, offset + i) for i in range(1, s)]


def tree_cross_graph(m, s, n, k, a, seed=0):
    """`m` complete binary trees of `s` nodes joined by sampled cross edges.

    for each ordered pair `(i, j)`, `n` sources are drawn from tree `i` with replacement
    and `n` distinct targets from tree `j`. the cross edges of pair `(i, j)` belong to
    augmented tree `i`; an edge already drawn by an earlier pair is dropped. returns the
    model and the plan of the `m` augmented trees.
    """
    if n > s:
        raise ValueError(f"cannot sample {n} distinct nodes from trees of {s}")
    if m < 2 or s < 1 or k < 2 or a <= 0:
        raise ValueError("tree_cross_graph needs m >= 2, s >= 1, k >= 2 and a > 0")
    structure, unary, pairwise = streams(seed)
    owner = {}
    for i in range(m):
        for u, v in _binary_tree_edges(s, i * s):
            owner[u, v] = i
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            sources = structure.integers(0, s, size=n)
            targets = structure.choice(s, size=n, replace=False)
            for x, y in zip(sources, targets):
                u, v = i * s + int(x), j * s + int(y)
                owner.setdefault((min(u, v), max(u, v)), i)
    edges = sorted(owner)
    mrf = _potts((k,) * (m * s), edges, unary, pairwise, a)

    trees = []
    for i in range(m):
        nodes = set(range(i * s, (i + 1) * s))
        ids = [e for e, edge in enumerate(edges) if owner[edge] == i]
        for e in ids:
            nodes.update(edges[e])
        trees.append((sorted(nodes), ids))
    plan = DecompositionPlan.from_trees(mrf.layout, trees)
    logger.debug("tree cross graph with %d edges over %d trees", len(edges), m)
    return mrf, plan


def _prufer_edges(sequence, n):
    degree = np.ones(n, dtype=int)
    for x in sequence:
        degree[x] += 1
    edges = []
    for x in sequence:
        leaf = int(np.flatnonzero(degree == 1)[0])
        edges.append((min(leaf, x), max(leaf, x)))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = np.flatnonzero(degree == 1)
    edges.append((int(u), int(v)))
    return sorted(edges)


def random_tree_mrf(n_nodes, k, a=1.0, seed=0):
    """a uniformly random spanning tree from a prufer sequence, potentials `U[-a, a]`.

    `k` is one cardinality for all nodes or a sequence of them.
    """
    if n_nodes < 1:
        raise ValueError("random_tree_mrf needs at least one node")
    structure, unary, pairwise = streams(seed)
    cardinalities = tuple(np.broadcast_to(np.asarray(k, dtype=int), (n_nodes,)).tolist())
    if n_nodes == 1:
        edges = []
    else:
        edges = _prufer_edges(structure.integers(0, n_nodes, size=n_nodes - 2), n_nodes)
    layout = Layout(cardinalities, edges)
    node = [unary.uniform(-a, a, kk) for kk in cardinalities]
    edge = [pairwise.uniform(-a, a, layout.edge_shape(e)) for e in range(len(edges))]
    return PairwiseMRF.from_tables(cardinalities, edges, node, edge)
