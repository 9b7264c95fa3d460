"""tree covers of a pairwise graph and the potentials each tree carries.

a plan lists trees by global node and edge ids. every tree has a local `Layout` with
its nodes in ascending global order, so local edge tables keep the global orientation
and a single index array maps the tree's flat tables into the global flat vector.
concatenating those index arrays in tree order gives the gather/scatter the solver
uses for consensus.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .mrf import Layout

__all__ = (
    "DecompositionError",
    "TreeSubgraph",
    "DecompositionPlan",
    "edge_decomposition",
    "tree_cover",
    "validate_cover",
    "split_potentials",
    "reconstruct_potentials",
    "consensus_constraints",
)

logger = logging.getLogger(__name__)


class DecompositionError(ValueError):
    """a decomposition that is undefined or does not cover its graph."""

    def __init__(self, message, defects=()):
        super().__init__(message)
        self.defects = list(defects)


@dataclass(frozen=True, eq=False)
class TreeSubgraph:
    """one tree of a cover, addressed by global node and edge ids."""

    tree_id: int
    nodes: tuple
    edges: tuple
    graph: Layout = field(repr=False)
    theta: np.ndarray = field(default=None, repr=False)
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(map(int, self.nodes))))
        object.__setattr__(self, "edges", tuple(sorted(map(int, self.edges))))

    @property
    def n(self):
        return len(self.nodes)

    @cached_property
    def position(self):
        return {u: i for i, u in enumerate(self.nodes)}

    @cached_property
    def layout(self):
        """the local layout; raises if an edge leaves the tree's nodes."""
        local = []
        for e in self.edges:
            u, v = self.graph.edges[e]
            if u not in self.position or v not in self.position:
                raise DecompositionError(f"tree {self.tree_id} edge {e} leaves the tree")
            local.append((self.position[u], self.position[v]))
        return Layout(tuple(self.graph.cardinalities[u] for u in self.nodes), tuple(local))

    @cached_property
    def index(self):
        """global flat index of every local flat entry."""
        graph = self.graph
        parts = [np.arange(graph.node_offsets[u], graph.node_offsets[u + 1]) for u in self.nodes]
        parts += [np.arange(graph.edge_offsets[e], graph.edge_offsets[e + 1]) for e in self.edges]
        return np.concatenate(parts).astype(np.intp) if parts else np.zeros(0, dtype=np.intp)

    @property
    def theta_node(self):
        return [self.theta[self.layout.node_slice(i)] for i in range(self.n)]

    @property
    def theta_edge(self):
        layout = self.layout
        return [
            self.theta[layout.edge_slice(j)].reshape(layout.edge_shape(j))
            for j in range(layout.num_edges)
        ]

    def same_structure(self, other):
        return (self.tree_id, self.nodes, self.edges) == (other.tree_id, other.nodes, other.edges)


def _memberships(graph, trees):
    nodes = [[] for _ in range(graph.num_nodes)]
    edges = [[] for _ in range(graph.num_edges)]
    for tree in sorted(trees, key=lambda t: t.tree_id):
        for i, u in enumerate(tree.nodes):
            if 0 <= u < graph.num_nodes:
                nodes[u].append((tree.tree_id, i))
        for j, e in enumerate(tree.edges):
            if 0 <= e < graph.num_edges:
                edges[e].append((tree.tree_id, j))
    return tuple(map(tuple, nodes)), tuple(map(tuple, edges))


@dataclass(frozen=True, eq=False)
class DecompositionPlan:
    """a tree cover `T` with the replication lists `S_u` and `S_uv`."""

    graph: Layout = field(repr=False)
    trees: tuple
    node_membership: tuple = field(repr=False)
    edge_membership: tuple = field(repr=False)

    @classmethod
    def from_trees(cls, graph, trees):
        """number the trees in order and derive the memberships."""
        trees = tuple(
            TreeSubgraph(i, nodes, edges, graph) for i, (nodes, edges) in enumerate(trees)
        )
        return cls(graph, trees, *_memberships(graph, trees))

    def __len__(self):
        return len(self.trees)

    def __eq__(self, other):
        if not isinstance(other, DecompositionPlan):
            return NotImplemented
        return (
            self.graph == other.graph
            and len(self.trees) == len(other.trees)
            and all(a.same_structure(b) for a, b in zip(self.trees, other.trees))
        )

    @property
    def has_potentials(self):
        return all(tree.theta is not None for tree in self.trees)

    @cached_property
    def offsets(self):
        """start of each tree's block in the concatenated per-tree vectors."""
        sizes = [tree.layout.size for tree in self.trees]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)

    def block(self, tau):
        return slice(self.offsets[tau], self.offsets[tau + 1])

    @cached_property
    def index(self):
        return np.concatenate([tree.index for tree in self.trees])

    @cached_property
    def replication(self):
        """number of copies of every global entry, as floats."""
        return np.bincount(self.index, minlength=self.graph.size).astype(float)

    @cached_property
    def phi_coef(self):
        return np.concatenate([tree.layout.phi_coef for tree in self.trees])

    @cached_property
    def rho_entries(self):
        return np.concatenate([np.full(tree.layout.size, tree.rho) for tree in self.trees])

    @cached_property
    def theta(self):
        return np.concatenate([tree.theta for tree in self.trees])

    @cached_property
    def max_tree_nodes(self):
        return max(tree.n for tree in self.trees)


def _singletons(graph, trees):
    covered = np.zeros(graph.num_nodes, dtype=bool)
    for nodes, _ in trees:
        covered[list(nodes)] = True
    return [((u,), ()) for u in np.flatnonzero(~covered)]


def edge_decomposition(mrf):
    """one two-node tree per edge, `|T| = |E|`.

    isolated nodes, if any, each get a single-node tree so the cover stays complete.
    """
    graph = getattr(mrf, "layout", mrf)
    if not graph.num_edges:
        raise DecompositionError("edge decomposition of an edgeless graph is undefined")
    trees = [((u, v), (e,)) for e, (u, v) in enumerate(graph.edges)]
    trees += _singletons(graph, trees)
    plan = DecompositionPlan.from_trees(graph, trees)
    logger.debug("edge decomposition with %d trees", len(plan))
    return plan


def _components(graph):
    if not graph.num_edges:
        return np.arange(graph.num_nodes)
    u, v = graph.edge_array[:, 0], graph.edge_array[:, 1]
    adjacency = coo_matrix(
        (np.ones(graph.num_edges), (u, v)), shape=(graph.num_nodes, graph.num_nodes)
    )
    return connected_components(adjacency, directed=False)[1]


def tree_cover(mrf, seed=0):
    """greedy breadth-first spanning forests over the still uncovered edges.

    each round starts from the lowest node touching an uncovered edge and takes the
    spanning tree of its uncovered component. components are handled in the order of
    their lowest node; the seed permutes the order neighbors are visited in.
    """
    graph = getattr(mrf, "layout", mrf)
    rng = np.random.default_rng(seed)
    labels = _components(graph)
    members = {}
    for u, label in enumerate(labels):
        members.setdefault(int(label), []).append(u)
    neighbors = [
        [graph.neighbors[u][i] for i in rng.permutation(len(graph.neighbors[u]))]
        for u in range(graph.num_nodes)
    ]
    covered = np.zeros(graph.num_edges, dtype=bool)
    open_degree = graph.degrees.copy()
    trees = []
    for nodes in sorted(members.values(), key=min):
        if not open_degree[nodes].any():
            trees.extend(((u,), ()) for u in nodes)
            continue
        cursor = 0
        while cursor < len(nodes):
            root = nodes[cursor]
            if not open_degree[root]:
                cursor += 1
                continue
            seen, queue, head, edges = {root}, [root], 0, []
            while head < len(queue):
                node = queue[head]
                head += 1
                for other, e in neighbors[node]:
                    if covered[e] or other in seen:
                        continue
                    seen.add(other)
                    queue.append(other)
                    edges.append(e)
            for e in edges:
                covered[e] = True
                open_degree[list(graph.edges[e])] -= 1
            trees.append((queue, edges))
    plan = DecompositionPlan.from_trees(graph, trees)
    logger.debug("tree cover with %d trees", len(plan))
    return plan


def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def validate_cover(plan, mrf=None):
    """a list of defects; an empty list means the plan is a valid tree cover."""
    graph = plan.graph if mrf is None else getattr(mrf, "layout", mrf)
    defects = []
    if mrf is not None and plan.graph != graph:
        defects.append("plan was built for a different graph")

    for position, tree in enumerate(plan.trees):
        tau = tree.tree_id
        if tau != position:
            defects.append(f"tree at position {position} has id {tau}")
        if not tree.nodes:
            defects.append(f"tree {tau} empty")
            continue
        if tree.rho <= 0:
            defects.append(f"tree {tau} has nonpositive rho {tree.rho}")
        bad = [u for u in tree.nodes if not 0 <= u < graph.num_nodes]
        bad_edges = [e for e in tree.edges if not 0 <= e < graph.num_edges]
        defects.extend(f"tree {tau} references nonexistent node {u}" for u in bad)
        defects.extend(f"tree {tau} references nonexistent edge {e}" for e in bad_edges)
        if len(set(tree.nodes)) != len(tree.nodes) or len(set(tree.edges)) != len(tree.edges):
            defects.append(f"tree {tau} repeats a node or edge")
        if bad or bad_edges:
            continue
        parent = {u: u for u in tree.nodes}
        cyclic = leaves = False
        for e in tree.edges:
            u, v = graph.edges[e]
            if u not in parent or v not in parent:
                defects.append(f"tree {tau} edge {e} endpoint outside the tree")
                leaves = True
                continue
            a, b = _find(parent, u), _find(parent, v)
            if a == b:
                cyclic = True
            else:
                parent[a] = b
        if cyclic:
            defects.append(f"tree {tau} cyclic")
        elif not leaves and len({_find(parent, u) for u in tree.nodes}) != 1:
            defects.append(f"tree {tau} disconnected")

    defects.extend(
        f"node {u} uncovered"
        for u in range(min(graph.num_nodes, len(plan.node_membership)))
        if not plan.node_membership[u]
    )
    defects.extend(
        f"edge {e} uncovered"
        for e in range(min(graph.num_edges, len(plan.edge_membership)))
        if not plan.edge_membership[e]
    )
    if len(plan.node_membership) != graph.num_nodes or len(plan.edge_membership) != graph.num_edges:
        defects.append("membership lists do not match the graph size")
        return defects

    nodes, edges = _memberships(graph, plan.trees)
    for kind, expected, actual in (
        ("node", nodes, plan.node_membership),
        ("edge", edges, plan.edge_membership),
    ):
        for i, (want, got) in enumerate(zip(expected, actual)):
            got = tuple(map(tuple, got))
            if [t for t, _ in got] != sorted(t for t, _ in got):
                defects.append(f"membership of {kind} {i} not sorted by tree id")
            elif got != want:
                defects.append(f"membership of {kind} {i} inconsistent with trees")
    return defects


def split_potentials(cost_mrf, plan, rho=1.0):
    """divide each cost table across its copies, weighted by `rho`.

    `theta_tau = l / sum_{tau' containing the entry} rho_tau'`, so that
    `sum_tau rho_tau theta_tau = l` entrywise.
    """
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (len(plan),))
    if np.any(rho <= 0):
        raise DecompositionError("every rho must be positive")
    trees = tuple(replace(tree, rho=float(r), theta=None) for tree, r in zip(plan.trees, rho))
    rho_entries = np.concatenate([np.full(tree.layout.size, tree.rho) for tree in trees])
    weight = np.bincount(plan.index, weights=rho_entries, minlength=plan.graph.size)
    missing = np.flatnonzero(weight <= 0)
    if missing.size:
        where = int(missing[0])
        graph = plan.graph
        if where < graph.node_size:
            what = f"node {graph.node_of_entry[where]}"
        else:
            what = f"edge {np.searchsorted(graph.edge_offsets, where, side='right') - 1}"
        raise DecompositionError(f"{what} has zero replication weight")
    cost = cost_mrf.potentials
    trees = tuple(
        replace(tree, theta=cost[tree.index] / weight[tree.index]) for tree in trees
    )
    return replace(plan, trees=trees)


def reconstruct_potentials(plan):
    """`sum_tau rho_tau theta_tau` in global coordinates."""
    return np.bincount(
        plan.index, weights=plan.rho_entries * plan.theta, minlength=plan.graph.size
    )


def consensus_constraints(plan, mrf=None):
    """copy entries tied by consensus, `(node part, edge part)`."""
    graph = plan.graph
    k = graph.k
    nodes = sum(len(s) * k[u] for u, s in enumerate(plan.node_membership) if len(s) > 1)
    edges = sum(
        len(s) * k[graph.edges[e][0]] * k[graph.edges[e][1]]
        for e, s in enumerate(plan.edge_membership)
        if len(s) > 1
    )
    return int(nodes), int(edges)
