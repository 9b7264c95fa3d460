"""pairwise markov random fields, pseudomarginals and the local polytope.

every table lives in one flat vector. node tables come first in node order, then
edge tables in edge order, each edge table row-major with the lower node id as the
row. the same `Layout` indexes potentials, pseudomarginals and dual variables, so
the solver can do its bookkeeping with whole-vector numpy operations.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .types import Assignment

__all__ = (
    "Layout",
    "ModelError",
    "PairwiseMRF",
    "Pseudomarginal",
    "eval_assignment",
    "to_cost",
    "lp_objective",
    "polytope_violation",
    "layout_violation",
    "round_solution",
)

logger = logging.getLogger(__name__)


class ModelError(ValueError):
    """an invalid model or an input that does not fit one."""

    def __init__(self, message, *, node=None, edge=None):
        super().__init__(message)
        self.node, self.edge = node, edge


@dataclass(frozen=True)
class Layout:
    """flat coordinates for the node and edge tables of a graph.

    edges are `(u, v)` pairs with `u < v`; an edge table has shape `(k_u, k_v)`.
    """

    cardinalities: tuple
    edges: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cardinalities", tuple(map(int, self.cardinalities)))
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))

    @property
    def num_nodes(self):
        return len(self.cardinalities)

    @property
    def num_edges(self):
        return len(self.edges)

    @cached_property
    def k(self):
        return np.array(self.cardinalities, dtype=np.intp)

    @cached_property
    def edge_array(self):
        return np.array(self.edges, dtype=np.intp).reshape(-1, 2)

    @cached_property
    def node_offsets(self):
        return np.concatenate([[0], np.cumsum(self.k)]).astype(np.intp)

    @cached_property
    def edge_offsets(self):
        sizes = self.k[self.edge_array[:, 0]] * self.k[self.edge_array[:, 1]]
        return (self.node_offsets[-1] + np.concatenate([[0], np.cumsum(sizes)])).astype(np.intp)

    @property
    def node_size(self):
        return int(self.node_offsets[-1])

    @property
    def size(self):
        return int(self.edge_offsets[-1])

    def node_slice(self, u):
        return slice(self.node_offsets[u], self.node_offsets[u + 1])

    def edge_slice(self, e):
        return slice(self.edge_offsets[e], self.edge_offsets[e + 1])

    def edge_shape(self, e):
        u, v = self.edges[e]
        return self.cardinalities[u], self.cardinalities[v]

    @cached_property
    def degrees(self):
        return np.bincount(self.edge_array.ravel(), minlength=self.num_nodes)

    @cached_property
    def node_of_entry(self):
        return np.repeat(np.arange(self.num_nodes), self.k)

    @cached_property
    def marginalization(self):
        """index arrays that sum edge tables onto their endpoints.

        returns `(row_key, row_target, col_key, col_target)`. `row_key` groups the edge
        entries of one `(e, x_u)` row and `row_target` holds the flat index of `mu_u(x_u)`
        for each group; likewise for columns.
        """
        row_key, row_target, col_key, col_target = [], [], [], []
        rows = cols = 0
        for e, (u, v) in enumerate(self.edges):
            ku, kv = self.cardinalities[u], self.cardinalities[v]
            row_key.append(rows + np.repeat(np.arange(ku), kv))
            col_key.append(cols + np.tile(np.arange(kv), ku))
            row_target.append(self.node_offsets[u] + np.arange(ku))
            col_target.append(self.node_offsets[v] + np.arange(kv))
            rows, cols = rows + ku, cols + kv
        return tuple(
            np.concatenate(x).astype(np.intp) if x else np.zeros(0, dtype=np.intp)
            for x in (row_key, row_target, col_key, col_target)
        )

    @cached_property
    def phi_coef(self):
        """coefficients of the negative bethe entropy, one per flat entry.

        node entries carry `-(d_u - 1)`, edge entries carry 1.
        """
        coef = np.ones(self.size)
        coef[: self.node_size] = -(self.degrees[self.node_of_entry] - 1)
        return coef

    @cached_property
    def neighbors(self):
        out = [[] for _ in range(self.num_nodes)]
        for e, (u, v) in enumerate(self.edges):
            out[u].append((v, e))
            out[v].append((u, e))
        return tuple(tuple(sorted(x)) for x in out)

    @cached_property
    def traversal(self):
        """breadth first order from the lowest node of each component.

        returns `(order, parent, parent_edge, components)`; roots have parent -1.
        """
        parent = np.full(self.num_nodes, -1, dtype=np.intp)
        parent_edge = np.full(self.num_nodes, -1, dtype=np.intp)
        seen = np.zeros(self.num_nodes, dtype=bool)
        order, components = [], 0
        for root in range(self.num_nodes):
            if seen[root]:
                continue
            components += 1
            seen[root], queue, head = True, [root], 0
            while head < len(queue):
                node = queue[head]
                head += 1
                for other, e in self.neighbors[node]:
                    if not seen[other]:
                        seen[other] = True
                        parent[other], parent_edge[other] = node, e
                        queue.append(other)
            order.extend(queue)
        return tuple(order), parent, parent_edge, components

    def indicator_index(self, labels):
        """flat indices selected by an assignment, nodes first then edges."""
        x = np.asarray(labels, dtype=np.intp)
        nodes = self.node_offsets[:-1] + x
        u, v = self.edge_array[:, 0], self.edge_array[:, 1]
        edges = self.edge_offsets[:-1] + x[u] * self.k[v] + x[v]
        return np.concatenate([nodes, edges])

    def check_assignment(self, labels):
        if len(labels) != self.num_nodes:
            raise ModelError(
                f"assignment has {len(labels)} labels for {self.num_nodes} nodes",
                node=min(len(labels), self.num_nodes),
            )
        for u, (x, k) in enumerate(zip(labels, self.cardinalities)):
            if not 0 <= x < k:
                raise ModelError(f"label {x} of node {u} outside [0, {k})", node=u)


@dataclass(frozen=True, eq=False)
class PairwiseMRF:
    """a pairwise mrf with log-domain scores `f` stored flat over `layout`."""

    layout: Layout
    potentials: np.ndarray

    def __post_init__(self):
        potentials = np.array(self.potentials, dtype=float)
        if potentials.shape != (self.layout.size,):
            raise ModelError(
                f"expected {self.layout.size} potential entries, got {potentials.size}"
            )
        bad = np.flatnonzero(~np.isfinite(potentials))
        if bad.size:
            where = int(bad[0])
            if where < self.layout.node_size:
                node = int(self.layout.node_of_entry[where])
                raise ModelError(f"non-finite potential at node {node}", node=node)
            edge = int(np.searchsorted(self.layout.edge_offsets, where, side="right") - 1)
            raise ModelError(f"non-finite potential at edge {edge}", edge=edge)
        potentials.setflags(write=False)
        object.__setattr__(self, "potentials", potentials)

    @classmethod
    def from_tables(cls, cardinalities, edges, node_potentials=None, edge_potentials=None):
        """build a model, canonicalizing each edge to lower-index-first.

        missing tables default to zeros.
        """
        cardinalities = tuple(map(int, cardinalities))
        if not cardinalities:
            raise ModelError("a model needs at least one node")
        for u, k in enumerate(cardinalities):
            if k < 2:
                raise ModelError(f"node {u} has cardinality {k} < 2", node=u)
        n = len(cardinalities)
        if node_potentials is None:
            node_potentials = [np.zeros(k) for k in cardinalities]
        if edge_potentials is None:
            edge_potentials = [None] * len(edges)
        if len(node_potentials) != n:
            raise ModelError(f"expected {n} node tables, got {len(node_potentials)}")
        if len(edge_potentials) != len(edges):
            raise ModelError(f"expected {len(edges)} edge tables, got {len(edge_potentials)}")

        canonical, tables, seen, flipped = [], [], {}, 0
        for e, ((u, v), table) in enumerate(zip(edges, edge_potentials)):
            u, v = int(u), int(v)
            if u == v:
                raise ModelError(f"edge {e} is a self-loop on node {u}", node=u, edge=e)
            for w in (u, v):
                if not 0 <= w < n:
                    raise ModelError(f"edge {e} references missing node {w}", node=w, edge=e)
            shape = cardinalities[u], cardinalities[v]
            table = np.zeros(shape) if table is None else np.asarray(table, dtype=float)
            if table.shape != shape:
                raise ModelError(
                    f"edge {e} table has shape {table.shape}, expected {shape}", edge=e
                )
            if u > v:
                u, v, table = v, u, table.T
                flipped += 1
            if (u, v) in seen:
                raise ModelError(f"edge {e} duplicates edge {seen[u, v]}", edge=e)
            seen[u, v] = e
            canonical.append((u, v))
            tables.append(table.ravel())

        flat = []
        for u, (table, k) in enumerate(zip(node_potentials, cardinalities)):
            table = np.asarray(table, dtype=float).ravel()
            if table.shape != (k,):
                raise ModelError(f"node {u} table has {table.size} entries, expected {k}", node=u)
            flat.append(table)
        if flipped:
            logger.debug("reoriented %d edges to u < v", flipped)
        return cls(Layout(cardinalities, canonical), np.concatenate(flat + tables))

    @property
    def num_nodes(self):
        return self.layout.num_nodes

    @property
    def cardinalities(self):
        return self.layout.cardinalities

    @property
    def edges(self):
        return self.layout.edges

    @property
    def node_potentials(self):
        return [self.potentials[self.layout.node_slice(u)] for u in range(self.num_nodes)]

    @property
    def edge_potentials(self):
        return [
            self.potentials[self.layout.edge_slice(e)].reshape(self.layout.edge_shape(e))
            for e in range(self.layout.num_edges)
        ]

    def edge_index(self, u, v):
        """the id of the edge joining `u` and `v`."""
        key = (min(u, v), max(u, v))
        index = getattr(self, "_edge_index", None)
        if index is None:
            index = {edge: e for e, edge in enumerate(self.edges)}
            object.__setattr__(self, "_edge_index", index)
        return index[key]

    def __eq__(self, other):
        if not isinstance(other, PairwiseMRF):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.potentials, other.potentials)

    def __repr__(self):
        return f"<PairwiseMRF nodes={self.num_nodes} edges={self.layout.num_edges}>"


@dataclass(frozen=True, eq=False)
class Pseudomarginal:
    """node and edge marginal tables over a graph or a tree."""

    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.layout.size,):
            raise ModelError(f"expected {self.layout.size} marginal entries, got {values.size}")
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, layout):
        values = np.empty(layout.size)
        for u, k in enumerate(layout.cardinalities):
            values[layout.node_slice(u)] = 1.0 / k
        for e in range(layout.num_edges):
            ku, kv = layout.edge_shape(e)
            values[layout.edge_slice(e)] = 1.0 / (ku * kv)
        return cls(layout, values)

    @classmethod
    def from_assignment(cls, layout, labels):
        layout.check_assignment(labels)
        values = np.zeros(layout.size)
        values[layout.indicator_index(labels)] = 1.0
        return cls(layout, values)

    @classmethod
    def from_tables(cls, layout, node_marginals, edge_marginals=()):
        flat = [np.asarray(x, dtype=float).ravel() for x in node_marginals]
        flat += [np.asarray(x, dtype=float).ravel() for x in edge_marginals]
        return cls(layout, np.concatenate(flat) if flat else np.zeros(0))

    @property
    def node_marginals(self):
        return [self.values[self.layout.node_slice(u)] for u in range(self.layout.num_nodes)]

    @property
    def edge_marginals(self):
        return [
            self.values[self.layout.edge_slice(e)].reshape(self.layout.edge_shape(e))
            for e in range(self.layout.num_edges)
        ]

    def node(self, u):
        return self.values[self.layout.node_slice(u)]

    def edge(self, e):
        return self.values[self.layout.edge_slice(e)].reshape(self.layout.edge_shape(e))


def _require_same_layout(a, b, what):
    if a is not b and a != b:
        raise ModelError(f"{what} is shaped for a different graph")


def eval_assignment(mrf, x):
    """the score `sum_u f_u(x_u) + sum_uv f_uv(x_u, x_v)` of an assignment."""
    mrf.layout.check_assignment(x)
    return float(mrf.potentials[mrf.layout.indicator_index(x)].sum())


def to_cost(mrf):
    """negate every potential; `l = -f`."""
    return PairwiseMRF(mrf.layout, -mrf.potentials)


def lp_objective(mu, mrf):
    """the linear objective `<mu, f>`."""
    _require_same_layout(mu.layout, mrf.layout, "pseudomarginal")
    return float(np.dot(mu.values, mrf.potentials))


def layout_violation(layout, values):
    """largest violated local polytope constraint of a flat pseudomarginal."""
    values = np.asarray(values, dtype=float)
    if not values.size:
        return 0.0
    worst = max(0.0, -float(values.min()))
    nodes = values[: layout.node_size]
    totals = np.bincount(layout.node_of_entry, weights=nodes, minlength=layout.num_nodes)
    worst = max(worst, float(np.abs(totals - 1.0).max(initial=0.0)))
    if layout.num_edges:
        edges = values[layout.node_size :]
        row_key, row_target, col_key, col_target = layout.marginalization
        rows = np.bincount(row_key, weights=edges, minlength=row_target.size)
        cols = np.bincount(col_key, weights=edges, minlength=col_target.size)
        worst = max(worst, float(np.abs(rows - values[row_target]).max()))
        worst = max(worst, float(np.abs(cols - values[col_target]).max()))
    return worst


def polytope_violation(mu, mrf=None):
    """max violation of nonnegativity, normalization and local consistency."""
    if mrf is not None:
        _require_same_layout(mu.layout, mrf.layout, "pseudomarginal")
    return layout_violation(mu.layout, mu.values)


def round_solution(mu):
    """node-based rounding: per node argmax, ties to the lowest label."""
    return Assignment(int(np.argmax(table)) for table in mu.node_marginals)
