"""exact inference on trees and the bethe entropy geometry.

sum-product gives the maximizer of `<m, eta> + H_bethe(m)` over the tree's local
polytope, which is how the bethe-admm subproblem is solved. messages stay in the log
domain and are max-normalized on every hop; the shifts of the upward pass add up to
the log partition function.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .mrf import Layout, Pseudomarginal
from .types import Assignment

__all__ = (
    "TreeError",
    "TreeParameters",
    "check_tree",
    "sum_product_marginals",
    "max_product_map",
    "bethe_entropy",
    "bethe_gradient",
    "bethe_divergence",
)

CLAMP = 1e-300


class TreeError(ValueError):
    """the input graph is not a tree."""


@dataclass(frozen=True, eq=False)
class TreeParameters:
    """log-domain tables `eta` on the nodes and edges of a tree."""

    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameter entries, got {values.size}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_tables(cls, layout, eta_node, eta_edge=()):
        flat = [np.asarray(x, dtype=float).ravel() for x in [*eta_node, *eta_edge]]
        return cls(layout, np.concatenate(flat))

    @property
    def eta_node(self):
        return [self.values[self.layout.node_slice(u)] for u in range(self.layout.num_nodes)]

    @property
    def eta_edge(self):
        return [
            self.values[self.layout.edge_slice(e)].reshape(self.layout.edge_shape(e))
            for e in range(self.layout.num_edges)
        ]


def _layout(tree):
    return getattr(tree, "layout", tree)


def _values(x, layout):
    values = np.asarray(getattr(x, "values", x), dtype=float)
    if values.shape != (layout.size,):
        raise ValueError(f"expected {layout.size} entries on the tree, got {values.size}")
    return values


def check_tree(tree):
    """raise `TreeError` unless the layout is a single connected acyclic graph."""
    layout = _layout(tree)
    if not layout.num_nodes:
        raise TreeError("a tree needs at least one node")
    if layout.num_edges != layout.num_nodes - 1 or layout.traversal[3] != 1:
        raise TreeError(
            f"graph with {layout.num_nodes} nodes and {layout.num_edges} edges is not a tree"
        )
    return layout


def _tables(layout, values):
    nodes = [values[layout.node_slice(u)] for u in range(layout.num_nodes)]
    edges = [
        values[layout.edge_slice(e)].reshape(layout.edge_shape(e)) for e in range(layout.num_edges)
    ]
    return nodes, edges


def _oriented(layout, edges, child, parent_edge):
    """the edge table of `child` with the parent on the rows."""
    e = parent_edge[child]
    return edges[e] if layout.edges[e][1] == child else edges[e].T


def sum_product(layout, eta):
    """flat marginals and log partition for flat parameters on a checked tree."""
    order, parent, parent_edge, _ = layout.traversal
    node, edge = _tables(layout, eta)
    inbox = [np.zeros(k) for k in layout.cardinalities]
    up, down = [None] * layout.num_nodes, [None] * layout.num_nodes
    log_z = 0.0

    for c in reversed(order):
        p = parent[c]
        if p < 0:
            continue
        message = logsumexp(_oriented(layout, edge, c, parent_edge) + (node[c] + inbox[c]), axis=1)
        shift = message.max()
        up[c] = message - shift
        inbox[p] = inbox[p] + up[c]
        log_z += shift

    root = order[0]
    down[root] = np.zeros(layout.cardinalities[root])
    log_z += float(logsumexp(node[root] + inbox[root]))

    out = np.empty(layout.size)
    for c in order:
        p = parent[c]
        if p >= 0:
            table = _oriented(layout, edge, c, parent_edge)
            cavity = node[p] + inbox[p] + down[p] - up[c]
            message = logsumexp(table + cavity[:, None], axis=0)
            down[c] = message - message.max()
            joint = table + cavity[:, None] + (node[c] + inbox[c])[None, :]
            joint = np.exp(joint - logsumexp(joint))
            e = parent_edge[c]
            out[layout.edge_slice(e)] = (joint if layout.edges[e][1] == c else joint.T).ravel()
        belief = node[c] + inbox[c] + down[c]
        out[layout.node_slice(c)] = np.exp(belief - logsumexp(belief))
    return out, log_z


def sum_product_marginals(tree, eta):
    """exact marginals and `log Z` of `p(x) ∝ exp(sum eta)` on a tree."""
    layout = check_tree(tree)
    values, log_z = sum_product(layout, _values(eta, layout))
    return Pseudomarginal(layout, values), log_z


def max_product_map(tree, scores):
    """the exact maximizer of the summed scores on a tree and its value.

    backtracking takes the lowest label on ties.
    """
    layout = check_tree(tree)
    scores = _values(scores, layout)
    order, parent, parent_edge, _ = layout.traversal
    node, edge = _tables(layout, scores)
    inbox = [np.zeros(k) for k in layout.cardinalities]
    choice = [None] * layout.num_nodes

    for c in reversed(order):
        p = parent[c]
        if p < 0:
            continue
        candidates = _oriented(layout, edge, c, parent_edge) + (node[c] + inbox[c])[None, :]
        choice[c] = candidates.argmax(axis=1)
        inbox[p] = inbox[p] + candidates.max(axis=1)

    labels = np.zeros(layout.num_nodes, dtype=np.intp)
    root = order[0]
    labels[root] = int(np.argmax(node[root] + inbox[root]))
    for c in order:
        if parent[c] >= 0:
            labels[c] = choice[c][labels[parent[c]]]
    x = Assignment(labels)
    return x, float(scores[layout.indicator_index(x)].sum())


def negative_entropy(layout, values):
    """`phi(m) = -H_bethe(m)` with `0 log 0 = 0` below the clamp threshold."""
    values = np.where(values < CLAMP, 0.0, values)
    return float(np.dot(layout.phi_coef, xlogy(values, values)))


def bethe_entropy(tree, m):
    """`sum_u H_u - sum_uv I_uv`, written as `sum_uv H_uv - sum_u (d_u - 1) H_u`."""
    layout = _layout(tree)
    return -negative_entropy(layout, _values(m, layout))


def gradient(layout, values):
    """coordinatewise gradient of `phi` at a flat point."""
    if not np.all(np.isfinite(values)):
        raise ValueError("bethe gradient needs finite marginals")
    return layout.phi_coef * (1.0 + np.log(np.maximum(values, CLAMP)))


def bethe_gradient(tree, m):
    """gradient of the negative bethe entropy, one table per node and edge."""
    layout = _layout(tree)
    return TreeParameters(layout, gradient(layout, _values(m, layout)))


def bethe_divergence(tree, m, m_ref):
    """the bregman divergence `phi(m) - phi(m_ref) - <grad phi(m_ref), m - m_ref>`.

    for locally consistent tree marginals this is the kl divergence of the joints.
    """
    layout = _layout(tree)
    m, m_ref = _values(m, layout), _values(m_ref, layout)
    m = np.maximum(m, CLAMP)
    m_ref = np.maximum(m_ref, CLAMP)
    return (
        negative_entropy(layout, m)
        - negative_entropy(layout, m_ref)
        - float(np.dot(gradient(layout, m_ref), m - m_ref))
    )
