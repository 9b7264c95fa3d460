"""brute-force references for small instances.

enumeration runs over assignments in lexicographic order (node 0 most significant)
in fixed-size batches, so the first maximizer found is the lexicographically
smallest one.
"""

import itertools
import logging

import numpy as np
from scipy.special import logsumexp

from .mrf import Pseudomarginal, eval_assignment, layout_violation
from .trees import bethe_divergence, check_tree, sum_product
from .types import Assignment

__all__ = (
    "StateSpaceError",
    "brute_force_map",
    "brute_force_marginals",
    "check_lemma1",
    "random_marginals",
    "binary_lp_optimum",
    "MAP_LIMIT",
    "MARGINALS_LIMIT",
)

logger = logging.getLogger(__name__)

MAP_LIMIT, MARGINALS_LIMIT, BATCH = 10**7, 10**6, 1 << 16


class StateSpaceError(ValueError):
    """the joint state space is too large to enumerate."""


def _space(layout, limit):
    size = int(np.prod(layout.k, dtype=object)) if layout.num_nodes else 1
    if size > limit:
        raise StateSpaceError(f"{size} joint states exceed the enumeration limit {limit}")
    logger.debug("enumerating %d joint states", size)
    return size


def _batches(layout, size):
    """`(labels, flat indicator indices)` for consecutive blocks of assignments."""
    u, v = layout.edge_array[:, 0], layout.edge_array[:, 1]
    for start in range(0, size, BATCH):
        flat = np.arange(start, min(start + BATCH, size))
        labels = np.stack(np.unravel_index(flat, layout.cardinalities), axis=1)
        nodes = layout.node_offsets[:-1] + labels
        edges = layout.edge_offsets[:-1] + labels[:, u] * layout.k[v] + labels[:, v]
        yield labels, np.concatenate([nodes, edges], axis=1)


def brute_force_map(mrf):
    """the exact maximizer by enumeration and its score."""
    layout = mrf.layout
    size = _space(layout, MAP_LIMIT)
    best, best_labels = -np.inf, None
    for labels, index in _batches(layout, size):
        scores = mrf.potentials[index].sum(axis=1)
        i = int(np.argmax(scores))
        if scores[i] > best:
            best, best_labels = scores[i], labels[i]
    x = Assignment(best_labels)
    return x, eval_assignment(mrf, x)


def brute_force_marginals(tree, eta):
    """exact marginals and `log Z` of `p ∝ exp(sum eta)` by enumeration."""
    layout = getattr(tree, "layout", tree)
    eta = np.asarray(getattr(eta, "values", eta), dtype=float)
    size = _space(layout, MARGINALS_LIMIT)
    scores, indices = [], []
    for _, index in _batches(layout, size):
        scores.append(eta[index].sum(axis=1))
        indices.append(index)
    scores, indices = np.concatenate(scores), np.concatenate(indices)
    log_z = float(logsumexp(scores))
    weights = np.exp(scores - log_z)
    values = np.bincount(
        indices.ravel(), weights=np.repeat(weights, indices.shape[1]), minlength=layout.size
    )
    return Pseudomarginal(layout, values), log_z


def random_marginals(tree, rng, scale=1.0):
    """locally consistent, strictly positive marginals from random parameters."""
    layout = check_tree(tree)
    return Pseudomarginal(layout, sum_product(layout, rng.normal(0.0, scale, layout.size))[0])


def check_lemma1(tree, mu, nu, alpha, beta, tolerance=1e-8):
    """`alpha d_phi(mu || nu) - beta / 2 ||mu - nu||^2` for consistent tree marginals."""
    layout = check_tree(tree)
    mu = np.asarray(getattr(mu, "values", mu), dtype=float)
    nu = np.asarray(getattr(nu, "values", nu), dtype=float)
    for name, x in (("mu", mu), ("nu", nu)):
        if x.shape != (layout.size,) or not np.all(x > 0):
            raise ValueError(f"{name} must be strictly positive marginals on the tree")
        if layout_violation(layout, x) > tolerance:
            raise ValueError(f"{name} is not locally consistent on the tree")
    gap = mu - nu
    return alpha * bethe_divergence(layout, mu, nu) - 0.5 * beta * float(np.dot(gap, gap))


def binary_lp_optimum(mrf, limit=10**6):
    """the local polytope optimum of a small binary model.

    vertices of the binary local polytope are half-integral, so maximizing over every
    half-integral point (nodes in {0, 1/2, 1}; edges with both ends at 1/2 either
    agreeing or disagreeing) finds the optimum. returns `(value, mu)`.
    """
    layout = mrf.layout
    if any(k != 2 for k in layout.cardinalities):
        raise ValueError("binary_lp_optimum needs every cardinality to be 2")
    if 3**layout.num_nodes > limit:
        raise StateSpaceError(f"3^{layout.num_nodes} node patterns exceed the limit {limit}")
    best, best_mu = -np.inf, None
    agreeing, disagreeing = np.array([[0.5, 0.0], [0.0, 0.5]]), np.array([[0.0, 0.5], [0.5, 0.0]])
    for pattern in itertools.product((0.0, 0.5, 1.0), repeat=layout.num_nodes):
        p = np.array(pattern)
        halves = [e for e, (u, v) in enumerate(layout.edges) if p[u] == p[v] == 0.5]
        for agree in itertools.product((True, False), repeat=len(halves)):
            choice = dict(zip(halves, agree))
            values = np.empty(layout.size)
            for u in range(layout.num_nodes):
                values[layout.node_slice(u)] = (1.0 - p[u], p[u])
            for e, (u, v) in enumerate(layout.edges):
                if e in choice:
                    table = agreeing if choice[e] else disagreeing
                else:
                    table = np.outer((1.0 - p[u], p[u]), (1.0 - p[v], p[v]))
                values[layout.edge_slice(e)] = table.ravel()
            value = float(np.dot(values, mrf.potentials))
            if value > best:
                best, best_mu = value, values
    return best, Pseudomarginal(layout, best_mu)
