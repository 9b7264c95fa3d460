import numpy as np
from pytest import fixture

from betheadmm.mrf import Layout, PairwiseMRF


@fixture
def two_node():
    return PairwiseMRF.from_tables(
        (2, 2), [(0, 1)], [[1.0, 0.0], [2.0, 0.0]], [[[0.5, 0.0], [0.0, 0.0]]]
    )


@fixture
def triangle():
    """attractive potts triangle where node 0 prefers label 0."""
    couplings = np.eye(2)
    return PairwiseMRF.from_tables(
        (2, 2, 2),
        [(0, 1), (0, 2), (1, 2)],
        [[0.5, 0.0], [0.0, 0.0], [0.0, 0.0]],
        [couplings, couplings, couplings],
    )


@fixture
def path3():
    return Layout((2, 2, 2), ((0, 1), (1, 2)))


@fixture
def rng():
    return np.random.default_rng(20240611)
