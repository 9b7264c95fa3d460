from pathlib import Path

import numpy as np
from pytest import approx, mark, raises

from betheadmm.datagen import potts_grid3d, random_tree_mrf, tree_cross_graph
from betheadmm.decomposition import DecompositionError, edge_decomposition, tree_cover
from betheadmm.formats import (
    FormatError,
    read_assignment,
    read_model,
    read_plan,
    read_uai,
    write_assignment,
    write_model,
    write_plan,
    write_trace,
    write_uai,
)
from betheadmm.mrf import ModelError
from betheadmm.oracles import brute_force_map
from betheadmm.solver import IterationTrace, SolverConfig, TraceRow, run

HERE = Path(__file__).parent


def gen_cases():
    from markdown_it import MarkdownIt

    tokens = MarkdownIt().parse((HERE / "formats.md").read_text())
    name, model, expected = None, None, None
    for token in [*tokens, None]:
        if token is None or token.type == "hr":
            if name and model and expected:
                yield name, (model, expected)
            name, model, expected = None, None, None
        elif token.type == "inline" and name is None:
            name = token.content
        elif token.type == "fence" and token.info in {"pmrf", "uai"}:
            model = token.content
        elif token.type == "fence" and token.info == "map":
            expected = token.content


cases = dict(gen_cases())


def test_the_document_has_cases():
    assert len(cases) == 6


@mark.parametrize("name", cases)
def test_documented_models(name, tmp_path):
    model, expected = cases[name]
    labels, value = expected.splitlines()
    path = tmp_path / "model.txt"
    path.write_text(model)
    mrf = read_model(path)
    x, found = brute_force_map(mrf)
    assert list(x) == [int(y) for y in labels.split()]
    assert found == approx(float(value), rel=1e-12)
    write_model(mrf, tmp_path / "again.pmrf")
    assert read_model(tmp_path / "again.pmrf") == mrf


def test_model_round_trip(tmp_path):
    models = [
        random_tree_mrf(10, [2, 3, 4, 2, 3, 4, 2, 3, 4, 2], 3.0, seed=1),
        potts_grid3d(2, 3, 2, 3, 1.0, seed=2),
    ]
    for mrf in models:
        write_model(mrf, tmp_path / "model.pmrf")
        again = read_model(tmp_path / "model.pmrf")
        assert again == mrf
        assert again.potentials.tobytes() == mrf.potentials.tobytes()


def test_uai_round_trip(tmp_path):
    mrf = random_tree_mrf(6, 3, 2.0, seed=4)
    write_uai(mrf, tmp_path / "model.uai")
    again = read_uai(tmp_path / "model.uai")
    assert again.edges == mrf.edges
    assert np.abs(again.potentials - mrf.potentials).max() < 1e-12
    assert np.abs(read_model(tmp_path / "model.uai").potentials - mrf.potentials).max() < 1e-12


def test_uai_ones_are_zero_scores(tmp_path):
    path = tmp_path / "ones.uai"
    path.write_text("MARKOV\n1\n2\n1\n1 0\n2\n1.0 1.0\n")
    assert list(read_model(path).potentials) == [0.0, 0.0]


UAI_PREAMBLE = "MARKOV\n3\n2 2 2\n4\n1 0\n1 1\n1 2\n2 0 1\n"


def test_truncated_uai_table(tmp_path):
    path = tmp_path / "short.uai"
    path.write_text(UAI_PREAMBLE + "2\n1 1\n2\n1 1\n2\n1 1\n4\n1.0 1.0\n")
    with raises(FormatError) as error:
        read_model(path)
    assert "table for clique 3: expected 4 values, got 2" in str(error.value)
    assert error.value.line == 16


def test_uai_rejects_nonpositive_entries(tmp_path):
    path = tmp_path / "zero.uai"
    path.write_text(UAI_PREAMBLE + "2\n1 1\n2\n1 0\n2\n1 1\n4\n1 1 1 1\n")
    with raises(FormatError) as error:
        read_model(path)
    assert "clique 1" in str(error.value)


def test_uai_rejects_higher_order_cliques(tmp_path):
    path = tmp_path / "triple.uai"
    path.write_text("MARKOV\n3\n2 2 2\n1\n3 0 1 2\n8\n1 1 1 1 1 1 1 1\n")
    with raises(FormatError):
        read_model(path)


@mark.parametrize(
    "text,line",
    [
        ("", 1),
        ("GRAPH\n2\n", 1),
        ("PMRF\n2\n2 x\n", 3),
        ("PMRF\n2\n2 1\n0\n0 0\n0\n", 3),
        ("PMRF\n2\n2 2\n1\n0 5\n", 5),
        ("PMRF\n2\n2 2\n0\n0 0\n0 0\n0\n", 7),
        ("PMRF\n2\n2 2\n1\n0 1\n0 0\n0 0\n0 0 zero 0\n", 8),
    ],
)
def test_malformed_models(tmp_path, text, line):
    path = tmp_path / "bad.pmrf"
    path.write_text(text)
    with raises(FormatError) as error:
        read_model(path)
    assert error.value.line == line
    assert error.value.path == path


def test_duplicate_edges_are_model_errors(tmp_path):
    path = tmp_path / "twice.pmrf"
    path.write_text("PMRF\n2\n2 2\n2\n0 1\n1 0\n0 0\n0 0\n0 0 0 0\n0 0 0 0\n")
    with raises(FormatError) as error:
        read_model(path)
    assert isinstance(error.value.__cause__, ModelError)


def test_plan_round_trip(tmp_path, triangle):
    for plan in (edge_decomposition(triangle), tree_cover(triangle)):
        write_plan(plan, tmp_path / "plan.txt")
        assert read_plan(tmp_path / "plan.txt", triangle) == plan


def test_generated_plans_round_trip(tmp_path):
    mrf, plan = tree_cross_graph(3, 15, 3, 3, 1.0, seed=2)
    write_plan(plan, tmp_path / "plan.txt")
    write_model(mrf, tmp_path / "model.pmrf")
    assert read_plan(tmp_path / "plan.txt", read_model(tmp_path / "model.pmrf")) == plan


def test_plans_with_singleton_trees(tmp_path):
    mrf = random_tree_mrf(1, 2)
    path = tmp_path / "plan.txt"
    path.write_text("PLAN\n1\nTREE 0\n0\n\n")
    plan = read_plan(path, mrf)
    assert plan.trees[0].nodes == (0,) and plan.trees[0].edges == ()


def test_invalid_plans(tmp_path, triangle):
    path = tmp_path / "plan.txt"
    path.write_text("PLAN\n2\nTREE 0\n0 1\n0\nTREE 1\n1 2\n9\n")
    with raises(DecompositionError) as error:
        read_plan(path, triangle)
    assert "tree 1 references nonexistent edge 9" in error.value.defects
    path.write_text("PLAN\n1\nTREE 3\n0 1\n0\n")
    with raises(FormatError) as error:
        read_plan(path, triangle)
    assert error.value.line == 3


def test_write_trace(tmp_path):
    header = "iter,seconds,lp_obj,decoded_value,max_violation,primal_residual,dual_bound,"
    write_trace(IterationTrace(), tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == header + "ergodic_consensus\n"

    trace = IterationTrace()
    for i in (1, 2, 3):
        trace.append(TraceRow(i, 0.25 * i, 0.1, 1.0, 0.0, 0.5, 2.0 / 3.0, 0.0))
    write_trace(trace, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[1] == "1,0.25,0.10000000000000001,1,0,0.5,0.66666666666666663,0"
    write_trace(trace, tmp_path / "untimed.csv", timings=False)
    assert (tmp_path / "untimed.csv").read_text().splitlines()[3].startswith("3,0,")


def test_traces_are_reproducible(tmp_path, triangle):
    config = SolverConfig(max_iters=20, tol=0.0, trace_every=4)
    for name in ("first.csv", "second.csv"):
        solution = run(triangle, edge_decomposition(triangle), config)
        write_trace(solution.trace, tmp_path / name, timings=False)
    assert (tmp_path / "first.csv").read_bytes() == (tmp_path / "second.csv").read_bytes()


def test_assignments(tmp_path, triangle):
    write_assignment((1, 0, 1), tmp_path / "x.txt")
    assert (tmp_path / "x.txt").read_text() == "1\n0\n1\n"
    assert read_assignment(tmp_path / "x.txt", triangle) == (1, 0, 1)
    (tmp_path / "x.txt").write_text("1\n2\n0\n")
    with raises(ModelError) as error:
        read_assignment(tmp_path / "x.txt", triangle)
    assert error.value.node == 1
    (tmp_path / "x.txt").write_text("1\none\n")
    with raises(FormatError) as error:
        read_assignment(tmp_path / "x.txt")
    assert error.value.line == 2
