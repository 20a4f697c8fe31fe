import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewphoton.assembly import (
    SMatrixExpression,
    SetPartition,
    assemble_cluster_route,
    assemble_main_result_route,
    bell,
    block_assignments,
    dump_expression,
    engine_s_pieces,
    enumerate_partitions,
    expressions_equal,
    kerr_green_pieces,
    kerr_s_pieces,
    main_result_classes,
    multinomial_count,
    subset_pairs,
)
from fewphoton.distribution import Block
from fewphoton.kerr import KerrParams, connected_two_photon, single_photon_s
from fewphoton.system import CapacityError, build_kerr

P0 = KerrParams(0.0, 1.0, 1.0)


def _brute_partitions(n):
    """Set partitions by merging every labelling; slow but obviously complete."""
    seen = set()
    for labels in itertools.product(range(n), repeat=n):
        groups = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, []).append(i)
        seen.add(tuple(sorted(tuple(g) for g in groups.values())))
    return seen


def test_partitions_small():
    assert [str(p) for p in enumerate_partitions(2)] == ["{1,2}", "{1}{2}"]
    three = enumerate_partitions(3)
    assert len(three) == 5
    assert sorted(p.sizes for p in three) == [(1, 1, 1), (1, 2), (1, 2), (1, 2), (3,)]


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_partitions_match_brute_force(n):
    found = {p.blocks for p in enumerate_partitions(n)}
    assert len(found) == len(enumerate_partitions(n)) == bell(n)
    assert found == _brute_partitions(n)


def test_bell_numbers():
    assert [bell(n) for n in range(7)] == [1, 1, 2, 5, 15, 52, 203]


def test_partition_capacity_and_validation():
    with pytest.raises(CapacityError):
        enumerate_partitions(7)
    with pytest.raises(ValueError):
        SetPartition(((0, 1), (1, 2)))
    with pytest.raises(ValueError):
        SetPartition(((0,), (2,)))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_block_assignments_are_multinomial(n):
    for part in enumerate_partitions(n):
        found = block_assignments(part)
        assert len(found) == multinomial_count(part)
        assert len(set(found)) == len(found)


def test_pair_single_assignments_at_three():
    part = SetPartition(((0, 1), (2,)))
    assert len(block_assignments(part)) == 3


def test_main_result_class_counts():
    assert len(main_result_classes(5)) == 6
    assert main_result_classes(2)[1].subset_pairs == 4
    assert len(subset_pairs(2, 1)) == 4
    assert [c.bypass_pairings for c in main_result_classes(3)] == [6, 2, 1, 1]


def test_cluster_route_single_photon():
    expr = assemble_cluster_route(kerr_s_pieces(P0), 1)
    (term,) = expr.terms
    assert term.pairings == {(0, 0)}
    assert term([0.4], [0.4]) == pytest.approx(complex(single_photon_s(P0, 0.4)))


def test_cluster_route_two_photon_structure():
    expr = assemble_cluster_route(kerr_s_pieces(P0), 2)
    assert expr.group_sizes() == {(1, 1): 2, (2,): 1}
    paired = expr.term({Block((0,), (1,)), Block((1,), (0,))})
    assert paired([0.3, -0.4], [-0.4, 0.3]) == pytest.approx(complex(single_photon_s(P0, 0.3) * single_photon_s(P0, -0.4)))
    connected = expr.term({Block((0, 1), (0, 1))})
    assert connected([0.3, -0.4], [0.5, -0.6]) == connected_two_photon(P0, 0.3, -0.4, 0.5, -0.6)


def test_cluster_route_group_counts():
    sizes = [assemble_cluster_route(kerr_s_pieces(P0), n).group_sizes() for n in (1, 2, 3)]
    assert sizes[2] == {(1, 1, 1): 6, (1, 2): 9, (3,): 1}
    assert [sum(g.values()) for g in sizes] == [1, 3, 16]


def test_cluster_route_missing_piece():
    with pytest.raises(KeyError):
        assemble_cluster_route({1: lambda p, k: 1.0}, 2)


def test_main_result_route_single_photon():
    sys = build_kerr(0.0, 1.0, 1.0, dim=2)
    expr = assemble_main_result_route(sys, 1)
    (term,) = expr.terms
    assert term([0.4], [0.4]) == pytest.approx(complex(single_photon_s(P0, 0.4)), rel=1e-14)


def test_main_result_route_capacity():
    with pytest.raises(CapacityError):
        assemble_main_result_route(build_kerr(0, 1, 1, dim=6), 5)


@pytest.mark.parametrize("n,tol", [(1, 1e-12), (2, 1e-10), (3, 1e-8)])
def test_routes_agree(n, tol):
    sys = build_kerr(P0.omega_c, P0.chi, P0.gamma, dim=n + 1)
    report = expressions_equal(assemble_main_result_route(sys, n), assemble_cluster_route(kerr_s_pieces(P0), n),
                               samples=20)
    assert report.structural_match
    assert report.max_relative_deviation < tol


def test_routes_agree_with_swapped_sources():
    # closed forms feed the main-result route, the engine feeds the cluster route
    params = KerrParams(0.4, -0.8, 1.2)
    sys = build_kerr(params.omega_c, params.chi, params.gamma, dim=4)
    main = assemble_main_result_route(sys, 3, green_pieces=kerr_green_pieces(params))
    cluster = assemble_cluster_route(engine_s_pieces(sys, 3), 3)
    assert expressions_equal(main, cluster, samples=5, center=0.4).passes(1e-8)


def test_routes_agree_four_photons():
    sys = build_kerr(0.0, 1.0, 1.0, dim=5)
    main = assemble_main_result_route(sys, 4)
    cluster = assemble_cluster_route(engine_s_pieces(sys, 4), 4)
    assert len(main) == len(cluster) == 131
    assert expressions_equal(main, cluster, samples=2).passes(1e-8)


def test_identical_expression_has_zero_deviation():
    expr = assemble_cluster_route(kerr_s_pieces(P0), 3)
    report = expressions_equal(expr, expr, samples=5)
    assert report.structural_match and report.max_relative_deviation == 0.0


def test_structural_mismatch_is_reported():
    full = assemble_cluster_route(kerr_s_pieces(P0), 2)
    partial = SMatrixExpression(2, [t for t in full.terms if not t.connected])
    report = expressions_equal(full, partial, samples=2)
    assert not report.structural_match
    assert report.only_in_x == ["[p1,p2|k1,k2]"] and report.only_in_y == []
    assert not report.passes(1.0)
    assert any(line.startswith("only_in_x") for line in report.lines())


def test_different_photon_numbers_mismatch():
    report = expressions_equal(assemble_cluster_route(kerr_s_pieces(P0), 1),
                               assemble_cluster_route(kerr_s_pieces(P0), 2))
    assert not report.structural_match


def test_merging_sums_densities():
    b = {Block((0,), (0,))}
    expr = SMatrixExpression(1)
    expr.add(b, lambda p, k: 1.0)
    expr.add(b, lambda p, k: 2.5j)
    assert len(expr) == 1
    assert expr.terms[0]([0.0], [0.0]) == 1 + 2.5j


def test_add_rejects_non_partition():
    with pytest.raises(ValueError):
        SMatrixExpression(2).add({Block((0,), (0,))}, lambda p, k: 1.0)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 3), seed=st.integers(0, 1000))
def test_dump_is_deterministic(n, seed):
    expr = assemble_cluster_route(kerr_s_pieces(P0), n)
    assert dump_expression(expr, points=2, seed=seed) == dump_expression(expr, points=2, seed=seed)


def test_dump_format():
    text = dump_expression(assemble_cluster_route(kerr_s_pieces(P0), 2), points=2)
    lines = text.splitlines()
    assert lines[0] == "expression route=cluster n=2 terms=3"
    assert lines[1] == "term 1 blocks=[p1,p2|k1,k2] pairings=-"
    assert "term 2 blocks=[p1|k1] [p2|k2] pairings=(1,1);(2,2)" in lines
    assert sum(line.startswith("term ") for line in lines) == 3
    assert sum(line.startswith("  p=") for line in lines) == 6
    sample = lines[2].split()
    assert [field.split("=")[0] for field in sample] == ["p", "k", "re", "im", "abs"]
    re, im, ab = (float(field.split("=")[1]) for field in sample[2:])
    assert math.isclose(abs(complex(re, im)), ab, rel_tol=1e-12)


def test_term_density_only_evaluated_on_support():
    expr = assemble_cluster_route(kerr_s_pieces(P0), 3)
    for t in expr.terms:
        outs = sorted(i for b in t.blocks for i in b.outputs)
        assert outs == [0, 1, 2]
    rng = np.random.default_rng(0)
    # connected pieces reject points where their own block is off-shell
    connected = [t for t in expr.terms if t.connected][0]
    p, k = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    with pytest.raises(ValueError):
        connected(p, k)
