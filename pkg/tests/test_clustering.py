import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbfh import (
    PointCloud,
    build_block_partition,
    build_cluster_tree,
    generate_graded_grid,
    generate_uniform_grid,
    norm_upper_bound,
    validate_partition,
)
from rbfh.clustering import BlockPartition, load_partition, sparsity_constant
from rbfh.geometry import box_diam, box_dist


def random_cloud(seed, n, d):
    rng = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        pts = rng.random((n, d))
    elif kind == 1:
        pts = rng.random((n, d)) ** 3  # clustered near a corner
    else:
        pts = np.r_[rng.random((n // 2, d)) * 0.1, 0.5 + 0.5 * rng.random((n - n // 2, d))]
    return PointCloud(pts)


def test_single_leaf_tree():
    tree = build_cluster_tree(generate_uniform_grid(2, 3), leaf_size=16)
    assert len(tree.nodes) == 1 and tree.depth == 1
    p = build_block_partition(tree, 2.0)
    assert p.small == [(0, 0)] and p.admissible == []
    diag = validate_partition(p, 9)
    assert diag["is_partition"] and diag["sparsity_constant"] == 1


def test_balanced_1d_tree():
    cloud = PointCloud(np.linspace(0, 1, 8)[:, None])
    tree = build_cluster_tree(cloud, leaf_size=1)
    assert tree.depth == 4
    leaves = [c for c in tree.nodes if c.is_leaf]
    assert len(leaves) == 8 and all(c.level == 3 for c in leaves)
    np.testing.assert_array_equal(tree.perm, np.arange(8))


def test_depth_growth_bounded():
    depths = [build_cluster_tree(generate_uniform_grid(2, n), 32).depth for n in (8, 16, 32)]
    assert depths == sorted(depths)
    assert all(b - a <= 3 for a, b in zip(depths, depths[1:]))


def test_tree_structure(rng):
    cloud = PointCloud(rng.random((300, 2)))
    tree = build_cluster_tree(cloud, 10)
    assert sorted(tree.perm.tolist()) == list(range(300))
    np.testing.assert_array_equal(tree.perm[tree.iperm], np.arange(300))
    h = cloud.sep_distance
    for c in tree.nodes:
        pts = cloud.points[tree.perm[c.start : c.stop]]
        # boxes contain the bubbles of their points
        assert np.all(pts - h >= c.box.lo - 1e-15) and np.all(pts + h <= c.box.hi + 1e-15)
        if c.is_leaf:
            assert c.size <= 10
        else:
            s1, s2 = (tree.nodes[s] for s in c.sons)
            assert (s1.start, s1.stop, s2.start, s2.stop) == (c.start, s1.stop, s1.stop, c.stop)
            assert s1.level == s2.level == c.level + 1


def test_diagonal_never_admissible():
    p = build_block_partition(build_cluster_tree(generate_uniform_grid(2, 16), 8), 100.0)
    assert all(i != j for i, j in p.admissible)


def test_grid_30_partition():
    cloud = generate_uniform_grid(2, 30)
    p = build_block_partition(build_cluster_tree(cloud, 32), 2.0)
    diag = validate_partition(p, cloud.n)
    assert diag["is_partition"] and diag["admissible_ok"] and diag["small_ok"]
    assert diag["sparsity_constant"] <= 32
    assert diag["n_adm"] > 0


def test_corrupted_partition_detected():
    cloud = generate_uniform_grid(2, 12)
    p = build_block_partition(build_cluster_tree(cloud, 8), 2.0)
    broken = BlockPartition(p.admissible[1:], p.small, p.eta, p.tree)
    assert not validate_partition(broken, cloud.n)["is_partition"]
    doubled = BlockPartition(p.admissible + p.admissible[:1], p.small, p.eta, p.tree)
    assert not validate_partition(doubled, cloud.n)["is_partition"]


def test_sampled_coverage_agrees_with_exact():
    cloud = generate_uniform_grid(2, 12)
    p = build_block_partition(build_cluster_tree(cloud, 8), 2.0)
    import rbfh.clustering as cl

    old = cl.EXACT_COVERAGE_MAX_N
    try:
        cl.EXACT_COVERAGE_MAX_N = 0
        assert validate_partition(p, cloud.n)["is_partition"]
        broken = BlockPartition(p.admissible, p.small[1:], p.eta, p.tree)
        assert not validate_partition(broken, cloud.n, n_samples=20000)["is_partition"]
    finally:
        cl.EXACT_COVERAGE_MAX_N = old


@given(st.integers(0, 10**6), st.integers(20, 250), st.sampled_from([1, 2, 3]), st.sampled_from([1, 4, 16]), st.floats(0.5, 6.0))
def test_partition_properties(seed, n, d, leaf, eta):
    cloud = random_cloud(seed, n, d)
    tree = build_cluster_tree(cloud, leaf)
    p = build_block_partition(tree, eta)
    diag = validate_partition(p, n)
    assert diag["is_partition"]
    for i, j in p.admissible:
        bi, bj = tree.nodes[i].box, tree.nodes[j].box
        assert box_diam(bi) <= eta * box_dist(bi, bj)
    for b in p.small:
        assert min(p.block_shape(b)) <= leaf


def test_norm_upper_bound_trivial():
    tree = build_cluster_tree(generate_uniform_grid(1, 4), 8)
    p = build_block_partition(tree, 2.0)
    assert norm_upper_bound(p, {(0, 0): 3.5}) == 3.5
    assert norm_upper_bound(p, {(0, 0): 0.0}) == 0.0
    with pytest.raises(KeyError):
        norm_upper_bound(p, {})


@given(st.integers(0, 10**6))
def test_norm_upper_bound_dominates(seed):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.random((64, 2)))
    p = build_block_partition(build_cluster_tree(cloud, 4), 1.0)
    M = rng.standard_normal((64, 64))
    norms = {b: np.linalg.norm(M[np.ix_(p.tree.indices(b[0]), p.tree.indices(b[1]))], 2) for b in p.blocks}
    assert norm_upper_bound(p, norms) >= np.linalg.norm(M, 2)


def test_sparsity_constant_counts_partners():
    p = build_block_partition(build_cluster_tree(generate_uniform_grid(2, 16), 4), 2.0)
    counts = {}
    for i, j in p.blocks:
        counts[("r", i)] = counts.get(("r", i), 0) + 1
        counts[("c", j)] = counts.get(("c", j), 0) + 1
    assert sparsity_constant(p) == max(counts.values())


def test_partition_json_round_trip(tmp_path):
    p = build_block_partition(build_cluster_tree(generate_graded_grid(2, 10, 2.0), 8), 2.0)
    p.save(tmp_path / "p.json")
    q = load_partition(tmp_path / "p.json")
    assert q.admissible == p.admissible and q.small == p.small and q.eta == p.eta
    np.testing.assert_array_equal(q.tree.perm, p.tree.perm)
    assert q.tree.depth == p.tree.depth and q.tree.h_min == p.tree.h_min
