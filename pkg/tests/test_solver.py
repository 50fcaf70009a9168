import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_system
from rbfh import (
    Interpolant,
    KernelSpec,
    PointCloud,
    build_block_partition,
    build_cluster_tree,
    energy,
    eval_kernel,
    eval_poly_basis,
    evaluate,
    generate_graded_grid,
    generate_uniform_grid,
    solve,
)
from rbfh.solver import SolverError, cloud_hash


def linear(x):
    return 1.5 - 2.0 * x[:, 0] + 0.7 * x[:, 1]


def smooth(x):
    return np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]) + x[:, 0] ** 2


@pytest.fixture(scope="module")
def tps_sys():
    return make_system(generate_uniform_grid(2, 10), KernelSpec.tps(2, 2))


def partition_of(sys_, leaf=16):
    return build_block_partition(build_cluster_tree(sys_.cloud, leaf), 2.0)


@pytest.mark.parametrize("method", ["dense", "hchol"])
def test_polynomial_data_reproduced(tps_sys, method, rng):
    x = tps_sys.cloud.points
    f = linear(x)
    u = solve(tps_sys, f, method, partition=partition_of(tps_sys))
    assert np.max(np.abs(u.c)) <= 1e-8 * np.max(np.abs(f))
    y = rng.random((25, 2)) * 2 - 0.5
    np.testing.assert_allclose(evaluate(u, y), linear(y), atol=1e-8 * np.max(np.abs(f)))
    assert energy(u, tps_sys) <= 1e-8 * np.dot(f, f)


def test_zero_data(tps_sys):
    u = solve(tps_sys, np.zeros(tps_sys.n))
    assert not u.c.any() and not u.d_coeffs.any()
    assert energy(u, tps_sys) == 0.0


@pytest.mark.parametrize("method,precision", [("dense", "double"), ("dense", "dd"), ("hchol", "double")])
def test_random_data_interpolated(tps_sys, method, precision, rng):
    f = rng.standard_normal(tps_sys.n)
    u = solve(tps_sys, f, method, partition=partition_of(tps_sys), precision=precision)
    vals = evaluate(u, tps_sys.cloud.points)
    assert np.max(np.abs(vals - f)) <= 1e-6 * np.max(np.abs(f))
    assert np.linalg.norm(tps_sys.B @ u.c) <= 1e-8 * np.linalg.norm(u.c)
    assert u.diagnostics["interpolation_residual_rel"] <= 1e-6


def test_hchol_matches_dense(tps_sys, rng):
    f = smooth(tps_sys.cloud.points)
    ud = solve(tps_sys, f)
    uh = solve(tps_sys, f, "hchol", partition=partition_of(tps_sys, 8), gamma=2.0)
    np.testing.assert_allclose(uh.c, ud.c, atol=1e-8 * np.abs(ud.c).max())
    np.testing.assert_allclose(uh.d_coeffs, ud.d_coeffs, atol=1e-8 * np.abs(ud.d_coeffs).max())
    assert uh.diagnostics["factor"]["depth"] >= 2


def test_hchol_matern(rng):
    sys_ = make_system(generate_uniform_grid(3, 6), KernelSpec.matern(3, 2))
    f = rng.standard_normal(sys_.n)
    u = solve(sys_, f, "hchol", partition=partition_of(sys_, 8))
    assert u.d_coeffs.size == 0
    assert u.diagnostics["interpolation_residual_rel"] <= 1e-6


def test_evaluate_single_and_batch(tps_sys, rng):
    f = smooth(tps_sys.cloud.points)
    u = solve(tps_sys, f)
    assert isinstance(u(tps_sys.cloud.points[3]), float)
    assert u(tps_sys.cloud.points[3]) == pytest.approx(f[3], abs=1e-10)
    y = rng.random((4, 2))
    np.testing.assert_allclose(evaluate(u, y), np.array([evaluate(u, v) for v in y]), rtol=1e-13)


def test_evaluate_polynomial_part(tps_sys, rng):
    b = tps_sys.basis
    coeffs = linear(b.nodes)
    u = Interpolant(tps_sys.cloud, tps_sys.spec, b, np.zeros(tps_sys.n), coeffs)
    y = rng.random((10, 2))
    np.testing.assert_allclose(evaluate(u, y), linear(y), atol=1e-12)
    np.testing.assert_allclose(eval_poly_basis(b, y) @ coeffs, linear(y), atol=1e-12)


@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
def test_evaluate_linear_in_coefficients(seed, s, t):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.random((15, 2)))
    sys_ = make_system(cloud, KernelSpec.tps(2, 2))
    c1, c2 = rng.standard_normal((2, 15))
    d1, d2 = rng.standard_normal((2, 3))
    mk = lambda c, d: Interpolant(cloud, sys_.spec, sys_.basis, c, d)
    y = rng.random((5, 2))
    lhs = evaluate(mk(s * c1 + t * c2, s * d1 + t * d2), y)
    rhs = s * evaluate(mk(c1, d1), y) + t * evaluate(mk(c2, d2), y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + np.abs(rhs).max()))


@given(
    st.integers(0, 10**6),
    st.integers(8, 60),
    st.sampled_from([KernelSpec.tps(2, 2), KernelSpec.tps(3, 2), KernelSpec.matern(3, 2), KernelSpec.tps(2, 3)]),
)
def test_residual_and_constraint_on_random_clouds(seed, n, spec):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.random((n, spec.dim)))
    sys_ = make_system(cloud, spec)
    f = rng.standard_normal(n)
    u = solve(sys_, f)
    assert np.max(np.abs(evaluate(u, cloud.points) - f)) <= 1e-6 * np.max(np.abs(f))
    assert np.linalg.norm(sys_.B @ u.c) <= 1e-8 * max(np.linalg.norm(u.c), 1e-300)


@pytest.mark.parametrize("spec", [KernelSpec.tps(2, 2), KernelSpec.matern(2, 2, 2.0)])
def test_energy_monotone_on_nested_grids(spec):
    energies = []
    for n in (3, 5, 9, 17):
        # spacing 1/(n-1) halves each time, so every grid contains the previous one
        sys_ = make_system(generate_uniform_grid(2, n), spec)
        energies.append(energy(solve(sys_, smooth(sys_.cloud.points)), sys_))
    assert all(a <= b * (1 + 1e-10) for a, b in zip(energies, energies[1:]))
    assert energies[-1] > energies[0]


def test_energy_a_priori_bound_matern():
    spec = KernelSpec.matern(3, 2, 1.0, normalize_prefactor=True)
    y = np.array([1.3, 0.4, -0.2])
    phi0 = eval_kernel(spec, np.zeros(3))
    for n in (3, 5, 7):
        sys_ = make_system(generate_graded_grid(3, n, 2.0), spec)
        g = eval_kernel(spec, sys_.cloud.points - y)
        e = energy(solve(sys_, g), sys_)
        assert 0 < e <= phi0 * (1 + 1e-10)


def test_energy_rejects_unconstrained(tps_sys):
    c = np.zeros(tps_sys.n)
    c[0] = 1.0
    u = Interpolant(tps_sys.cloud, tps_sys.spec, tps_sys.basis, c, np.zeros(3))
    with pytest.raises(SolverError, match="c not in C"):
        energy(u, tps_sys)


def test_solve_errors(tps_sys):
    with pytest.raises(SolverError):
        solve(tps_sys, np.zeros(3))
    with pytest.raises(SolverError, match="partition"):
        solve(tps_sys, np.zeros(tps_sys.n), "hchol")
    with pytest.raises(SolverError):
        solve(tps_sys, np.zeros(tps_sys.n), "cg")


def test_interpolant_export(tps_sys, tmp_path):
    u = solve(tps_sys, smooth(tps_sys.cloud.points))
    u.save(tmp_path / "u.json")
    data = json.loads((tmp_path / "u.json").read_text())
    assert set(data) >= {"c", "d_coeffs", "kernel", "node_file_sha256", "unisolvent_indices"}
    assert data["node_file_sha256"] == cloud_hash(tps_sys.cloud)
    assert KernelSpec.from_dict(data["kernel"]) == tps_sys.spec
    np.testing.assert_array_equal(data["c"], u.c)


def test_cloud_hash_matches_point_file(tmp_path):
    import hashlib

    from rbfh.geometry import write_points

    cloud = generate_graded_grid(2, 4, 2.0)
    write_points(tmp_path / "p.txt", cloud)
    assert cloud_hash(cloud) == hashlib.sha256((tmp_path / "p.txt").read_bytes()).hexdigest()
