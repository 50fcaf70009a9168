import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_system
from rbfh import (
    KernelSpec,
    PointCloud,
    SaddleSystem,
    blockwise_spectra,
    build_block_partition,
    build_cluster_tree,
    decay_fit,
    dense_inverse,
    generate_uniform_grid,
)
from rbfh.oracle import OracleError, SpectrumReport, best_approximation, best_approximation_error


def test_scalar_inverse():
    inv = dense_inverse(SaddleSystem(np.array([[4.0]]), np.zeros((0, 1))))
    np.testing.assert_allclose(inv.S11, [[0.25]])
    assert inv.S12.shape == (1, 0) and inv.valid


def test_symmetric_s11():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [0.3, 0.1, 0.0]]))
    inv = dense_inverse(make_system(cloud, KernelSpec.matern(3, 2)))
    np.testing.assert_allclose(inv.S11, inv.S11.T, rtol=1e-14)


@pytest.mark.parametrize("precision", ["double", "dd"])
def test_inverse_solves_interpolation(precision, rng):
    cloud = generate_uniform_grid(2, 6)
    sys_ = make_system(cloud, KernelSpec.tps(2, 2))
    inv = dense_inverse(sys_, precision)
    assert inv.valid and inv.precision == precision
    f = rng.standard_normal(sys_.n)
    c, d = inv.S11 @ f, inv.S21 @ f
    u_nodes = sys_.A @ c + sys_.B.T @ d
    assert np.max(np.abs(u_nodes - f)) <= 1e-6 * np.max(np.abs(f))
    assert np.linalg.norm(sys_.B @ c) <= 1e-8 * np.linalg.norm(c)
    full = inv.full
    K = np.block([[sys_.A, sys_.B.T], [sys_.B, np.zeros((3, 3))]])
    assert np.max(np.abs(K @ full - np.eye(sys_.n + 3))) == pytest.approx(inv.residual)


def test_singular_rejected():
    with pytest.raises(OracleError, match="singular"):
        dense_inverse(SaddleSystem(np.ones((3, 3)), np.zeros((0, 3))))
    with pytest.raises(OracleError):
        dense_inverse(SaddleSystem(np.ones((3, 3)), np.zeros((0, 3))), "dd")
    with pytest.raises(OracleError):
        dense_inverse(SaddleSystem(np.eye(2), np.zeros((0, 2))), "quad")


def test_residual_warning(monkeypatch, caplog):
    import rbfh.oracle as oracle

    real = oracle.sla.lu_solve
    monkeypatch.setattr(oracle.sla, "lu_solve", lambda lu, b: real(lu, b) + 1e-3)
    with caplog.at_level(logging.WARNING, logger="rbfh.oracle"):
        inv = dense_inverse(SaddleSystem(np.eye(3) * 2.0, np.zeros((0, 3))))
    assert not inv.valid
    assert "cond_inf" in caplog.text


def test_dd_residual_not_worse():
    cloud = generate_uniform_grid(2, 8)
    sys_ = make_system(cloud, KernelSpec.tps(2, 2))
    d = dense_inverse(sys_, "double")
    q = dense_inverse(sys_, "dd")
    assert q.residual <= 2 * d.residual
    np.testing.assert_allclose(q.S11, d.S11, rtol=1e-6, atol=1e-8 * np.abs(d.S11).max())


def partition_for(cloud, leaf=8, eta=2.0):
    return build_block_partition(build_cluster_tree(cloud, leaf), eta)


def test_rank_one_block_spectrum(rng):
    cloud = PointCloud(rng.random((40, 2)))
    p = partition_for(cloud, leaf=4)
    u = rng.standard_normal(40)
    rep = blockwise_spectra(np.outer(u, u), p, 5)
    assert rep.sigmas
    for s in rep.sigmas.values():
        assert s[0] > 0 and np.all(s[1:] <= 1e-12 * s[0])


def test_spectra_of_tps_grid():
    cloud = generate_uniform_grid(2, 15)
    sys_ = make_system(cloud, KernelSpec.tps(2, 2))
    p = partition_for(cloud, leaf=16)
    rep = blockwise_spectra(dense_inverse(sys_).S11, p, 20)
    assert rep.ranks() == list(range(21)) and rep.depth == p.tree.depth
    fit = decay_fit(rep, range(1, 21))
    assert fit["slope"] < 0 and fit["r2"] >= 0.9


@given(st.integers(0, 10**6), st.integers(20, 90), st.integers(0, 12))
def test_spectra_monotone_and_oracle_inequality(seed, n, r_max):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.random((n, 2)))
    sys_ = make_system(cloud, KernelSpec.tps(2, 2))
    p = partition_for(cloud, leaf=4, eta=1.0)
    S11 = dense_inverse(sys_).S11
    rep = blockwise_spectra(S11, p, r_max)
    for s in rep.sigmas.values():
        assert np.all(np.diff(s) <= 0)
    curve = rep.bound_curve()
    assert np.all(np.diff(curve) <= 0)
    csp = rep.sparsity_constant
    for r in rep.ranks():
        assert best_approximation_error(S11, p, r) <= csp * rep.bound(r) + 1e-10


def test_best_approximation_keeps_small_blocks(rng):
    cloud = PointCloud(rng.random((50, 2)))
    p = partition_for(cloud, leaf=4)
    S = rng.standard_normal((50, 50))
    M0 = best_approximation(S, p, 0)
    for i, j in p.small:
        ix = np.ix_(p.tree.indices(i), p.tree.indices(j))
        assert np.array_equal(M0[ix], S[ix])
    for i, j in p.admissible:
        assert not M0[np.ix_(p.tree.indices(i), p.tree.indices(j))].any()


def test_empty_report():
    rep = SpectrumReport({}, 1, 1, 20)
    assert rep.ranks() == [] and rep.rows() == []
    assert rep.max_sigma(3) == 0.0
    with pytest.raises(OracleError):
        rep.max_sigma(21)


def test_report_csv(tmp_path):
    rep = SpectrumReport({(1, 2): np.array([3.0, 1.0, 0.5])}, 4, 2, 2)
    rep.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == ["r,bound,max_sigma", "0,12,3", "1,4,1", "2,2,0.5"]


def test_decay_fit_exponential():
    pts = [(r, 10 * math.exp(-0.8 * r)) for r in range(1, 21)]
    fit = decay_fit(pts)
    assert fit["slope"] == pytest.approx(-0.8, abs=1e-9)
    assert fit["intercept"] == pytest.approx(math.log(10), abs=1e-9)
    assert fit["r2"] == pytest.approx(1.0)


def test_decay_fit_constant():
    fit = decay_fit([(r, 2.5) for r in range(5)])
    assert fit["slope"] == pytest.approx(0.0, abs=1e-14)


def test_decay_fit_skips_nonpositive():
    pts = [(0, 1.0), (1, 0.0), (2, math.exp(-2)), (3, -1.0), (4, math.exp(-4))]
    fit = decay_fit(pts)
    assert fit["n_points"] == 3 and fit["slope"] == pytest.approx(-1.0)
    with pytest.raises(OracleError):
        decay_fit(pts, r_range=[0, 1, 2])


def test_decay_fit_range_on_report():
    sig = np.exp(-0.5 * np.arange(11))
    rep = SpectrumReport({(1, 2): sig}, 3, 2, 10)
    fit = decay_fit(rep, range(2, 9))
    assert fit["slope"] == pytest.approx(-0.5) and fit["n_points"] == 7
