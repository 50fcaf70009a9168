"""Command-line pipeline: point generation, assembly, partitioning, blockwise
spectra, H-Cholesky rank sweeps, interpolation and storage benchmarks.

Every command writes CSV/JSON next to a manifest and is byte-identical on
rerun with the same flags. Exit codes: 0 success, 2 invalid input, 1 a
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rbfh import __version__
from rbfh.assembly import SaddleSystem, assemble_system, augmented_lagrangian, write_matrix
from rbfh.clustering import (
    DEFAULT_ETA,
    DEFAULT_LEAF_SIZE,
    BlockPartition,
    build_block_partition,
    build_cluster_tree,
    load_partition,
    validate_partition,
)
from rbfh.geometry import PointCloud, generate_graded_grid, read_points, write_points
from rbfh.hmatrix import DEFAULT_TOL, cholesky_rank_sweep, compress, matvec, storage_entries
from rbfh.kernels import MATERN, TPS, KernelSpec
from rbfh.oracle import OracleError, blockwise_spectra, decay_fit, dense_inverse
from rbfh.polybasis import build_lagrange_basis, select_unisolvent_subset
from rbfh.solver import cloud_hash, solve

log = logging.getLogger("rbfh")

EXIT_OK, EXIT_COMPUTE, EXIT_INVALID = 0, 1, 2


class InvalidInput(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    kernel: str
    d: int
    k: int
    kmin: int | None
    b: float
    normalize: bool
    n: int
    beta: float
    points: str | None
    system: str | None
    eta: float
    leaf_size: int
    partition: str | None
    rmax: int
    rmin: int
    rstep: int
    gamma: float
    trunc: float
    precision: str
    method: str
    data: str | None
    sizes: str
    seed: int

    def kernel_spec(self) -> KernelSpec:
        kmin = self.kmin if self.kmin is not None else (self.k if self.kernel == TPS else 0)
        b = self.b if self.kernel == MATERN else 1.0
        return KernelSpec(self.d, self.k, kmin, self.kernel, b=b, normalize_prefactor=self.normalize)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _config(args: argparse.Namespace) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    return RunConfig(**{name: getattr(args, name, None) for name in fields})


# --- shared setup ------------------------------------------------------------


def _load_cloud(cfg: RunConfig) -> tuple[PointCloud, KernelSpec]:
    if cfg.system is not None:
        sysdir = Path(cfg.system)
        info = json.loads((sysdir / "system.json").read_text())
        return read_points(sysdir / "points.txt"), KernelSpec.from_dict(info["kernel"])
    spec = cfg.kernel_spec()
    if cfg.points is not None:
        cloud = read_points(cfg.points)
    else:
        cloud = generate_graded_grid(cfg.d, cfg.n, cfg.beta)
    if cloud.dim != spec.dim:
        raise InvalidInput(f"points are {cloud.dim}-dimensional but --d={spec.dim}")
    return cloud, spec


def _system(cloud: PointCloud, spec: KernelSpec) -> SaddleSystem:
    basis = build_lagrange_basis(cloud, select_unisolvent_subset(cloud, spec), spec)
    return assemble_system(cloud, spec, basis)


def _partition(cfg: RunConfig, cloud: PointCloud) -> BlockPartition:
    if cfg.partition is not None:
        p = load_partition(cfg.partition)
        if p.tree.n != cloud.n:
            raise InvalidInput(f"partition covers {p.tree.n} points, cloud has {cloud.n}")
        return p
    return build_block_partition(build_cluster_tree(cloud, cfg.leaf_size), cfg.eta)


def _manifest(cfg: RunConfig, **extra) -> dict:
    out = {
        "version": __version__,
        "command": cfg.command,
        "config_hash": cfg.digest(),
        "config": asdict(cfg),
        "precision": cfg.precision,
        "h_min": None,
        "N": None,
        "depth": None,
        "sparsity_constant": None,
        "oracle_residual": None,
        "unisolvent_indices": None,
    }
    out.update(extra)
    return out


def _cloud_fields(cloud: PointCloud, sys_: SaddleSystem | None = None) -> dict:
    out = {"h_min": cloud.sep_distance, "N": cloud.n, "points_sha256": cloud_hash(cloud)}
    if sys_ is not None and sys_.basis is not None:
        out["unisolvent_indices"] = list(sys_.basis.node_indices)
        out["kernel"] = sys_.spec.to_dict() if sys_.spec is not None else None
    return out


def _partition_fields(p: BlockPartition) -> dict:
    diag = validate_partition(p, p.tree.n)
    return {"depth": diag["depth"], "sparsity_constant": diag["sparsity_constant"], "partition": diag}


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    def fmt(v):
        return f"{v:.17g}" if isinstance(v, float) else v

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _outdir(cfg_out: str) -> Path:
    out = Path(cfg_out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------
# Each command validates its inputs and returns a closure doing the numerics:
# errors before the closure are invalid input, errors inside it are numerical.


def cmd_gen_points(cfg: RunConfig, out: Path):
    cloud = generate_graded_grid(cfg.d, cfg.n, cfg.beta)

    def run() -> None:
        write_points(out / "points.txt", cloud)
        _write_json(out / "points.json", _manifest(cfg, **_cloud_fields(cloud)))
        print(f"wrote {cloud.n} points to {out / 'points.txt'}")

    return run


def cmd_assemble(cfg: RunConfig, out: Path):
    cloud, spec = _load_cloud(cfg)
    sys_ = _system(cloud, spec)

    def run() -> None:
        write_points(out / "points.txt", cloud)
        write_matrix(out / "A.bin", sys_.A)
        write_matrix(out / "B.bin", sys_.B)
        _write_json(out / "system.json", _manifest(cfg, N_min=sys_.n_min, **_cloud_fields(cloud, sys_)))
        print(f"assembled N={sys_.n}, N_min={sys_.n_min} into {out}")

    return run


def cmd_partition(cfg: RunConfig, out: Path):
    cloud, _ = _load_cloud(cfg)
    p = _partition(cfg, cloud)

    def run() -> None:
        p.save(out / "partition.json")
        fields = _partition_fields(p)
        _write_json(out / "partition_manifest.json", _manifest(cfg, **_cloud_fields(cloud), **fields))
        d = fields["partition"]
        print(f"depth={d['depth']} C_sp={d['sparsity_constant']} admissible={d['n_adm']} small={d['n_small']}")

    return run


def cmd_spectra(cfg: RunConfig, out: Path):
    cloud, spec = _load_cloud(cfg)
    sys_ = _system(cloud, spec)
    p = _partition(cfg, cloud)
    if cfg.rmax < 0:
        raise InvalidInput("--rmax must be nonnegative")

    def run() -> None:
        inv = dense_inverse(sys_, cfg.precision)
        report = blockwise_spectra(inv.S11, p, cfg.rmax)
        report.write_csv(out / "spectra.csv")
        try:
            fit = decay_fit(report, range(1, cfg.rmax + 1))
        except OracleError:
            fit = None
        man = _manifest(
            cfg,
            **_cloud_fields(cloud, sys_),
            **_partition_fields(p),
            oracle_residual=inv.residual,
            oracle_residual_tol=inv.residual_tol,
            oracle_valid=bool(inv.valid),
            cond_inf=inv.cond_inf,
            decay_fit=fit,
            n_rows=len(report.ranks()),
        )
        _write_json(out / "spectra.json", man)
        slope = "n/a" if fit is None else f"{fit['slope']:.4f}"
        print(f"N={cloud.n} admissible={len(p.admissible)} rows={len(report.ranks())} slope={slope}")

    return run


def cmd_hchol(cfg: RunConfig, out: Path):
    cloud, spec = _load_cloud(cfg)
    sys_ = _system(cloud, spec)
    p = _partition(cfg, cloud)
    if cfg.gamma <= 0:
        raise InvalidInput("--gamma must be positive")
    if cfg.rstep < 1 or cfg.rmin < 0 or cfg.rmax < cfg.rmin:
        raise InvalidInput("need 0 <= --rmin <= --rmax and --rstep >= 1")
    if not 0 < cfg.trunc < 1:
        raise InvalidInput("--trunc must lie in (0, 1)")
    ranks = list(range(cfg.rmin, cfg.rmax + 1, cfg.rstep))

    def run() -> None:
        M = augmented_lagrangian(sys_, cfg.gamma)
        rows = cholesky_rank_sweep(M, p, ranks, cfg.trunc, seed=cfg.seed)
        _write_csv(out / "hchol.csv", ["rank", "error"], [(r["rank"], r["error"]) for r in rows])
        man = _manifest(
            cfg,
            **_cloud_fields(cloud, sys_),
            **_partition_fields(p),
            iterations={str(r["rank"]): r["iterations"] for r in rows},
        )
        _write_json(out / "hchol.json", man)
        for r in rows:
            print(f"rank {r['rank']:3d}  error {r['error']:.3e}")

    return run


def _read_data(path: str) -> tuple[PointCloud, np.ndarray]:
    rows = Path(path).read_text().split("\n")
    header = rows[0].split()
    if len(header) != 2:
        raise InvalidInput(f"{path}: header must be 'd N'")
    d, n = int(header[0]), int(header[1])
    data = np.loadtxt(rows[1 : n + 1], dtype=np.float64, ndmin=2)
    if data.shape != (n, d + 1):
        raise InvalidInput(f"{path}: expected {n} rows of {d + 1} values, got {data.shape}")
    return PointCloud(data[:, :d]), data[:, d]


def cmd_solve(cfg: RunConfig, out: Path):
    if cfg.data is None:
        raise InvalidInput("solve needs --data")
    cloud, f = _read_data(cfg.data)
    spec = cfg.kernel_spec()
    if cloud.dim != spec.dim:
        raise InvalidInput(f"data are {cloud.dim}-dimensional but --d={spec.dim}")
    sys_ = _system(cloud, spec)
    p = _partition(cfg, cloud) if cfg.method == "hchol" else None

    def run() -> None:
        u = solve(sys_, f, cfg.method, partition=p, gamma=cfg.gamma, trunc=cfg.trunc, precision=cfg.precision)
        u.save(out / "interpolant.json")
        extra = _partition_fields(p) if p is not None else {}
        man = _manifest(cfg, **_cloud_fields(cloud, sys_), **extra, residuals=u.diagnostics)
        _write_json(out / "solve.json", man)
        print(f"max residual {u.diagnostics['interpolation_residual']:.3e}")

    return run


def cmd_bench(cfg: RunConfig, out: Path):
    spec = cfg.kernel_spec()
    try:
        sizes = [int(s) for s in cfg.sizes.split(",") if s]
    except ValueError as exc:
        raise InvalidInput(f"--sizes must be comma-separated integers: {exc}") from exc
    if not sizes:
        raise InvalidInput("--sizes is empty")
    clouds = [generate_graded_grid(cfg.d, n, cfg.beta) for n in sizes]

    def run() -> None:
        rng = np.random.default_rng(cfg.seed)
        rows = []
        for n_axis, cloud in zip(sizes, clouds):
            sys_ = _system(cloud, spec)
            p = build_block_partition(build_cluster_tree(cloud, cfg.leaf_size), cfg.eta)
            h = compress(sys_.A, p, cfg.trunc)
            v = rng.standard_normal(cloud.n)
            t0 = time.perf_counter()
            y = matvec(h, v)
            dt = time.perf_counter() - t0
            ref = sys_.A @ v
            rel = float(np.linalg.norm(y - ref) / np.linalg.norm(ref))
            n = cloud.n
            store = storage_entries(h)
            scale = max(h.max_rank, 1) * n * max(np.log2(n), 1.0)
            rows.append((n_axis, n, p.tree.depth, h.max_rank, store, store / scale, rel))
            # timings go to stdout only so that the CSV stays reproducible
            print(f"N={n:6d} storage={store:9d} ratio={store / scale:.3f} matvec {dt * 1e3:.2f} ms")
        header = ["n_per_axis", "N", "depth", "max_rank", "storage", "storage_over_rNlogN", "rel_err_vs_dense"]
        _write_csv(out / "bench.csv", header, rows)
        _write_json(out / "bench.json", _manifest(cfg, sizes=sizes))

    return run


COMMANDS: dict[str, Callable[[RunConfig, Path], Callable[[], None]]] = {
    "gen-points": cmd_gen_points,
    "assemble": cmd_assemble,
    "partition": cmd_partition,
    "spectra": cmd_spectra,
    "hchol": cmd_hchol,
    "solve": cmd_solve,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("kernel")
    g.add_argument("--kernel", choices=[TPS, MATERN], default=TPS)
    g.add_argument("--d", type=int, default=2, help="space dimension")
    g.add_argument("--k", type=int, default=2, help="order of the native space")
    g.add_argument("--kmin", type=int, default=None, help="lowest derivative order (k for tps, 0 for matern)")
    g.add_argument("--b", type=float, default=1.0, help="Matérn scale")
    g.add_argument("--normalize", action="store_true", help="keep the fundamental-solution prefactor")
    g = common.add_argument_group("points")
    g.add_argument("--n", type=int, default=15, help="grid points per axis")
    g.add_argument("--beta", type=float, default=1.0, help="grading exponent (1 = uniform)")
    g.add_argument("--points", default=None, help="point file instead of a generated grid")
    g.add_argument("--system", default=None, help="directory written by 'assemble'")
    g = common.add_argument_group("partition")
    g.add_argument("--eta", type=float, default=DEFAULT_ETA)
    g.add_argument("--leaf-size", type=int, default=DEFAULT_LEAF_SIZE)
    g.add_argument("--partition", default=None, help="partition JSON written by 'partition'")
    g = common.add_argument_group("mode")
    g.add_argument("--rmax", type=int, default=20)
    g.add_argument("--rmin", type=int, default=2, help="first rank of the hchol sweep")
    g.add_argument("--rstep", type=int, default=2, help="rank step of the hchol sweep")
    g.add_argument("--gamma", type=float, default=1.0, help="augmented Lagrangian weight")
    g.add_argument("--trunc", type=float, default=DEFAULT_TOL, help="relative SVD truncation tolerance")
    g.add_argument("--precision", choices=["double", "dd"], default="double")
    g.add_argument("--method", choices=["dense", "hchol"], default="dense")
    g.add_argument("--data", default=None, help="data file: 'd N' header, rows 'x_1 .. x_d f'")
    g.add_argument("--sizes", default="8,16,32", help="bench grid sizes per axis")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rbfh", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"rbfh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = _config(args)
    try:
        out = _outdir(args.out)
        run = COMMANDS[cfg.command](cfg, out)
    except (InvalidInput, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        run()
    except (np.linalg.LinAlgError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
