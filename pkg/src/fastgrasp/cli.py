"""Command line driver: ``fastgrasp {generate,rescore,bench,stats,baseline}``.

Exit status is 0 on success, 1 on configuration, IO or validation errors,
2 when no grasp survives generation and 3 when the benchmark times out.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import (ClosingRegionExtract, _atomic_write, export, extract_from_candidate,
                      import_records, record_from_candidate, stats)
from .errors import BenchTimeout, ConfigError, GraspError, NoGraspsFound
from .generator import GenOptions, dedup, generate, sample_orientations
from .geometry import DEFAULT_DENSITY, load_mesh, sample_surface
from .gripper import GripperConfig, gripper_from_mapping, read_config
from .primitives import icosphere
from .scoring import antipodal_generate, bench_compare
from .stability import rescore_dataset

EXIT_OK, EXIT_ERROR, EXIT_NO_GRASPS, EXIT_TIMEOUT = 0, 1, 2, 3
REFERENCE_SPHERE_RADIUS = 0.03


@dataclass
class PipelineConfig:
    """Everything one command needs. Values come from flags and the config file."""

    mesh: Path | None = None
    gripper_config: Path | None = None
    out: Path | None = None
    format: str = "jsonl"
    seed: int = 0
    jobs: int = 1
    n_points: int = 5000
    density: float = DEFAULT_DENSITY
    gripper: GripperConfig = field(default_factory=GripperConfig)
    options: GenOptions = field(default_factory=GenOptions)
    displacement_threshold: float | None = None
    symmetry_tol: float | None = None

    def validate(self, need_mesh: bool = True) -> None:
        if need_mesh and (self.mesh is None or not self.mesh.is_file()):
            raise ConfigError(f"mesh not found: {self.mesh}")
        if self.out is not None and self.out.exists() and self.out.is_dir():
            raise ConfigError(f"output path is a directory: {self.out}")
        if self.format not in ("jsonl", "binary"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")


_OPTION_KEYS = {"n_dirs": int, "n_rolls": int, "eps_p": float, "eps_r_deg": float,
                "normal_slack_deg": float, "standoff": float, "chunk_orients": int}


def build_config(args) -> PipelineConfig:
    values = {}
    if getattr(args, "gripper_config", None):
        path = Path(args.gripper_config)
        if not path.is_file():
            raise ConfigError(f"gripper config not found: {path}")
        values = read_config(path)
    gripper = gripper_from_mapping(values)
    opts = {}
    for key, cast in _OPTION_KEYS.items():
        if key in values:
            if key == "eps_r_deg":
                opts["eps_r"] = math.radians(float(values[key]))
            else:
                opts[key] = cast(values[key])
    seed = args.seed
    jobs = getattr(args, "jobs", 1)
    return PipelineConfig(
        mesh=Path(args.mesh) if getattr(args, "mesh", None) else None,
        gripper_config=Path(args.gripper_config) if getattr(args, "gripper_config", None) else None,
        out=Path(args.out) if getattr(args, "out", None) else None,
        format=getattr(args, "format", "jsonl"),
        seed=seed, jobs=jobs,
        n_points=int(getattr(args, "n_points", 5000)),
        density=float(values.get("density", DEFAULT_DENSITY)),
        gripper=gripper,
        options=GenOptions(seed=seed, jobs=jobs, **opts),
        displacement_threshold=values.get("displacement_threshold"),
        symmetry_tol=values.get("symmetry_tol"))


def _cloud(cfg: PipelineConfig):
    if cfg.mesh is None:
        mesh = icosphere(REFERENCE_SPHERE_RADIUS)
    else:
        mesh = load_mesh(cfg.mesh)
    return sample_surface(mesh, cfg.n_points, seed=cfg.seed, density=cfg.density)


def _object_id(cfg: PipelineConfig) -> str:
    return cfg.mesh.stem if cfg.mesh is not None else "reference_sphere"


def _export(cfg, records, regions, path=None) -> int:
    path = path or cfg.out
    if path is None:
        raise ConfigError("--out is required")
    return export(records, regions, path, cfg.format)


def _write_dataset(cfg, cloud, cands, seconds) -> None:
    g, opts = cfg.gripper, cfg.options
    kept = dedup(cands, opts.resolved_eps_p(g), opts.eps_r)
    oid = _object_id(cfg)
    records = [record_from_candidate(oid, c) for c in kept]
    regions = [extract_from_candidate(i, c, cloud) for i, c in enumerate(kept)]
    _export(cfg, records, regions)
    print(f"candidates = {len(cands)}")
    print(f"survivors = {len(kept)}")
    print(f"seconds = {seconds:.3f}")


def cmd_generate(cfg: PipelineConfig) -> int:
    """Sample orientations, sweep the cloud, dedup and export."""
    cfg.validate()
    cloud = _cloud(cfg)
    opts = cfg.options
    t0 = time.perf_counter()
    cands = generate(cloud, cfg.gripper, sample_orientations(opts.n_dirs, opts.n_rolls), opts)
    _write_dataset(cfg, cloud, cands, time.perf_counter() - t0)
    return EXIT_OK


def cmd_baseline(cfg: PipelineConfig, n_samples: int) -> int:
    """Antipodal sampler run for ``n_samples`` iterations, dedup and export."""
    cfg.validate()
    cloud = _cloud(cfg)
    t0 = time.perf_counter()
    cands = antipodal_generate(cloud, cfg.gripper, n_samples, seed=cfg.seed)
    if not cands:
        raise NoGraspsFound("the antipodal sampler found no grasp")
    _write_dataset(cfg, cloud, cands, time.perf_counter() - t0)
    return EXIT_OK


def _write_text(path: Path, text: str) -> None:
    _atomic_write(path, text.encode())


def cmd_rescore(cfg: PipelineConfig, dataset_in: Path) -> int:
    """Rescore a dataset against the cloud it was generated from.

    The cloud is rebuilt from the mesh, point count and seed, so those must
    match the generating run.
    """
    cfg.validate()
    if cfg.out is None:
        raise ConfigError("--out is required")
    records, regions = import_records(dataset_in)
    cloud = _cloud(cfg)
    survivors, st = rescore_dataset(records, cloud, cfg.gripper,
                                    displacement_threshold=cfg.displacement_threshold,
                                    symmetry_tol=cfg.symmetry_tol)
    index = {old: new for new, old in enumerate(st.kept_indices)}
    new_regions = [ClosingRegionExtract(index[ex.record_ref], ex.points, ex.side_labels)
                   for ex in regions if ex.record_ref in index]
    _export(cfg, survivors, new_regions)
    out = cfg.out
    _write_text(out.with_name(out.name + ".stats.csv"), st.hist_csv())
    _write_text(out.with_name(out.name + ".stats.txt"), st.summary())
    print(st.summary(), end="")
    return EXIT_OK


def cmd_bench(cfg: PipelineConfig, target: int, timeout_sec: float | None) -> int:
    """Time both generators to ``target`` grasps; the reference sphere if no mesh."""
    cfg.validate(need_mesh=cfg.mesh is not None)
    cloud = _cloud(cfg)
    report = bench_compare(cloud, cfg.gripper, target, opts=cfg.options,
                           timeout_sec=timeout_sec, seed=cfg.seed)
    if cfg.out is not None:
        _write_text(cfg.out, report.to_text())
        _write_text(cfg.out.with_name(cfg.out.name + ".csv"), report.hist_csv())
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_stats(cfg: PipelineConfig, dataset_in: Path) -> int:
    cfg.validate(need_mesh=False)
    records, _ = import_records(dataset_in)
    h = stats(records)
    if cfg.out is not None:
        _write_text(cfg.out, h.hist_csv())
    print(h.to_text(), end="")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--gripper-config", help="key = value file with gripper and options")
    common.add_argument("--out", help="output path")
    common.add_argument("--format", choices=("jsonl", "binary"), default="jsonl")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--n-points", type=int, default=5000, help="surface samples")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fastgrasp", description="Grasp dataset generation and rescoring.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("generate", parents=[common], help="orientation-sampled grasps")
    s.add_argument("--mesh", required=True)
    s = sub.add_parser("baseline", parents=[common], help="antipodal baseline grasps")
    s.add_argument("--mesh", required=True)
    s.add_argument("--n-samples", type=int, default=300)
    s = sub.add_parser("rescore", parents=[common], help="closing-simulation rescoring")
    s.add_argument("--in", dest="dataset_in", required=True)
    s.add_argument("--mesh", required=True)
    s = sub.add_parser("bench", parents=[common], help="speed comparison of both generators")
    s.add_argument("--mesh")
    s.add_argument("--target-count", type=int, default=300)
    s.add_argument("--timeout-sec", type=float, default=600.0)
    s = sub.add_parser("stats", parents=[common], help="score histograms of a dataset")
    s.add_argument("--in", dest="dataset_in", required=True)
    return p


def run(args) -> int:
    cfg = build_config(args)
    if args.command == "generate":
        return cmd_generate(cfg)
    if args.command == "baseline":
        return cmd_baseline(cfg, args.n_samples)
    if args.command == "rescore":
        return cmd_rescore(cfg, Path(args.dataset_in))
    if args.command == "bench":
        return cmd_bench(cfg, args.target_count, args.timeout_sec)
    return cmd_stats(cfg, Path(args.dataset_in))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(message)s")
        return run(args)
    except NoGraspsFound as exc:
        print(f"fastgrasp: {exc}", file=sys.stderr)
        return EXIT_NO_GRASPS
    except BenchTimeout as exc:
        print(f"fastgrasp: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except (GraspError, OSError, ValueError) as exc:
        print(f"fastgrasp: {exc}", file=sys.stderr)
        return EXIT_ERROR
