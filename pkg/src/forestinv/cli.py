"""Command-line entry point.

Exit codes: 0 success, 1 bad input or usage, 2 internal error. Diagnostics go
to stderr; reports go to stdout or the requested files.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .cloud import PointCloud
from .config import PipelineConfig, load_config, schema_hash
from .detect import detect_trees
from .errors import ForestInvError
from .evaluation import PanopticFrame, eval_dbh, pq_overall, read_gt_table, write_gt_table
from .inventory import ForestInventory, associate, export_csv, export_geojson, import_csv
from .io import read_point_cloud, write_point_cloud
from .payload import PayloadCloud, Pose, Scan, Trajectory, build_payloads
from .synth import SynthConfig, synth_forest

log = logging.getLogger("forestinv")

CLOUD_SUFFIXES = (".ply", ".csv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="forestinv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="store_true", help="print version and exit")
    parser.add_argument("--print-config", action="store_true", help="print default config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    inv = sub.add_parser("inventory", help="build a tree inventory").add_subparsers(
        dest="action", parser_class=_Parser)
    run = inv.add_parser("run", help="detect and aggregate trees over payloads")
    run.add_argument("--input", required=True, help="point cloud file or directory of payloads/scans")
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trajectory", help="trajectory CSV; input dir then needs scans.csv")
    run.add_argument("--plot-id", default="plot")
    run.add_argument("--crs", default="local")
    run.add_argument("--resume", action="store_true", help="extend an existing inventory in --out")
    run.add_argument("--no-dtm", action="store_true", help="skip the terrain raster export")

    syn = sub.add_parser("synth", help="synthetic forest generator").add_subparsers(
        dest="action", parser_class=_Parser)
    forest = syn.add_parser("forest", help="write a synthetic plot and its ground truth")
    forest.add_argument("--seed", type=int, default=0)
    forest.add_argument("--trees", type=int, default=50)
    forest.add_argument("--area", type=float, nargs=2, default=(100.0, 100.0), metavar=("W", "H"))
    forest.add_argument("--dbh-range", type=float, nargs=2, default=(10.0, 80.0), metavar=("MIN", "MAX"))
    forest.add_argument("--spacing", type=float, default=2.0)
    forest.add_argument("--noise", type=float, default=0.01, help="trunk noise sigma (m)")
    forest.add_argument("--points-per-tree", type=int, default=SynthConfig.points_per_tree)
    forest.add_argument("--ground-density", type=float, default=SynthConfig.ground_density)
    forest.add_argument("--shrub-density", type=float, default=SynthConfig.shrub_density)
    forest.add_argument("--no-canopy", action="store_true")
    forest.add_argument("--occluded", type=float, default=0.0, help="fraction of partially visible trunks")
    forest.add_argument("--plot-id", default="synth")
    forest.add_argument("--format", choices=("ply-binary-le", "ply-ascii", "csv"), default="ply-binary-le")
    forest.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="evaluation").add_subparsers(dest="action", parser_class=_Parser)
    pq = ev.add_parser("pq", help="panoptic quality of labeled clouds")
    pq.add_argument("--pred", required=True)
    pq.add_argument("--gt", required=True)
    pq.add_argument("--out", help="CSV report path")
    dbh = ev.add_parser("dbh", help="DBH recall and RMSE")
    dbh.add_argument("--pred", required=True, help="directory of <plot>.csv or <plot>/inventory.csv")
    dbh.add_argument("--gt", required=True, help="CSV plot_id,tree_id,x,y,dbh_cm")
    dbh.add_argument("--radius", type=float, default=0.5)
    dbh.add_argument("--optimal", action="store_true", help="optimal instead of greedy matching")
    dbh.add_argument("--out", help="CSV report path")

    cfg = sub.add_parser("config", help="configuration").add_subparsers(dest="action", parser_class=_Parser)
    show = cfg.add_parser("print", help="print the effective config")
    show.add_argument("--config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.version:
        print(f"forestinv {__version__} (config schema {schema_hash()})")
        return 0
    if args.print_config:
        sys.stdout.write(PipelineConfig().to_text())
        return 0
    handlers = {
        ("inventory", "run"): _inventory_run,
        ("synth", "forest"): _synth_forest,
        ("eval", "pq"): _eval_pq,
        ("eval", "dbh"): _eval_dbh,
        ("config", "print"): _config_print,
    }
    handler = handlers.get((args.command, getattr(args, "action", None)))
    if handler is None:
        parser.print_usage(sys.stderr)
        print("forestinv: error: a subcommand is required", file=sys.stderr)
        return 1
    try:
        return handler(args)
    except (ForestInvError, OSError, UsageError) as exc:
        print(f"forestinv: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"forestinv: internal error: {exc}", file=sys.stderr)
        return 2


def _config(path) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def _config_print(args) -> int:
    sys.stdout.write(_config(args.config).to_text())
    return 0


def _cloud_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES
                  and p.name != "scans.csv")


def _load_payloads(args, config: PipelineConfig) -> list[PayloadCloud]:
    src = Path(args.input)
    if not src.exists():
        raise UsageError(f"--input {src} does not exist")
    if src.is_file():
        cloud = read_point_cloud(src)
        return [PayloadCloud(cloud, Pose(), 0.0, 0.0, payload_id=0)]
    if args.trajectory:
        trajectory = read_trajectory(args.trajectory)
        manifest = src / "scans.csv"
        if not manifest.exists():
            raise UsageError(f"{manifest} is required with --trajectory")
        scans = []
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                scans.append(Scan(float(row["timestamp"]), read_point_cloud(src / row["file"])))
        return build_payloads(scans, trajectory, config.payload_window_m)
    files = _cloud_files(src)
    if not files:
        raise UsageError(f"no point cloud files in {src}")
    return [
        PayloadCloud(read_point_cloud(f), Pose(), 0.0, float(i), payload_id=i)
        for i, f in enumerate(files)
    ]


def read_trajectory(path) -> Trajectory:
    """CSV with columns ``timestamp,tx,ty,tz,qx,qy,qz,qw``."""
    times, poses = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["timestamp"]))
            poses.append(Pose(
                (float(row["tx"]), float(row["ty"]), float(row["tz"])),
                (float(row["qx"]), float(row["qy"]), float(row["qz"]), float(row["qw"])),
            ))
    return Trajectory(times, poses)


def _detect(job):
    payload, config = job
    return detect_trees(payload, config)


def _inventory_run(args) -> int:
    config = _config(args.config)
    payloads = _load_payloads(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "inventory.csv"
    if args.resume and csv_path.exists():
        inventory = import_csv(csv_path)
    else:
        inventory = ForestInventory(plot_id=args.plot_id, crs=args.crs)
    inventory.config_fingerprint = config.fingerprint()

    jobs = [(p, config) for p in payloads]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_detect, jobs))
    else:
        results = [_detect(j) for j in jobs]

    for payload, result in zip(payloads, results):
        associate(inventory, result.detections, config.assoc_radius_m)
        if result.dtm is not None and not args.no_dtm:
            result.dtm.write_ascii_grid(out / f"dtm_{payload.payload_id:04d}.asc")
    export_csv(inventory, csv_path)
    export_geojson(inventory, out / "inventory.geojson")
    print(f"{len(inventory)} trees from {len(payloads)} payloads -> {out}", file=sys.stderr)
    return 0


def _synth_forest(args) -> int:
    try:
        cfg = SynthConfig(
            seed=args.seed,
            n_trees=args.trees,
            area=tuple(args.area),
            dbh_range=tuple(args.dbh_range),
            min_spacing=args.spacing,
            trunk_noise_sigma=args.noise,
            points_per_tree=args.points_per_tree,
            ground_density=args.ground_density,
            shrub_density=args.shrub_density,
            canopy=not args.no_canopy,
            occluded_fraction=args.occluded,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cloud, truth = synth_forest(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if args.format == "csv" else ".ply"
    write_point_cloud(cloud, out / f"cloud{suffix}", args.format)
    write_gt_table(out / "truth.csv", {args.plot_id: truth.tree_table()})
    print(f"{len(cloud)} points, {len(truth.trees)} trees -> {out}", file=sys.stderr)
    return 0


def _read_frame(path, role) -> PanopticFrame:
    cloud: PointCloud = read_point_cloud(path)
    return PanopticFrame(cloud, role)


def _eval_pq(args) -> int:
    pred = _read_frame(args.pred, "prediction")
    gt = _read_frame(args.gt, "ground_truth")
    if len(pred) != len(gt):
        raise UsageError(f"point count mismatch: {len(pred)} predicted vs {len(gt)} ground truth")
    report = pq_overall(pred, gt)
    sys.stdout.write(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_csv())
    return 0


def _eval_dbh(args) -> int:
    src = Path(args.pred)
    if not src.is_dir():
        raise UsageError(f"--pred {src} is not a directory")
    predictions = {}
    for path in sorted(src.iterdir()):
        if path.is_dir() and (path / "inventory.csv").exists():
            predictions[path.name] = import_csv(path / "inventory.csv", plot_id=path.name)
        elif path.suffix == ".csv":
            predictions[path.stem] = import_csv(path, plot_id=path.stem)
    if (src / "inventory.csv").exists():
        # A single-plot run directory: match it to the only ground-truth plot.
        predictions.pop("inventory", None)
        single = import_csv(src / "inventory.csv")
        predictions.setdefault(single.plot_id, single)
    gt = read_gt_table(args.gt)
    if len(gt) == 1 and not set(predictions) & set(gt) and len(predictions) == 1:
        predictions = {next(iter(gt)): next(iter(predictions.values()))}
    report = eval_dbh(predictions, gt, args.radius, optimal=args.optimal)
    sys.stdout.write(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_csv())
    return 0


if __name__ == "__main__":
    sys.exit(main())
