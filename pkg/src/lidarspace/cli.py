"""Command line: ``lidarspace simulate | run | eval``.

Exit status is 0 on success, 1 when processing fails at run time and 2
for bad usage or unreadable/invalid inputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import ConfigError, PipelineConfig, read_config
from .eval import (DEFAULT_TAU_M, MetricError, cloud_metrics, dynamic_counts, format_report, normal_similarity,
                   pca_normals, sample_mesh, sequence_normal_similarity, write_report, write_rows)
from .fileio import ParseError
from .frame_mesh import export_mesh
from .lidar_sim import DEFAULT_GT_SPACING, SceneError, SceneSpec, ScannerSpec, simulate, visible_surface_samples
from .los_field import Label, export_field
from .pipeline import Pipeline
from .scan_model import AssociationError, FrameLoadError, Trajectory, iter_frames, write_frame_ply

log = logging.getLogger("lidarspace")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad inputs: reported with exit status 2."""


def _frame_name(i: int, suffix: str) -> str:
    return f"{i:06d}{suffix}"


def write_labels(path, labels):
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(labels).tolist()))


def read_labels(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return np.array([int(s) for s in text.split()], dtype=np.uint8)
    except ValueError:
        raise UsageError(f"{path}: expected one integer label per line") from None


def write_vectors(path, v):
    Path(path).write_text("".join(f"{a!r} {b!r} {c!r}\n" for a, b, c in np.asarray(v, dtype=np.float64).tolist()))


def read_vectors(path) -> np.ndarray:
    try:
        return fileio.read_xyz(path)
    except ParseError as exc:
        raise UsageError(str(exc)) from None


# simulate ------------------------------------------------------------------
def cmd_simulate(args) -> int:
    for p in (args.scene, args.scanner, args.traj):
        if not Path(p).is_file():
            raise UsageError(f"{p}: no such file")
    scene = SceneSpec.read(args.scene)
    scanner = ScannerSpec.read(args.scanner)
    traj = Trajectory.read(args.traj)
    sims = simulate(scene, scanner, traj, args.frames, seed=args.seed)
    out = Path(args.out)
    for sub in ("frames", "gt_normals", "gt_labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for s in sims:
        i = s.frame.frame_id
        write_frame_ply(out / "frames" / _frame_name(i, ".ply"), s.frame)
        write_vectors(out / "gt_normals" / _frame_name(i, ".txt"), s.gt_normals)
        write_labels(out / "gt_labels" / _frame_name(i, ".txt"), s.gt_dynamic.astype(np.uint8))
    Trajectory.from_poses([s.frame.timestamp for s in sims], [s.frame.pose for s in sims]).write(
        out / "trajectory.txt")
    hits = np.vstack([s.gt_points[~s.gt_dynamic] for s in sims]) if sims else np.zeros((0, 3))
    if len(hits):
        fileio.write_xyz(out / "gt_surface.xyz",
                         visible_surface_samples(scene, hits, DEFAULT_GT_SPACING, DEFAULT_TAU_M))
        fileio.write_xyz(out / "gt_surface_full.xyz",
                         visible_surface_samples(scene, hits, DEFAULT_GT_SPACING, np.inf))
    write_report(out / "simulation.txt", {"frames": len(sims), "seed": args.seed,
                                          "points": int(sum(len(s.frame) for s in sims)),
                                          "dynamic_points": int(sum(s.gt_dynamic.sum() for s in sims))})
    log.info("wrote %d frames to %s", len(sims), out)
    return EXIT_OK


# run -----------------------------------------------------------------------
def cmd_run(args) -> int:
    if not Path(args.frames).exists():
        raise UsageError(f"{args.frames}: no such file or directory")
    if not Path(args.traj).is_file():
        raise UsageError(f"{args.traj}: no such file")
    cfg = read_config(args.config) if args.config else PipelineConfig()
    if args.dump_field_every is not None and args.dump_field_every < 1:
        raise UsageError("--dump-field-every must be >= 1")
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    if args.dump_field_every:
        (out / "fields").mkdir(exist_ok=True)
    if args.mesh_per_frame:
        (out / "meshes").mkdir(exist_ok=True)
    if args.save_normals:
        (out / "normals").mkdir(exist_ok=True)
    (out / "config_used.txt").write_text(cfg.to_text())

    pipe = Pipeline(cfg, workers=args.workers, keep_frame_data=args.mesh_per_frame or args.save_normals)
    rows, n_ok, n_seen = [], 0, 0
    for item in iter_frames(args.frames, args.traj, args.format, tolerance=args.tolerance, skip_errors=True):
        n_seen += 1
        if isinstance(item, FrameLoadError):
            log.error("frame file %s skipped: %s", item.path, item.error)
            rows.append({"frame": item.ordinal, "points": 0, "mesh_ms": 0.0, "field_ms": 0.0, "recon_ms": 0.0,
                         "total_ms": 0.0, "dynamic": 0, "static": 0, "unobserved": 0, "status": "unreadable"})
            continue
        res = pipe.process(item)
        rows.append(res.timing_row())
        write_labels(out / "masks" / _frame_name(item.frame_id, ".txt"),
                     item.to_source(res.mask.labels, Label.UNOBSERVED))
        if res.ok:
            n_ok += 1
            if args.mesh_per_frame:
                export_mesh(res.mesh, out / "meshes" / _frame_name(item.frame_id, ".ply"), item)
            if args.save_normals:
                n = np.where(res.mesh.normal_valid[:, None], res.mesh.point_normals, 0.0)
                write_vectors(out / "normals" / _frame_name(item.frame_id, ".txt"), item.to_source(n, 0.0))
            res.mesh = res.d_t = None
        if args.dump_field_every and n_seen % args.dump_field_every == 0 and len(pipe.field):
            export_field(pipe.field, out / "fields" / f"field_{n_seen:06d}.csv")
        log.info("frame %d: %s %.1f ms", item.frame_id, rows[-1]["status"], rows[-1]["total_ms"])

    write_rows(out / "timing.csv", rows)
    if n_ok == 0:
        log.error("no frame could be processed")
        return EXIT_RUNTIME
    pipe.static_mesh().write(out / "static_mesh.ply")
    export_field(pipe.field, out / "field_final.csv")
    pipe.tsdf.dump_csv(out / "tsdf_final.csv")
    total = np.array([r["total_ms"] for r in rows if r["status"] == "ok"])
    write_report(out / "summary.txt", {"frames": len(rows), "processed": n_ok, "failed": len(rows) - n_ok,
                                       "median_total_ms": float(np.median(total)),
                                       "dynamic_points": int(sum(r["dynamic"] for r in rows))})
    log.info("processed %d/%d frames into %s", n_ok, len(rows), out)
    return EXIT_OK


# eval ----------------------------------------------------------------------
def _samples(path, spacing):
    try:
        pts, faces = fileio.read_geometry(path)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    if faces is not None and len(faces):
        return sample_mesh(pts, faces, spacing)
    return pts


def _paired_files(a, b, suffix=".txt"):
    a, b = Path(a), Path(b)
    for d in (a, b):
        if not d.is_dir():
            raise UsageError(f"{d}: not a directory")
    names = sorted(p.name for p in a.iterdir() if p.suffix == suffix)
    missing = [n for n in names if not (b / n).exists()]
    if not names or missing:
        raise UsageError(f"{b}: missing files for {missing[:3] or 'all frames'}")
    return [(a / n, b / n) for n in names]


def cmd_eval(args) -> int:
    report, rows = {}, {}
    if args.recon or args.gt:
        if not (args.recon and args.gt):
            raise UsageError("--recon and --gt go together")
        recon = _samples(args.recon, args.spacing)
        gt = _samples(args.gt, args.spacing)
        m = cloud_metrics(recon, gt, args.tau_m)
        vals = m.as_dict()
        if args.gt_full:
            full = cloud_metrics(recon, _samples(args.gt_full, args.spacing), args.tau_m)
            vals.update(rmse=full.rmse, precision=full.precision, acc95=full.acc95)
            p, r = vals["precision"], vals["recall"]
            vals["f1"] = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        report.update({f"surface.{k}": v for k, v in vals.items()})
    if args.normals:
        scores, base = [], []
        for est_p, gt_p in _paired_files(*args.normals):
            est, gtn = read_vectors(est_p), read_vectors(gt_p)
            s = normal_similarity(est, gtn)
            scores.append(s)
            row = rows.setdefault(est_p.stem, {"frame": est_p.stem})
            row["normal_cosine"] = s.mean_cosine
            if args.frames:
                ply = Path(args.frames) / (est_p.stem + ".ply")
                if not ply.exists():
                    raise UsageError(f"{ply}: no such file")
                b = normal_similarity(pca_normals(fileio.read_ply(ply).vertices), gtn)
                base.append(b)
                row["pca_cosine"] = b.mean_cosine
        seq = sequence_normal_similarity(scores)
        report.update({"normals.frame_mean": seq["frame_mean"], "normals.accumulated": seq["accumulated"]})
        if base:
            seq = sequence_normal_similarity(base)
            report.update({"normals.pca_frame_mean": seq["frame_mean"],
                           "normals.pca_accumulated": seq["accumulated"]})
    if args.masks:
        total = None
        for pred_p, gt_p in _paired_files(*args.masks):
            c = dynamic_counts(read_labels(pred_p), read_labels(gt_p))
            total = c if total is None else total + c
            row = rows.setdefault(pred_p.stem, {"frame": pred_p.stem})
            row.update({f"dyn_{k}": v for k, v in c.metrics().items()})
        report.update({f"dynamic.{k}": v for k, v in total.metrics().items()})
    if not report:
        raise UsageError("nothing to evaluate: give --recon/--gt, --normals or --masks")
    sys.stdout.write(format_report(report))
    if args.report:
        write_report(args.report, report)
    if args.csv:
        write_rows(args.csv, [rows[k] for k in sorted(rows)])
    return EXIT_OK


# entry point ---------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidarspace", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every frame")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render LiDAR frames and ground truth from a scene description")
    s.add_argument("--scene", required=True, help="scene file (one primitive or mover per line)")
    s.add_argument("--scanner", required=True, help="scanner file ('key = value')")
    s.add_argument("--traj", required=True, help="sensor trajectory, TUM format")
    s.add_argument("--seed", type=int, required=True, help="noise seed")
    s.add_argument("--frames", type=int, default=None, help="frame count (default: whole trajectory)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="mesh, detect moving points and map a frame sequence")
    r.add_argument("--frames", required=True, help="directory of frame clouds (or one file)")
    r.add_argument("--traj", required=True, help="sensor trajectory, TUM format")
    r.add_argument("--config", default=None, help="'key = value' config file (default: built-in values)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--format", default="ply", choices=("ply", "xyz", "kitti_bin"), help="frame file format")
    r.add_argument("--tolerance", type=float, default=0.05, help="max frame/pose time gap in seconds")
    r.add_argument("--mesh-per-frame", action="store_true", help="also write every frame mesh (world frame)")
    r.add_argument("--save-normals", action="store_true", help="write estimated per-point normals")
    r.add_argument("--dump-field-every", type=int, default=None, metavar="N",
                   help="write the LoS field after every N frames")
    r.add_argument("--workers", type=int, default=None, help="sector meshing threads (default: all cores)")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score a reconstruction, normals or dynamic masks")
    e.add_argument("--recon", help="reconstructed mesh or cloud")
    e.add_argument("--gt", help="ground-truth surface samples or mesh")
    e.add_argument("--gt-full", help="complete ground-truth surface used for precision, rmse and acc95")
    e.add_argument("--normals", nargs=2, metavar=("EST_DIR", "GT_DIR"), help="per-frame normal files")
    e.add_argument("--frames", help="frame directory; adds the PCA baseline to the normal scores")
    e.add_argument("--masks", nargs=2, metavar=("PRED_DIR", "GT_DIR"), help="per-frame label files")
    e.add_argument("--tau-m", type=float, default=DEFAULT_TAU_M, help="distance threshold in metres")
    e.add_argument("--spacing", type=float, default=DEFAULT_GT_SPACING, help="mesh sampling spacing")
    e.add_argument("--report", help="also write the key=value report here")
    e.add_argument("--csv", help="per-frame csv")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParseError, SceneError, AssociationError, MetricError) as exc:
        print(f"lidarspace {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("%s failed", args.command)
        print(f"lidarspace {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
