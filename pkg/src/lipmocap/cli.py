"""Command-line entry point: ``lipmocap {motion,simulate,train,infer,eval,gradcheck}``.

Relative config paths that do not exist in the working directory are looked
up in ``$LIP_CONFIG_DIR``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evalkit, lipnet, seqio
from .kinematics import load_skeleton, root_relative
from .motion import MOTION_KINDS, generate_motion
from .sensorsim import SceneConfig, synthesize_sequence
from .tensorgrad.checkpoint import CheckpointError

CONFIG_DIR_ENV = "LIP_CONFIG_DIR"


class CliError(Exception):
    pass


def resolve_config(path):
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def _require(path, what):
    if not Path(path).exists():
        raise CliError(f"{what} not found: {path}")
    return path


def _dump_json(path, obj):
    seqio.atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_motion(args):
    m = generate_motion(args.kind, args.frames, args.rate, tuple(args.start), args.heading, args.seed)
    seqio.write_motion(args.out, m)
    print(f"wrote {len(m)} frames to {args.out}")


def cmd_simulate(args):
    motion, skel_ref = seqio.read_motion(_require(args.motion, "motion file"))
    if args.scene:
        scene = SceneConfig.load(_require(resolve_config(args.scene), "scene config"))
    else:
        scene = SceneConfig()
    if args.distance is not None:
        scene.distance = args.distance
    if args.seed is not None:
        scene.seed = args.seed
    seq = synthesize_sequence(motion, scene, load_skeleton(skel_ref))
    seq.skeleton = skel_ref
    seqio.write_sequence(args.out, seq)
    counts = [len(p) for p in seq.points]
    print(f"frames: {len(seq)}  mean points/frame: {np.mean(counts):.2f}")


def _load_config(args):
    cfg = lipnet.ModelConfig()
    if args.config:
        cfg = lipnet.ModelConfig.load(_require(resolve_config(args.config), "model config"))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    return cfg


def _skeleton_of(sequences):
    refs = {s.skeleton for s in sequences}
    if len(refs) != 1:
        raise CliError(f"training sequences use different skeletons: {sorted(refs)}")
    return load_skeleton(refs.pop())


def training_mpjpe(sequences, s1, s2, skel):
    """Root-relative MPJPE (mm) of the Stage-2 pose output over training sequences."""
    errs = []
    for s in sequences:
        est = lipnet.pipeline_infer(s, s1, s2, None, skel)
        pred = root_relative(np.array([e.joints_world for e in est]).reshape(len(est), -1, 3))
        gt = root_relative(np.asarray(s.joints_world).reshape(len(s), -1, 3))
        errs.append(evalkit.per_frame_mpjpe(pred, gt))
    return float(np.mean(np.concatenate(errs)))


def training_trans_error(sequences, s1, s2, tr, skel):
    """Largest per-frame |D_hat - D_gt| (m) over frames with a defined D_gt."""
    worst = 0.0
    for s in sequences:
        est = lipnet.pipeline_infer(s, s1, s2, tr, skel)
        d_hat = np.array([e.d_hat for e in est])
        ok = ~np.isnan(s.d_gt).any(axis=1)
        if ok.any():
            worst = max(worst, float(np.linalg.norm(d_hat[ok] - s.d_gt[ok], axis=1).max()))
    return worst


def run_training(stage, cfg, sequences, out, stage1_path=None, stage2_path=None):
    """Train one stage, write checkpoint, loss log, timing log and final metrics."""
    skel = _skeleton_of(sequences)
    data = lipnet.prepare_frames(sequences, n=cfg.n_points)
    log_lines, timing_lines = [], []

    def log(rec, wall_ms):
        log_lines.append(json.dumps(rec, sort_keys=True))
        timing_lines.append(json.dumps({"stage": rec["stage"], "epoch": rec["epoch"],
                                        "wall_ms": round(wall_ms, 3)}))

    metrics = {"stage": stage}
    if stage == "1":
        model, hist = lipnet.train_stage1(data, cfg, log)
        kind = "stage1"
        metrics["L_prior_ratio"] = hist[-1]["L_prior"] / hist[0]["L_prior"]
    else:
        if stage1_path is None:
            raise CliError("a Stage-1 checkpoint is required (--stage1)")
        s1 = lipnet.load_model(_require(stage1_path, "Stage-1 checkpoint"), "stage1")
        if stage == "2":
            model, hist = lipnet.train_stage2(data, s1, cfg, skel, log)
            kind = "stage2"
            metrics["train_mpjpe_mm"] = training_mpjpe(sequences, s1, model, skel)
        else:
            if stage2_path is None:
                raise CliError("a Stage-2 checkpoint is required (--stage2)")
            s2 = lipnet.load_model(_require(stage2_path, "Stage-2 checkpoint"), "stage2")
            model, hist = lipnet.train_trans(data, s1, s2, cfg, log)
            kind = "trans"
            metrics["train_max_trans_err_m"] = training_trans_error(sequences, s1, s2, model, skel)
    metrics["epochs"] = len(hist)
    metrics["first"] = hist[0]
    metrics["final"] = hist[-1]
    lipnet.save_model(out, model, kind)
    seqio.atomic_write_text(f"{out}.log.jsonl", "".join(ln + "\n" for ln in log_lines))
    seqio.atomic_write_text(f"{out}.timing.jsonl", "".join(ln + "\n" for ln in timing_lines))
    _dump_json(f"{out}.metrics.json", metrics)
    return model, hist, metrics


def cmd_train(args):
    cfg = _load_config(args)
    seqs = [seqio.read_sequence(_require(p, "sequence file")) for p in args.data]
    _, hist, metrics = run_training(args.stage, cfg, seqs, args.out, args.stage1, args.stage2)
    final = {k: v for k, v in hist[-1].items() if k.startswith("L_")}
    print(f"stage {args.stage}: {len(hist)} epochs, final " +
          ", ".join(f"{k}={v:.6g}" for k, v in sorted(final.items())))


def cmd_infer(args):
    s1p, s2p, trp = args.ckpts
    s1 = lipnet.load_model(_require(s1p, "Stage-1 checkpoint"), "stage1")
    s2 = lipnet.load_model(_require(s2p, "Stage-2 checkpoint"), "stage2")
    tr = lipnet.load_model(_require(trp, "translation checkpoint"), "trans")
    seq = seqio.read_sequence(_require(args.data, "sequence file"))
    skel = load_skeleton(seq.skeleton)
    est = lipnet.pipeline_infer(seq, s1, s2, tr, skel)
    seqio.write_poses(args.out, est, seq.rate_hz)
    if args.export_ply:
        export_ply(args.export_ply, seq, est, skel)
    print(f"frames: {len(est)}  flagged: {sum(e.flagged for e in est)}")


def export_ply(directory, seq, estimates, skel):
    from .kinematics import fk_batch, pose_mesh_batch, proxy_mesh_for

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    traj = evalkit.assemble_trajectory(estimates, skel)
    _, glob = fk_batch(skel, traj.rotations, traj.root)
    verts = pose_mesh_batch(proxy_mesh_for(skel), traj.joints, glob)
    for t in range(len(estimates)):
        seqio.write_ply(d / f"cloud_{t:05d}.ply", seq.points[t])
        seqio.write_ply(d / f"mesh_{t:05d}.ply", verts[t])


def cmd_eval(args):
    est = seqio.read_poses(_require(args.pred, "prediction file"))
    seq = seqio.read_sequence(_require(args.gt, "ground-truth sequence"))
    report = evalkit.evaluate(est, seq, load_skeleton(seq.skeleton), args.symmetric_cd)
    seqio.atomic_write_text(args.out, report.to_json())
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    seqio.atomic_write_text(csv_path, report.to_csv())
    print(f"MPJPE {report.mpjpe_mm:.2f} mm  Mesh {report.mesh_err_mm:.2f} mm  "
          f"Ang {report.ang_err_deg:.2f} deg  CD {report.cd_cm:.3f} cm  flagged {report.flagged_frames}")


def cmd_gradcheck(args):
    from .tensorgrad.gradcheck import run_suite

    results = run_suite(seed=args.seed, names=args.only)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.kind:<9}  {r.error:.3e}  tol {r.tol:.0e}  {'ok' if r.ok else 'FAIL'}")
    bad = [r.name for r in results if not r.ok]
    if bad:
        raise CliError(f"gradient check failed: {', '.join(bad)}")
    print(f"all {len(results)} checks passed")


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="lipmocap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    m = sub.add_parser("motion", help="generate a procedural ground-truth motion file")
    m.add_argument("--kind", choices=MOTION_KINDS, default="walk")
    m.add_argument("--frames", type=int, default=64)
    m.add_argument("--rate", type=float, default=10.0)
    m.add_argument("--start", type=float, nargs=3, default=(0.0, 8.0, 0.95))
    m.add_argument("--heading", type=float, default=0.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_motion)

    s = sub.add_parser("simulate", help="synthesize LiDAR and IMU streams for a motion")
    s.add_argument("--motion", required=True)
    s.add_argument("--scene")
    s.add_argument("--out", required=True)
    s.add_argument("--distance", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("--stage", choices=("1", "2", "trans"), required=True)
    t.add_argument("--config")
    t.add_argument("--data", nargs="+", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stage1")
    t.add_argument("--stage2")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run the full pipeline on a sequence")
    i.add_argument("--ckpts", nargs=3, required=True, metavar=("S1", "S2", "TRANS"))
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--export-ply", metavar="DIR")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="compute metrics of predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--csv")
    e.add_argument("--symmetric-cd", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and layer")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--only", nargs="*")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, seqio.FormatError, CheckpointError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
