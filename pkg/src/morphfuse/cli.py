"""Command-line front end: ``morphfuse {synth,face,fit,fuse,eval,info}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .align import icp_align
from .body import BodyModel, BodyParams, Keypoints2D, pose_body
from .face import FaceCoefficients, MorphableFaceModel, apply_displacement, evaluate_3dmm
from .fitter import BestFitCache, FitConfig, fit_body, with_init
from .fusion import (
    FaceRegionSpec,
    copy_paste_fuse,
    optimize_seam,
    smooth_merged_normals,
    stitch,
    transfer_neck_normals,
)
from .mesh import boundary_loops, submesh
from .metrics import GridSpec, MetricReport, df_discrepancy, format_table, mpjpe, pa_mpjpe, pa_v2v, per_sample_csv
from .metrics import point_to_plane, v2v
from .sdf import edt_sdf, refine_with_sdf
from .synth import make_body_model, make_face_model, make_scene

log = logging.getLogger("morphfuse")

MESH_METRICS = ("v2v", "pa-v2v", "p2p", "df")
JOINT_METRICS = ("mpjpe", "pa-mpjpe")
ALL_METRICS = MESH_METRICS[:2] + JOINT_METRICS + MESH_METRICS[2:]
MESH_SUFFIXES = (".obj", ".ply")
JOINTS_SUFFIX = ".joints.json"

SCENE_SDF = {"origin": [-0.4, -0.4], "spacing": 0.8 / 63, "size": 64, "radius": 0.12}


class CLIError(Exception):
    pass


def _vec(text, n, name):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{name} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{name} must be {n} comma-separated numbers")
    return np.array(vals)


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _out(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path, text):
    with open(_out(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _keypoints_from(obj):
    if isinstance(obj, list):
        return Keypoints2D(obj, [1] * len(obj))
    return Keypoints2D.from_json(obj)


# ----------------------------------------------------------------------------- synth

def _scene_masks(sdf=SCENE_SDF):
    n = sdf["size"]
    xs = sdf["origin"][0] + sdf["spacing"] * np.arange(n)
    ys = sdf["origin"][1] + sdf["spacing"] * np.arange(n)
    gx, gy = np.meshgrid(xs, ys)
    r = np.hypot(gx, gy)
    line = np.abs(r - sdf["radius"]) <= 0.5 * sdf["spacing"]
    inside = r < sdf["radius"]
    return line.astype(int) * 255, inside.astype(int) * 255


def cmd_synth(args):
    out = io.ensure_dir(args.out)
    if args.kind == "face":
        make_face_model(args.seed, args.n_id, args.n_exp, args.n_tex).save(out)
    elif args.kind == "body":
        make_body_model(args.seed, n_betas=args.n_betas).save(out)
    else:
        sc = make_scene(args.seed)
        sc.body_model.save(out / "body_model")
        sc.face_model.save(out / "face_model")
        io.write_json(out / "body_params.json", sc.true_params.to_json())
        io.write_json(out / "fuse_params.json", sc.fuse_params.to_json())
        io.write_json(out / "keypoints.json", sc.keypoints.to_json())
        io.write_json(out / "fit_config.json", FitConfig(init=sc.init_params).to_json())
        io.write_json(out / "face_coeffs.json", sc.face_coeffs.to_json())
        io.write_json(out / "region_spec.json", sc.region)
        io.save_mesh(sc.offset_face, out / "face_offset.obj")
        dmap = 0.005 * np.cos(np.linspace(0, 6 * np.pi, sc.face_model.template.n_vertices))
        io.write_json(out / "dmap.json", [float(x) for x in dmap])
        line, inside = _scene_masks()
        io.save_pgm(out / "line_mask.pgm", line)
        io.save_pgm(out / "inside_mask.pgm", inside)
        gt = io.ensure_dir(out / "gt")
        io.save_mesh(sc.gt_body, gt / "body.obj")
        io.write_json(gt / "body.joints.json", {"joints": sc.gt_joints.tolist()})
        io.write_json(out / "scene.json", {
            "seed": args.seed,
            "sdf_origin": SCENE_SDF["origin"],
            "sdf_spacing": SCENE_SDF["spacing"],
        })
    log.info("wrote %s assets to %s", args.kind, out)
    return 0


# ----------------------------------------------------------------------------- face

def cmd_face(args):
    model = MorphableFaceModel.load(args.model_dir)
    coeffs = FaceCoefficients.from_json(io.read_json(args.coeffs))
    mesh = evaluate_3dmm(model, coeffs)
    if args.dmap:
        d = io.read_json(args.dmap)
        if isinstance(d, dict):
            d = d.get("displacement")
        if not isinstance(d, list):
            raise CLIError(f"{args.dmap}: expected a JSON array of per-vertex offsets")
        mesh = apply_displacement(mesh, d)
    if args.line_mask:
        line = io.load_pgm(args.line_mask) > 0
        inside = io.load_pgm(args.inside_mask) > 0 if args.inside_mask else None
        field = edt_sdf(line, args.sdf_spacing, inside, args.sdf_origin)
        mesh = refine_with_sdf(mesh, field, args.lam, args.plane, args.sdf_iterations)
    elif args.inside_mask:
        raise CLIError("--inside-mask requires --line-mask")
    io.save_mesh(mesh, _out(args.out))
    log.info("wrote face mesh (%d vertices) to %s", mesh.n_vertices, args.out)
    return 0


# ----------------------------------------------------------------------------- fit

def cmd_fit(args):
    model = BodyModel.load(args.model_dir)
    targets = _keypoints_from(io.read_json(args.keypoints))
    config = FitConfig.from_json(io.read_json(args.config)) if args.config else FitConfig()
    overrides = {}
    if args.lambda_pose is not None:
        overrides["lambda_pose"] = args.lambda_pose
    if args.lambda_shape is not None:
        overrides["lambda_shape"] = args.lambda_shape
    if args.max_iterations is not None:
        overrides["max_iterations"] = args.max_iterations
    if overrides:
        config = replace(config, **overrides)
    if config.init is None:
        config = with_init(config, model.zero_params())
    params, loss, trace = fit_body(model, targets, config)

    kept = None
    if args.cache:
        cache_path = Path(args.cache)
        cache = BestFitCache.from_json(io.read_json(cache_path)) if cache_path.exists() else BestFitCache()
        key = args.sample_id or Path(args.keypoints).stem
        kept = cache.update(key, params, loss)
        io.write_json(_out(cache_path), cache.to_json())
    io.write_json(_out(args.out), params.to_json())
    trace_path = args.trace or str(Path(args.out).with_suffix("")) + ".trace.csv"
    with open(_out(trace_path), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, l in enumerate(trace):
            w.writerow([i, repr(float(l))])
    if args.out_mesh or args.out_joints:
        mesh, joints = pose_body(model, params)
        if args.out_mesh:
            io.save_mesh(mesh, _out(args.out_mesh))
        if args.out_joints:
            io.write_json(_out(args.out_joints), {"joints": joints.tolist()})
    summary = {"loss": loss, "iterations": len(trace) - 1}
    if kept is not None:
        summary["cache_updated"] = kept
    print(json.dumps(summary, sort_keys=True))
    return 0


# ----------------------------------------------------------------------------- fuse

def cmd_fuse(args):
    model = BodyModel.load(args.model_dir)
    params = BodyParams.from_json(io.read_json(args.params))
    face = io.load_mesh(args.face)
    spec = FaceRegionSpec.from_json(io.read_json(args.spec))
    body, _ = pose_body(model, params)
    spec.validate(body, face)

    align = None
    if args.align == "icp":
        region = sorted(set(spec.face_vertices) | set(spec.seam_vertices))
        target, _ = submesh(body, region)
        align = icp_align(face, target, max_iter=args.icp_iterations)
        face = align.apply_mesh(face)
    fused = copy_paste_fuse(body, face, spec)
    before = fused.seam_loss
    trace = [before]
    if args.strategy == "opt":
        params, fused = optimize_seam(model, params, face, spec, args.lambda_pose, args.lambda_shape, args.max_iter)
        body, _ = pose_body(model, params)
        trace = list(fused.loss_trace)
    after = fused.seam_loss

    fused = stitch(fused)
    fused = smooth_merged_normals(fused)
    if spec.neck_vertices:
        fused = transfer_neck_normals(fused, body, spec.neck_vertices, args.neck_radius)
    io.save_mesh(fused.mesh, _out(args.out))
    if args.out_params:
        io.write_json(_out(args.out_params), params.to_json())
    report = {
        "strategy": args.strategy,
        "alignment": args.align,
        "seam_loss_before": before,
        "seam_loss_after": after,
        "loss_trace": [float(x) for x in trace],
        "provenance": fused.counts(),
        "n_vertices": fused.mesh.n_vertices,
        "n_faces": fused.mesh.n_faces,
        "open_boundary_loops": len(boundary_loops(fused.mesh)),
        "params": params.to_json(),
    }
    if align is not None:
        report["align_transform"] = {"rotation": align.rotation.tolist(),
                                     "translation": align.translation.tolist(), "scale": align.scale}
    io.write_json(_out(args.report), report)
    log.info("fused mesh written to %s (seam loss %.3g -> %.3g)", args.out, before, after)
    return 0


# ----------------------------------------------------------------------------- eval

def _collect(directory):
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.name.endswith(JOINTS_SUFFIX) or p.suffix.lower() in MESH_SUFFIXES:
            out[p.name] = p
    return out


def _load_joints(path):
    obj = io.read_json(path)
    joints = obj["joints"] if isinstance(obj, dict) else obj
    return np.asarray(joints, dtype=np.float64).reshape(-1, 3)


def _eval_pair(name, pred_path, gt_path, metrics, args):
    vals = {}
    if name.endswith(JOINTS_SUFFIX):
        p, g = _load_joints(pred_path), _load_joints(gt_path)
        if "mpjpe" in metrics:
            vals["mpjpe"] = mpjpe(p, g)
        if "pa-mpjpe" in metrics:
            vals["pa-mpjpe"] = pa_mpjpe(p, g)
        return vals
    p, g = io.load_mesh(pred_path), io.load_mesh(gt_path)
    if "v2v" in metrics:
        vals["v2v"] = v2v(p, g)
    if "pa-v2v" in metrics:
        vals["pa-v2v"] = pa_v2v(p, g)
    if "p2p" in metrics:
        crop = None
        if args.crop_center is not None:
            crop = (args.crop_center, args.crop_radius)
        vals["p2p"] = point_to_plane(p, g, crop, args.prealign)[0]
    if "df" in metrics:
        grid = GridSpec.enclosing(p, g, resolution=args.df_resolution)
        vals["df"] = df_discrepancy(p, g, grid)
    return vals


def cmd_eval(args):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in ALL_METRICS]
    if unknown:
        raise CLIError(f"unknown metric(s) {unknown}; choose from {','.join(ALL_METRICS)}")
    if args.crop_center is not None and args.crop_radius is None:
        raise CLIError("--crop-center requires --crop-radius")
    pred, gt = _collect(args.pred_dir), _collect(args.gt_dir)
    names = sorted(set(pred) & set(gt))
    for n in sorted(set(pred) ^ set(gt)):
        side = "prediction" if n in pred else "ground truth"
        # always shown, independent of MORPHFUSE_LOG
        print(f"morphfuse eval: warning: skipping unpaired {side} file {n}", file=sys.stderr)
    if not names:
        raise CLIError("no matching prediction / ground-truth file pairs")
    per = {m: ([], []) for m in metrics}
    for name in names:
        vals = _eval_pair(name, pred[name], gt[name], metrics, args)
        for m, v in vals.items():
            per[m][0].append(name)
            per[m][1].append(float(v))
    crop = None
    if args.crop_center is not None:
        crop = {"center": args.crop_center.tolist(), "radius": args.crop_radius}
    reports = []
    for m in metrics:
        samples, values = per[m]
        if not values:
            log.warning("metric %s had no applicable file pairs", m)
            continue
        alignment = "procrustes" if m.startswith("pa-") else ("icp" if m == "p2p" and args.prealign else "none")
        reports.append(MetricReport(m, values, samples, alignment, crop if m == "p2p" else None, args.unit))
    out = Path(args.out)
    base = out.with_suffix("") if out.suffix == ".json" else out
    io.write_json(_out(str(base) + ".json"), {"method": args.method, "pairs": names,
                                        "metrics": [r.to_json() for r in reports]})
    table = format_table({args.method: reports}, [r.metric for r in reports])
    _write_text(str(base) + ".txt", table)
    _write_text(str(base) + ".csv", per_sample_csv(reports))
    sys.stdout.write(table)
    return 0


# ----------------------------------------------------------------------------- info

def cmd_info(args):
    d = Path(args.model_dir)
    if (d / "kinematic_tree.json").exists():
        m = BodyModel.load(d)
        info = {"kind": "body", "vertices": m.n_vertices, "faces": m.template.n_faces, "joints": m.n_joints,
                "betas": m.n_betas, "parents": list(m.parents)}
    elif (d / "identity_basis.mfa").exists():
        m = MorphableFaceModel.load(d)
        info = {"kind": "face", "vertices": m.template.n_vertices, "faces": m.template.n_faces,
                "n_id": m.n_id, "n_exp": m.n_exp, "n_tex": m.n_tex}
    else:
        raise CLIError(f"{d} is neither a body nor a face model directory")
    print(json.dumps(info, sort_keys=True))
    return 0


# ----------------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="morphfuse", description="Face/body modelling, fitting, fusion and evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write seeded toy assets")
    s.add_argument("--kind", choices=("face", "body", "scene"), required=True, help="asset kind to generate")
    s.add_argument("--seed", type=int, required=True, help="random seed (outputs are byte-identical per seed)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-id", type=int, default=10, help="identity basis rank (face kind)")
    s.add_argument("--n-exp", type=int, default=5, help="expression basis rank (face kind)")
    s.add_argument("--n-tex", type=int, default=5, help="texture basis rank (face kind)")
    s.add_argument("--n-betas", type=int, default=4, help="shape basis rank (body kind)")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("face", help="evaluate a face model, then apply displacement and SDF refinement")
    f.add_argument("--model-dir", required=True, help="face model directory")
    f.add_argument("--coeffs", required=True, help="face coefficients JSON")
    f.add_argument("--dmap", help="per-vertex displacement JSON array")
    f.add_argument("--line-mask", help="PGM (P2) line mask; nonzero pixels are contour cells")
    f.add_argument("--inside-mask", help="PGM (P2) mask of cells with negative distance")
    f.add_argument("--sdf-spacing", type=float, default=1.0, help="model units per SDF cell")
    f.add_argument("--sdf-origin", type=lambda t: _vec(t, 2, "--sdf-origin"), default=np.zeros(2),
                   help="model-space position of cell (0,0), as x,y")
    f.add_argument("--lambda", dest="lam", type=_nonneg, default=0.1, help="SDF refinement step size")
    f.add_argument("--sdf-iterations", type=int, default=1, help="number of SDF refinement steps")
    f.add_argument("--plane", default="xy", help="vertex coordinates the SDF acts on (e.g. xy, xz)")
    f.add_argument("--out", required=True, help="output mesh (.obj or .ply)")
    f.set_defaults(func=cmd_face)

    t = sub.add_parser("fit", help="fit body parameters to 2D keypoints")
    t.add_argument("--model-dir", required=True, help="body model directory")
    t.add_argument("--keypoints", required=True, help="keypoints JSON (points + visibility)")
    t.add_argument("--config", help="fit config JSON")
    t.add_argument("--cache", help="best-fit cache JSON, created or updated in place")
    t.add_argument("--sample-id", help="cache key (default: keypoints file stem)")
    t.add_argument("--lambda-pose", type=_nonneg, help="override pose prior weight")
    t.add_argument("--lambda-shape", type=_nonneg, help="override shape prior weight")
    t.add_argument("--max-iterations", type=int, help="override iteration limit")
    t.add_argument("--out", required=True, help="output params JSON")
    t.add_argument("--trace", help="trace CSV (default: <out>.trace.csv)")
    t.add_argument("--out-mesh", help="also write the posed body mesh")
    t.add_argument("--out-joints", help="also write posed 3D joints JSON")
    t.set_defaults(func=cmd_fit)

    u = sub.add_parser("fuse", help="splice a face mesh into the posed body")
    u.add_argument("--model-dir", required=True, help="body model directory")
    u.add_argument("--params", required=True, help="body params JSON")
    u.add_argument("--face", required=True, help="face mesh (.obj or .ply)")
    u.add_argument("--spec", required=True, help="face region spec JSON")
    u.add_argument("--strategy", choices=("copy", "opt"), default="copy", help="copy-paste only, or seam optimisation")
    u.add_argument("--align", choices=("icp", "none"), default="icp", help="pre-align the face to the body head region")
    u.add_argument("--icp-iterations", type=int, default=50, help="ICP iteration limit")
    u.add_argument("--lambda-pose", type=_nonneg, default=0.0, help="pose prior weight in the seam objective")
    u.add_argument("--lambda-shape", type=_nonneg, default=0.0, help="shape prior weight in the seam objective")
    u.add_argument("--max-iter", type=int, default=100, help="seam optimisation iteration limit")
    u.add_argument("--neck-radius", type=float, help="neck normal transfer radius (default: neck bounding radius)")
    u.add_argument("--out", required=True, help="output fused mesh")
    u.add_argument("--out-params", help="write the refined body params JSON")
    u.add_argument("--report", required=True, help="fusion report JSON")
    u.set_defaults(func=cmd_fuse)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred-dir", required=True, help="directory of predicted meshes / *.joints.json")
    e.add_argument("--gt-dir", required=True, help="directory of ground-truth files with matching names")
    e.add_argument("--metrics", default="v2v,pa-v2v,mpjpe,pa-mpjpe,p2p,df",
                   help="comma-separated subset of v2v,pa-v2v,mpjpe,pa-mpjpe,p2p,df")
    e.add_argument("--crop-center", type=lambda t: _vec(t, 3, "--crop-center"), help="p2p crop center x,y,z")
    e.add_argument("--crop-radius", type=float, help="p2p crop radius")
    e.add_argument("--prealign", action="store_true", help="ICP-align prediction to ground truth before p2p")
    e.add_argument("--df-resolution", type=int, default=32, help="distance-field grid resolution per axis")
    e.add_argument("--unit", default="model units", help="unit label written into the report")
    e.add_argument("--method", default="prediction", help="row label for the text table")
    e.add_argument("--out", required=True, help="report path; writes <out>.json, .txt and .csv")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("info", help="summarise a model directory")
    i.add_argument("--model-dir", required=True, help="body or face model directory")
    i.set_defaults(func=cmd_info)
    return p


def _setup_logging():
    level = os.environ.get("MORPHFUSE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="morphfuse: %(levelname)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, ValueError, KeyError, OSError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
        print(f"morphfuse {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
