"""Command line: generate, solve, evaluate, warp, render, gradcheck and plot.

Exit codes: 0 ok, 1 verification failure, 2 usage error, 3 I/O or file
format error, 4 solver divergence.  Angles are degrees on the command line.
Batch commands fan out over scenes in worker processes; ``LANEGEO_THREADS``
caps the worker count and results are always collected in scene-id order.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import files
from .errors import DivergedSolve, LaneGeoError
from .files import Dataset, FileFormatError, SceneSolution, SolveOutput
from .geometry import DEFAULT_INTRINSICS, CameraPose, Intrinsics, ground_to_image_xy, project_to_ground
from .gradcheck import GradcheckConfig, run_trial
from .ipm import (TopViewGrid, read_png, read_raw, straight_lane_variance, warp_to_topview, write_png,
                  write_raw)
from .lane_model import eval_lane
from .metrics import MatchConfig, evaluate, results_csv
from .optimizer import SolverConfig, solve, solve_with_association
from .synth import Elevation, SceneConfig, generate_scene, render_scene

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _threads() -> int:
    env = os.environ.get("LANEGEO_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise UsageError(f"LANEGEO_THREADS must be an integer, got {env!r}")
    return n


def pool_map(fn, items: list) -> list:
    """Ordered map, parallel over processes when more than one worker is allowed."""
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * n))))


def _positive(name):
    def conv(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} expects a number, got {s!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{name} must be positive, got {s}")
        return v
    return conv


def _grid(s: str):
    try:
        cols, rows = (int(t) for t in s.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--grid expects COLSxROWS, got {s!r}")
    if cols < 2 or rows < 2:
        raise argparse.ArgumentTypeError(f"--grid needs at least 2x2 cells, got {s!r}")
    return cols, rows


def _intrinsics(args) -> Intrinsics:
    return Intrinsics(args.fx, args.fy, args.cx, args.cy)


def _add_intrinsics(p):
    k = DEFAULT_INTRINSICS
    p.add_argument("--fx", type=float, default=k.fx)
    p.add_argument("--fy", type=float, default=k.fy)
    p.add_argument("--cx", type=float, default=k.cx)
    p.add_argument("--cy", type=float, default=k.cy)


# ---------------------------------------------------------------------------
# gen


def _gen_one(job):
    cfg, sid = job
    return generate_scene(cfg, sid)


def cmd_gen(args) -> int:
    if args.scenes < 0:
        raise UsageError("--scenes must be non-negative")
    if args.noise_px < 0:
        raise UsageError(f"--noise-px must be non-negative, got {args.noise_px}")
    cfg = SceneConfig(seed=args.seed, noise_px=args.noise_px, elevation=Elevation(args.elevation),
                      curvature_scale=args.curvature_scale, ground_observations=args.ground_observations,
                      n_lanes_range=(args.min_lanes, args.max_lanes))
    scenes = pool_map(_gen_one, [(cfg, i) for i in range(args.scenes)])
    files.write_dataset(Dataset(cfg, scenes), args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def _solve_one(job) -> SceneSolution:
    scene, cfg, known = job
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = solve(scene.observations, cfg) if known else solve_with_association(scene.observations, cfg)
    except DivergedSolve as e:
        return SceneSolution(scene.scene_id, None, [], error=f"DivergedSolve: {e}")
    except LaneGeoError as e:
        return SceneSolution(scene.scene_id, None, [], error=f"{type(e).__name__}: {e}")
    return SceneSolution(scene.scene_id, rep.pose, [(1.0, ln) for ln in rep.lanes], rep.iterations,
                         rep.converged, rep.final_loss.as_dict(), list(rep.history), list(rep.warnings))


def cmd_solve(args) -> int:
    ds = files.read_dataset(args.input)
    has_ground = all(s.observations.has_ground for s in ds.scenes)
    use_ground = has_ground if args.use_ground_loss is None else args.use_ground_loss
    if use_ground and not has_ground:
        raise UsageError("--use-ground-loss needs a dataset generated with ground observations")
    cfg = SolverConfig(gtol=args.gtol, xtol=args.xtol, max_iters=args.max_iters, use_ground_loss=use_ground)
    t0 = time.perf_counter()
    sols = pool_map(_solve_one, [(s, cfg, args.known_association) for s in ds.scenes])
    wall = time.perf_counter() - t0
    meta = {
        "config_hash": files.config_hash(ds.config.as_dict(), cfg.as_dict(),
                                         {"known_association": args.known_association}),
        "seed": ds.config.seed,
        "wall_time_s": wall,
        "solver": cfg.as_dict(),
        "known_association": args.known_association,
    }
    files.write_solve_output(SolveOutput(meta, sols), args.out)
    dh, dp, conv = [], [], 0
    for s, sol in zip(ds.scenes, sols):
        if sol.pose is None:
            continue
        dh.append(abs(sol.pose.height_m - s.pose.height_m))
        dp.append(math.degrees(abs(sol.pose.pitch_rad - s.pose.pitch_rad)))
        conv += sol.converged
    n = len(sols)
    mean = (lambda v: float(np.mean(v)) if v else float("nan"))
    print(f"scenes {n}  mean |dh| {mean(dh):.6g} m  mean |dpitch| {mean(dp):.6g} deg  "
          f"converged {conv}/{n} ({(conv / n if n else 1.0):.3f})")
    failed = [sol for sol in sols if sol.error is not None]
    for sol in failed:
        print(f"scene {sol.scene_id}: {sol.error}", file=sys.stderr)
    if failed and not args.keep_going:
        return EXIT_DIVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    preds = files.read_predictions(args.pred)
    ds = files.read_dataset(args.gt)
    gt_ids = [s.scene_id for s in ds.scenes]
    if set(preds) != set(gt_ids):
        missing = sorted(set(gt_ids) - set(preds))[:5]
        extra = sorted(set(preds) - set(gt_ids))[:5]
        raise UsageError(f"scene ids differ between --pred and --gt (missing {missing}, unexpected {extra})")
    cfg = MatchConfig(dist_max_m=args.dist_max, coverage=args.coverage, near_far_split=args.near_far_split)
    pairs = [(preds[s.scene_id], list(s.lanes)) for s in ds.scenes]
    results, summary = evaluate(pairs, cfg)
    text = results_csv(list(zip(gt_ids, results)))
    if args.csv:
        try:
            Path(args.csv).write_text(text)
        except OSError as e:
            raise FileFormatError(f"cannot write {args.csv}: {e.strerror}") from e
    else:
        sys.stdout.write(text)
    print(f"tp {summary.tp} fp {summary.fp} fn {summary.fn}  precision {summary.precision:.6f}  "
          f"recall {summary.recall:.6f}  F {summary.f_score:.6f}  AP {summary.ap:.6f}  max-F {summary.max_f:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# warp / render


def _read_image(path):
    try:
        return read_raw(path) if str(path).endswith(".raw") else read_png(path)
    except (OSError, ValueError) as e:
        raise FileFormatError(f"cannot read image {path}: {e}") from e


def cmd_warp(args) -> int:
    img = _read_image(args.image)
    try:
        pose = CameraPose.from_degrees(args.height, args.pitch_deg)
    except ValueError as e:
        raise UsageError(str(e))
    cols, rows = args.grid
    grid = TopViewGrid(cols=cols, rows=rows)
    top = warp_to_topview(img, pose, _intrinsics(args), grid)
    try:
        write_png(top, args.out)
        if args.raw:
            write_raw(top, Path(args.out).with_suffix(".raw"))
    except OSError as e:
        raise FileFormatError(f"cannot write {args.out}: {e}") from e
    if args.verify:
        var = straight_lane_variance(top)
        worst = max(var, default=float("inf"))
        print(f"tracks {len(var)}  max centroid variance {worst:.4g} cell^2")
        if not var or worst >= 1.0:
            return EXIT_VERIFY
    return EXIT_OK


def _scene_by_id(ds: Dataset, sid: int):
    for s in ds.scenes:
        if s.scene_id == sid:
            return s
    raise UsageError(f"unknown scene id {sid}")


def cmd_render(args) -> int:
    ds = files.read_dataset(args.input)
    scene = _scene_by_id(ds, args.scene)
    img = render_scene(scene, args.width, args.height, args.line_width)
    try:
        write_raw(img, args.out) if str(args.out).endswith(".raw") else write_png(img, args.out)
    except OSError as e:
        raise FileFormatError(f"cannot write {args.out}: {e}") from e
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def _grad_one(job):
    cfg, trial = job
    return run_trial(cfg, trial)


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be at least 1, got {args.trials}")
    cfg = GradcheckConfig(seed=args.seed, trials=args.trials, tol=args.tol, inject_bug=args.inject_bug)
    trials = pool_map(_grad_one, [(cfg, t) for t in range(cfg.trials)])
    worst = max(trials, key=lambda t: t.max_error)
    skipped = sum(t.skipped for t in trials)
    print(f"trials {len(trials)}  max relative error {worst.max_error:.3e}  skipped coordinates {skipped}")
    if worst.max_error >= cfg.tol:
        print(f"FAIL: parameter {worst.worst_index} ({worst.worst_name}) in scene {worst.scene_id} "
              f"of seed {worst.scene_seed}: error {worst.max_error:.3e} >= {cfg.tol:g}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot


def _pred_records(path) -> dict:
    """Scene id -> (pose, [lanes]) for a solve output or a dataset used as prediction."""
    doc = files._load_json(path, "predictions")
    if isinstance(doc, dict) and doc.get("kind") == "dataset":
        ds = Dataset.from_dict(doc)
        return {s.scene_id: (s.pose, list(s.lanes)) for s in ds.scenes}
    out = SolveOutput.from_dict(doc)
    return {s.scene_id: (s.pose, [ln for _, ln in s.lanes]) for s in out.scenes}


def frame_points(lanes, pose, k: Intrinsics, ys) -> dict:
    """Per frame, one (N, 2) array per lane in plot coordinates."""
    out = {"image": [], "ground": [], "space_top": [], "space_side": []}
    for lane in lanes:
        y = np.asarray([t for t in ys if lane.t1 <= t <= lane.t2])
        x, z = eval_lane(lane, y)
        out["space_top"].append(np.column_stack([x, y]))
        out["space_side"].append(np.column_stack([y, z]))
        if pose is None:
            continue
        xg, yg = project_to_ground(x, y, z, pose.height_m)
        out["ground"].append(np.column_stack([xg, yg]))
        u, v = ground_to_image_xy(xg, yg, pose.height_m, pose.pitch_rad, k)
        out["image"].append(np.column_stack([u, v]))
    return out


_VIEW = {
    # frame: (flip vertical axis, x label, y label)
    "image": (False, "u [px]", "v [px]"),
    "ground": (True, "X ground [m]", "Y ground [m]"),
    "space_top": (True, "X [m]", "Y [m]"),
    "space_side": (True, "Y [m]", "Z [m]"),
}


def svg_document(truth: list, pred: list, flip: bool, labels, size=(480, 360)) -> str:
    """Both polyline sets drawn in shared data coordinates; y is negated when flip is set."""
    pts = [p for p in truth + pred if len(p)]
    if pts:
        allp = np.vstack(pts)
        lo, hi = allp.min(axis=0), allp.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = np.maximum(hi - lo, 1e-9)
    pad = 0.05 * span
    sign = -1.0 if flip else 1.0
    y0 = (sign * hi[1] if flip else lo[1]) - pad[1]
    vb = f"{lo[0] - pad[0]:.9f} {y0:.9f} {span[0] + 2 * pad[0]:.9f} {span[1] + 2 * pad[1]:.9f}"
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size[0]}" height="{size[1]}" '
             f'viewBox="{vb}" preserveAspectRatio="none">',
             f"<title>{labels[0]} vs {labels[1]}</title>"]
    for cls, color, group in (("truth", "#1f77b4", truth), ("pred", "#d62728", pred)):
        for i, p in enumerate(group):
            coords = " ".join(f"{x:.9f},{sign * y:.9f}" for x, y in p)
            lines.append(f'<polyline class="{cls}" data-lane="{i}" points="{coords}" fill="none" '
                         f'stroke="{color}" stroke-width="0.4%" vector-effect="non-scaling-stroke"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_plot(args) -> int:
    ds = files.read_dataset(args.gt)
    scene = _scene_by_id(ds, args.scene)
    preds = _pred_records(args.pred)
    if args.scene not in preds:
        raise UsageError(f"unknown scene id {args.scene} in --pred")
    pose_p, lanes_p = preds[args.scene]
    k = scene.observations.intrinsics
    ys = ds.config.y_positions
    truth = frame_points(scene.lanes, scene.pose, k, ys)
    pred = frame_points(lanes_p, pose_p, k, ys)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for frame, (flip, xl, yl) in _VIEW.items():
            (out / f"{frame}.svg").write_text(svg_document(truth[frame], pred[frame], flip, (xl, yl)))
            rows = ["source,lane,c0,c1"]
            for src, group in (("truth", truth[frame]), ("pred", pred[frame])):
                for i, p in enumerate(group):
                    rows += [f"{src},{i},{float(x)!r},{float(y)!r}" for x, y in p]
            (out / f"{frame}.csv").write_text("\n".join(rows) + "\n")
    except OSError as e:
        raise FileFormatError(f"cannot write to {out}: {e.strerror}") from e
    print(f"wrote {len(_VIEW)} frames to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lanegeo", description=__doc__.split("\n")[0],
                epilog=f"Scene RNG: {files.RNG_NAME}. Part of the dataset file contract.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset",
                       epilog=f"Scenes are drawn with {files.RNG_NAME}, so a seed reproduces the file byte for byte.")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenes", type=int, default=10)
    g.add_argument("--noise-px", type=float, default=0.0)
    g.add_argument("--elevation", choices=[e.value for e in Elevation], default=Elevation.RANDOM.value)
    g.add_argument("--curvature-scale", type=float, default=1.0)
    g.add_argument("--min-lanes", type=int, default=2)
    g.add_argument("--max-lanes", type=int, default=6)
    g.add_argument("--ground-observations", action=argparse.BooleanOptionalAction, default=True,
                   help="attach flat-ground back-projections of the observed points (default on)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="recover pose and lanes for every scene")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--known-association", action="store_true")
    s.add_argument("--use-ground-loss", action=argparse.BooleanOptionalAction, default=None,
                   help="default: on when the dataset has ground observations")
    s.add_argument("--gtol", type=float, default=SolverConfig.gtol)
    s.add_argument("--xtol", type=float, default=SolverConfig.xtol)
    s.add_argument("--max-iters", type=int, default=SolverConfig.max_iters)
    s.add_argument("--keep-going", action="store_true", help="exit 0 even when some scenes fail")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="score predictions against a dataset")
    e.add_argument("--pred", required=True, help="solve output, or a dataset to score truth against itself")
    e.add_argument("--gt", required=True)
    e.add_argument("--csv", help="write per-scene rows here instead of standard output")
    e.add_argument("--dist-max", type=_positive("--dist-max"), default=MatchConfig.dist_max_m)
    e.add_argument("--coverage", type=_positive("--coverage"), default=MatchConfig.coverage)
    e.add_argument("--near-far-split", type=float, default=MatchConfig.near_far_split)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("warp", help="inverse perspective mapping to a top view")
    w.add_argument("--image", required=True, help="PNG, or .raw float image")
    w.add_argument("--height", type=_positive("--height"), required=True)
    w.add_argument("--pitch-deg", type=float, required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--grid", type=_grid, default=(208, 108), help="COLSxROWS (default 208x108)")
    w.add_argument("--raw", action="store_true", help="also write a lossless .raw sidecar")
    w.add_argument("--verify", action="store_true",
                   help="exit 1 unless every lane track in the top view is straight (variance < 1 cell^2)")
    _add_intrinsics(w)
    w.set_defaults(func=cmd_warp)

    r = sub.add_parser("render", help="rasterise one scene's lanes")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--scene", type=int, default=0)
    r.add_argument("--out", required=True, help=".png or .raw")
    r.add_argument("--width", type=int, default=480)
    r.add_argument("--height", type=int, default=360)
    r.add_argument("--line-width", type=float, default=2.0)
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    pl = sub.add_parser("plot", help="SVG overlays and point CSVs of truth vs prediction")
    pl.add_argument("--pred", required=True)
    pl.add_argument("--gt", required=True)
    pl.add_argument("--scene", type=int, required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"lanegeo {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileFormatError as e:
        print(f"lanegeo {args.command}: {e}", file=sys.stderr)
        return EXIT_IO
