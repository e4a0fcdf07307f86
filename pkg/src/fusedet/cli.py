"""Command line front end.

Subcommands cover the whole chain: simulate ground truth, run the detection
pipeline, train the refinement head, evaluate logs, render frames to SVG,
and run the radar DSP front end standalone.  Exit status is 0 on success,
1 for usage errors, and 2 when a config, data, or numeric error stops a run.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .dsp import cube_to_pointcloud, save_pointcloud_csv
from .errors import ConfigError, FusedetError
from .evaluate import evaluate, format_report_text, save_report_yaml
from .figures import save_report_figures
from .fusion import (MODE_FUSION, MODE_IMAGE_ONLY, MODE_RADAR_ONLY,
                     TrainHyper, init_fusion_params, save_fusion_params_yaml,
                     total_loss, train_refinement)
from .pipeline import (DetectionLog, FrameRecord, PipelineConfig, TruthBox,
                       build_training_samples, load_detection_log_csv,
                       load_pipeline_yaml, run_pipeline,
                       save_detection_log_csv)
from .render import save_frame_svg
from .scene import (MODE_ADC, emit_radar, generate_frame, load_scene_yaml,
                    shipped_scene_names, shipped_scene_path)

MODES = (MODE_FUSION, MODE_IMAGE_ONLY, MODE_RADAR_ONLY)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_scene(value):
    """A shipped scene name, or a path to a scene YAML."""
    if os.path.exists(value):
        return os.path.splitext(os.path.basename(value))[0], value
    if value in shipped_scene_names():
        return value, shipped_scene_path(value)
    known = ", ".join(shipped_scene_names())
    raise ConfigError(f"unknown scene {value!r}: not a file, and shipped "
                      f"scenes are {known}")


def _load_scene(value, seed):
    name, path = _resolve_scene(value)
    spec = load_scene_yaml(path)
    if seed is not None:
        spec = replace(spec, seed=seed)
    return name, spec


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FUSEDET_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"FUSEDET_SEED must be an integer, got {env!r}")


def _pipeline_config(args):
    cfg = load_pipeline_yaml(args.config) if args.config else PipelineConfig()
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    return cfg


# --- subcommands ---------------------------------------------------------------


def _cmd_simulate(args):
    seed = _resolve_seed(args)
    name, spec = _load_scene(args.scene[0], seed)
    cfg = _pipeline_config(args)
    log = DetectionLog()
    for k in range(spec.duration):
        truth = generate_frame(spec, k, cfg.camera)
        boxes = [TruthBox(t.target_id, t.box2d, t.occlusion)
                 for t in truth.targets if t.box2d is not None]
        log.frames.append(FrameRecord(frame=k, lighting=truth.lighting,
                                      detections=[], truth=boxes))
    save_detection_log_csv(args.out, log)
    print(f"simulate: {name} -> {args.out} ({len(log.frames)} frames)")
    return 0


def _detect_one(cfg, spec):
    return run_pipeline(cfg, spec)


def _cmd_detect(args):
    seed = _resolve_seed(args)
    cfg = _pipeline_config(args)
    scenes = [_load_scene(value, seed) for value in args.scene]
    if len(scenes) > 1:
        os.makedirs(args.out, exist_ok=True)
        outs = [os.path.join(args.out, f"{name}.csv") for name, _ in scenes]
    else:
        outs = [args.out]
    if args.jobs > 1 and len(scenes) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            logs = list(pool.map(lambda s: _detect_one(cfg, s[1]), scenes))
    else:
        logs = [_detect_one(cfg, spec) for _, spec in scenes]
    for (name, _), log, out in zip(scenes, logs, outs):
        save_detection_log_csv(out, log)
        n_det = sum(len(rec.detections) for rec in log.frames)
        print(f"detect: {name} -> {out} "
              f"({len(log.frames)} frames, {n_det} detections)")
    return 0


def _cmd_train(args):
    seed = _resolve_seed(args)
    _, spec = _load_scene(args.scene[0], seed)
    cfg = _pipeline_config(args)
    samples = build_training_samples(cfg, spec,
                                     jitter_seeds=range(args.seeds))
    hyper = TrainHyper(epochs=args.epochs, seed=seed or 0,
                       symmetric_bce=True)
    start = total_loss(samples, init_fusion_params(hyper),
                       symmetric_bce=True)
    params = train_refinement(samples, hyper)
    final = total_loss(samples, params, symmetric_bce=True)
    save_fusion_params_yaml(args.out, params)
    positives = sum(s.label for s in samples)
    print(f"train: {len(samples)} samples ({positives} positive), "
          f"loss {start:.4f} -> {final:.4f}, params -> {args.out}")
    return 0


def _cmd_eval(args):
    log = load_detection_log_csv(args.log)
    report = evaluate(log, iou_thresh=args.iou)
    os.makedirs(args.out, exist_ok=True)
    text = format_report_text(report)
    text_path = os.path.join(args.out, "report.txt")
    with open(text_path, "w") as fh:
        fh.write(text)
    save_report_yaml(os.path.join(args.out, "report.yaml"), report)
    figures = save_report_figures(args.out, report)
    sys.stdout.write(text)
    print(f"eval: wrote report.txt, report.yaml and "
          f"{len(figures)} figures to {args.out}")
    return 0


def _cmd_render(args):
    log = load_detection_log_csv(args.log)
    os.makedirs(args.out, exist_ok=True)
    if args.frame is not None:
        if not 0 <= args.frame < len(log.frames):
            raise ConfigError(f"--frame {args.frame} outside the log's "
                              f"{len(log.frames)} frames")
        records = [log.frames[args.frame]]
    else:
        records = log.frames[::args.every]
    size = tuple(args.image_size)
    for rec in records:
        path = os.path.join(args.out, f"frame_{rec.frame:05d}.svg")
        save_frame_svg(path, rec, image_size=size)
    print(f"render: {len(records)} frames -> {args.out}")
    return 0


def _cmd_dsp(args):
    seed = _resolve_seed(args)
    name, spec = _load_scene(args.scene[0], seed)
    cfg = _pipeline_config(args)
    if not 0 <= args.frame < spec.duration:
        raise ConfigError(f"--frame {args.frame} outside scene duration "
                          f"{spec.duration}")
    truth = generate_frame(spec, args.frame)
    cube = emit_radar(truth, spec, mode=MODE_ADC, radar_config=cfg.radar)
    points = cube_to_pointcloud(cube, sensor_height=cfg.adc_sensor_height)
    save_pointcloud_csv(args.out, {args.frame: points})
    print(f"dsp: {name} frame {args.frame}: {len(points)} points "
          f"-> {args.out}")
    return 0


# --- parser --------------------------------------------------------------------


def _add_common(sub, scene=True, config=True, seed=True):
    if scene:
        sub.add_argument("--scene", required=True, nargs="+",
                         metavar="NAME_OR_FILE",
                         help="shipped scene name or scene YAML path "
                              f"(shipped: {', '.join(shipped_scene_names())})")
    if config:
        sub.add_argument("--config", help="pipeline config YAML")
    if seed:
        sub.add_argument("--seed", type=int,
                         help="override the scene seed (falls back to the "
                              "FUSEDET_SEED environment variable)")


def build_parser() -> _Parser:
    parser = _Parser(prog="fusedet",
                     description="Camera + radar fusion detection toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate",
                              help="write a scene's ground truth log")
    _add_common(sim)
    sim.add_argument("--out", required=True, help="truth log CSV path")
    sim.set_defaults(func=_cmd_simulate, single_scene=True)

    det = commands.add_parser("detect", help="run the detection pipeline")
    _add_common(det)
    det.add_argument("--mode", choices=MODES,
                     help="override the pipeline mode")
    det.add_argument("--out", required=True,
                     help="log CSV path (a directory when several scenes "
                          "are given)")
    det.add_argument("--jobs", type=int, default=1,
                     help="run up to N scenes concurrently")
    det.set_defaults(func=_cmd_detect)

    train = commands.add_parser("train", help="fit the refinement head")
    _add_common(train)
    train.add_argument("--seeds", type=int, default=3,
                       help="number of scene reseedings to sample")
    train.add_argument("--epochs", type=int, default=60)
    train.add_argument("--out", required=True,
                       help="trained fusion params YAML path")
    train.set_defaults(func=_cmd_train, single_scene=True)

    ev = commands.add_parser("eval", help="score a detection log")
    ev.add_argument("--log", required=True, help="detection log CSV")
    ev.add_argument("--iou", type=float, default=0.5,
                    help="match threshold (default 0.5)")
    ev.add_argument("--out", required=True, help="report output directory")
    ev.set_defaults(func=_cmd_eval)

    ren = commands.add_parser("render", help="draw log frames as SVG")
    ren.add_argument("--log", required=True, help="detection log CSV")
    ren.add_argument("--out", required=True, help="SVG output directory")
    ren.add_argument("--frame", type=int, help="render a single frame")
    ren.add_argument("--every", type=int, default=1,
                     help="render every Nth frame (default 1)")
    ren.add_argument("--image-size", type=int, nargs=2,
                     default=(1536, 2048), metavar=("ROWS", "COLS"))
    ren.set_defaults(func=_cmd_render)

    dsp = commands.add_parser("dsp",
                              help="radar front end only: scene frame to "
                                   "point cloud via the ADC cube")
    _add_common(dsp)
    dsp.add_argument("--frame", type=int, default=0,
                     help="scene frame to process (default 0)")
    dsp.add_argument("--out", required=True, help="point cloud CSV path")
    dsp.set_defaults(func=_cmd_dsp, single_scene=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "single_scene", False) and len(args.scene) > 1:
        parser.error(f"{args.command} takes exactly one --scene")
    try:
        return args.func(args)
    except FusedetError as exc:
        print(f"fusedet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fusedet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
