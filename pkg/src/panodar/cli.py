"""Command-line driver.

Exit codes: 0 success, 1 usage/configuration error, 2 format error (bad or
mismatched input files), 3 computation error (degenerate input).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boundary import RefineConfig, boundaries_from_masks, boundary_loss_ta, refine_boundary_detailed
from .config import PipelineConfig, read_config
from .errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    GeometryError,
    InvalidInputError,
    PanoDarError,
)
from .fusion import fuse_window
from .grid import argmax_map
from .io import (
    atomic_write_bytes,
    dumps_json,
    encode_npy,
    file_digest,
    label_array,
    read_binary_map,
    read_json,
    read_masks,
    read_tensor,
)
from .pipeline import (
    StageError,
    build_manifest,
    compute_losses,
    load_scene,
    metrics_report,
    run_pipeline,
    scene_digests,
    scene_files,
)
from .synth import SceneSpec, generate
from .windows import WindowPlan, plan_nonoverlapping, plan_overlapping

log = logging.getLogger("panodar")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_COMPUTE = 0, 1, 2, 3
THREADS_ENV = "PANODAR_THREADS"


class UsageError(PanoDarError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, (UsageError, ConfigError, GeometryError)):
        return EXIT_USAGE
    if isinstance(exc, (FormatError, InvalidInputError, OSError)):
        return EXIT_FORMAT
    if isinstance(exc, DegenerateInputError):
        return EXIT_COMPUTE
    return EXIT_COMPUTE


def write_outputs(out_dir, files: dict[str, bytes]) -> None:
    """Write fully computed outputs; each file lands atomically."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        atomic_write_bytes(out_dir / name, data)


def _emit(report: dict, out: Path | None = None) -> None:
    text = dumps_json(report)
    if out is not None:
        atomic_write_bytes(out, text.encode())
    sys.stdout.write(text)


def _load_config(path) -> PipelineConfig:
    return read_config(path) if path else PipelineConfig()


def _threads(args) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    else:
        n = args.threads
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


# --- subcommands ---------------------------------------------------------------

def cmd_plan_windows(args) -> int:
    if args.non_overlapping:
        plan = plan_nonoverlapping(args.width, args.height, args.win_w)
    else:
        if args.stride is None:
            raise UsageError("--stride is required unless --non-overlapping is given")
        plan = plan_overlapping(args.width, args.height, args.win_w, args.stride)
    _emit(plan.to_dict(), args.out)
    return EXIT_OK


def cmd_fuse(args) -> int:
    cfg = _load_config(args.config)
    logits = read_tensor(args.ta_logits, "logits")
    masks = read_masks(args.masks)
    fused = fuse_window(masks, logits, cfg.fusion)
    report = {
        "height": int(logits.shape[1]),
        "width": int(logits.shape[2]),
        "masks": [r.to_dict() for r in fused.per_mask_report],
        "weighted_pixels": int(fused.weight_map.sum()),
    }
    write_outputs(args.out, {
        "ensemble_labels.npy": encode_npy(label_array(fused.ensemble_labels)),
        "ensemble_logits.npy": encode_npy(fused.ensemble_logits),
        "weight_map.npy": encode_npy(label_array(fused.weight_map)),
        "report.json": dumps_json(report).encode(),
    })
    log.info("fused %d masks into %s", len(masks), args.out)
    return EXIT_OK


def cmd_refine_boundary(args) -> int:
    b_i = read_binary_map(args.ta_i)
    b_j = read_binary_map(args.ta_j)
    if str(args.sam).endswith(".json"):
        b_sam = boundaries_from_masks(read_masks(args.sam))
    else:
        b_sam = read_binary_map(args.sam)
    logits_i = read_tensor(args.logits_i, "logits")
    logits_j = read_tensor(args.logits_j, "logits")
    alpha = args.alpha if args.alpha is not None else _load_config(args.config).alpha
    try:
        cfg = RefineConfig(alpha)
    except InvalidInputError as exc:
        raise ConfigError("alpha", str(exc)) from exc
    res = refine_boundary_detailed(b_i, b_j, b_sam, logits_i, logits_j, cfg)
    loss = boundary_loss_ta(res.refined, b_i, b_j)
    report = {
        "alpha": alpha,
        "c_o": int(res.refined.sum()),
        "agreed": res.agreed,
        "relocated": res.relocated,
        "retained": res.retained,
        "l_bd_t_ta": loss,
    }
    write_outputs(args.out, {
        "b_ref.npy": encode_npy(label_array(res.refined)),
        "report.json": dumps_json(report).encode(),
    })
    sys.stdout.write(dumps_json(report))
    return EXIT_OK


def _indexed(directory, count: int, kind: str) -> list[np.ndarray]:
    directory = Path(directory)
    out = []
    for i in range(count):
        path = directory / f"{i:03d}.npy"
        if not path.exists():
            raise UsageError(f"missing input {path}")
        out.append(read_tensor(path, kind))
    return out


def cmd_losses(args) -> int:
    for path in (args.plan, args.student, args.ta_whole):
        if path is not None and not Path(path).is_file():
            raise UsageError(f"missing input {path}")
    cfg = _load_config(args.config)
    plan = WindowPlan.from_dict(read_json(args.plan))
    ta_windows = _indexed(args.ta_windows, len(plan.windows), "logits")
    ensemble = _indexed(args.ensemble, len(plan.windows), "labels")
    weights = [w.astype(bool) for w in _indexed(args.weights, len(plan.windows), "labels")]
    sam = [s.astype(bool) for s in _indexed(args.sam, len(plan.overlaps), "labels")]
    student = read_tensor(args.student, "logits")
    ta_whole = read_tensor(args.ta_whole, "logits") if args.ta_whole else None
    c = student.shape[0]
    for i, labels in enumerate(ensemble):
        if labels.size and labels.max() >= c:
            raise UsageError(f"ensemble window {i} uses class {int(labels.max())}, logits have {c} classes")
    breakdown = compute_losses(plan, ta_windows, student, ensemble, weights, sam, cfg,
                               ta_whole=ta_whole, threads=_threads(args))
    report = breakdown.report.to_dict()
    for key, value in report.items():
        print(f"{key} = {value!r}", file=sys.stderr)
    _emit(report, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    gt = read_tensor(args.gt, "labels")
    pred = read_tensor(args.pred)
    if pred.ndim == 3:
        pred = argmax_map(pred)
    classes = read_json(args.classes)
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise FormatError(f"{args.classes}: expected a JSON list of class names")
    if gt.shape != pred.shape:
        raise InvalidInputError(f"ground truth {gt.shape} and prediction {pred.shape} differ in shape")
    _emit(metrics_report(gt, pred, classes), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    doc = read_json(args.spec) if args.spec else {}
    if not isinstance(doc, dict):
        raise UsageError("scene spec must be a JSON object")
    try:
        spec = SceneSpec.from_dict(doc)
    except InvalidInputError as exc:
        raise UsageError(f"invalid scene spec: {exc}") from exc
    scene = generate(spec)
    write_outputs(args.out, scene_files(scene))
    log.info("wrote scene (%d masks) to %s", len(scene.masks), args.out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    threads = _threads(args)
    scene = load_scene(args.scene)
    result = run_pipeline(scene, cfg, threads)
    digests = scene_digests(args.scene)
    if args.config:
        digests["config"] = file_digest(args.config)
    manifest = build_manifest(result, cfg, digests, threads)
    files = {
        "manifest.json": dumps_json(manifest).encode(),
        "ensemble_labels.npy": encode_npy(label_array(result.ensemble_labels)),
        "losses.json": dumps_json(result.losses.report.to_dict()).encode(),
        "metrics.json": dumps_json(manifest["metrics"]).encode(),
    }
    for k, o in enumerate(result.losses.overlaps):
        files[f"b_ref/{k:03d}.npy"] = encode_npy(label_array(o.b_ref))
    if args.keep_intermediates:
        files["plan.json"] = dumps_json(result.plan.to_dict()).encode()
        for i, (win, fw) in enumerate(zip(result.plan.windows, result.fused)):
            files[f"ta_windows/{i:03d}.npy"] = encode_npy(scene.ta_logits[:, :, win.columns].copy())
            files[f"ensemble/{i:03d}.npy"] = encode_npy(label_array(fw.ensemble_labels))
            files[f"weights/{i:03d}.npy"] = encode_npy(label_array(fw.weight_map))
        for k, o in enumerate(result.losses.overlaps):
            files[f"sam/{k:03d}.npy"] = encode_npy(label_array(o.b_sam))
    write_outputs(args.out, files)
    log.info("miou_ta=%.4f miou_ensemble=%.4f", result.miou_ta, result.miou_ensemble)
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panodar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"panodar {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="per-stage log lines on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("plan-windows", help="print a sliding-window plan as JSON")
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--win-w", type=int, required=True)
    s.add_argument("--stride", type=int)
    s.add_argument("--non-overlapping", action="store_true")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_plan_windows)

    s = sub.add_parser("fuse", help="fuse instance masks with TA logits for one window")
    s.add_argument("--ta-logits", type=Path, required=True)
    s.add_argument("--masks", type=Path, required=True)
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("refine-boundary", help="refine an overlap's TA boundary map with SAM")
    s.add_argument("--ta-i", type=Path, required=True)
    s.add_argument("--ta-j", type=Path, required=True)
    s.add_argument("--sam", type=Path, required=True, help="boundary .npy or mask-set .json")
    s.add_argument("--logits-i", type=Path, required=True)
    s.add_argument("--logits-j", type=Path, required=True)
    s.add_argument("--alpha", type=float)
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_refine_boundary)

    s = sub.add_parser("losses", help="evaluate the loss stack")
    s.add_argument("--plan", type=Path, required=True)
    s.add_argument("--ta-windows", type=Path, required=True)
    s.add_argument("--student", type=Path, required=True)
    s.add_argument("--ensemble", type=Path, required=True)
    s.add_argument("--weights", type=Path, required=True)
    s.add_argument("--sam", type=Path, required=True)
    s.add_argument("--ta-whole", type=Path)
    s.add_argument("--config", type=Path)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_losses)

    s = sub.add_parser("evaluate", help="per-class IoU and mIoU")
    s.add_argument("--gt", type=Path, required=True)
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--classes", type=Path, required=True)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write a synthetic scene directory")
    s.add_argument("--spec", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pipeline", help="run the full pipeline on a scene directory")
    s.add_argument("--scene", type=Path, required=True)
    s.add_argument("--config", type=Path)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--keep-intermediates", action="store_true",
                   help="also write per-window inputs for the losses subcommand")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (PanoDarError, OSError, ValueError) as exc:
        code = exit_code_for(exc)
        print(f"panodar {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
