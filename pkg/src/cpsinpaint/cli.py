"""Command-line entry point: ``cpsinpaint <subcommand> ...`` (see ``--help``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from cpsinpaint import formats, metrics
from cpsinpaint.captioner import backend_from_env
from cpsinpaint.config import RunConfig, from_flat, load_config
from cpsinpaint.cps import DEFAULT_ALPHA, schedule_dump
from cpsinpaint.denoiser import VideoDiT
from cpsinpaint.errors import InpaintError, PipelineError
from cpsinpaint.pipeline import InpaintRequest, detect_objects, generate_prompt, inpaint
from cpsinpaint.synth import gen_corpus
from cpsinpaint.training import distill, train

log = logging.getLogger("cpsinpaint")

EXIT_FAILURE = 1
EXIT_MISSING = 2


class CliError(Exception):
    def __init__(self, stage: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(f"[{stage}] {message}")
        self.code = code


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")
    return text == "on"


def _require(path, stage: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(stage, f"{p} does not exist", EXIT_MISSING)
    return p


def _load_model(path, stage: str = "load") -> tuple[VideoDiT, RunConfig, dict]:
    p = _require(path, stage)
    header, params = formats.load_checkpoint(p)
    run = from_flat(header["config"], guidance=header.get("kind") == "student")
    return VideoDiT(run.model, params), run, header


def _save_model(path, model: VideoDiT, run: RunConfig, kind: str, extra: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    formats.save_checkpoint(path, run.to_flat(), model.params, kind, extra)


def _log_writer(path):
    if path is None:
        return None, None
    fh = open(path, "w")
    return fh, lambda line: fh.write(line + "\n")


# ------------------------------------------------------------------ subcommands

def cmd_synth_data(args) -> int:
    h, w = args.size
    examples = gen_corpus(args.count, seed=args.seed, frames=args.frames, height=h, width=w)
    formats.write_dataset(args.out, examples)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def cmd_train(args) -> int:
    run = load_config(_require(args.config, "config")) if args.config else RunConfig()
    if args.seed is not None:
        run = from_flat({**run.to_flat(), "seed": args.seed})
    examples = formats.read_dataset(_require(args.data, "data"))
    model = VideoDiT(run.model, seed=run.flow.seed)
    fh, sink = _log_writer(args.log)
    try:
        state = train(model, examples, run, log_sink=sink, log_every=args.log_every)
    finally:
        if fh:
            fh.close()
    last = state.history[-1]["loss"] if state.history else float("nan")
    _save_model(args.out, model, run, "teacher", {"iterations": state.iteration, "final_loss": last})
    print(f"trained {state.iteration} iterations, final loss {last:.5f}; saved {args.out}")
    return 0


def cmd_distill(args) -> int:
    teacher, run, header = _load_model(args.teacher)
    if header.get("kind") == "student":
        raise CliError("load", f"{args.teacher} is already a distilled student")
    overrides = {"seed": args.seed, "distill_lr": args.lr}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        run = from_flat({**run.to_flat(), **overrides})
    examples = formats.read_dataset(_require(args.data, "data"))
    fh, sink = _log_writer(args.log)
    try:
        state = distill(teacher, examples, run, args.iters, args.scale, log_sink=sink, log_every=args.log_every)
    finally:
        if fh:
            fh.close()
    hist = [r["loss"] for r in state.history]
    extra = {"scale": args.scale, "iterations": args.iters, "initial_loss": hist[0] if hist else None,
             "final_loss": hist[-1] if hist else None}
    formats.save_checkpoint(args.out, run.to_flat(), state.model.params, "student", extra)
    print(f"distilled {args.iters} iterations at scale {args.scale}; saved {args.out}")
    return 0


def cmd_infer(args) -> int:
    model, run, header = _load_model(args.ckpt)
    video = formats.read_video(_require(args.video, "read"))
    mask = formats.read_mask(_require(args.mask, "read"))
    prompt = args.prompt
    if prompt == "auto":
        if not args.object:
            raise CliError("describe", "--prompt auto needs --object NAME")
        backend = backend_from_env()
        names = detect_objects(video, backend)
        log.info("captioner sees %s", names)
        prompt = generate_prompt(video, args.object, backend)
        log.info("generated prompt: %s", prompt)
    scale = args.scale if args.scale is not None else header.get("extra", {}).get("scale", run.flow.cfg_scale)
    req = InpaintRequest(video, mask, prompt=prompt, composite=args.composite, steps=args.steps,
                         guidance_scale=scale, seed=args.seed, window=args.window, alpha=args.alpha)
    out = inpaint(req, model, run.codec)
    formats.write_video(args.out, out)
    print(f"wrote {args.out} (prompt: {prompt!r})")
    return 0


def cmd_eval(args) -> int:
    out = formats.read_video(_require(args.out, "read"))
    gt = formats.read_video(_require(args.gt, "read"))
    mask = formats.read_mask(_require(args.mask, "read")) if args.mask else None
    report = metrics.write_report(args.report, [metrics.evaluate(out, gt, mask, Path(args.out).stem)])
    print(json.dumps(report["aggregate"]))
    return 0


def cmd_schedule_dump(args) -> int:
    for line in schedule_dump(args.frames, args.window, args.alpha, args.steps):
        print(line)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpsinpaint", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=256)
    p.add_argument("--frames", type=int, default=17)
    p.add_argument("--size", type=_size, default=(64, 64), help="HxW")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="two-stage training from a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="flat TOML file; defaults are used when omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--log", help="write one JSON line per logged iteration here")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="distil guided sampling into a single-call student")
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scale", type=float, default=3.0)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=None, help="student learning rate (default: the config's distill_lr)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("infer", help="remove the masked object from a video")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--object", help="name of the object being removed (used by --prompt auto)")
    p.add_argument("--prompt", default="background scene", help="scene text, or 'auto' to ask the captioner")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--window", type=int, default=None, help="latent frames per window (default: model max_f)")
    p.add_argument("--alpha", type=int, default=DEFAULT_ALPHA)
    p.add_argument("--scale", type=float, default=None, help="guidance scale (default: checkpoint or config)")
    p.add_argument("--composite", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score an output video against ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("schedule-dump", help="print the circular window plan for every step")
    p.add_argument("--frames", type=int, required=True, help="latent frames l")
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--alpha", type=int, default=DEFAULT_ALPHA)
    p.add_argument("--steps", type=int, default=40)
    p.set_defaults(func=cmd_schedule_dump)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return EXIT_MISSING
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except InpaintError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
