"""Command-line front end.

Exit codes: 0 on success, 1 for usage errors, 2 for data or runtime errors.
Results go to stdout, progress to stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import io as gio
from .core import Vec2, render
from .train import FitConfig, compute_loss, fit
from .transform import RotationSpec, rotate, scale, top_k, translate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

log = logging.getLogger("gmface")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _format_loss(report) -> str:
    return f"l2={report.l2!r} l_inf={report.l_inf!r} total={report.total!r}"


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_targets(path: Path):
    return gio.load_dataset(path) if path.is_dir() else [gio.read_image(path)]


def cmd_fit(args) -> int:
    targets = _load_targets(Path(args.input))
    init = None
    if args.init != "random":
        init = gio.read_model(args.init)
    try:
        cfg = FitConfig(
            epochs=args.epochs,
            alpha=args.alpha,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            seed=args.seed,
            init=init,
            m=args.components,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    log.info("fitting %d image(s) of %dx%d", len(targets), *targets[0].shape)
    result = fit(targets, cfg)
    gio.write_model(result.model, args.out)
    if args.history:
        gio.export_loss_history(result.history, args.history)
    print(_format_loss(result.final_loss))
    return EXIT_OK


def cmd_render(args) -> int:
    model = gio.read_model(args.model)
    gio.write_image(render(model), args.out)
    return EXIT_OK


def cmd_transform(args) -> int:
    chosen = [name for name in ("translate", "scale", "rotate") if getattr(args, name) is not None]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --translate, --scale, --rotate")
    if args.center is not None and args.rotate is None:
        raise UsageError("--center only applies to --rotate")
    model = gio.read_model(args.model)
    if args.translate is not None:
        out = translate(model, args.translate)
    elif args.scale is not None:
        if not (math.isfinite(args.scale) and args.scale != 0):
            raise UsageError(f"--scale must be finite and nonzero, got {args.scale!r}")
        out = scale(model, args.scale)
    else:
        if not math.isfinite(args.rotate):
            raise UsageError("--rotate must be finite")
        center = Vec2(*(args.center if args.center is not None else (0.5, 0.5)))
        out = rotate(model, RotationSpec(math.radians(args.rotate), center))
    gio.write_model(out, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = gio.read_model(args.model)
    image = gio.read_image(args.image)
    print(_format_loss(compute_loss(model, [image], args.alpha)))
    return EXIT_OK


def cmd_topk(args) -> int:
    model = gio.read_model(args.model)
    if not 1 <= args.k <= model.m:
        raise UsageError(f"--k must be in 1..{model.m}, got {args.k}")
    gio.write_model(top_k(model, args.k), args.out)
    return EXIT_OK


def cmd_surface(args) -> int:
    if args.model is not None:
        grid = render(gio.read_model(args.model))
    else:
        grid = gio.read_image(args.image)
    if args.rows or args.cols:
        gio.export_cross_sections(grid, args.out, args.rows or (), args.cols or (), invert=args.invert)
    else:
        gio.export_surface(grid, args.out, invert=args.invert)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmface", description="Multi-Gaussian image models: fit, render, transform.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model to an image or a directory of images")
    p.add_argument("--input", required=True, help="PGM file, or directory of PGM files")
    p.add_argument("--components", type=int, default=80, help="number of Gaussians for a random start")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.1, help="weight of the peak absolute error term")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", default="random", help="'random' or a model file to warm-start from")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--history", help="optional loss-history CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render a model to a PGM image")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser(
        "transform",
        help="translate, scale or rotate a model",
        description=(
            "Rewrite model parameters so the rendered image is moved. "
            "--scale k samples the surface at k*x: k=2 shrinks the face, k=0.5 enlarges it."
        ),
    )
    p.add_argument("--model", required=True)
    p.add_argument("--translate", nargs=2, type=float, metavar=("DX1", "DX2"),
                   help="shift in normalized (row, column) units")
    p.add_argument("--scale", type=float, metavar="K")
    p.add_argument("--rotate", type=float, metavar="DEG", help="angle in degrees")
    p.add_argument("--center", nargs=2, type=float, metavar=("C1", "C2"),
                   help="rotation center (default 0.5 0.5)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("eval", help="compare a model against an image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("topk", help="keep the k components with largest |w|")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topk)

    p = sub.add_parser("surface", help="export a surface or cross sections as CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--image")
    p.add_argument("--out", required=True)
    p.add_argument("--invert", action="store_true", help="export 1 - value")
    p.add_argument("--rows", type=_int_list, help="comma-separated 1-based rows")
    p.add_argument("--cols", type=_int_list, help="comma-separated 1-based columns")
    p.set_defaults(func=cmd_surface)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gmface {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"gmface {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
