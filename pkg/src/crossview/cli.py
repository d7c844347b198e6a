"""Command line entry point: gen-data, train, eval, consistency, plot.

Failures print exactly one line to stderr, ``error: kind=<Kind> message=<text>``.
Usage and configuration problems exit with 2, everything else with 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import ConfigError, CrossViewError, ParseError

USAGE_ERRORS = (ConfigError, ParseError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fovs(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad FoV list {text!r}") from None
    if not values or any(not 0 < v <= 360 for v in values):
        raise argparse.ArgumentTypeError(f"FoVs must lie in (0, 360], got {text!r}")
    return values


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    p.add_argument("--config", type=Path, default=None, help="key = value run configuration")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossview", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic paired dataset")
    _common(p)
    p.add_argument("--count", type=int, required=True)

    p = sub.add_parser("train", help="train from a config file")
    _common(p)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    p = sub.add_parser("eval", help="recall under random orientation and limited FoV")
    _common(p, out_required=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None,
                   help="evaluation split (default: eval_manifest of the config)")
    p.add_argument("--fovs", type=_fovs, default=[360.0, 180.0, 90.0, 70.0])

    p = sub.add_parser("consistency", help="orientation and FoV consistency of heatmaps")
    _common(p, out_required=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--fovs", type=_fovs, default=[180.0, 90.0, 70.0])
    p.add_argument("--backend", choices=("ssim", "cosine", "pcc"), default="ssim")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--repeats", type=int, default=1)

    p = sub.add_parser("plot", help="metric curves, recall bars, heatmap overlays")
    _common(p, out_required=False)
    p.add_argument("--metrics", type=Path, default=None, help="metrics.csv written by train")
    p.add_argument("--report", type=Path, action="append", default=[],
                   help="recall JSON report (repeatable)")
    p.add_argument("--checkpoint", type=Path, default=None, help="draw heatmap overlays")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--index", type=int, default=0, help="sample for the overlays")
    p.add_argument("--alpha", type=float, default=0.0, help="panorama shift for the overlays")
    p.add_argument("--fov", type=float, default=90.0)
    p.add_argument("--format", choices=("png", "svg"), default="png")
    return parser


def _scene_template(path: Path | None):
    from .data import SceneSpec

    if path is None:
        return SceneSpec()
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    fields = {f.name: f for f in dataclasses.fields(SceneSpec)}
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = (s.strip() for s in line.partition("="))
        if not sep or key not in fields or key == "seed":
            raise ConfigError(f"line {lineno}: unknown scene key {key!r}")
        default = getattr(SceneSpec(), key)
        try:
            if isinstance(default, tuple):
                values[key] = tuple(int(v) for v in raw.split(","))
            elif raw.lower() == "none":
                values[key] = None
            else:
                values[key] = int(raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse {raw!r}") from None
    return SceneSpec(**values)


def _run_config(args):
    from .trainer import load_config

    if args.config is None:
        raise ConfigError("--config is required")
    return load_config(args.config, seed=args.seed)


def _checkpoint_path(path: Path) -> Path:
    """Accept a run directory or a checkpoint stem such as ``runs/a/last``."""
    if path.is_dir():
        path = path / "last.pt"
    if not path.exists() and path.with_suffix(".pt").exists():
        path = path.with_suffix(".pt")
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return path


def _eval_split(args, payload) -> list:
    from .data import load_split
    from .trainer import parse_config

    manifest = args.manifest
    if manifest is None and args.config is not None:
        manifest = _run_config(args).eval_manifest or None
    if manifest is None and payload.get("config_text"):
        manifest = parse_config(payload["config_text"]).eval_manifest or None
    if manifest is None:
        raise ConfigError("no evaluation split: pass --manifest or a config with eval_manifest")
    pairs = list(load_split(manifest))
    if not pairs:
        raise ConfigError(f"evaluation split {manifest} is empty")
    return pairs


def _seed(args, payload) -> int:
    if args.seed is not None:
        return args.seed
    if payload.get("config_text"):
        from .trainer import parse_config

        return parse_config(payload["config_text"]).seed
    return 0


def cmd_gen_data(args) -> None:
    from .data import generate_dataset

    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    manifest = generate_dataset(args.count, args.seed or 0, args.out, _scene_template(args.config))
    print(manifest)


def cmd_train(args) -> None:
    from .trainer import run_training

    config = _run_config(args)
    state = run_training(config, args.out, resume=args.resume)
    last = state.history[-1] if state.history else {}
    print(f"trained {state.epoch} epochs, final loss {last.get('loss', float('nan')):.5f}, "
          f"checkpoint {Path(args.out) / 'last.pt'}")


def cmd_eval(args) -> None:
    from .encoder import load_checkpoint
    from .evaluation import evaluate_fov_protocol

    ckpt = _checkpoint_path(args.checkpoint)
    model, payload = load_checkpoint(ckpt)
    pairs = _eval_split(args, payload)
    report = evaluate_fov_protocol(model, pairs, args.fovs, seed=_seed(args, payload))
    out = args.out or ckpt.parent
    json_path, _ = report.write(out, "recall")
    for f in report.fovs:
        row = " ".join(f"{k}={v:.2f}" for k, v in report.table[f].items())
        print(f"fov={f:g} {row}")
    print(f"avg R@1={report.average_r1:.2f} report={json_path}")


def cmd_consistency(args) -> None:
    from .encoder import load_checkpoint
    from .evaluation import consistency_scores

    ckpt = _checkpoint_path(args.checkpoint)
    model, payload = load_checkpoint(ckpt)
    pairs = _eval_split(args, payload)[:args.samples]
    report = consistency_scores(model, pairs, args.fovs, args.backend, _seed(args, payload), args.repeats)
    json_path, _ = report.write(args.out or ckpt.parent, f"consistency_{args.backend}")
    print(f"OC_grd={report.oc_grd:.4f} OC_sat={report.oc_sat:.4f} FC_grd={report.fc_grd:.4f} "
          f"FC_sat={report.fc_sat:.4f} report={json_path}")


def cmd_plot(args) -> None:
    from . import plotting

    if args.metrics is None and not args.report and args.checkpoint is None:
        raise UsageError("nothing to plot: pass --metrics, --report or --checkpoint")
    out = args.out or Path(".")
    written = []
    if args.metrics is not None:
        if not args.metrics.is_file():
            raise ConfigError(f"metrics file not found: {args.metrics}")
        written += plotting.plot_metrics(args.metrics, out, args.format)
    if args.report:
        written.append(plotting.plot_recall(args.report, out, args.format))
    if args.checkpoint is not None:
        from .encoder import load_checkpoint

        model, payload = load_checkpoint(_checkpoint_path(args.checkpoint))
        pairs = _eval_split(args, payload)
        if not 0 <= args.index < len(pairs):
            raise ConfigError(f"--index {args.index} out of range for {len(pairs)} samples")
        written += plotting.plot_heatmaps(model, pairs[args.index], args.alpha, args.fov, out)
    for p in written:
        print(p)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "consistency": cmd_consistency,
    "plot": cmd_plot,
}


def _fail(exc: BaseException, code: int) -> int:
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"error: kind={exc.__class__.__name__} message={message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, *USAGE_ERRORS) as exc:
        return _fail(exc, 2)
    except (CrossViewError, OSError, ValueError, RuntimeError) as exc:
        return _fail(exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
