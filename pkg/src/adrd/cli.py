"""Command line entry point: ``adrd {train,sr,eval,ablate,noise-eval,export-weights}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from .blocks import ADRD, NetworkConfig, export_weight_matrices, format_weight_matrices
from .checkpoint import load_checkpoint, read_checkpoint, train_config_from
from .errors import DataError, DegenerateInputError, NumericError
from .imageio import list_pngs, read_png, super_resolve, write_png
from .kvtext import format_kv, parse_kv
from .metrics import NOISE_VARIANCES, RandomConvFeatures
from .train import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("adrd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


PRESETS = {
    "full": NetworkConfig.full,
    "lightweight": NetworkConfig.lightweight,
    "tiny": NetworkConfig.tiny,
}


def _network_config(args) -> NetworkConfig:
    cfg = PRESETS[args.preset]()
    items = cfg.to_dict()
    if args.net_config:
        items.update(parse_kv(Path(args.net_config).read_text()))
    items.update(_overrides(args.net_set))
    return NetworkConfig.from_kv({k: _plain(v) for k, v in items.items()})


def _plain(v) -> str:
    return format_kv({"x": v}).split("=", 1)[1].strip()


def _train_config(args, base: TrainConfig | None = None) -> TrainConfig:
    items = {k: _plain(v) for k, v in vars(base or TrainConfig()).items()}
    if getattr(args, "config", None):
        items.update(parse_kv(Path(args.config).read_text()))
    items.update(_overrides(args.set))
    return TrainConfig.from_kv(items)


def _print_config(command: str, sections: dict) -> None:
    print(f"# adrd {command}: resolved configuration")
    for title, items in sections.items():
        print(f"[{title}]")
        print(format_kv(items), end="")
    sys.stdout.flush()


def _load_dir(directory) -> dict[str, object]:
    return {p.stem: read_png(p) for p in list_pngs(directory)}


def _load_net(path, expect: NetworkConfig | None = None):
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    net, opt, ckpt = load_checkpoint(path)
    if expect is not None and expect != net.config:
        raise DataError("network config does not match the checkpoint topology")
    return net, opt, ckpt


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    net_cfg = _network_config(args)
    opt, start = None, 0
    base_train = None
    if args.resume:
        ckpt = read_checkpoint(args.resume)
        if args.net_config or args.net_set:
            if net_cfg != ckpt.config:
                raise DataError("network config does not match the checkpoint topology")
        net, opt, ckpt = _load_net(args.resume)
        net_cfg, start = ckpt.config, ckpt.step
        base_train = train_config_from(ckpt)
    train_cfg = _train_config(args, base_train)
    _print_config("train", {"network": net_cfg.to_dict(), "train": vars(train_cfg),
                            "run": {"data": args.data, "out": args.out, "resume": args.resume or "",
                                    "start_step": start}})
    if not args.resume:
        net = ADRD(net_cfg)
    images = list(_load_dir(args.data).values())
    val = list(_load_dir(args.val_dir).values()) if args.val_dir else images
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = train(net, images, train_cfg, optimizer=opt, start_step=start, val_images=val,
                   log_path=out / "train_log.csv", checkpoint_dir=out)
    print(f"trained to step {report.final_step}; last loss {report.losses[-1] if report.losses else float('nan'):.6g}")
    return EXIT_OK


def cmd_sr(args) -> int:
    net, _, _ = _load_net(args.checkpoint)
    inputs = list_pngs(args.input) if Path(args.input).is_dir() else [Path(args.input)]
    _print_config("sr", {"network": net.config.to_dict(),
                         "run": {"checkpoint": args.checkpoint, "input": args.input, "out": args.out,
                                 "tile": args.tile, "overlap": args.overlap}})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    s = net.config.scale_factor
    for path in inputs:
        sr = super_resolve(net, read_png(path), tile=args.tile, overlap=args.overlap)
        dest = out / f"{path.stem}_x{s}.png"
        write_png(dest, sr)
        print(f"{path.name} -> {dest.name} ({sr.shape[1]}x{sr.shape[0]})")
    return EXIT_OK


def _upscaler_and_scale(args):
    if args.checkpoint:
        net, _, _ = _load_net(args.checkpoint)
        return ev.network_upscaler(net, args.tile, args.overlap), net.config.scale_factor, net.config
    return ev.bicubic_upscaler(args.scale), args.scale, None


def cmd_eval(args) -> int:
    upscaler, scale, net_cfg = _upscaler_and_scale(args)
    crop = scale if args.crop is None else args.crop
    run = {"hr_dir": args.hr_dir, "method": "adrd" if args.checkpoint else "bicubic", "scale": scale,
           "crop": crop, "extractor_depth": args.extractor_depth, "extractor_width": args.extractor_width,
           "extractor_seed": args.extractor_seed, "noise_variance": args.noise_variance,
           "noise_target": args.noise_target, "seed": args.seed, "out": args.out}
    _print_config("eval", {"network": net_cfg.to_dict() if net_cfg else {}, "run": run})
    phi = RandomConvFeatures(args.extractor_depth, args.extractor_width, args.extractor_seed)
    images = _load_dir(args.hr_dir)
    scores = ev.evaluate(images, upscaler, scale, crop=crop, phi=phi, noise_variance=args.noise_variance,
                         noise_seed=args.seed, noise_target=args.noise_target)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "psnr_db", "ssim", "rcir"])
        for s in scores:
            w.writerow([s.image, repr(s.psnr_db), repr(s.ssim), repr(s.rcir)])
    n = len(scores)
    print(f"{n} images: mean psnr {sum(s.psnr_db for s in scores) / n:.3f} dB, "
          f"ssim {sum(s.ssim for s in scores) / n:.4f}, rcir {sum(s.rcir for s in scores) / n:.4f}")
    return EXIT_OK


def cmd_noise_eval(args) -> int:
    upscalers = {"bicubic": ev.bicubic_upscaler(args.scale)}
    scale = args.scale
    net_cfg = None
    if args.checkpoint:
        up, scale, net_cfg = _upscaler_and_scale(args)
        upscalers = {"bicubic": ev.bicubic_upscaler(scale), "adrd": up}
    variances = args.variances or list(NOISE_VARIANCES)
    _print_config("noise-eval", {"network": net_cfg.to_dict() if net_cfg else {},
                                 "run": {"hr_dir": args.hr_dir, "variances": variances, "scale": scale,
                                         "noise_target": args.noise_target, "seed": args.seed, "out": args.out}})
    rows = ev.noise_sweep(_load_dir(args.hr_dir), upscalers, scale, variances, seed=args.seed,
                          noise_target=args.noise_target)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variance", "image", "method", "psnr_db", "ssim"])
        for r in rows:
            w.writerow([repr(r.variance), r.image, r.method, repr(r.psnr_db), repr(r.ssim)])
    methods = list(upscalers)
    print("Level".ljust(10) + "".join(m.rjust(10) for m in methods))
    for var in variances:
        cells = []
        for m in methods:
            vals = [r.psnr_db for r in rows if r.variance == var and r.method == m]
            cells.append(f"{sum(vals) / len(vals):.2f}".rjust(10))
        print(f"{var:<10g}" + "".join(cells))
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _network_config(args)
    train_cfg = _train_config(args, TrainConfig(hr_patch_size=args.patch, batch_size=4, initial_lr=1e-3,
                                                patches_per_image=4, epochs=10**6, max_steps=args.steps,
                                                lr_decay_every=10**6))
    studies = list(ev.ABLATION_STUDIES) if args.study == "all" else [args.study]
    _print_config("ablate", {"network": base.to_dict(), "train": vars(train_cfg),
                             "run": {"studies": studies, "growth_rates": args.growth_rates,
                                     "data": args.data, "val_dir": args.val_dir or args.data, "out": args.out}})
    train_images = list(_load_dir(args.data).values())
    val_images = _load_dir(args.val_dir or args.data)
    results = []
    for study in studies:
        results += ev.run_ablation(study, base, args.growth_rates, train_images, val_images, train_cfg)
    table = ev.format_ablation_table(results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation_table.txt").write_text(table)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["study", "variant", "params", "psnr_db", "ssim", "rcir", "final_loss"])
        for r in results:
            w.writerow([r.study, r.variant, r.params, repr(r.psnr_db), repr(r.ssim), repr(r.rcir), repr(r.final_loss)])
    print(table)
    return EXIT_OK


def cmd_export_weights(args) -> int:
    net, _, _ = _load_net(args.checkpoint)
    _print_config("export-weights", {"network": net.config.to_dict(),
                                     "run": {"checkpoint": args.checkpoint, "out": args.out or "-"}})
    text = format_weight_matrices(export_weight_matrices(net))
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_network_args(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="full", help="base network topology")
    p.add_argument("--net-config", help="key=value file overriding the preset")
    p.add_argument("--net-set", action="append", metavar="KEY=VALUE", help="override one network key")


def _add_train_args(p):
    p.add_argument("--config", help="training key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one training key")


def _add_upscaler_args(p, checkpoint_required=False):
    p.add_argument("--checkpoint", required=checkpoint_required, help="trained network (omit for bicubic)")
    p.add_argument("--scale", type=int, default=4, help="scale factor when no checkpoint is given")
    p.add_argument("--tile", type=int, default=0, help="LR tile size for inference (0 = whole image)")
    p.add_argument("--overlap", type=int, default=8, help="LR context pixels around each tile")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adrd", description="ADRD super-resolution: training, inference and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a network on a directory of PNG images")
    p.add_argument("--data", required=True, help="directory of HR training PNGs")
    p.add_argument("--out", required=True, help="output directory for checkpoints and train_log.csv")
    p.add_argument("--val-dir", help="validation PNGs (default: the training images)")
    p.add_argument("--resume", help="checkpoint to resume from")
    _add_network_args(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve PNG images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="LR PNG file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tile", type=int, default=0, help="LR tile size (0 = whole image)")
    p.add_argument("--overlap", type=int, default=8, help="LR context pixels around each tile")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM/RCIR over a directory of HR images")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    _add_upscaler_args(p)
    p.add_argument("--crop", type=int, default=None, help="border crop in pixels (default: scale)")
    p.add_argument("--extractor-depth", type=int, default=3)
    p.add_argument("--extractor-width", type=int, default=16)
    p.add_argument("--extractor-seed", type=int, default=0)
    p.add_argument("--noise-variance", type=float, default=0.0)
    p.add_argument("--noise-target", choices=("lr", "hr"), default="lr")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-eval", help="PSNR under the four Gaussian noise levels")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    _add_upscaler_args(p)
    p.add_argument("--variances", type=_csv_floats, help="comma-separated variances")
    p.add_argument("--noise-target", choices=("lr", "hr"), default="lr")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_noise_eval)

    p = sub.add_parser("ablate", help="train module variants at tiny scale and tabulate them")
    p.add_argument("--data", required=True, help="training PNGs")
    p.add_argument("--val-dir", help="evaluation PNGs (default: the training images)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--study", choices=(*ev.ABLATION_STUDIES, "all"), default="all")
    p.add_argument("--growth-rates", type=_csv_ints, default=[4, 8])
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--patch", type=int, default=40, help="HR patch size")
    _add_network_args(p)
    p.set_defaults(preset="tiny")
    _add_train_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-weights", help="print the dense-connection weight matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="text file (default: stdout)")
    p.set_defaults(func=cmd_export_weights)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"adrd: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DegenerateInputError) as exc:
        print(f"adrd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"adrd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        # config validation and unreadable paths land here
        code = EXIT_DATA if isinstance(exc, OSError) else EXIT_USAGE
        print(f"adrd: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
