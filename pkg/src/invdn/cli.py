"""Command-line entry point: train, denoise, generate-noise, eval, inspect.

Exit codes: 0 ok, 2 usage, 3 I/O (images, checkpoints), 4 configuration or
shape errors, 5 numeric/training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import read_checkpoint, save_checkpoint
from .config import RunConfig, worker_count
from .data import NoisePairSource, folder_source, procedural_pool
from .errors import ImageIOError, InvDNError, UsageError
from .imageio import ensure_channels, load_image, save_image
from .inference import DenoiseOptions, NoiseGenOptions, denoise, generate_noisy
from .metrics import MetricReport, akld, psnr, ssim
from .model import InvDNModel, parameter_count
from .training import AdamState, train

logger = logging.getLogger("invdn")

SYNTHETIC_POOL = 256


def _pngs(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise ImageIOError(f"{path}: no PNG files")
        return files
    if not path.exists():
        raise ImageIOError(f"{path}: no such file or directory")
    return [path]


def _load_for(model: InvDNModel, path: Path) -> np.ndarray:
    return ensure_channels(load_image(path), model.config.input_channels)


def cmd_train(args) -> int:
    rc = RunConfig.resolve(args.config, {"iters": args.iters, "seed": args.seed})
    for line in rc.describe():
        logger.info("config %s", line)
    mcfg, tcfg = rc.model_config(), rc.train_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    latest = out / "latest.ckpt"

    if args.resume and latest.exists():
        ckpt = read_checkpoint(latest, expected_config=mcfg)
        model, adam, start = ckpt.model, ckpt.adam, ckpt.iteration
        logger.info("resuming from %s at iteration %d", latest, start)
    else:
        model, adam, start = InvDNModel(mcfg, seed=tcfg.seed), None, 0
    if adam is None:
        adam = AdamState.for_params(model.parameters())
    tcfg.validate_for(model)

    noise = dict(sigma_range=(tcfg.sigma_min / 255, tcfg.sigma_max / 255),
                 signal_gain=tcfg.signal_gain, augment=tcfg.augment)
    if args.data:
        source = folder_source(args.data, mcfg.input_channels, **noise)
    else:
        rng = np.random.default_rng(tcfg.seed)
        pool = procedural_pool(rng, SYNTHETIC_POOL, max(128, tcfg.patch), mcfg.input_channels)
        source = NoisePairSource(pool, **noise)

    log_path = out / "train_log.tsv"
    log = open(log_path, "a")
    if log.tell() == 0:
        log.write("iteration\tloss_forw\tloss_back\n")

    def on_step(it, lf, lb):
        log.write(f"{it}\t{lf:.8g}\t{lb:.8g}\n")
        done = it + 1
        if done % 100 == 0:
            logger.info("iter %d  L_forw %.5g  L_back %.5g", done, lf, lb)
        if tcfg.checkpoint_every and done % tcfg.checkpoint_every == 0:
            log.flush()
            save_checkpoint(model, adam, done, latest, seed=tcfg.seed, train=tcfg.to_dict())

    try:
        train(model, source, tcfg, rc.iters, adam=adam, start_iter=start, callback=on_step)
    finally:
        log.close()
    save_checkpoint(model, adam, start + rc.iters, latest, seed=tcfg.seed, train=tcfg.to_dict())
    print(f"wrote {latest} (iteration {start + rc.iters})")
    return 0


def _map_images(fn, items):
    workers = worker_count()
    if workers == 1 or len(items) == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def cmd_denoise(args) -> int:
    model = read_checkpoint(args.ckpt).model
    opts = DenoiseOptions(mc_samples=args.mc, seed=args.seed, tile=args.tile, overlap=args.overlap)
    files = _pngs(Path(args.input))
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    def one(path: Path) -> str:
        clean = denoise(model, _load_for(model, path), opts)
        target = outdir / path.name
        save_image(clean, target, bitdepth=args.bitdepth)
        return str(target)

    for written in _map_images(one, files):
        print(written)
    return 0


def cmd_generate(args) -> int:
    model = read_checkpoint(args.ckpt).model
    noisy = _load_for(model, Path(args.input))
    out = generate_noisy(model, noisy, NoiseGenOptions(epsilon=args.epsilon, seed=args.seed))
    save_image(out, args.output, bitdepth=args.bitdepth)
    print(args.output)
    return 0


def cmd_eval(args) -> int:
    model = read_checkpoint(args.ckpt).model
    noisy_dir, clean_dir = Path(args.noisy), Path(args.clean)
    files = _pngs(noisy_dir)
    missing = [p.name for p in files if not (clean_dir / p.name).exists()]
    if missing:
        raise ImageIOError(f"{clean_dir}: no clean match for {missing[:3]}")
    opts = DenoiseOptions(mc_samples=args.mc, seed=args.seed, tile=args.tile)

    def one(path: Path):
        noisy = _load_for(model, path)
        clean = _load_for(model, clean_dir / path.name)
        den = denoise(model, noisy, opts)
        gen = generate_noisy(model, noisy, NoiseGenOptions(args.epsilon, args.seed)) if args.akld else None
        return path.name, noisy, clean, den, gen

    report = MetricReport()
    results = _map_images(one, files)
    for name, noisy, clean, den, _ in results:
        report.add(name, psnr(den, clean), ssim(den, clean), psnr(noisy, clean))
    if args.akld:
        report.akld = akld([r[1] for r in results], [r[2] for r in results], [r[4] for r in results])
    for line in report.lines():
        print(line)
    if args.table:
        report.write_table(args.table)
    return 0


def cmd_inspect(args) -> int:
    ckpt = read_checkpoint(args.ckpt)
    info = {
        "config": ckpt.model.config.to_dict(),
        "parameters": parameter_count(ckpt.model),
        "iteration": ckpt.iteration,
        "seed": ckpt.seed,
        "adam_step": ckpt.adam.step if ckpt.adam else None,
    }
    for key, value in info.items():
        print(f"{key}: {json.dumps(value)}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="invdn", description="Invertible denoising network")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--data", help="dataset root with clean/ and optional noisy/ (default: procedural textures)")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true", help="continue from <out>/latest.ckpt")
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("denoise", help="denoise an image or a directory of PNGs")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True, help="output directory")
    d.add_argument("--mc", type=int, default=1, help="Monte Carlo self-ensemble size")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--tile", type=int)
    d.add_argument("--overlap", type=int, default=16)
    d.add_argument("--bitdepth", type=int, choices=(8, 16), default=8)
    d.set_defaults(fn=cmd_denoise)

    g = sub.add_parser("generate-noise", help="synthesize a new noisy image by latent disturbance")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--input", required=True)
    g.add_argument("--output", required=True)
    g.add_argument("--epsilon", type=float, default=2e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--bitdepth", type=int, choices=(8, 16), default=8)
    g.set_defaults(fn=cmd_generate)

    e = sub.add_parser("eval", help="PSNR/SSIM (and optional AKLD) on paired folders")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--noisy", required=True)
    e.add_argument("--clean", required=True)
    e.add_argument("--akld", action="store_true")
    e.add_argument("--mc", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--tile", type=int)
    e.add_argument("--epsilon", type=float, default=2e-4)
    e.add_argument("--table", default="metrics.tsv", help="tab-separated table output ('' to skip)")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("inspect", help="print checkpoint configuration and parameter count")
    i.add_argument("--ckpt", required=True)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except InvDNError as exc:
        print(f"invdn {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"invdn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
