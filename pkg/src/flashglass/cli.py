"""Command line entry point: ``flashglass <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import load_config, toy_profile
from .core import (
    REFL_FLASH_FILE,
    REFL_NOFLASH_FILE,
    DatasetSplit,
    ImagePair,
    read_image,
    write_image,
)
from .errors import FlashGlassError
from .gradcheck import MODULES, gradcheck
from .metrics import dataset_stats
from .synth import ExternalExtractor, OracleExtractor, SynthParams, pseudo_gt_reflection, write_synth_dataset
from .train import check_pair, evaluate, predict, train

log = logging.getLogger("flashglass")


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) == 1:
        parts = parts * 2
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else toy_profile()
    res = train(cfg, args.data, args.out, seed=args.seed)
    last = res.losses[-1] if res.losses else float("nan")
    print(json.dumps({"steps": res.checkpoint.step, "final_loss": last,
                      "checkpoint": str(Path(args.out) / "final.nfgl")}))
    return 0


def cmd_eval(args) -> int:
    model, _ = ckpt_io.load_model(args.ckpt)
    report = evaluate(model, args.data, args.split)
    text = report.to_json(percent_ber=args.percent)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_infer(args) -> int:
    model, _ = ckpt_io.load_model(args.ckpt)
    no_flash, flash = read_image(args.noflash), read_image(args.flash)
    check_pair(no_flash, flash)
    prob, refl = predict(model, ImagePair(no_flash, flash))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, prob)
    if args.dump_reflections:
        if refl is None:
            log.warning("this configuration predicts no reflections; nothing to dump")
        else:
            for stream, levels in refl.items():
                for i, r in enumerate(levels, start=1):
                    write_image(out.with_name(f"{out.stem}_refl_{stream}_L{i}.png"),
                                r[0].permute(1, 2, 0).numpy())
    return 0


def cmd_synth(args) -> int:
    p = SynthParams(size=args.size, side=args.side, glass_region_count=args.regions,
                    reflection_strength=args.alpha, flash_gain=args.gain)
    split = write_synth_dataset(args.out, args.count, p, args.seed, args.split)
    print(json.dumps({"count": len(split), "directory": str(split.directory)}))
    return 0


def cmd_stats(args) -> int:
    stats = dataset_stats(DatasetSplit.open(args.data, args.split), (args.grid, args.grid), args.bins)
    text = json.dumps(stats)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_pseudogt(args) -> int:
    split = DatasetSplit.open(args.data, args.split)
    if args.extractor == "external":
        if not args.refl_dir:
            raise SystemExit("--refl-dir is required with --extractor external")
        extractor = ExternalExtractor(args.refl_dir)
    for sid in split.samples:
        s = split.load(sid)
        ex = OracleExtractor(s) if args.extractor == "oracle" else extractor
        r_nf, r_f = pseudo_gt_reflection(s, ex)
        write_image(split.directory / sid / REFL_NOFLASH_FILE, r_nf)
        write_image(split.directory / sid / REFL_FLASH_FILE, r_f)
    print(json.dumps({"scenes": len(split)}))
    return 0


def cmd_gradcheck(args) -> int:
    modules = MODULES if args.module == "all" else (args.module,)
    reports = [gradcheck(m, args.seed) for m in modules]
    print(json.dumps([r.to_dict() for r in reports], indent=2))
    return 0 if all(r.passed for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flashglass", description="Flash/no-flash glass surface detection")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="config text file (default: toy profile)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--percent", action="store_true", help="report BER in percent")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict the glass mask of one pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--noflash", required=True)
    p.add_argument("--flash", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-reflections", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth", help="generate a synthetic dataset split")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", choices=("bright", "dark"), default="bright")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--gain", type=float, default=2.0)
    p.add_argument("--size", type=_size, default=(64, 64))
    p.add_argument("--regions", type=int, default=1)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="glass location and area-ratio statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("pseudogt", help="write pseudo-GT reflections for a split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--extractor", choices=("oracle", "external"), required=True)
    p.add_argument("--refl-dir", help="precomputed reflections for --extractor external")
    p.set_defaults(func=cmd_pseudogt)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--module", choices=(*MODULES, "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FlashGlassError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
