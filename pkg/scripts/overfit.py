"""Overfit the toy profile on a handful of synthetic pairs and report train IoU.

    python3 scripts/overfit.py --scenes 8 --steps 500 --ablation full
"""
import argparse
import dataclasses
import json
import tempfile
import time

from flashglass.config import toy_profile
from flashglass.core import AugmentConfig, DatasetSplit
from flashglass.synth import SynthParams, write_synth_dataset
from flashglass.train import evaluate, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenes", type=int, default=8)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--ablation", default="full")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--no-augment", action="store_true")
    ap.add_argument("--out", help="keep checkpoints and train.log here")
    args = ap.parse_args()

    cfg = toy_profile(ablation=args.ablation)
    opt = dataclasses.replace(cfg.optimizer, max_steps=args.steps, epochs=10 ** 6)
    if args.lr is not None:
        opt = dataclasses.replace(opt, lr=args.lr)
    cfg = cfg.with_overrides(optimizer=opt)
    if args.no_augment:
        cfg = cfg.with_overrides(augment=AugmentConfig(hflip=False, rotate=False))

    with tempfile.TemporaryDirectory() as tmp:
        write_synth_dataset(tmp, args.scenes, SynthParams(size=cfg.input_size), seed=args.data_seed)
        samples = list(DatasetSplit.open(tmp, "train"))
    t0 = time.perf_counter()
    res = train(cfg, None, args.out, seed=args.seed, samples=samples, log_every=50 if args.out else 0)
    rep = evaluate(res.model, samples=samples)
    print(json.dumps({"ablation": args.ablation, "seed": args.seed, "steps": res.checkpoint.step,
                      "iou": rep.iou, "f_beta": rep.f_beta, "mae": rep.mae, "ber": rep.ber,
                      "final_loss": res.losses[-1] if res.losses else None,
                      "seconds": round(time.perf_counter() - t0, 1)}))


if __name__ == "__main__":
    main()
