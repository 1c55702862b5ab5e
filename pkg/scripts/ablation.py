"""Base vs. other ablations on the same overfit set across seeds.

    python3 scripts/ablation.py --ablations base full --seeds 0 1 2 3 4
"""
import argparse
import json
import tempfile

from flashglass.config import toy_profile
from flashglass.core import DatasetSplit
from flashglass.synth import SynthParams, write_synth_dataset
from flashglass.train import evaluate, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ablations", nargs="+", default=["base", "full"])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    ap.add_argument("--scenes", type=int, default=8)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        write_synth_dataset(tmp, args.scenes, SynthParams(size=(64, 64)), seed=0)
        samples = list(DatasetSplit.open(tmp, "train"))
    table = {}
    for seed in args.seeds:
        row = {}
        for ab in args.ablations:
            res = train(toy_profile(ablation=ab), None, seed=seed, samples=samples, log_every=0)
            row[ab] = round(evaluate(res.model, samples=samples).iou, 4)
        table[seed] = row
        print(json.dumps({"seed": seed, **row}), flush=True)
    ref = args.ablations[0]
    for ab in args.ablations[1:]:
        wins = sum(table[s][ref] < table[s][ab] for s in args.seeds)
        print(f"{ref} < {ab} in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
