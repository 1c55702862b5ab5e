"""How strongly does the synthetic flash cue separate glass from background?

Prints mean |flash - no_flash| inside and outside the glass, both raw and after
dividing the flash shot by its gain, over a range of reflection strengths.
"""
import argparse

import numpy as np

from flashglass.synth import SynthParams, generate_scene


def contrast(s, gain):
    m = s.mask.values[..., 0] > 0.5
    raw = np.abs(s.pair.flash - s.pair.no_flash).mean(-1)
    comp = np.abs(s.pair.flash / gain - s.pair.no_flash).mean(-1)
    return raw[m].mean(), raw[~m].mean(), comp[m].mean(), comp[~m].mean()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--gain", type=float, default=2.0)
    ap.add_argument("--side", choices=("bright", "dark"), default="bright")
    args = ap.parse_args()
    print("alpha  raw_in  raw_out  comp_in  comp_out")
    for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
        rng = np.random.default_rng(0)
        p = SynthParams(size=(64, 64), reflection_strength=alpha, flash_gain=args.gain, side=args.side)
        vals = np.array([contrast(generate_scene(rng, p), args.gain) for _ in range(args.count)])
        print(f"{alpha:5.2f}  " + "  ".join(f"{v:.4f}" for v in vals.mean(0)))


if __name__ == "__main__":
    main()
