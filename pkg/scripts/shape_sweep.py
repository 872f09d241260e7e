"""Print the shape algebra and forward-pass timing over a config sweep."""

import argparse
import time

from patchmine.checks import SHAPE_SWEEP
from patchmine.encoder import EncoderConfig
from patchmine.pipeline import RunConfig, run_forward


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--run", action="store_true", help="also time a forward pass per config")
    ap.add_argument("--channels", type=int, default=16)
    args = ap.parse_args()

    print(f"{'lr':>5} {'hr':>5} {'N':>5} {'S':>5} {'M':>4} {'Mq':>4} {'tokens':>7} {'ext':>6} {'sec':>7}")
    for lr, hr in SHAPE_SWEEP:
        cfg = EncoderConfig(hr_size=hr, lr_size=lr, channels=args.channels).validate()
        mq = cfg.hr_side // (2 * cfg.grid) if cfg.hr_side % (2 * cfg.grid) == 0 else None
        ext = 5 * cfg.num_patches if mq else "-"
        secs = ""
        if args.run:
            t0 = time.perf_counter()
            run_forward(RunConfig(encoder=cfg, seed=args.seed))
            secs = f"{time.perf_counter() - t0:7.2f}"
        print(f"{lr:>5} {hr:>5} {cfg.num_patches:>5} {cfg.hr_side:>5} {cfg.window:>4} "
              f"{mq or '-':>4} {cfg.num_patches:>7} {ext:>6} {secs}")


if __name__ == "__main__":
    main()
