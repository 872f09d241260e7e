"""Run the 5-view extension on a synthetic image and dump every stage.

Writes the five view images, their sub-region maps and the mined tokens
to ``--out`` so the geometry can be inspected by hand.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from patchmine.encoder import EncoderConfig, EncoderWeights, encode_hr
from patchmine.extension import build_extended_batch, build_view_maps, encode_extended, mine_extended
from patchmine.io import tensor_checksum, write_ppm, write_tensor
from patchmine.mining import MiningWeights
from patchmine.pipeline import synthetic_image
from patchmine.tensor import Rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lr", type=int, default=56)
    ap.add_argument("--hr", type=int, default=224)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="extension_demo")
    args = ap.parse_args()

    cfg = EncoderConfig(hr_size=args.hr, lr_size=args.lr, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    img = synthetic_image(cfg.hr_size, args.seed)
    write_ppm(out / "input.ppm", img)
    batch = build_extended_batch(img, cfg)
    batch.dump(out, "view")
    for sfx, view in zip(("_g", "_tl", "_tr", "_bl", "_br"), batch.views):
        write_ppm(out / f"view{sfx}.ppm", view)

    maps = build_view_maps(cfg)
    for sfx, smap in zip(("_g", "_tl", "_tr", "_bl", "_br"), maps.maps):
        write_tensor(out / f"map{sfx}.tensor", smap.entries.astype(np.float64))

    enc_w = EncoderWeights.init(cfg)
    tokens = encode_extended(batch, cfg, enc_w)
    grid = encode_hr(img, cfg, enc_w)
    mined = mine_extended(tokens, grid, maps, MiningWeights.init(cfg.channels, seed=Rng(args.seed).child(0).seed))
    write_tensor(out / "tv.tensor", mined.data)

    info = {"N": cfg.num_patches, "S": cfg.hr_side, "Mg": maps.global_window, "Mq": maps.quadrant_window,
            "tokenCount": mined.count, "checksum": tensor_checksum(mined.data)}
    (out / "summary.json").write_text(json.dumps(info, indent=2))
    print(json.dumps(info))


if __name__ == "__main__":
    main()
