#!/usr/bin/env python3
"""Writes src/brief_pattern.inc: 256 point pairs inside a 31x31 patch.

Offsets are drawn from an isotropic Gaussian (sigma = 31/5), rounded and
clipped to [-15, 15]. Degenerate pairs are redrawn.
"""
import random
import sys

SEED = 20240517
SIGMA = 31.0 / 5.0


def draw(rng):
    return max(-15, min(15, int(round(rng.gauss(0.0, SIGMA)))))


def main(path):
    rng = random.Random(SEED)
    pairs = []
    while len(pairs) < 256:
        p = (draw(rng), draw(rng), draw(rng), draw(rng))
        if p[:2] != p[2:]:
            pairs.append(p)
    with open(path, "w") as f:
        f.write("// Generated by tools/scripts/gen_brief_pattern.py. Do not edit.\n")
        f.write("// {x1, y1, x2, y2} offsets from the keypoint.\n")
        for i in range(0, 256, 4):
            f.write("    " + " ".join("{%d, %d, %d, %d}," % p for p in pairs[i:i + 4]) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/brief_pattern.inc")
