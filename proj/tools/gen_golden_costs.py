#!/usr/bin/env python3
"""Regenerates tests/data/cost_golden.csv.

Independent re-evaluation of the accelerator latency formulas, kept
deliberately separate from the C++ implementation so the golden table acts
as a cross-check rather than a mirror.

Usage: python3 tools/gen_golden_costs.py > tests/data/cost_golden.csv
"""

import random
from math import ceil

MAC_BLOCK = 1152
COUT_BLOCK = 512
DMA_FACTOR = 8  # 2 * 4
COUT_PARALLEL = 16
OY_PARALLEL = 16


def lat_aimc(cin, fx, fy, ox, oy, c):
    if c == 0:
        return 0
    return (ceil(cin * fx * fy / MAC_BLOCK) * ceil(c / COUT_BLOCK) * ox * oy
            + DMA_FACTOR * cin * ceil(c / COUT_BLOCK))


def lat_digital(cin, fx, fy, ox, oy, c):
    if c == 0:
        return 0
    return (ceil(c / COUT_PARALLEL) * ceil(oy / OY_PARALLEL) * cin * ox * fx * fy
            + cin * c * fx * fy)


def main():
    rows = [
        # worked configurations
        (64, 3, 3, 16, 16, 512, 512),
        (8, 1, 1, 4, 4, 4, 4),
        (64, 3, 3, 16, 16, 16, 16),
        (8, 1, 1, 4, 4, 2, 2),
        (8, 1, 1, 4, 4, 0, 0),
        (1, 3, 3, 8, 8, 16, 16),
        (16, 3, 3, 8, 8, 32, 32),
        (32, 3, 3, 4, 4, 32, 32),
        (32, 1, 1, 1, 1, 10, 10),  # fc as 1x1 conv
    ]
    rng = random.Random(20260810)
    while len(rows) < 24:
        cin = rng.choice([1, 3, 8, 16, 32, 64, 128])
        f = rng.choice([1, 3, 5])
        o = rng.choice([1, 2, 4, 8, 16, 32])
        cout = rng.randint(1, 600)
        rows.append((cin, f, f, o, o, rng.randint(0, cout), rng.randint(0, cout)))

    print("cin,fx,fy,ox,oy,c_aimc,c_digital,lat_aimc,lat_digital")
    for cin, fx, fy, ox, oy, ca, cd in rows:
        print(f"{cin},{fx},{fy},{ox},{oy},{ca},{cd},"
              f"{lat_aimc(cin, fx, fy, ox, oy, ca)},"
              f"{lat_digital(cin, fx, fy, ox, oy, cd)}")


if __name__ == "__main__":
    main()
