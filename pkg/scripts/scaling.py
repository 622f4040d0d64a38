"""Per-epoch wall clock as the graph grows at fixed widths.

Doubles a two-block SBM from ``--start`` nodes and reports the median epoch
time and the ratio to the previous size; quadratic cost shows up as ratios
near 4.

    python scripts/scaling.py --start 150 --doublings 2
"""

import argparse

import numpy as np

from nmlgcl.graph import SbmSpec, generate_sbm
from nmlgcl.training import profile_config, train


def epoch_time(n, epochs, detach):
    g = generate_sbm(SbmSpec((n // 2, n - n // 2), 0.1, 0.01, feature_shift=1.0, seed=0))
    cfg = profile_config("sbm", epochs=epochs, metric_grad_to_encoder=not detach)
    _, _, hist = train(g, cfg)
    return float(np.median(hist.column("wall_clock")[1:]))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--start", type=int, default=300)
    ap.add_argument("--doublings", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--detach-metric", action="store_true")
    args = ap.parse_args(argv)

    prev = None
    for k in range(args.doublings + 1):
        n = args.start * 2**k
        t = epoch_time(n, args.epochs, args.detach_metric)
        ratio = "" if prev is None else f"  ratio {t / prev:.2f}"
        print(f"N={n:6d}  {t:.3f}s/epoch{ratio}")
        prev = t


if __name__ == "__main__":
    main()
