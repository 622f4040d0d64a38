"""Cora with the cora profile, probed on the public split.

Expects a dataset directory with edges.txt, features.txt, labels.txt and
split.txt ('<node> train|val|test' lines). Expect about an hour per seed at
d = 512 on one CPU core.

    python scripts/reproduce_cora.py /data/cora --seeds 0,1,2
"""

import argparse
from pathlib import Path

import numpy as np

from nmlgcl.evaluation import SplitSpec, linear_probe
from nmlgcl.graph import load_dataset
from nmlgcl.training import embed, profile_config, train


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--baseline", action="store_true")
    args = ap.parse_args(argv)

    g = load_dataset(args.data)
    split = SplitSpec.from_file(Path(args.data) / "split.txt")
    split.check(g.num_nodes)
    accs = []
    for seed in (int(s) for s in args.seeds.split(",")):
        enc, _, hist = train(g, profile_config("cora", seed=seed, baseline=args.baseline))
        acc = linear_probe(embed(enc, g), g.labels, split)
        accs.append(acc)
        print(f"seed {seed}: accuracy {acc:.2f} ({hist.column('wall_clock').sum():.0f}s)")
    print(f"mean {np.mean(accs):.2f} +/- {np.std(accs):.2f} over {len(accs)} seeds")


if __name__ == "__main__":
    main()
