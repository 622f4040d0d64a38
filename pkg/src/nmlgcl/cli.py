"""Command-line entry point: ``nmlgcl gen-sbm | train | eval | compare``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import check_keys, read_config, resolve_config, write_config
from .errors import (
    ArgumentError,
    BoundsError,
    ConfigError,
    ContractError,
    DegenerateSplitError,
    NumericError,
    ParseError,
    ShapeError,
)
from .evaluation import SplitSpec, evaluate_embeddings
from .graph import SbmSpec, dataset_paths, generate_sbm, load_dataset, write_graph
from .models import load_checkpoint, nmn_forward, save_checkpoint
from .training import embed, train, train_baseline

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

COMPARE_COLUMNS = ("method", "seed", "status", "accuracy", "fmi", "ari", "distance_ratio")
CURVE_COLUMNS = ("epoch", "i_nml", "i_nce", "fn_weight_sum", "tn_weight_sum", "diag_weight_sum")


class DataError(Exception):
    pass


def fingerprint(data_dir) -> str:
    """sha256 over the dataset files (name and bytes, in a fixed order)."""
    h = hashlib.sha256()
    for key, path in sorted(dataset_paths(data_dir).items()):
        h.update(key.encode())
        h.update(Path(path).name.encode())
        h.update(Path(path).read_bytes())
    return h.hexdigest()


def parse_seeds(text: str) -> list:
    """``"0..9"`` (inclusive) or a comma list such as ``"0,3,7"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("at least one seed is required")
    return seeds


def _parse_set(pairs) -> dict:
    """``key=value`` overrides, parsed as TOML scalars."""
    import tomli

    out = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        try:
            out[key.strip()] = tomli.loads(f"v = {raw.strip()}")["v"]
        except tomli.TOMLDecodeError:
            out[key.strip()] = raw.strip()
    check_keys(out)
    return out


def _config_from_args(args):
    file_values = read_config(args.config) if args.config else None
    overrides = _parse_set(getattr(args, "set", None))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "baseline", False):
        overrides["baseline"] = True
    return resolve_config(file_values, args.profile, **overrides)


def _load(data_dir):
    try:
        return load_dataset(data_dir)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None


# ----------------------------------------------------------------- commands


def cmd_gen_sbm(args) -> int:
    blocks = tuple(int(b) for b in args.blocks.split(",") if b.strip())
    spec = SbmSpec(blocks, args.p_in, args.p_out, feature_dim=args.feature_dim,
                   feature_shift=args.feature_shift, seed=args.seed if args.seed is not None else 0)
    g = generate_sbm(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = write_graph(g, out, binary_features=args.binary_features)
    sbm = asdict(spec)
    sbm["block_sizes"] = list(spec.block_sizes)
    write_config(out / "sbm.toml", {}, {"sbm": sbm})
    write_config(out / "manifest.toml", {}, {
        "run": {"command": "gen-sbm", "version": __version__, "dataset_fingerprint": fingerprint(out),
                **{k: str(Path(p).name) for k, p in paths.items()}},
        "sbm": sbm,
    })
    print(f"wrote {g.num_nodes} nodes, {g.num_edges} edges to {out}")
    return EXIT_OK


def run_training(cfg, data_dir, out_dir, quiet=False):
    """Train (or train the baseline), then write checkpoint, history and manifest."""
    g = _load(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.baseline:
        enc, hist = train_baseline(g, cfg)
        nmn = None
    else:
        enc, nmn, hist = train(g, cfg)
    ckpt = save_checkpoint(out / "checkpoint.bin", enc, nmn)
    hist.checkpoint = ckpt.name
    hist.write_csv(out / "history.csv")
    run = {
        "command": "train",
        "version": __version__,
        "mode": "baseline" if cfg.baseline else "nml",
        "data": str(Path(data_dir).resolve()),
        "dataset_fingerprint": fingerprint(data_dir),
        "checkpoint": ckpt.name,
        "history": "history.csv",
    }
    write_config(out / "manifest.toml", cfg.to_dict(), {"run": run})
    if not quiet:
        last = hist.records[-1] if hist.records else {}
        print(f"trained {len(hist)} epochs; final infonce {last.get('infonce_loss', math.nan):.5f}; "
              f"artifacts in {out}")
    return enc, nmn, hist


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    run_training(cfg, args.data, args.out)
    return EXIT_OK


def _split_for(args, n, labels=None):
    if args.split:
        split = SplitSpec.from_file(args.split)
    else:
        ratios = tuple(float(r) for r in args.ratios.split(","))
        split = SplitSpec.random(n, ratios, seed=args.seed or 0, labels=labels)
    split.check(n)
    return split


def evaluate_checkpoint(checkpoint, data_dir, split=None, seed=0, restarts=10, k=None, bins=20):
    g = _load(data_dir)
    enc, nmn = load_checkpoint(checkpoint)
    z = embed(enc, g)
    if g.labels is None:
        print("notice: dataset has no labels; FN/TN diagnostics skipped", file=sys.stderr)
        raise DataError("linear probe and clustering need labels (labels.txt missing)")
    metric = nmn_forward(nmn, z, z).value if nmn is not None else None
    return evaluate_embeddings(z, g.labels, split or SplitSpec.random(g.num_nodes, seed=seed, labels=g.labels),
                               metric=metric, seed=seed, k=k, restarts=restarts, bins=bins)


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.out) / "checkpoint.bin"
    g = _load(args.data)
    split = _split_for(args, g.num_nodes, g.labels)
    report, hist = evaluate_checkpoint(ckpt, args.data, split, seed=args.seed or 0,
                                       restarts=args.restarts, k=args.k, bins=args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if math.isnan(report.fn_weight_sum):
        report.notes = "baseline checkpoint: no metric network, weight sums not applicable"
    (out / "report.txt").write_text(report.to_text())
    hist.write_csv(out / "histograms.csv")
    history = ckpt.parent / "history.csv"
    if history.exists():
        _write_curves(history, out / "curves.csv")
    print(report.to_text(), end="")
    return EXIT_OK


def _write_curves(history_path, out_path):
    with open(history_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow([r.get(c, "nan") for c in CURVE_COLUMNS])


def _compare_one(job):
    cfg, data_dir, out_dir, seed, baseline = job
    cfg = replace(cfg, seed=seed, baseline=baseline)
    method = "baseline" if baseline else "nml"
    run_dir = Path(out_dir) / f"{method}_seed{seed}"
    try:
        run_training(cfg, data_dir, run_dir, quiet=True)
        report, _ = evaluate_checkpoint(run_dir / "checkpoint.bin", data_dir, seed=seed)
    except Exception as exc:  # a failed seed is reported, the rest continue
        return {"method": method, "seed": seed, "status": f"failed: {type(exc).__name__}: {exc}",
                **{k: math.nan for k in COMPARE_COLUMNS[3:]}}
    return {"method": method, "seed": seed, "status": "ok", "accuracy": report.accuracy,
            "fmi": report.fmi, "ari": report.ari, "distance_ratio": report.distance_ratio}


def compare(cfg, data_dir, out_dir, seeds, workers=1) -> list:
    jobs = [(cfg, data_dir, out_dir, s, b) for b in (False, True) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_compare_one, jobs))
    else:
        rows = [_compare_one(j) for j in jobs]
    rows.sort(key=lambda r: (r["method"] != "nml", r["seed"]))
    for method in ("nml", "baseline"):
        ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            agg = {"method": method, "seed": stat, "status": f"{len(ok)} ok"}
            for key in COMPARE_COLUMNS[3:]:
                agg[key] = float(fn([r[key] for r in ok])) if ok else math.nan
            rows.append(agg)
    return rows


def write_compare_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            w.writerow([r[k] if k in ("method", "seed", "status") else repr(float(r[k])) for k in COMPARE_COLUMNS])


def cmd_compare(args) -> int:
    cfg = _config_from_args(args)
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare(cfg, args.data, out, seeds, args.workers)
    write_compare_csv(rows, out / "compare.csv")
    failed = [r for r in rows if str(r["status"]).startswith("failed")]
    for r in failed:
        print(f"{r['method']} seed {r['seed']} {r['status']}", file=sys.stderr)
    print(f"wrote {out / 'compare.csv'}")
    return EXIT_NUMERIC if failed else EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nmlgcl", description="Contrastive node embeddings with a learned negative metric.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="flat TOML config (a run manifest works too)")
        p.add_argument("--profile", help="named hyper-parameter profile, e.g. cora")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True)
        if data:
            p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("gen-sbm", help="write a planted-partition graph")
    p.add_argument("--blocks", required=True, help="comma-separated block sizes, e.g. 50,50")
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--feature-shift", type=float, default=1.0)
    p.add_argument("--binary-features", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("train", help="train and write checkpoint, history.csv and manifest.toml")
    common(p)
    p.add_argument("--baseline", action="store_true", help="plain InfoNCE, no metric network")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="probe, cluster and diagnose a checkpoint")
    p.add_argument("--checkpoint", help="defaults to <out>/checkpoint.bin")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", help="split file with '<node> train|val|test' lines")
    p.add_argument("--ratios", default="1,1,8")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--k", type=int)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train both methods over seeds and aggregate")
    common(p)
    p.add_argument("--seeds", default="0", help='"0..9" or "0,1,2"')
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ParseError, BoundsError, ShapeError, ContractError, DegenerateSplitError,
            FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
