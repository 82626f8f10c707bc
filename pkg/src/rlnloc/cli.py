"""``rlnloc`` command line.

Typical session::

    rlnloc --out-dir data synth --n 220
    rlnloc --out-dir runs bsa --dataset data
    rlnloc --out-dir runs train-refine --dataset data --mode dual
    rlnloc --out-dir runs locate --dataset data --candidates runs/bsa.csv --checkpoint runs/refine_dual.ckpt
    rlnloc --out-dir runs eval --dataset data --candidates runs/locate.csv --stage dual
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time

from . import pipeline as P
from .bsa import SIDES, build_atlas
from .locate_net import MODE_ALIASES
from .nn import checkpoint
from .synth import generate_cohort


def _ratio(text):
    parts = [int(p) for p in text.replace("/", ",").split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratio needs three integers, e.g. 150,20,50")
    return tuple(parts)


def _mode(text):
    mode = MODE_ALIASES.get(text)
    if mode is None:
        raise argparse.ArgumentTypeError(f"mode must be dual, local or global, got {text!r}")
    return mode


def refiner_path(out_dir, mode):
    return os.path.join(out_dir, f"refine_{MODE_ALIASES.get(mode, mode)}.ckpt")


def build_parser():
    ap = argparse.ArgumentParser(prog="rlnloc", description="Atlas + refinement landmark localization on label masks.")
    ap.add_argument("--seed", type=int, default=None, help="master seed (default 0, or the config file value)")
    ap.add_argument("--config", help="key = value file with stage settings")
    ap.add_argument("--out-dir", default=".", help="where outputs are written")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--n", type=int, default=220)
    s.add_argument("--ratio", type=_ratio, default=(150, 20, 50))

    s = sub.add_parser("build-atlas", help="validate the training atlas and list its entries")
    s.add_argument("--dataset", required=True)
    s.add_argument("--side", choices=(*SIDES, "both"), default="both")

    s = sub.add_parser("bsa", help="atlas candidates for the query split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--top-k", type=int, default=None)
    s.add_argument("--no-align", action="store_true", help="identity transforms (alignment ablation)")
    s.add_argument("--split", default=None, help="query split (default test)")
    s.add_argument("--seg-checkpoint", default=None, help="toy U-Net checkpoint for provider.mode = toy_unet")

    s = sub.add_parser("train-seg", help="train the toy U-Net on the training split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--epochs", type=int, default=10)

    s = sub.add_parser("train-refine", help="train a refiner")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", type=_mode, default="dual")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--standard-smooth-l1", action="store_true", help="per-coordinate smooth L1 instead of the joint form")

    s = sub.add_parser("locate", help="refine candidates with a trained refiner")
    s.add_argument("--dataset", required=True)
    s.add_argument("--candidates", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mode", type=_mode, default="dual")

    s = sub.add_parser("eval", help="score a candidates file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--candidates", required=True)
    s.add_argument("--stage", default=None, help="stage label (default from the file kind)")

    s = sub.add_parser("ablation", help="initialization vs local/global/dual refiners")
    s.add_argument("--dataset", required=True)
    s.add_argument("--checkpoint-dir", default=None, help="directory with refine_<mode>.ckpt (default --out-dir)")
    s.add_argument("--candidates", default=None, help="reuse a bsa.csv instead of recomputing")

    s = sub.add_parser("run", help="full pipeline: provide, BSA, optional refinement, metrics")
    s.add_argument("--dataset", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--mode", type=_mode, default="dual")
    s.add_argument("--top-k", type=int, default=None)
    s.add_argument("--seg-checkpoint", default=None)
    return ap


def _config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    cfg = P.load_config(args.config, overrides, args.seed)
    if getattr(args, "top_k", None) is not None:
        cfg = dataclasses.replace(cfg, bsa=dataclasses.replace(cfg.bsa, k=args.top_k))
    if getattr(args, "no_align", False):
        cfg = dataclasses.replace(cfg, bsa=dataclasses.replace(cfg.bsa, align=False))
    if getattr(args, "split", None):
        cfg = dataclasses.replace(cfg, query_split=args.split)
    if getattr(args, "epochs", None) is not None and args.command == "train-refine":
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs))
    if getattr(args, "standard_smooth_l1", False):
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, standard_smooth_l1=True))
    return cfg


def _print_report(rows, out=sys.stdout):
    print(f"{'stage':<16}{'side':<7}{'n':>4}{'dist (px)':>18}{'hit (%)':>10}", file=out)
    for r in rows:
        print(f"{r.stage:<16}{r.side:<7}{r.n:>4}{r.mean_dist:>9.2f} +/- {r.std_dist:<5.2f}{r.hit_rate_pct:>10.1f}", file=out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = _config(args)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()

    if args.command == "synth":
        man = generate_cohort(args.n, args.ratio, cfg.seed, out)
        print(f"wrote {len(man.records)} records to {out}")

    elif args.command == "build-atlas":
        sides = SIDES if args.side == "both" else (args.side,)
        for side in sides:
            atlas = build_atlas(args.dataset, side)
            rows = [(e.id, float(e.landmark[0]), float(e.landmark[1])) for e in atlas.entries]
            P._write_csv(os.path.join(out, f"atlas_{side}.csv"), ["id", "landmark_x", "landmark_y"], rows)
            print(f"{side}: {len(atlas)} entries")

    elif args.command == "bsa":
        unet = P.load_unet(args.seg_checkpoint) if args.seg_checkpoint else None
        if cfg.provider.mode == "toy_unet" and unet is None:
            raise SystemExit("provider.mode = toy_unet needs --seg-checkpoint")
        cands = P.run_bsa(args.dataset, cfg, unet)
        P.write_bsa_csv(os.path.join(out, "bsa.csv"), cands)
        print(f"{len(cands)} candidates -> {os.path.join(out, 'bsa.csv')}")

    elif args.command == "train-seg":
        res = P.train_segmenter(args.dataset, cfg, epochs=args.epochs)
        checkpoint.save(os.path.join(out, "unet.ckpt"), res.params)
        P._write_csv(os.path.join(out, "unet_history.csv"), ["epoch", "loss"], list(enumerate(res.history, 1)))
        print(f"final loss {res.history[-1]:.4f}")

    elif args.command == "train-refine":
        res = P.train_refiner(args.dataset, cfg, args.mode)
        path = refiner_path(out, args.mode)
        checkpoint.save(path, res.params)
        P._write_csv(os.path.join(out, f"refine_{args.mode}_history.csv"), ["epoch", "loss"],
                     list(enumerate(res.history, 1)))
        print(f"{args.mode}: final loss {res.history[-1]:.4f} -> {path}")

    elif args.command == "locate":
        cands = P.read_candidates(args.candidates)
        refined = P.run_locate(args.dataset, cands, P.load_refiner(args.checkpoint), args.mode)
        P.write_locate_csv(os.path.join(out, "locate.csv"), refined)
        print(f"{len(refined)} refined points -> {os.path.join(out, 'locate.csv')}")

    elif args.command == "eval":
        cands = P.read_candidates(args.candidates)
        stage = args.stage
        if stage is None:
            with open(args.candidates, encoding="utf-8") as fh:
                stage = P.INIT_STAGE if fh.readline().startswith("query_id,side,candidate_x") else "refined"
        _, rows = P.evaluate(args.dataset, [(stage, cands)], out, cfg.eval)
        _print_report(rows)

    elif args.command == "ablation":
        ck = args.checkpoint_dir or out
        cands = P.read_bsa_csv(args.candidates) if args.candidates else None
        rows = P.ablation(args.dataset, out, {m: refiner_path(ck, m) for m in P.STAGE_NAMES}, cfg, cands)
        _print_report(rows)

    elif args.command == "run":
        rows = P.run_pipeline(args.dataset, out, cfg, args.checkpoint, args.mode, args.seg_checkpoint)
        _print_report(rows)

    print(f"done in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
