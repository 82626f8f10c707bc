"""End-to-end driver: query segmentation, atlas candidate, refinement, metrics.

Each stage reads and writes plain files so the CLI subcommands can be
chained by hand and give the same bytes as :func:`run_pipeline`:

* ``bsa.csv``          query_id,side,candidate_x,candidate_y,top1_dice,topk_ids
* ``locate.csv``       query_id,side,pred_x,pred_y
* ``predictions.csv``  id,side,stage,pred_x,pred_y,true_x,true_y,distance_px,hit
* ``report.csv``       stage,side,n,mean_dist,std_dist,hit_rate_pct,mean_dist_l2
* ``overlays/<id>.pgm``

Reals are written with ``repr`` so a file read back gives the same floats.
"""
from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import pgm
from .bsa import SIDES, BsaConfig, build_atlas, infer_candidate
from .config import apply_overrides, derive_seed, read_config
from .evaluation import EvalConfig, ReportRow, distance, distance_l2, hit, summarize
from .locate_net import (
    MODE_ALIASES,
    LocateNet,
    RefineTrainConfig,
    config_from_params,
    refine_batch,
    train,
)
from .nn import checkpoint
from .registration import RegistrationConfig
from .segmentation import ProviderConfig, ToyUNet, ToyUNetConfig, provide, train_toy_unet
from .synth import read_manifest

BSA_HEADER = ["query_id", "side", "candidate_x", "candidate_y", "top1_dice", "topk_ids"]
LOCATE_HEADER = ["query_id", "side", "pred_x", "pred_y"]
PREDICTION_HEADER = ["id", "side", "stage", "pred_x", "pred_y", "true_x", "true_y", "distance_px", "hit"]
REPORT_HEADER = ["stage", "side", "n", "mean_dist", "std_dist", "hit_rate_pct", "mean_dist_l2"]
INIT_STAGE = "initialization"
# report stage names of the three refiner modes, in ablation order
STAGE_NAMES = {"local_only": "local", "global_only": "global", "dual": "dual"}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    query_split: str = "test"
    bsa: BsaConfig = field(default_factory=BsaConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train: RefineTrainConfig = field(default_factory=RefineTrainConfig)

    def registration_seed(self):
        return derive_seed(self.seed, "registration")


def load_config(path=None, overrides=None, seed=None) -> PipelineConfig:
    """Defaults, then a ``key = value`` file, then ``overrides``; ``seed`` wins last.

    Keys are dotted: ``bsa.k``, ``registration.max_evaluations``,
    ``provider.perturb_magnitude``, ``eval.hit_radius``, ``train.epochs``;
    bare ``seed`` and ``query_split`` set the top-level fields.
    """
    values = read_config(path) if path else {}
    values.update(overrides or {})
    cfg = PipelineConfig()
    known = {"seed", "query_split"}
    for prefix, obj in (("registration.", cfg.bsa.registration), ("bsa.", cfg.bsa), ("provider.", cfg.provider),
                        ("eval.", cfg.eval), ("train.", cfg.train)):
        known.update(prefix + f.name for f in dataclasses.fields(obj))
    known.discard("bsa.registration")  # nested; set through registration.* keys
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    reg = apply_overrides(cfg.bsa.registration, values, "registration.")
    bsa = apply_overrides(dataclasses.replace(cfg.bsa, registration=reg), values, "bsa.")
    cfg = dataclasses.replace(
        apply_overrides(cfg, {k: v for k, v in values.items() if k in ("seed", "query_split")}),
        bsa=bsa,
        provider=apply_overrides(cfg.provider, values, "provider."),
        eval=apply_overrides(cfg.eval, values, "eval."),
        train=apply_overrides(cfg.train, values, "train."),
    )
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    cfg.bsa.registration.validate()
    return cfg


# -- dataset access -------------------------------------------------------------

class Dataset:
    """Lazy view of a dataset directory written by ``generate_cohort``."""

    def __init__(self, root):
        self.root = root
        path = os.path.join(root, "manifest.csv")
        if not os.path.exists(path):
            raise DatasetError(f"{root}: no manifest.csv")
        self.manifest = read_manifest(path)
        self.by_id = {r.id: r for r in self.manifest.records}

    def records(self, split):
        recs = self.manifest.split(split)
        return sorted(recs, key=lambda r: r.id)

    def mask(self, rid):
        return pgm.read_mask(os.path.join(self.root, "masks", rid + ".pgm"))

    def image(self, rid):
        return pgm.read_image(os.path.join(self.root, "images", rid + ".pgm"))

    def truth(self, rid):
        r = self.by_id[rid]
        return (r.centroid_x, r.centroid_y)


# -- csv helpers ------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_csv(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        raise DatasetError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


@dataclass(frozen=True)
class Candidate:
    id: str
    side: str
    x: float
    y: float
    top1_dice: float = float("nan")
    topk_ids: tuple = ()


def write_bsa_csv(path, cands):
    _write_csv(path, BSA_HEADER, [(c.id, c.side, c.x, c.y, c.top1_dice, ";".join(c.topk_ids)) for c in cands])


def read_bsa_csv(path):
    return [Candidate(r[0], r[1], float(r[2]), float(r[3]), float(r[4]), tuple(r[5].split(";")) if r[5] else ())
            for r in _read_csv(path, BSA_HEADER)]


def write_locate_csv(path, cands):
    _write_csv(path, LOCATE_HEADER, [(c.id, c.side, c.x, c.y) for c in cands])


def read_locate_csv(path):
    return [Candidate(r[0], r[1], float(r[2]), float(r[3])) for r in _read_csv(path, LOCATE_HEADER)]


def read_candidates(path):
    """Either a ``bsa.csv`` or a ``locate.csv``, told apart by the header."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip().split(",")
    if first == BSA_HEADER:
        return read_bsa_csv(path)
    return read_locate_csv(path)


# -- stages -----------------------------------------------------------------------

def load_unet(path):
    params = checkpoint.load(path)
    chans = tuple(int(params[f"enc{i}.w1"].shape[0]) for i in range(5))
    return ToyUNet(ToyUNetConfig(encoder_channels=chans), params)


def query_mask(ds: Dataset, rid, cfg: PipelineConfig, unet=None):
    pcfg = dataclasses.replace(cfg.provider, seed=derive_seed(cfg.seed, "provide", rid))
    image = ds.image(rid) if pcfg.mode == "toy_unet" else None
    return provide(ds.mask(rid), pcfg, image=image, unet=unet)


def run_bsa(dataset_dir, cfg: PipelineConfig = PipelineConfig(), unet=None, atlas_dir=None):
    """Atlas candidate for every record of ``cfg.query_split`` (sorted by id)."""
    ds = Dataset(dataset_dir)
    atlas_root = atlas_dir or dataset_dir
    atlases = {}
    reg = dataclasses.replace(cfg.bsa.registration, seed=cfg.registration_seed())
    bcfg = dataclasses.replace(cfg.bsa, registration=reg)
    out = []
    for rec in ds.records(cfg.query_split):
        if rec.side not in atlases:
            atlases[rec.side] = build_atlas(atlas_root, rec.side)
        q = query_mask(ds, rec.id, cfg, unet)
        res = infer_candidate(q, atlases[rec.side], bcfg)
        out.append(Candidate(rec.id, rec.side, float(res.candidate[0]), float(res.candidate[1]),
                             float(res.ranked[0].dice), tuple(res.top_ids)))
    return out


def load_refiner(path):
    params = checkpoint.load(path)
    return LocateNet(config_from_params(params), params)


def run_locate(dataset_dir, cands, net: LocateNet, mode="dual"):
    ds = Dataset(dataset_dir)
    images = [ds.image(c.id) for c in cands]
    pts = refine_batch(net, images, [(c.x, c.y) for c in cands], MODE_ALIASES.get(mode, mode))
    return [Candidate(c.id, c.side, float(p[0]), float(p[1])) for c, p in zip(cands, pts)]


def train_refiner(dataset_dir, cfg: PipelineConfig = PipelineConfig(), mode="dual"):
    """Fit one refiner on every training record (both sides share the network)."""
    mode = MODE_ALIASES.get(mode, mode)
    ds = Dataset(dataset_dir)
    data = [(ds.image(r.id), ds.truth(r.id)) for r in ds.records("train")]
    tcfg = dataclasses.replace(cfg.train, seed=derive_seed(cfg.seed, "train", "refine", mode))
    return train(data, tcfg, mode)


def train_segmenter(dataset_dir, cfg: PipelineConfig = PipelineConfig(), epochs=10, lr=3e-4, batch=16):
    ds = Dataset(dataset_dir)
    data = [(ds.image(r.id), ds.mask(r.id)) for r in ds.records("train")]
    return train_toy_unet(data, ToyUNetConfig(), lr=lr, batch=batch, epochs=epochs,
                          seed=derive_seed(cfg.seed, "train", "seg"))


def score(ds: Dataset, cands, stage, ecfg: EvalConfig = EvalConfig()):
    """Per-record prediction rows for one stage."""
    rows = []
    for c in cands:
        t = ds.truth(c.id)
        rows.append((c.id, c.side, stage, c.x, c.y, t[0], t[1], distance((c.x, c.y), t), hit((c.x, c.y), t, ecfg)))
    return rows


def report(pred_rows, sides=(*SIDES, "all")):
    """Report rows per stage (first-seen order) and side."""
    stages = list(dict.fromkeys(r[2] for r in pred_rows))
    out = []
    for stage in stages:
        for side in sides:
            sel = [r for r in pred_rows if r[2] == stage and (side == "all" or r[1] == side)]
            if not sel:
                continue
            d = [r[7] for r in sel]
            h = [r[8] for r in sel]
            d2 = [distance_l2((r[3], r[4]), (r[5], r[6])) for r in sel]
            out.append(summarize(stage, side, d, h, d2))
    return out


def _report_tuple(row: ReportRow):
    return (row.stage, row.side, row.n, row.mean_dist, row.std_dist, row.hit_rate_pct, row.mean_dist_l2)


def write_predictions(path, rows):
    _write_csv(path, PREDICTION_HEADER, rows)


def write_report(path, rows):
    _write_csv(path, REPORT_HEADER, [_report_tuple(r) for r in rows])


def read_report(path):
    return [ReportRow(r[0], r[1], int(r[2]), float(r[3]), float(r[4]), float(r[5]), float(r[6]))
            for r in _read_csv(path, REPORT_HEADER)]


def overlay(mask, pred, truth):
    """Mask as grey levels 40/90/140/190 with 3x3 markers: 255 prediction, 0 truth."""
    img = (np.asarray(mask, dtype=np.uint16) * 50 + 40).astype(np.uint8)
    h, w = img.shape
    for (x, y), value in ((truth, 0), (pred, 255)):
        cx, cy = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        img[max(cy - 1, 0):min(cy + 2, h), max(cx - 1, 0):min(cx + 2, w)] = value
    return img


def evaluate(dataset_dir, stages, out_dir, ecfg: EvalConfig = EvalConfig(), overlays=True):
    """Score ``stages`` (list of ``(name, candidates)``) and write the output files.

    Overlays show the last stage.
    """
    ds = Dataset(dataset_dir)
    pred_rows = []
    for name, cands in stages:
        pred_rows.extend(score(ds, cands, name, ecfg))
    rows = report(pred_rows)
    os.makedirs(out_dir, exist_ok=True)
    write_predictions(os.path.join(out_dir, "predictions.csv"), pred_rows)
    write_report(os.path.join(out_dir, "report.csv"), rows)
    if overlays and stages:
        odir = os.path.join(out_dir, "overlays")
        os.makedirs(odir, exist_ok=True)
        for c in stages[-1][1]:
            pgm.write_pgm(os.path.join(odir, c.id + ".pgm"), overlay(ds.mask(c.id), (c.x, c.y), ds.truth(c.id)))
    return pred_rows, rows


def run_pipeline(dataset_dir, out_dir, cfg: PipelineConfig = PipelineConfig(), refiner=None,
                 mode="dual", unet_checkpoint=None):
    """provide -> BSA -> (optional) refinement -> metrics.

    ``refiner`` is a checkpoint path; without it the report only has the
    initialization stage.  Returns the report rows.
    """
    if refiner is not None and not os.path.exists(refiner):
        raise FileNotFoundError(f"refiner checkpoint {refiner} not found")
    unet = None
    if cfg.provider.mode == "toy_unet":
        if unet_checkpoint is None:
            raise ValueError("toy_unet provider needs a segmentation checkpoint")
        unet = load_unet(unet_checkpoint)
    cands = run_bsa(dataset_dir, cfg, unet)
    os.makedirs(out_dir, exist_ok=True)
    write_bsa_csv(os.path.join(out_dir, "bsa.csv"), cands)
    stages = [(INIT_STAGE, cands)]
    if refiner is not None:
        mode = MODE_ALIASES.get(mode, mode)
        refined = run_locate(dataset_dir, cands, load_refiner(refiner), mode)
        write_locate_csv(os.path.join(out_dir, "locate.csv"), refined)
        stages.append((STAGE_NAMES[mode], refined))
    _, rows = evaluate(dataset_dir, stages, out_dir, cfg.eval)
    return rows


def ablation(dataset_dir, out_dir, checkpoints: dict, cfg: PipelineConfig = PipelineConfig(), cands=None):
    """Refinement ablation: initialization, then local, global and dual refiners.

    ``checkpoints`` maps each mode (``local``/``global``/``dual`` or the long
    names) to a checkpoint path.  ``cands`` reuses precomputed BSA
    candidates.  Writes ``ablation.csv`` and returns its four rows.
    """
    paths = {MODE_ALIASES.get(k, k): v for k, v in checkpoints.items()}
    missing = [m for m in STAGE_NAMES if m not in paths or not os.path.exists(paths[m])]
    if missing:
        raise FileNotFoundError(f"missing refiner checkpoints for {', '.join(missing)}")
    if cands is None:
        cands = run_bsa(dataset_dir, cfg)
    ds = Dataset(dataset_dir)
    pred_rows = score(ds, cands, INIT_STAGE, cfg.eval)
    for mode, name in STAGE_NAMES.items():
        refined = run_locate(dataset_dir, cands, load_refiner(paths[mode]), mode)
        pred_rows.extend(score(ds, refined, name, cfg.eval))
    rows = report(pred_rows, sides=("all",))
    os.makedirs(out_dir, exist_ok=True)
    write_report(os.path.join(out_dir, "ablation.csv"), rows)
    write_predictions(os.path.join(out_dir, "ablation_predictions.csv"), pred_rows)
    return rows


__all__ = [
    "PipelineConfig", "load_config", "Dataset", "DatasetError", "Candidate", "run_bsa", "run_locate",
    "train_refiner", "train_segmenter", "evaluate", "run_pipeline", "ablation", "report",
    "read_bsa_csv", "write_bsa_csv", "read_locate_csv", "write_locate_csv", "read_candidates",
    "read_report", "overlay", "load_refiner", "load_unet", "RegistrationConfig",
]
