"""Command line: train, infer, eval, complexity, selfcheck.

Exit codes: 0 ok, 2 usage or invalid config, 3 numeric abort (or a failed
selfcheck), 4 checkpoint mismatch or unreadable checkpoint, 5 eval pairing.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataio, metrics, synthetic
from .complexity import count_params_flops
from .model import ABLATIONS, ModelConfig, SwinNet
from .tensor import InvalidArgument, NumericDomainError, Tensor
from .train import TrainConfig, train_loop

log = logging.getLogger("swinnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_PAIRING = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


class PairingError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a command needs, resolved from defaults, a JSON file and flags."""

    command: str = ""
    scale: str = "toy"
    seed: int = 0
    epochs: int = 200
    batch: Optional[int] = None
    input_size: Optional[int] = None
    ablate: Optional[str] = None
    lr0: float = 5e-5
    decay_every: int = 100
    augment: bool = True
    checkpoint_every: int = 10
    max_steps: Optional[int] = None
    out: str = "runs/latest"
    manifest: Optional[str] = None
    synthetic: Optional[int] = None
    checkpoint: Optional[str] = None
    edges: bool = False
    pred_dir: Optional[str] = None
    gt_dir: Optional[str] = None
    dataset_name: str = "dataset"

    def resolve(self) -> "RunConfig":
        if self.scale not in ("toy", "full"):
            raise UsageError(f"scale must be toy or full, got {self.scale!r}")
        if self.ablate not in ABLATIONS:
            raise UsageError(f"unknown ablation {self.ablate!r}")
        toy = self.scale == "toy"
        batch = self.batch if self.batch is not None else (2 if toy else 3)
        size = self.input_size if self.input_size is not None else (96 if toy else 384)
        if batch < 1 or self.epochs < 1 or size < 1:
            raise UsageError("batch, epochs and input_size must be positive")
        return replace(self, batch=batch, input_size=size)

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig.for_scale(self.scale, ablate=self.ablate)
        cfg = replace(cfg, backbone=replace(cfg.backbone, img_size=self.input_size))
        try:
            cfg.validate()
        except InvalidArgument as e:
            raise UsageError(str(e)) from None
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, decay_every=self.decay_every, batch=self.batch,
                           epochs=self.epochs, seed=self.seed, input_size=self.input_size,
                           augment=self.augment, checkpoint_every=self.checkpoint_every,
                           max_steps=self.max_steps)

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "config.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


_FLAG_KEYS = ("seed", "scale", "epochs", "batch", "out", "ablate", "input_size", "lr0",
              "max_steps", "manifest", "synthetic", "checkpoint", "pred_dir", "gt_dir",
              "dataset_name", "checkpoint_every", "decay_every")


def build_config(args: argparse.Namespace) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from None
        unknown = sorted(set(raw) - known)
        if unknown:
            raise UsageError(f"unknown config keys in {path}: {unknown}")
        values.update(raw)
    for key in _FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "no_augment", False):
        values["augment"] = False
    if getattr(args, "edges", False):
        values["edges"] = True
    values["command"] = args.command
    return RunConfig(**values).resolve()


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    cfg.write(out)
    if cfg.synthetic:
        manifest = synthetic.write_dataset(out / "data", cfg.synthetic, cfg.input_size, cfg.seed)
    elif cfg.manifest:
        manifest = Path(cfg.manifest)
    else:
        raise UsageError("train needs --manifest or --synthetic N")
    try:
        entries = dataio.read_manifest(manifest).entries
    except (FileNotFoundError, dataio.FormatError) as e:
        raise UsageError(str(e)) from None
    samples = [dataio.load_sample(e, cfg.input_size) for e in entries]
    mcfg = cfg.model_config()
    model = SwinNet(mcfg, seed=cfg.seed)
    t0 = time.perf_counter()
    result = train_loop(cfg.train_config(), model, samples, out, mcfg.hash())
    log.info("trained %d steps in %.1fs; final loss %.4f; checkpoints in %s",
             len(result.log), time.perf_counter() - t0,
             result.log[-1].total if result.log else float("nan"), out / "checkpoints")
    return EXIT_OK


def cmd_infer(cfg: RunConfig) -> int:
    if not cfg.checkpoint or not cfg.manifest:
        raise UsageError("infer needs --checkpoint and --manifest")
    out = Path(cfg.out)
    cfg.write(out)
    mcfg = cfg.model_config()
    if not Path(cfg.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {cfg.checkpoint}")
    state, _ = dataio.load_checkpoint(cfg.checkpoint, mcfg.hash())
    try:
        entries = dataio.read_manifest(cfg.manifest, split="test").entries
    except (FileNotFoundError, dataio.FormatError) as e:
        raise UsageError(str(e)) from None
    model = SwinNet(mcfg, seed=cfg.seed)
    model.load_state_dict(state)
    model.eval()
    if cfg.edges:
        (out / "edges").mkdir(exist_ok=True)
    for entry in entries:
        s = dataio.load_sample(entry, cfg.input_size)
        pred = model(Tensor(s.rgb[None].astype(np.float32)), Tensor(s.aux[None].astype(np.float32)))
        h, w = s.gt_size
        dataio.write_gray_png(out / f"{entry.id}.png", _prob_at(pred.s_logits.data[0, 0], h, w))
        if cfg.edges and pred.se_logits is not None:
            dataio.write_gray_png(out / "edges" / f"{entry.id}.png",
                                  _prob_at(pred.se_logits.data[0, 0], h, w))
    log.info("wrote %d maps to %s", len(entries), out)
    return EXIT_OK


def _prob_at(logits: np.ndarray, h: int, w: int) -> np.ndarray:
    p = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
    return p if p.shape == (h, w) else dataio.resize_bilinear(p, h, w)


def pair_maps(pred_dir: Path, gt_dir: Path) -> list[tuple[str, Path, Path]]:
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".pgm"}
    preds = {p.stem: p for p in sorted(pred_dir.iterdir()) if p.suffix.lower() in exts}
    gts = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.suffix.lower() in exts}
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred or only_gt or not preds:
        raise PairingError(f"unmatched stems: predictions only {only_pred}; ground truth only {only_gt}"
                           if preds else f"no prediction images in {pred_dir}")
    return [(k, preds[k], gts[k]) for k in sorted(preds)]


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.pred_dir or not cfg.gt_dir:
        raise UsageError("eval needs --pred-dir and --gt-dir")
    pred_dir, gt_dir = Path(cfg.pred_dir), Path(cfg.gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    pairs = pair_maps(pred_dir, gt_dir)
    out = Path(cfg.out)
    cfg.write(out)
    report = metrics.MetricsReport()
    preds, gts = [], []
    for stem, pp, gp in pairs:
        pred = _gray(dataio.read_image(pp))
        gt = _gray(dataio.read_image(gp)) > 0.5
        if pred.shape != gt.shape:
            pred = np.clip(dataio.resize_bilinear(pred, *gt.shape), 0, 1)
        report.add(stem, pred, gt)
        preds.append(pred)
        gts.append(gt)
    table = report.table(cfg.dataset_name)
    (out / "metrics.txt").write_text(table)
    (out / "metrics_kv.txt").write_text(report.key_values())
    rows = ["id," + ",".join(report.NAMES)]
    for i, stem in enumerate(report.ids):
        rows.append(stem + "," + ",".join(f"{report.per_image[k][i]:.6f}" for k in report.NAMES))
    (out / "per_image.csv").write_text("\n".join(rows) + "\n")
    (out / "pr.csv").write_text(metrics.pr_curve(preds, gts).to_csv())
    sys.stdout.write(table)
    return EXIT_OK


def _gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=2) if img.ndim == 3 else img


def cmd_complexity(cfg: RunConfig) -> int:
    report = count_params_flops(cfg.model_config(), cfg.input_size)
    text = report.table()
    sys.stdout.write(text)
    if cfg.out:
        out = Path(cfg.out)
        cfg.write(out)
        (out / "complexity.txt").write_text(text)
        (out / "complexity.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_selfcheck(cfg: RunConfig) -> int:
    from .selfcheck import run_all
    out = Path(cfg.out)
    cfg.write(out)
    results = run_all(seed=cfg.seed)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    text = "\n".join(lines) + "\n"
    (out / "selfcheck.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "complexity": cmd_complexity, "selfcheck": cmd_selfcheck}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--scale", choices=("toy", "full"))
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--ablate", choices=[a for a in ABLATIONS if a])
    common.add_argument("--input-size", dest="input_size", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="swinnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", parents=[common], help="train on a manifest")
    t.add_argument("--manifest")
    t.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic pairs instead")
    t.add_argument("--lr0", type=float)
    t.add_argument("--decay-every", dest="decay_every", type=int)
    t.add_argument("--max-steps", dest="max_steps", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--no-augment", dest="no_augment", action="store_true")
    i = sub.add_parser("infer", parents=[common], help="write saliency PNGs")
    i.add_argument("--checkpoint")
    i.add_argument("--manifest")
    i.add_argument("--edges", action="store_true", help="also write edge maps")
    e = sub.add_parser("eval", parents=[common], help="score prediction PNGs against ground truth")
    e.add_argument("--pred-dir", dest="pred_dir")
    e.add_argument("--gt-dir", dest="gt_dir")
    e.add_argument("--name", dest="dataset_name")
    sub.add_parser("complexity", parents=[common], help="parameter and MAC counts")
    sub.add_parser("selfcheck", parents=[common], help="gradient checks and metric oracles")
    return p


def _thread_limit():
    n = os.environ.get("SWINNET_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(args)
        with _thread_limit():
            return COMMANDS[cfg.command](cfg)
    except UsageError as e:
        log.error("%s", e)
        return EXIT_USAGE
    except InvalidArgument as e:
        log.error("invalid argument: %s", e)
        return EXIT_USAGE
    except NumericDomainError as e:
        log.error("numeric abort: %s", e)
        return EXIT_NUMERIC
    except dataio.FormatError as e:
        log.error("checkpoint: %s", e)
        return EXIT_CHECKPOINT
    except PairingError as e:
        log.error("%s", e)
        return EXIT_PAIRING


if __name__ == "__main__":
    sys.exit(main())
