#!/usr/bin/env python3
"""Overfit the toy model on four synthetic pairs and report loss ratio and adaptive F.

Defaults reproduce the acceptance protocol (batch 2, 300 steps, constant lr,
no augmentation). Pass several ``--batch``/``--steps`` values to sweep.

    python scripts/overfit_toy.py
    python scripts/overfit_toy.py --batch 2 4 --steps 300 900
"""

import argparse
import itertools
import json
import time

import numpy as np

from swinnet import metrics, synthetic
from swinnet.model import ModelConfig, SwinNet
from swinnet.train import TrainConfig, collate, predict, total_loss, train_loop


def dataset_loss(model, samples):
    model.eval()
    rgb, aux, sal, edge = collate(samples, np.float32)
    p = model(rgb, aux)
    return total_loss(p.s_logits, p.se_logits, sal, edge).total.item()


def run(batch, steps, seed, lr0, pairs):
    samples = synthetic.make_samples(pairs, 96, seed=seed)
    model = SwinNet(ModelConfig.toy(), seed=seed)
    start = time.perf_counter()
    initial = dataset_loss(model, samples)
    cfg = TrainConfig.toy(batch=batch, lr0=lr0, epochs=10 ** 6, max_steps=steps,
                          decay_every=10 ** 9, augment=False, seed=seed)
    train_loop(cfg, model, samples)
    final = dataset_loss(model, samples)
    f = [metrics.adaptive_fmeasure(p, s.saliency) for p, s in zip(predict(model, samples), samples)]
    return dict(batch=batch, steps=steps, seed=seed, initial_loss=initial, final_loss=final,
                loss_ratio=final / initial, f_per_pair=[round(v, 4) for v in f],
                f_mean=float(np.mean(f)), seconds=round(time.perf_counter() - start, 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[2])
    ap.add_argument("--steps", type=int, nargs="+", default=[300])
    ap.add_argument("--seed", type=int, nargs="+", default=[0])
    ap.add_argument("--lr0", type=float, default=5e-5)
    ap.add_argument("--pairs", type=int, default=4)
    ap.add_argument("--json", action="store_true", help="one JSON object per run")
    args = ap.parse_args()

    for batch, steps, seed in itertools.product(args.batch, args.steps, args.seed):
        r = run(batch, steps, seed, args.lr0, args.pairs)
        if args.json:
            print(json.dumps(r))
            continue
        ok = r["loss_ratio"] < 0.05 and r["f_mean"] > 0.95
        print(f"batch {batch} steps {steps:4d} seed {seed}: loss ratio {r['loss_ratio']:.4f}  "
              f"F mean {r['f_mean']:.3f} per pair {r['f_per_pair']}  "
              f"{r['seconds']:.0f}s  {'PASS' if ok else 'FAIL'}")


if __name__ == "__main__":
    main()
