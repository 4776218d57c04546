"""Mask-area behaviour of the trained explainer under different area weights.

Trains the classifier once, then one explainer per lambda_A, and reports
how many test positives end up with a mean mask inside the widened area
band [a_min, a_max] * (1 +- 0.5), plus the median mean-mask value.

    python3 scripts/explainer_area_sweep.py --lambdas 0.1 1.0
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from xaiseg.config import RunConfig
from xaiseg.explainer import ExplainerLossWeights, explain_masks, explainer_network, train_explainer
from xaiseg.net import forward, minivgg
from xaiseg.synthdata import gen_dataset
from xaiseg.train import train_classifier


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.1, 1.0])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = RunConfig(seed=args.seed)
    data = gen_dataset(replace(cfg.data, seed=args.seed))
    tr, va, te = data["train"], data["val"], data["test"]
    t = time.perf_counter()
    F, _ = train_classifier(minivgg(seed=args.seed), (tr.images, tr.labels), (va.images, va.labels),
                            replace(cfg.train, seed=args.seed))
    print(f"classifier trained in {time.perf_counter() - t:.0f} s")
    tcfg = cfg.explainer_train if args.epochs is None else replace(cfg.explainer_train, max_epochs=args.epochs)
    pos = te.images[te.positives()]
    for lam in args.lambdas:
        w = replace(ExplainerLossWeights(), lambda_a=lam)
        t = time.perf_counter()
        E, _ = train_explainer(explainer_network(F.input_shape, seed=args.seed, init_from=F), F,
                               tr.images[tr.positives()], w, tcfg)
        area = explain_masks(E, pos.astype(E.dtype))[:, 0].mean(axis=(1, 2))
        lo, hi = w.a_min * 0.5, w.a_max * 1.5
        inside = np.mean((area >= lo) & (area <= hi))
        masked = forward(F, (pos * explain_masks(E, pos.astype(E.dtype))).astype(F.dtype)).argmax(axis=1)
        print(f"lambda_A={lam:<5g} in band {inside:6.1%}  median area {np.median(area):.3f}  "
              f"masked input kept class 1 on {np.mean(masked == 1):.0%}  ({time.perf_counter() - t:.0f} s)")


if __name__ == "__main__":
    main()
