"""Test balanced accuracy of MiniVGG across batch sizes and init seeds.

    python3 scripts/classifier_sensitivity.py --batch-sizes 16 32 64 --seeds 0 1
"""

import argparse
import time
from dataclasses import replace

from xaiseg.evalmetrics import cls_metrics
from xaiseg.net import minivgg
from xaiseg.synthdata import SynthConfig, gen_dataset
from xaiseg.train import TrainConfig, predict, train_classifier


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch-sizes", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    args = ap.parse_args()
    data = gen_dataset(SynthConfig())
    tr, va, te = data["train"], data["val"], data["test"]
    print("batch_size,seed,epochs,test_balanced_accuracy,seconds")
    for bs in args.batch_sizes:
        for seed in args.seeds:
            t = time.perf_counter()
            cfg = replace(TrainConfig(), batch_size=bs, seed=seed)
            net, hist = train_classifier(minivgg(seed=seed), (tr.images, tr.labels), (va.images, va.labels), cfg)
            bacc = cls_metrics(predict(net, te.images), te.labels).balanced_accuracy
            print(f"{bs},{seed},{len(hist)},{bacc:.4f},{time.perf_counter() - t:.0f}", flush=True)


if __name__ == "__main__":
    main()
