"""``xaiseg`` command line: data generation, training, attribution,
post-processing, severity, growth monitoring and the benchmark table."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import growth as G
from .config import ConfigError, RunConfig, load_config, write_resolved
from .evalmetrics import cls_metrics, confusion, mae, mape
from .explainer import explainer_network, train_explainer
from .imageio import FormatError, normalized_preview, read_attr, read_mask, write_attr, write_pgm
from .modelio import load_model, save_model
from .net import minivgg
from .pipeline import attribute_images, growth_estimator, make_attributor, run_benchmark, write_benchmark
from .postproc import postprocess_pipeline, write_step_metrics
from .severity import severity_report, write_reports
from .synthdata import gen_dataset, load_dataset, write_dataset
from .train import predict, train_classifier

log = logging.getLogger("xaiseg")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dataset(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("no dataset: pass --data or set 'dataset' in the config")
    return load_dataset(cfg.dataset)


def _model(cfg: RunConfig):
    if not cfg.model:
        raise ConfigError("no model: pass --model or set 'model' in the config")
    return load_model(cfg.model)


def _damage_free(data, cfg: RunConfig):
    tr = data["train"]
    return tr.images[tr.negatives()]


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg: RunConfig, args) -> None:
    out = _out_dir(args.out)
    manifest = write_dataset(gen_dataset(cfg.data), out)
    write_resolved(replace(cfg, dataset=str(manifest)), out)
    print(f"wrote {manifest}")


def cmd_train(cfg: RunConfig, args) -> None:
    data = _dataset(cfg)
    out = Path(args.out)
    _out_dir(out.parent)
    tcfg = cfg.train
    net = minivgg(data["train"].images.shape[1:], seed=cfg.seed)
    tr, va = data["train"], data["val"]
    net, history = train_classifier(net, (tr.images, tr.labels), (va.images, va.labels), tcfg)
    save_model(net, out, extra={"kind": "classifier", "epochs": len(history)})
    rows = []
    for split in ("train", "val", "test"):
        if split in data:
            m = cls_metrics(predict(net, data[split].images), data[split].labels)
            rows.append([split, f"{m.balanced_accuracy:.4f}", f"{m.tpr:.4f}", f"{m.tnr:.4f}"])
            print(f"{split:5s}  balanced_accuracy {m.balanced_accuracy:.4f}  tpr {m.tpr:.4f}  tnr {m.tnr:.4f}")
    _write_rows(out.with_suffix(".metrics.csv"), ["split", "balanced_accuracy", "tpr", "tnr"], rows)
    write_resolved(replace(cfg, model=str(out)), out.parent)


def cmd_train_explainer(cfg: RunConfig, args) -> None:
    data = _dataset(cfg)
    F = _model(cfg)
    out = Path(args.out)
    _out_dir(out.parent)
    tr = data["train"]
    tcfg = cfg.explainer_train
    E = explainer_network(F.input_shape, seed=cfg.seed, init_from=F)
    E, _ = train_explainer(E, F, tr.images[tr.positives()], cfg.explainer_loss, tcfg,
                           log_path=out.with_suffix(".log.csv"))
    save_model(E, out, extra={"kind": "explainer"})
    write_resolved(replace(cfg, explainer_model=str(out)), out.parent)
    print(f"wrote {out}")


def cmd_attribute(cfg: RunConfig, args) -> None:
    net = _model(cfg)
    data = _dataset(cfg)
    split = data[args.split]
    out = _out_dir(args.out)
    explainer = load_model(cfg.explainer_model) if cfg.method.name == "explainer" else None
    pred = predict(net, split.images)
    pos = np.flatnonzero(pred == 1)
    for i in np.flatnonzero(pred != 1):
        log.info("image %d predicted damage-free, skipped", i)
    maps, secs = attribute_images(cfg.method, net, split.images[pos], _damage_free(data, cfg), explainer, cfg.seed,
                                  cfg.jobs, ids=pos)
    rows = []
    for i, a, s in zip(pos, maps, secs):
        name = f"{args.split}_{i:05d}"
        write_attr(out / f"{name}.attr", a)
        write_pgm(out / f"{name}.pgm", normalized_preview(a))
        rows.append([name, args.split, int(i), f"{s:.6f}"])
    _write_rows(out / "attributions.csv", ["image_id", "split", "index", "seconds"], rows)
    write_resolved(cfg, out)
    print(f"{len(pos)} positive predictions attributed, {len(pred) - len(pos)} skipped")


def _attr_index(attrs: Path) -> list[dict]:
    with open(attrs / "attributions.csv", newline="") as f:
        return list(csv.DictReader(f))


def cmd_postprocess(cfg: RunConfig, args) -> None:
    attrs, out = Path(args.attrs), _out_dir(args.out)
    index = _attr_index(attrs)
    gt = load_dataset(args.gt) if args.gt else None
    totals: dict = {}
    rows = []
    for row in index:
        final, steps = postprocess_pipeline(read_attr(attrs / f"{row['image_id']}.attr"), cfg.postproc)
        write_pgm(out / f"{row['image_id']}_mask.pgm", final)
        rows.append([row["image_id"], row["split"], row["index"]])
        if gt is not None:
            truth = gt[row["split"]].masks[int(row["index"])]
            for name, m in steps.items():
                c = confusion(m, truth)
                totals[name] = totals[name] + c if name in totals else c
    _write_rows(out / "masks.csv", ["image_id", "split", "index"], rows)
    if gt is not None:
        write_step_metrics(out / "step_metrics.csv", totals)
    write_resolved(cfg, out)
    print(f"{len(rows)} masks written")


def cmd_severity(cfg: RunConfig, args) -> None:
    masks = Path(args.masks)
    calibration = args.calibration if args.calibration is not None else cfg.calibration
    with open(masks / "masks.csv", newline="") as f:
        index = list(csv.DictReader(f))
    rows, truth = [], None
    for row in index:
        rows.append((row["image_id"], severity_report(read_mask(masks / f"{row['image_id']}_mask.pgm"), calibration)))
    if args.gt:
        gt = load_dataset(args.gt)
        truth = {r["image_id"]: severity_report(gt[r["split"]].masks[int(r["index"])], calibration) for r in index}
    out = Path(args.out)
    _out_dir(out.parent)
    write_reports(out, rows, truth)
    if truth is not None and rows:
        summary = []
        for key in ("cpp", "area_px", "max_width_px"):
            est = [getattr(r, key) for _, r in rows]
            true = [getattr(truth[i], key) for i, _ in rows]
            summary.append([key, f"{mae(est, true):.4f}", f"{mape(est, true):.4f}"])
        _write_rows(out.with_suffix(".summary.csv"), ["metric", "mae", "mape"], summary)
    write_resolved(replace(cfg, calibration=calibration), out.parent)
    print(f"{len(rows)} severity reports written")


def cmd_growth(cfg: RunConfig, args) -> None:
    net = _model(cfg)
    data = _dataset(cfg)
    out = _out_dir(args.out)
    n = args.n if args.n is not None else cfg.growth.n_trajectories
    gcfg = replace(cfg.growth, n_trajectories=n)
    te = data["test"]
    neg = te.negatives()
    trajs = G.make_trajectories(te.images[neg], n, cfg.data, cfg.seed, gcfg.n_steps, gcfg.r_dilate,
                                source_ids=[te.source_ids[i] for i in neg])
    G.write_trajectories(trajs, out / "trajectories")
    explainer = load_model(cfg.explainer_model) if cfg.method.name == "explainer" else None
    run = make_attributor(cfg.method, net, _damage_free(data, cfg), explainer, cfg.seed)
    summaries = []
    for name, est in (("oracle", None), (cfg.method.name, growth_estimator(run, cfg.postproc))):
        try:
            summaries.append(G.evaluate_growth(trajs, net, est, name, cfg.calibration))
        except ValueError as exc:
            # the classifier may flag too few steps as damaged
            print(f"warning: {name}: {exc}", file=sys.stderr)
    G.write_summary(out / "growth_summary.csv", summaries)
    write_resolved(replace(cfg, growth=gcfg), out)
    for s in summaries:
        print(f"{s.method:22s} r_area {s.avg_r_area:.3f}  mape_area {s.mape_area:.1f}  "
              f"r_width {s.avg_r_width:.3f}  mape_width {s.mape_width:.1f}  n {s.n_retained}")


def cmd_benchmark(cfg: RunConfig, args) -> None:
    net = _model(cfg)
    data = _dataset(cfg)
    out = _out_dir(args.out)
    te = data[args.split]
    pos = te.positives()
    if cfg.benchmark.max_images is not None:
        pos = pos[: cfg.benchmark.max_images]
    explainer = load_model(cfg.explainer_model) if cfg.explainer_model else None
    methods = cfg.benchmark.methods
    if "explainer" in methods and explainer is None:
        raise ConfigError("benchmark lists the explainer method but no explainer_model is configured")
    t = time.perf_counter()
    rows = run_benchmark(cfg, net, te.images[pos], te.masks[pos], _damage_free(data, cfg), explainer, ids=pos)
    write_benchmark(out / "benchmark.csv", rows)
    write_resolved(cfg, out)
    for r in rows:
        print(f"{r.method:22s} {r.threshold:6s} morph={'on ' if r.morphology else 'off'} f1 {r.f1:.4f} "
              f"iou {r.iou:.4f}  {r.seconds_per_image:.4f} s/img")
    print(f"benchmark finished in {time.perf_counter() - t:.1f} s")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xaiseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--jobs", type=int, help="worker processes (1 = deterministic verification mode)")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate the synthetic corpus")
    sp.add_argument("--out", required=True)

    for name, fn in (("train", cmd_train), ("train-explainer", cmd_train_explainer)):
        sp = add(name, fn, f"{name.replace('-', ' ')} on the corpus")
        sp.add_argument("--data")
        sp.add_argument("--out", required=True)
        if name == "train-explainer":
            sp.add_argument("--model")

    sp = add("attribute", cmd_attribute, "attribution maps for positive predictions")
    sp.add_argument("--model")
    sp.add_argument("--method")
    sp.add_argument("--images", dest="data", help="dataset manifest")
    sp.add_argument("--split", default="test")
    sp.add_argument("--explainer-model")
    sp.add_argument("--out", required=True)

    sp = add("postprocess", cmd_postprocess, "binarize attribution maps")
    sp.add_argument("--attrs", required=True)
    sp.add_argument("--gt", help="dataset manifest with ground-truth masks")
    sp.add_argument("--out", required=True)

    sp = add("severity", cmd_severity, "severity reports for masks")
    sp.add_argument("--masks", required=True)
    sp.add_argument("--calibration", type=float)
    sp.add_argument("--gt", help="dataset manifest with ground-truth masks")
    sp.add_argument("--out", required=True)

    sp = add("growth", cmd_growth, "growth-monitoring evaluation")
    sp.add_argument("--model")
    sp.add_argument("--method")
    sp.add_argument("--data")
    sp.add_argument("--explainer-model")
    sp.add_argument("--n", type=int)
    sp.add_argument("--out", required=True)

    sp = add("benchmark", cmd_benchmark, "every method x threshold x morphology")
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--split", default="test")
    sp.add_argument("--explainer-model")
    sp.add_argument("--out", required=True)
    return p


def _resolve(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("jobs",)}
    overrides["dataset"] = getattr(args, "data", None)
    overrides["model"] = getattr(args, "model", None)
    overrides["explainer_model"] = getattr(args, "explainer_model", None)
    overrides["output_dir"] = getattr(args, "out", None)
    cfg = load_config(args.config, overrides)
    if getattr(args, "method", None):
        cfg = load_config(args.config, {**overrides, "method": {**asdict(cfg.method), "name": args.method}})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve(args)
        args.fn(cfg, args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"xaiseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
