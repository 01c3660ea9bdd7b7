"""Command-line entry points: pretrain, run, ablate, sweep-ratio.

Configuration comes from an optional JSON file plus dotted overrides such as
--method.rho=0.1 (overrides win). Outputs are written under the --out
directory: summary.json (sorted keys), records.csv in the dataset format
extended with pred and ood_score columns, roc.csv, and for the grid commands
one summary per arm plus a combined comparison table. Repeat invocations
with the same inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys

import numpy as np

from . import config as config_mod
from . import datagen, diffnet, engine, metrics
from .errors import ConfigError, NumericalError, ParseError

RATIO_GRID = (0.05, 0.10, 0.20, 0.33, 0.50)

# Toggle grid rows (use_sam, use_decay, use_memory, use_self_weight); memory
# off also disables the admission filters so the loss falls back to the raw
# batch. The last row is the full method.
ABLATION_GRID = [
    (0, 0, 0, 0),
    (0, 1, 0, 0),
    (1, 0, 0, 0),
    (1, 1, 0, 0),
    (1, 1, 0, 1),
    (1, 1, 1, 0),
    (1, 1, 1, 1),
]

_OVERRIDE_RE = re.compile(r"^--([A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_]+)?=.*)$")


def _load_raw_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return raw


def _build_config(args, extras):
    overrides = []
    for item in extras:
        m = _OVERRIDE_RE.match(item)
        if not m:
            raise ConfigError(
                f"unrecognized argument {item!r}; overrides look like --section.key=value"
            )
        overrides.append(m.group(1))
    raw = _load_raw_config(args.config)
    raw = config_mod.apply_overrides(raw, overrides)
    cfg = config_mod.config_from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output.directory = args.out
    return cfg


def _records_arrays(records):
    preds = np.asarray([r.pred for r in records], dtype=np.int64)
    scores = np.asarray([r.ood_score for r in records])
    labels = np.asarray([r.label for r in records], dtype=np.int64)
    outlier = np.asarray([r.outlier for r in records], dtype=bool)
    return preds, scores, labels, outlier


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_records(path, features, records):
    """Dataset rows extended with the emitted prediction and OOD score."""
    x = np.asarray(features, dtype=np.float64)
    d = x.shape[1]
    cols = [f"x{i}" for i in range(d)] + ["label", "outlier", "pred", "ood_score"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in records:
            vals = ["%.17g" % v for v in x[r.index]]
            vals += [str(r.label), str(int(r.outlier)), str(r.pred), "%.17g" % r.ood_score]
            fh.write(",".join(vals) + "\n")


def write_roc(path, records):
    _, scores, _, outlier = _records_arrays(records)
    fpr, tpr = metrics.roc_curve(scores, outlier)
    with open(path, "w") as fh:
        fh.write("fpr,tpr\n")
        for f, t in zip(fpr, tpr):
            fh.write("%.17g,%.17g\n" % (f, t))


def _fmt(value):
    return "" if value is None else "%.6f" % value


def write_comparison(path, rows, extra=None):
    """rows: list of (name, summary dict).

    extra maps an arm name to a list of additional leading (column, value)
    pairs, letting sweep tables carry their swept quantity numerically.
    """
    extra = extra or {}
    lead_cols = [col for col, _ in next(iter(extra.values()), [])]
    with open(path, "w") as fh:
        fh.write(",".join(["arm"] + lead_cols + ["acc", "auc", "h_score"]) + "\n")
        for name, summary in rows:
            m = summary["metrics"]
            lead = [str(value) for _, value in extra.get(name, [])]
            cells = [name] + lead + [_fmt(m["acc"]), _fmt(m["auc"]), _fmt(m["h_score"])]
            fh.write(",".join(cells) + "\n")


def _shared_model(cfg):
    """Load the configured checkpoint, or pretrain once for this invocation."""
    if cfg.model.checkpoint:
        if not os.path.exists(cfg.model.checkpoint):
            raise ConfigError(f"checkpoint not found: {cfg.model.checkpoint}")
        return diffnet.load_model(cfg.model.checkpoint)
    model, _ = engine.pretrain_source(cfg)
    return model


def _write_run_outputs(out_dir, cfg, records, summary):
    os.makedirs(out_dir, exist_ok=True)
    formats = cfg.output.formats
    if "summary" in formats:
        write_summary(os.path.join(out_dir, "summary.json"), summary)
    if "records" in formats:
        d = cfg.data
        stream = datagen.gen_stream(
            datagen.StreamConfig(
                num_classes=d.num_classes,
                input_dim=d.input_dim,
                num_samples=d.num_samples,
                batch_size=d.batch_size,
                severity=d.severity,
                outlier_ratio=d.outlier_ratio,
                outlier_mode=d.outlier_mode,
                seed=cfg.seed,
            )
        )
        write_records(os.path.join(out_dir, "records.csv"), stream.features, records)
    if "roc" in formats and summary["metrics"]["auc"] is not None:
        write_roc(os.path.join(out_dir, "roc.csv"), records)


def _print_metrics(name, summary):
    m = summary["metrics"]
    acc = "n/a" if m["acc"] is None else "%.4f" % m["acc"]
    auc = "n/a" if m["auc"] is None else "%.4f" % m["auc"]
    h = "n/a" if m["h_score"] is None else "%.4f" % m["h_score"]
    print(f"{name}: acc={acc} auc={auc} h={h}")


def cmd_pretrain(cfg):
    model, acc = engine.pretrain_source(cfg)
    path = cfg.model.checkpoint
    if not path:
        os.makedirs(cfg.output.directory, exist_ok=True)
        path = os.path.join(cfg.output.directory, "model.npz")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    diffnet.save_model(model, path)
    print(f"pretrained checkpoint written to {path} (held-out accuracy {acc:.4f})")
    return 0


def cmd_run(cfg):
    model = _shared_model(cfg)
    records, summary = engine.run_experiment(cfg, model=model)
    _write_run_outputs(cfg.output.directory, cfg, records, summary)
    _print_metrics(cfg.method.name, summary)
    return 0


def ablation_arms(cfg):
    """The grid of (arm name, method overrides) pairs run by cmd_ablate."""
    arms = []
    for sa, ds, rbm, sw in ABLATION_GRID:
        name = f"grid_sa{sa}_ds{ds}_rbm{rbm}_sw{sw}"
        arms.append(
            (
                name,
                dict(
                    use_sam=bool(sa),
                    use_decay=bool(ds),
                    use_memory=bool(rbm),
                    use_filtering=bool(rbm),
                    use_self_weight=bool(sw),
                ),
            )
        )
    for ws in ("self", "static", "eata"):
        arms.append((f"weight_{ws}", dict(weight_strategy=ws)))
    arms.append(("aug_on", dict(use_augmentation=True)))
    arms.append(("aug_off", dict(use_augmentation=False)))
    return arms


def _run_grid(cfg, variants, table_name, extra=None):
    """Run config variants off a shared model; write per-arm summaries and a table."""
    model = _shared_model(cfg)
    os.makedirs(cfg.output.directory, exist_ok=True)
    rows, failures = [], []
    for name, variant_cfg in variants:
        try:
            records, summary = engine.run_experiment(variant_cfg, model=model)
        except (ConfigError, ParseError, NumericalError, ValueError) as exc:
            failures.append((name, str(exc)))
            continue
        arm_dir = os.path.join(cfg.output.directory, name)
        os.makedirs(arm_dir, exist_ok=True)
        write_summary(os.path.join(arm_dir, "summary.json"), summary)
        rows.append((name, summary))
        _print_metrics(name, summary)
    write_comparison(os.path.join(cfg.output.directory, table_name), rows, extra)
    if failures:
        for name, msg in failures:
            print(f"arm {name} failed: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(cfg):
    if cfg.method.name != "stamp":
        raise ConfigError("ablate requires method.name == 'stamp'")
    variants = []
    for name, overrides in ablation_arms(cfg):
        method = dataclasses.replace(cfg.method, **overrides)
        variants.append((name, dataclasses.replace(cfg, method=method)))
    return _run_grid(cfg, variants, "comparison.csv")


def cmd_sweep_ratio(cfg):
    variants, extra = [], {}
    for ratio in RATIO_GRID:
        name = "ratio_%02d" % int(round(100 * ratio))
        data = dataclasses.replace(cfg.data, outlier_ratio=ratio)
        variants.append((name, dataclasses.replace(cfg, data=data)))
        extra[name] = [("outlier_ratio", "%.2f" % ratio)]
    return _run_grid(cfg, variants, "ratio_sweep.csv", extra)


_COMMANDS = {
    "pretrain": cmd_pretrain,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "sweep-ratio": cmd_sweep_ratio,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stamp-tta",
        description="Outlier-aware test-time adaptation on synthetic streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("pretrain", "train and save the source classifier"),
        ("run", "adapt over one stream and write records and metrics"),
        ("ablate", "run the component ablation grid"),
        ("sweep-ratio", "run the outlier ratio sweep"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--out", help="override output.directory")

    args, extras = parser.parse_known_args(argv)
    try:
        cfg = _build_config(args, extras)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ParseError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
