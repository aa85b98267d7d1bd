"""``molgnn`` command line: encode, train, evaluate, predict, explain, pretrain, rtfilter.

Every subcommand reads an optional JSON config (``--config``); any other
``--section.key value`` flag overrides that config entry. Exit codes: 0 on
success, 1 on a runtime error, 2 when the configuration is invalid.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dataset import (
    FORMAT_VERSION,
    dataset_from_table,
    load_records,
    read_table,
    split,
    write_records,
)
from .errors import ConfigError, MolGnnError
from .featurize import FeatureConfig, encode_molecule
from .layers import CHECKPOINT_VERSION, GnnModel, LayerConfig

DEFAULT_CONFIG = {
    "seed": 0,
    "features": FeatureConfig().to_dict(),
    "data": {
        "smiles_column": "smiles",
        "label_columns": [],
        "strict": True,
        "split": [0.7, 0.05, 0.25],
        "split_strategy": "random",
    },
    "model": {
        "kind": "gcn",
        "units": 128,
        "depth": 2,
        "dense_units": [128],
        "readout": "sum",
        "activation": "relu",
        "normalization": "none",
        "heads": 1,
        "task": "regression",
        "layers": None,
        "init_checkpoint": None,
    },
    "training": {
        "lr_start": 1e-4,
        "lr_end": 1e-6,
        "plateau_patience": 10,
        "plateau_factor": 0.1,
        "early_stop_patience": 20,
        "min_delta": 1e-6,
        "loss": "mse_rmse",
        "huber_delta": 1.0,
        "batch_size": 32,
        "max_epochs": 300,
        "standardize_targets": True,
    },
    "pretrain": {"mask_rate": 0.15, "epochs": 20, "lr": 1e-3, "batch_size": 32},
    "explain": {"method": "gradcam", "layer_index": None, "target_index": None, "layout_seed": 0},
    "rtfilter": {"z": 2.58, "bounds": None, "figure": True},
}

# ------------------------------------------------------------------- config

def _merge_config(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "features":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge_config(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node, ref = cfg, DEFAULT_CONFIG
    for p in parts[:-1]:
        if p not in ref or not isinstance(ref[p], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node, ref = node[p], ref[p]
    if parts[-1] not in ref and ref is not DEFAULT_CONFIG["features"]:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def load_config(path: Optional[str], overrides: list) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge_config(cfg, user)
    for key, value in overrides:
        _apply_override(cfg, key, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Build every typed config once so schema errors surface before any work."""
    from .training import TrainConfig

    try:
        feature_config(cfg)
        TrainConfig.from_dict({**cfg["training"], "seed": int(cfg["seed"])})
        m = cfg["model"]
        if m["layers"] is not None:
            [LayerConfig.from_dict(l) for l in m["layers"]]
        else:
            LayerConfig(kind=m["kind"], units=int(m["units"]), heads=int(m["heads"]),
                        normalization=m["normalization"])
            LayerConfig(kind="readout", mode=m["readout"])
        if m["task"] not in ("regression", "binary_classification"):
            raise ConfigError(f"unknown task {m['task']!r}")
        if cfg["explain"]["method"] not in ("saliency", "gradcam"):
            raise ConfigError(f"unknown explain method {cfg['explain']['method']!r}")
        if not 0 < float(cfg["pretrain"]["mask_rate"]) < 1:
            raise ConfigError("pretrain.mask_rate must lie in (0, 1)")
        if not isinstance(cfg["data"]["label_columns"], list):
            raise ConfigError("data.label_columns must be a list")
    except ConfigError:
        raise
    except MolGnnError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def feature_config(cfg: dict) -> FeatureConfig:
    return FeatureConfig.from_dict(cfg["features"])


def build_model(cfg: dict, num_outputs: int) -> GnnModel:
    m = cfg["model"]
    fc = feature_config(cfg)
    if m["layers"] is not None:
        return GnnModel(m["layers"], fc, m["task"], cfg["seed"])
    return GnnModel.standard(m["kind"], int(m["units"]), int(m["depth"]), tuple(m["dense_units"]),
                             num_outputs, fc, m["task"], int(cfg["seed"]), m["readout"],
                             m["activation"], m["normalization"], int(m["heads"]))


# ---------------------------------------------------------------- manifest

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, cfg: dict, inputs: list, outputs: list, started: float) -> dict:
    manifest = {
        "command": command,
        "version": __version__,
        "config_digest": config_digest(cfg),
        "seed": cfg["seed"],
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_time_s": round(time.time() - started, 3),
        "checksums": {str(p): _sha256(p) for p in outputs if os.path.isfile(p)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ------------------------------------------------------------------ inputs

def _require(args, name: str):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required for {args.command}")
    return value


def _load_dataset(path: str, cfg: dict, require_labels: bool = True):
    fc = feature_config(cfg)
    if str(path).endswith(".mgrf"):
        return load_records(path, fc), []
    d = cfg["data"]
    if require_labels and not d["label_columns"]:
        raise ConfigError("data.label_columns must name at least one label column")
    table = read_table(path, d["smiles_column"], d["label_columns"], strict=d["strict"])
    return dataset_from_table(table, fc), table.report


def _read_smiles(args, cfg: dict) -> list:
    if args.smiles:
        return list(args.smiles)
    path = _require(args, "input")
    if str(path).endswith(".csv"):
        return read_table(path, cfg["data"]["smiles_column"], (), strict=True).smiles
    with open(path, encoding="utf-8") as fh:
        return [line.split()[0] for line in fh if line.strip() and not line.startswith("#")]


def _out_dir(args) -> Path:
    out = Path(_require(args, "out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(args):
    return None if args.quiet else (lambda msg: print(msg, flush=True))


# ---------------------------------------------------------------- commands

def cmd_encode(args, cfg, started):
    src, dst = _require(args, "input"), _require(args, "output")
    d = cfg["data"]
    table = read_table(src, d["smiles_column"], d["label_columns"], strict=d["strict"])
    fc = feature_config(cfg)
    graphs = [encode_molecule(s, fc) for s in table.smiles]
    write_records(dst, graphs, table.labels, table.mask, fc)
    report = args.report or f"{dst}.report.csv"
    with open(report, "w", encoding="utf-8") as fh:
        fh.write("row,smiles,reason\n")
        for row, smi, reason in table.report:
            fh.write(f"{row},{_csv_field(smi)},{_csv_field(reason)}\n")
    print(f"wrote {len(graphs)} records to {dst}; {len(table.report)} rows rejected (see {report})")
    write_manifest(f"{dst}.manifest.json", "encode", cfg, [src], [dst, report], started)


def _csv_field(text: str) -> str:
    return '"' + str(text).replace('"', '""') + '"'


def cmd_train(args, cfg, started):
    from .plotting import plot_history
    from .training import TrainConfig, evaluate, fit

    src = _require(args, "input")
    out = _out_dir(args)
    data, report = _load_dataset(src, cfg)
    d = cfg["data"]
    labels = data.labels[:, 0] if d["split_strategy"] == "stratified" else None
    tr, va, te = split(len(data), d["split"], cfg["seed"], d["split_strategy"], labels)
    model = build_model(cfg, data.num_tasks)
    init = cfg["model"]["init_checkpoint"]
    if init:
        model.set_weights(GnnModel.load(init).core_weights())
    tcfg = TrainConfig.from_dict({**cfg["training"], "seed": int(cfg["seed"])})
    history = fit(model, data.subset(tr), data.subset(va), tcfg, log=_log(args))
    ckpt, hist_csv, hist_png = out / "model.ckpt", out / "history.csv", out / "history.png"
    model.save(ckpt)
    history.to_csv(hist_csv)
    plot_history(history, hist_png)
    metrics = {"best_epoch": history.best_epoch, "best_val_loss": history.best_val_loss,
               "decay_epochs": history.decay_epochs, "stopped_epoch": history.stopped_epoch,
               "n_train": len(tr), "n_val": len(va), "n_test": len(te)}
    if len(te):
        metrics["test"] = evaluate(model, data.subset(te))
    metrics_path = out / "metrics.json"
    _dump_json(metrics_path, metrics)
    splits_path = out / "split.json"
    _dump_json(splits_path, {"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()})
    if not args.quiet:
        print(json.dumps(metrics.get("test", {}), sort_keys=True))
    write_manifest(out / "manifest.json", "train", cfg, [src],
                   [ckpt, hist_csv, hist_png, metrics_path, splits_path], started)


def cmd_evaluate(args, cfg, started):
    from .training import evaluate

    model = GnnModel.load(_require(args, "checkpoint"))
    cfg = copy.deepcopy(cfg)
    cfg["features"] = model.feature_config.to_dict()
    data, _ = _load_dataset(_require(args, "input"), cfg)
    metrics = evaluate(model, data)
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        write_manifest(f"{args.output}.manifest.json", "evaluate", cfg,
                       [args.checkpoint, args.input], [args.output], started)
    else:
        sys.stdout.write(text)


def cmd_predict(args, cfg, started):
    model = GnnModel.load(_require(args, "checkpoint"))
    smiles = _read_smiles(args, cfg)
    dst = _require(args, "output")
    rows = []
    for s in smiles:
        pred = model.predict(encode_molecule(s, model.feature_config))[0]
        rows.append((s, pred))
    with open(dst, "w", encoding="utf-8") as fh:
        cols = ["prediction"] if model.num_outputs == 1 else [f"prediction_{k}" for k in range(model.num_outputs)]
        fh.write(",".join(["smiles", *cols]) + "\n")
        for s, pred in rows:
            fh.write(",".join([_csv_field(s), *(repr(float(p)) for p in pred)]) + "\n")
    write_manifest(f"{dst}.manifest.json", "predict", cfg, [args.checkpoint, args.input or "<argv>"],
                   [dst], started)


def cmd_explain(args, cfg, started):
    from .interpret import explain, render_svg

    model = GnnModel.load(_require(args, "checkpoint"))
    out = _out_dir(args)
    e = cfg["explain"]
    outputs = []
    for k, s in enumerate(_read_smiles(args, cfg)):
        amap = explain(model, s, e["method"], e["layer_index"], e["target_index"])
        csv_path, svg_path = out / f"mol{k:04d}.{e['method']}.csv", out / f"mol{k:04d}.{e['method']}.svg"
        amap.to_csv(csv_path)
        svg_path.write_text(render_svg(amap, seed=int(e["layout_seed"])))
        outputs += [csv_path, svg_path]
        if not args.quiet:
            print(f"{s}\tprediction {amap.prediction:.4f}\t-> {svg_path.name}")
    write_manifest(out / "manifest.json", "explain", cfg, [args.checkpoint], outputs, started)


def cmd_pretrain(args, cfg, started):
    from .training import masked_graph_pretrain

    dst = _require(args, "output")
    fc = feature_config(cfg)
    graphs = [encode_molecule(s, fc) for s in _read_smiles(args, cfg)]
    model = build_model(cfg, 1)
    p = cfg["pretrain"]
    result = masked_graph_pretrain(model, graphs, float(p["mask_rate"]), int(p["epochs"]), float(p["lr"]),
                                   int(p["batch_size"]), int(cfg["seed"]), log=_log(args))
    model.save(dst)
    if not args.quiet:
        print(f"masked cross-entropy {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; core saved to {dst}")
    write_manifest(f"{dst}.manifest.json", "pretrain", cfg, [args.input or "<argv>"], [dst], started)


def cmd_rtfilter(args, cfg, started):
    from .rtfilter import (
        RtFilterCalibration,
        apply_filter,
        calibrate,
        filter_report,
        read_candidates,
        write_summary,
        write_verdicts,
    )

    r = cfg["rtfilter"]
    out = _out_dir(args)
    inputs = []
    res = None
    if args.residuals:
        res = _read_residuals(args.residuals)
        calib = calibrate(res, float(r["z"]))
        inputs.append(args.residuals)
    elif r["bounds"] is not None:
        lo, hi = r["bounds"]
        calib = RtFilterCalibration.from_bounds(float(lo), float(hi), float(r["z"]))
    else:
        raise ConfigError("rtfilter needs --residuals or rtfilter.bounds")
    cand_path = _require(args, "candidates")
    inputs.append(cand_path)
    candidates = read_candidates(cand_path)
    model = GnnModel.load(args.checkpoint) if args.checkpoint else None
    verdicts, all_rows = {}, []
    for aid, (rt, rows) in candidates.items():
        filled = []
        for smi, score, pred in rows:
            if pred is None:
                if model is None:
                    raise ConfigError(f"candidate {smi!r} has no predicted_rt; pass --checkpoint")
                pred = float(model.predict(encode_molecule(smi, model.feature_config))[0, 0])
            filled.append((smi, score, pred))
        verdicts[aid] = apply_filter(calib, rt, filled, aid)
        all_rows += verdicts[aid]
    report = filter_report(verdicts)
    v_path, s_path = out / "verdicts.csv", out / "summary.csv"
    write_verdicts(v_path, all_rows)
    write_summary(s_path, report)
    outputs = [v_path, s_path]
    if r["figure"]:
        from .plotting import plot_rtfilter

        fig_path = out / "rtfilter.png"
        plot_rtfilter(calib, res, report, fig_path)
        outputs.append(fig_path)
    if not args.quiet:
        print(f"bounds [{calib.lower:.4f}, {calib.upper:.4f}]; filtered {report.filtered}/{report.total} "
              f"({report.fraction_filtered:.1%})")
    write_manifest(out / "manifest.json", "rtfilter", cfg, inputs, outputs, started)


def _read_residuals(path) -> np.ndarray:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        rows = list(reader)
    if "residual" in cols:
        return np.array([float(r["residual"]) for r in rows])
    if "experimental_rt" in cols and "predicted_rt" in cols:
        return np.array([float(r["experimental_rt"]) - float(r["predicted_rt"]) for r in rows])
    raise ConfigError(f"{path} needs a residual column or experimental_rt and predicted_rt columns")


def _dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


COMMANDS = {
    "encode": cmd_encode,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "pretrain": cmd_pretrain,
    "rtfilter": cmd_rtfilter,
}


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molgnn", description="Molecular graph neural network toolkit.")
    parser.add_argument("--version", action="version",
                        version=f"molgnn {__version__} (MGRF v{FORMAT_VERSION}, checkpoint v{CHECKPOINT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--input")
        p.add_argument("--output")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--checkpoint")
        p.add_argument("--smiles", action="append")
        p.add_argument("--residuals")
        p.add_argument("--candidates")
        p.add_argument("--report")
        p.add_argument("--quiet", action="store_true")
    return parser


def _split_overrides(extra: list) -> list:
    out, i = [], 0
    while i < len(extra):
        flag = extra[i]
        key = flag[2:]
        if not flag.startswith("--") or ("." not in key and key != "seed"):
            raise ConfigError(f"unrecognised argument {flag!r}; config overrides look like --section.key value")
        if i + 1 >= len(extra):
            raise ConfigError(f"{flag} needs a value")
        out.append((key, _parse_value(extra[i + 1])))
        i += 2
    return out


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    started = time.time()
    try:
        overrides = _split_overrides(extra)
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](args, cfg, started)
    except ConfigError as exc:
        _report_error(exc)
        return 2
    except (MolGnnError, OSError, ValueError) as exc:
        _report_error(exc)
        return 1
    return 0


def _report_error(exc: BaseException) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if hasattr(exc, "failures"):
        payload["failures"] = [{"index": i, "smiles": s, "error": str(e)} for i, s, e in exc.failures]
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
