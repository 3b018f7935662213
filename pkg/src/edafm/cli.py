"""Command-line entry point: ``edafm <command> [options]``.

Every command accepts ``--config FILE`` (JSON, either flat or keyed by
command name); explicit flags override file values and the resolved
configuration is written next to the outputs as ``resolved_config.json``.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric/convergence error.
Errors are reported on stderr as one JSON line ``{"error": code, "message": ...}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .errors import EdaError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# command -> {option: default}; None means required
DEFAULTS = {
    "ingest": {"root": None, "out": None, "workers": 1},
    "preprocess": {"archive": None, "out": None, "cutoff_hz": 0.4, "solver": "ipm",
                   "chunk_s": 600.0, "overlap_s": 30.0},
    "window": {"archive": None, "decomp": None, "out": None, "step": 240, "labels": "",
               "side": ""},
    "augment-preview": {"shards": None, "out": None, "index": 0, "seed": 0},
    "train": {"shards": None, "out": None, "encoder": "tiny", "tau": 0.1, "batch_size": 512,
              "lr": 1e-3, "weight_decay": 0.01, "plateau_factor": 0.5, "plateau_patience": 10,
              "early_stop_patience": 30, "max_epochs": 400, "seed": 0, "val_fraction": 0.1,
              "workers": 1},
    "embed": {"checkpoint": None, "shards": None, "out": None, "batch_size": 256},
    "features": {"shards": None, "out": None, "kind": "generic"},
    "probe": {"matrix": None, "out": None, "seed": 0, "standardize": False},
    "evaluate": {"matrix": None, "out": None, "protocol": "LOPO", "plan": "", "task": "task",
                 "seed": 0, "standardize": False, "workers": 1},
    "bench": {"shards": None, "out": None, "encoder": "reference", "archive": "", "seed": 0},
    "corpus-stats": {"archive": None, "out": None, "bins": 50, "truncate": 2.5},
    "stats": {"scores": None, "out": None},
}

HELP = {
    "ingest": "convert an E4 directory tree into the float32 archive",
    "preprocess": "low-pass and cvxEDA-decompose every archived recording",
    "window": "cut decompositions into 3x240 windows and write shards",
    "augment-preview": "apply every augmentation to one window (long-format CSV)",
    "train": "contrastive pre-training of the encoder",
    "embed": "frozen-encoder embeddings of shard windows",
    "features": "handcrafted feature matrix of shard windows",
    "probe": "fit a linear probe with inner grid search",
    "evaluate": "LOPO / TA evaluation of one or more feature matrices",
    "bench": "FLOP count and CPU timing of the extractors",
    "corpus-stats": "per-dataset hours, users and value histograms",
    "stats": "Friedman / Nemenyi analysis of a methods x experiments score table",
}


def _add_option(p: argparse.ArgumentParser, name: str, default) -> None:
    flag = "--" + name.replace("_", "-")
    if isinstance(default, bool):
        p.add_argument(flag, dest=name, action="store_const", const=True, default=None)
    elif name in ("matrix",):
        p.add_argument(flag, dest=name, action="append", default=None)
    else:
        typ = type(default) if default is not None else str
        p.add_argument(flag, dest=name, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edafm", description="EDA foundation-model pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in DEFAULTS.items():
        p = sub.add_parser(cmd, help=HELP[cmd])
        p.add_argument("--config", default=None, help="JSON config file")
        for name, default in opts.items():
            _add_option(p, name, default)
    return parser


class UsageError(Exception):
    pass


def resolve(args: argparse.Namespace) -> dict:
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        data = json.loads(Path(args.config).read_text())
        section = data.get(cmd, data) if isinstance(data.get(cmd), dict) else data
        unknown = set(section) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        cfg.update(section)
    cfg.update({k: v for k, v in vars(args).items() if k in cfg and v is not None})
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise UsageError(f"{cmd}: missing required option(s) {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def _write_resolved(cmd: str, cfg: dict) -> None:
    out = Path(cfg["out"])
    folder = out if not out.suffix else out.parent
    folder.mkdir(parents=True, exist_ok=True)
    (folder / "resolved_config.json").write_text(
        json.dumps({"command": cmd, **cfg}, sort_keys=True, indent=1) + "\n")


# commands

def cmd_ingest(cfg):
    from .ingest import write_archive
    m = write_archive(cfg["root"], cfg["out"], cfg["workers"])
    return {"recordings": len(m.entries), "skipped": len(m.skipped), "hours": m.total_hours}


def _manifest(archive):
    from .ingest import ArchiveManifest
    return ArchiveManifest.read(Path(archive) / "manifest.jsonl")


def cmd_preprocess(cfg):
    from .decompose import CvxedaParams, cvxeda
    from .ingest import load_recording
    from .signal import Series, butterworth_lowpass
    params = CvxedaParams(solver=cfg["solver"])
    out = Path(cfg["out"])
    n = 0
    for entry in _manifest(cfg["archive"]).entries:
        rec = load_recording(cfg["archive"], entry)
        s = butterworth_lowpass(Series(rec.values), cfg["cutoff_hz"])
        dec = cvxeda(s, params, chunk_s=cfg["chunk_s"], overlap_s=cfg["overlap_s"])
        path = out / Path(entry.path).with_suffix(".npz")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, tonic=dec.tonic, phasic=dec.phasic, driver=dec.driver, residual=dec.residual)
        n += 1
    return {"decomposed": n, "params": asdict(params)}


def read_label_csv(path) -> list:
    """Label intervals from a CSV with columns user_id (optional), t0, t1, label."""
    from .segment import LabelInterval
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(LabelInterval(float(row["t0"]), float(row["t1"]), int(row["label"]),
                                     row.get("user_id") or None))
    return out


def cmd_window(cfg):
    from .decompose import Decomposition
    from .ingest import load_recording
    from .segment import WindowStats, attach_labels, make_windows, select_side, write_shard
    intervals = read_label_csv(cfg["labels"]) if cfg["labels"] else None
    stats = WindowStats()
    out = Path(cfg["out"])
    shards = 0
    for entry in _manifest(cfg["archive"]).entries:
        rec = load_recording(cfg["archive"], entry)
        if not list(select_side([rec], cfg["side"] or None)):
            continue
        with np.load(Path(cfg["decomp"]) / Path(entry.path).with_suffix(".npz")) as z:
            dec = Decomposition(z["tonic"], z["phasic"], z["driver"], z["residual"])
        ws = make_windows(dec, cfg["step"], rec, stats)
        if intervals is not None:
            ws = attach_labels(ws, intervals)
        ws = list(ws)
        if ws:
            write_shard(out / Path(entry.path).with_suffix(".shard"), ws,
                        {"side": rec.side, "source": entry.path})
            shards += 1
    return {"shards": shards, "windows": stats.produced, "too_short": stats.too_short}


def _shard_paths(folder) -> list[Path]:
    paths = sorted(Path(folder).rglob("*.shard"))
    if not paths:
        from .errors import EmptyData
        raise EmptyData(f"no shards under {folder}")
    return paths


def _load(folder):
    from .segment import load_shards
    return load_shards(_shard_paths(folder))


def cmd_augment_preview(cfg):
    from .augment import KINDS, sample_spec, stream, transform
    from .segment import CHANNELS
    ws = _load(cfg["shards"])
    x = ws.x[cfg["index"]].astype(np.float64)
    with open(cfg["out"], "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["kind", "params", "channel", "sample", "value"])
        for k, kind in enumerate(KINDS):
            spec = sample_spec(kind, stream(cfg["seed"], k))
            y = transform(x, spec)
            params = json.dumps(spec.params, sort_keys=True)
            for c, name in enumerate(CHANNELS):
                for i in range(y.shape[1]):
                    wr.writerow([kind, params, name, i, repr(float(y[c, i]))])
    return {"kinds": len(KINDS)}


def cmd_train(cfg):
    from .encoder import REFERENCE, TINY
    from .train import ContrastiveConfig, fit_contrastive
    tc = ContrastiveConfig(**{f.name: cfg[f.name] for f in fields(ContrastiveConfig)})
    enc = {"tiny": TINY, "reference": REFERENCE}.get(cfg["encoder"])
    if enc is None:
        raise UsageError("--encoder must be 'tiny' or 'reference'")
    res = fit_contrastive(_load(cfg["shards"]), tc, encoder_cfg=enc, out_dir=cfg["out"])
    return {"best_epoch": res.best_epoch, "best_val": res.best_val, "epochs": len(res.history)}


def _meta(ws) -> dict:
    return {"dataset_id": ws.dataset_id, "user_id": ws.user_id,
            "t_start": [repr(float(t)) for t in ws.t_start], "label": ws.label}


def cmd_embed(cfg):
    from .encoder import embed, load_checkpoint
    from .features import write_matrix
    model, _ = load_checkpoint(cfg["checkpoint"])
    ws = _load(cfg["shards"])
    z = embed(model, ws.x, cfg["batch_size"])
    write_matrix(cfg["out"], _meta(ws), [f"emb_{i}" for i in range(z.shape[1])], z)
    return {"windows": len(ws), "dim": int(z.shape[1])}


def cmd_features(cfg):
    from .features import EDA_NAMES, GENERIC_NAMES, feature_matrix, write_matrix
    if cfg["kind"] not in ("generic", "eda"):
        raise UsageError("--kind must be 'generic' or 'eda'")
    ws = _load(cfg["shards"])
    values = feature_matrix(ws.x, cfg["kind"])
    write_matrix(cfg["out"], _meta(ws), GENERIC_NAMES if cfg["kind"] == "generic" else EDA_NAMES, values)
    return {"windows": len(ws), "dim": int(values.shape[1])}


def _labeled(path):
    from .features import read_matrix
    meta, names, values = read_matrix(path)
    keep = meta["label"] >= 0
    return {k: np.asarray(v)[keep] for k, v in meta.items()}, names, values[keep]


def cmd_probe(cfg):
    from .probe import ProbeGrid, grid_select
    paths = cfg["matrix"] if isinstance(cfg["matrix"], list) else [cfg["matrix"]]
    meta, _, X = _labeled(paths[0])
    model = grid_select(X, meta["label"], ProbeGrid(standardize=cfg["standardize"]), seed=cfg["seed"])
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg["out"]).write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")
    return {"chosen_C": model.chosen_C}


def cmd_evaluate(cfg):
    from .evaluation import FoldPlan, evaluate_protocol, make_folds, result_rows, write_results
    from .probe import ProbeGrid
    paths = cfg["matrix"] if isinstance(cfg["matrix"], list) else [cfg["matrix"]]
    rows = []
    plan = None
    for p in paths:
        meta, _, X = _labeled(p)
        if plan is None:
            if cfg["plan"] and Path(cfg["plan"]).exists():
                plan = FoldPlan.load(cfg["plan"])
            else:
                plan = make_folds(meta["user_id"], meta["t_start"], cfg["protocol"], cfg["seed"])
                if cfg["plan"]:
                    plan.save(cfg["plan"])
        res = evaluate_protocol(X, meta["label"], plan, cfg["seed"],
                                ProbeGrid(standardize=cfg["standardize"]), cfg["workers"])
        rows += result_rows(Path(p).stem, cfg["task"], plan.protocol, res)
    write_results(cfg["out"], rows)
    return {"rows": len(rows), "folds": len(plan), "plan": plan.digest()}


def cmd_bench(cfg):
    from .bench import standard_bench, write_bench
    from .encoder import REFERENCE, TINY
    ws = _load(cfg["shards"])
    raw = None
    if cfg["archive"]:
        raw = ws.x[:, 0].astype(np.float64)
    entries = standard_bench(ws.x, raw, {"tiny": TINY, "reference": REFERENCE}[cfg["encoder"]], cfg["seed"])
    write_bench(cfg["out"], entries)
    return {e.name: e.mean_ms for e in entries}


def cmd_corpus_stats(cfg):
    from .ingest import load_recording
    m = _manifest(cfg["archive"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    edges = np.linspace(0.0, cfg["truncate"], cfg["bins"] + 1)
    per = {}
    for e in m.entries:
        d = per.setdefault(e.dataset_id, {"users": set(), "samples": 0, "recordings": 0,
                                          "hist": np.zeros(cfg["bins"], dtype=np.int64)})
        d["users"].add(e.user_id)
        d["samples"] += e.n_samples
        d["recordings"] += 1
        v = load_recording(cfg["archive"], e).values
        d["hist"] += np.histogram(v[v <= cfg["truncate"]], edges)[0]
    with open(out / "datasets.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dataset_id", "users", "recordings", "hours"])
        for ds in sorted(per):
            d = per[ds]
            wr.writerow([ds, len(d["users"]), d["recordings"], repr(d["samples"] / 4.0 / 3600.0)])
    with open(out / "histogram.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dataset_id", "bin_lo", "bin_hi", "count"])
        for ds in sorted(per):
            for i, c in enumerate(per[ds]["hist"]):
                wr.writerow([ds, repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])
    return {"datasets": len(per)}


def cmd_stats(cfg):
    """Scores CSV: first column method, remaining columns one experiment each."""
    from .stats import friedman_nemenyi
    with open(cfg["scores"], newline="") as fh:
        rows = list(csv.reader(fh))
    methods = [r[0] for r in rows[1:]]
    scores = np.array([[float(v) if v not in ("", "nan") else np.nan for v in r[1:]] for r in rows[1:]])
    res = friedman_nemenyi(scores)
    report = {"methods": methods, "chi2": res.chi2, "p": res.p, "mean_ranks": res.mean_ranks.tolist(),
              "pairwise_p": res.pairwise_p.tolist(), "n_experiments": res.n_experiments,
              "dropped_experiments": [rows[0][1 + i] for i in res.dropped]}
    Path(cfg["out"]).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    return {"chi2": res.chi2, "p": res.p}


COMMANDS = {
    "ingest": cmd_ingest, "preprocess": cmd_preprocess, "window": cmd_window,
    "augment-preview": cmd_augment_preview, "train": cmd_train, "embed": cmd_embed,
    "features": cmd_features, "probe": cmd_probe, "evaluate": cmd_evaluate, "bench": cmd_bench,
    "corpus-stats": cmd_corpus_stats, "stats": cmd_stats,
}


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse already printed usage
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        cfg = resolve(args)
        _write_resolved(args.command, cfg)
        summary = COMMANDS[args.command](cfg)
    except UsageError as e:
        return _fail("cli.UsageError", str(e), EXIT_USAGE)
    except EdaError as e:
        return _fail(e.code, str(e), EXIT_NUMERIC if e.kind == "numeric" else EXIT_DATA)
    except (FileNotFoundError, NotADirectoryError) as e:
        return _fail("cli.FileNotFound", str(e), EXIT_DATA)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        return _fail("cli.InvalidInput", str(e), EXIT_DATA)
    print(json.dumps(summary, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
