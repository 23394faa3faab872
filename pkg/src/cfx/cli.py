"""``cfx`` command line: generate-cbf, train, explain, evaluate, plot-data.

Exit codes: 0 success, 2 usage/config error, 3 I/O or file-format error,
4 domain precondition failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from cfx.cfe import LOSS_COLUMNS, CfeConfig, CfeResult, TargetError, generate, pick_target
from cfx.datasets import DataFormatError, format_ucr_tsv, generate_cbf, load_dataset
from cfx.metrics import evaluate
from cfx.modelio import ModelFormatError, atomic_write, load_model, save_model
from cfx.series import apply_stats, z_normalize
from cfx.training import TrainConfig, train

log = logging.getLogger("cfx")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DOMAIN = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DomainError(Exception):
    pass


# (name, type, default, help); a default of None marks the option as required
OPTIONS = {
    "generate-cbf": [
        ("out", str, None, "output directory for CBF_TRAIN.tsv / CBF_TEST.tsv"),
        ("length", int, 64, "series length T (>= 16)"),
        ("per_class", int, 100, "train samples per class"),
        ("test_per_class", int, 50, "test samples per class"),
        ("seed", int, 0, "random seed"),
    ],
    "train": [
        ("data", "paths", None, "dataset directory, or TRAIN and TEST files"),
        ("out", str, None, "model file to write"),
        ("report", str, "", "train report path (default: train_report.json next to the model)"),
        ("seed", int, 0, "random seed"),
        ("epochs", int, 80, "maximum epochs"),
        ("patience", int, 10, "early-stopping patience in epochs"),
        ("lr", float, 1e-3, "Adam learning rate"),
        ("weight_decay", float, 1e-4, "L2 weight decay"),
        ("dropout", float, 0.2, "dropout before the linear head"),
        ("batch", int, 32, "mini-batch size"),
    ],
    "explain": [
        ("model", str, None, "model file"),
        ("data", "paths", None, "dataset directory, or TRAIN and TEST files"),
        ("out", str, None, "explain report JSON"),
        ("series_out", str, None, "directory for per-instance CSVs"),
        ("target", str, "second", "target policy: second | fixed:<label>"),
        ("lambda", float, 1.0, "weight of the validity + plausibility terms"),
        ("k", int, 10, "number of target-class neighbors"),
        ("gamma", float, 1.0, "soft-DTW smoothing"),
        ("tau", float, 0.5, "hinge threshold on the target probability"),
        ("iters", int, 200, "optimization iterations"),
        ("lr", float, 0.05, "Adam learning rate for the counterfactual"),
        ("neighbor_metric", str, "euclidean", "neighbor retrieval metric: euclidean | dtw"),
        ("limit", int, 0, "explain only this many test instances (0 = all)"),
        ("spread", bool, False, "spread --limit instances evenly over the test split instead of taking the first ones"),
        ("seed", int, 0, "random seed"),
    ],
    "evaluate": [
        ("model", str, None, "model file"),
        ("data", "paths", None, "dataset directory, or TRAIN and TEST files"),
        ("results", str, None, "directory written by 'cfx explain --series-out'"),
        ("out", str, None, "metrics JSON"),
        ("seed", int, 0, "random seed"),
    ],
    "plot-data": [
        ("results", str, None, "directory written by 'cfx explain --series-out'"),
        ("out", str, "", "output directory (default: the results directory)"),
    ],
}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfx", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI-style config file with one [section] per command")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd)
        for name, typ, default, help_ in opts:
            dest = name if name != "lambda" else "lam"
            if typ == "paths":
                p.add_argument(_flag(name), dest=dest, nargs="+", default=None, help=help_)
            elif typ is bool:
                p.add_argument(_flag(name), dest=dest, action="store_const", const=True, default=None, help=help_)
            else:
                p.add_argument(_flag(name), dest=dest, type=typ, default=None, help=help_)
    return parser


def _convert(raw: str, typ, key: str):
    try:
        if typ == "paths":
            return raw.split()
        if typ is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
        return typ(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def effective_config(cmd: str, args, parser) -> dict:
    """Defaults, then the config file section, then command-line flags."""
    file_values = {}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
        if cp.has_section(cmd):
            known = {n for n, *_ in OPTIONS[cmd]}
            for key, raw in cp.items(cmd):
                key = key.replace("-", "_")
                if key not in known:
                    raise ConfigError(f"config file {args.config}: unknown key {key!r} in [{cmd}]")
                typ = next(t for n, t, *_ in OPTIONS[cmd] if n == key)
                file_values[key] = _convert(raw, typ, key)
    cfg = {}
    for name, typ, default, _ in OPTIONS[cmd]:
        flag_val = getattr(args, name if name != "lambda" else "lam")
        value = flag_val if flag_val is not None else file_values.get(name, default)
        if value is None:
            parser.error(f"{cmd}: missing required option {_flag(name)}")
        cfg[name] = value
    return cfg


# -- csv helpers ---------------------------------------------------------------

def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def series_csv(values: np.ndarray) -> bytes:
    T, d = values.shape
    return _csv_bytes(["t"] + [f"ch{c}" for c in range(d)],
                      ([t] + [repr(float(v)) for v in values[t]] for t in range(T)))


def read_series_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise DataFormatError(f"{path}: expected a header row starting with 't'")
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _load_data_for(model, stats, paths):
    ds = load_dataset(paths)
    if stats is None:
        ds = z_normalize(ds)
    else:
        ds = replace(ds, X_train=apply_stats(ds.X_train, stats), X_test=apply_stats(ds.X_test, stats), stats=stats)
    expected = (model.length, model.in_channels, model.n_classes)
    found = (ds.length, ds.channels, ds.n_classes)
    if expected[1:] != found[1:] or (model.length is not None and model.length != ds.length) \
            or tuple(model.labels) != ds.labels:
        raise DomainError(f"dataset does not match model: expected (T, d, c) = {expected} labels {list(model.labels)}, "
                          f"found {found} labels {list(ds.labels)}")
    return ds


# -- commands ------------------------------------------------------------------

def cmd_generate_cbf(cfg) -> int:
    if cfg["length"] < 16 or cfg["per_class"] < 1 or cfg["test_per_class"] < 0:
        raise ConfigError("generate-cbf needs --length >= 16, --per-class >= 1, --test-per-class >= 0")
    ds = generate_cbf(cfg["length"], cfg["per_class"], cfg["seed"], cfg["test_per_class"])
    out = Path(cfg["out"])
    atomic_write(out / "CBF_TRAIN.tsv", format_ucr_tsv(ds.train).encode())
    atomic_write(out / "CBF_TEST.tsv", format_ucr_tsv(ds.test).encode())
    log.info("wrote %d train / %d test CBF series to %s", len(ds.y_train), len(ds.y_test), out)
    return EXIT_OK


def cmd_train(cfg) -> int:
    ds = z_normalize(load_dataset(cfg["data"]))
    try:
        tc = TrainConfig(max_epochs=cfg["epochs"], patience=cfg["patience"], lr=cfg["lr"],
                         weight_decay=cfg["weight_decay"], dropout=cfg["dropout"], batch_size=cfg["batch"],
                         seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        ds.check_trainable()
    except ValueError as exc:
        raise DomainError(str(exc)) from None
    model, report = train(ds, tc)
    save_model(cfg["out"], model, ds.stats)
    report_path = Path(cfg["report"]) if cfg["report"] else Path(cfg["out"]).with_name("train_report.json")
    body = {"dataset": ds.name, "shape": {"T": ds.length, "d": ds.channels, "c": ds.n_classes},
            "labels": list(ds.labels), **report.to_dict(), "config": cfg}
    atomic_write(report_path, _json_bytes(body))
    log.info("model written to %s (test accuracy %s)", cfg["out"], report.test_accuracy)
    return EXIT_OK


def _cfe_config(cfg) -> CfeConfig:
    try:
        return CfeConfig(lam=cfg["lambda"], k=cfg["k"], gamma=cfg["gamma"], tau=cfg["tau"],
                         iterations=cfg["iters"], lr=cfg["lr"], seed=cfg["seed"],
                         neighbor_metric=cfg["neighbor_metric"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def select_instances(n_test: int, limit: int, spread: bool) -> list[int]:
    if limit <= 0 or limit >= n_test:
        return list(range(n_test))
    if spread:
        return sorted(set(np.linspace(0, n_test - 1, limit).round().astype(int).tolist()))
    return list(range(limit))


def _threads() -> int:
    raw = os.environ.get("CFX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CFX_THREADS must be an integer, got {raw!r}") from None


def cmd_explain(cfg) -> int:
    ccfg = _cfe_config(cfg)
    model, stats = load_model(cfg["model"])
    ds = _load_data_for(model, stats, cfg["data"])
    series_dir = Path(cfg["series_out"])
    series_dir.mkdir(parents=True, exist_ok=True)
    if cfg["target"] != "second" and not cfg["target"].startswith("fixed:"):
        raise ConfigError(f"--target must be 'second' or 'fixed:<label>', got {cfg['target']!r}")
    if cfg["target"].startswith("fixed:") and cfg["target"][6:] not in ds.labels:
        raise ConfigError(f"--target label {cfg['target'][6:]!r} not in {list(ds.labels)}")

    indices = select_instances(len(ds.y_test), cfg["limit"], cfg["spread"])

    def work(i):
        x = ds.X_test[i]
        try:
            target = pick_target(x, model, cfg["target"])
        except TargetError as exc:
            return i, None, str(exc)
        return i, generate(x, target, model, ds.X_train, ds.y_train, ccfg), None

    try:
        with ThreadPoolExecutor(max_workers=min(_threads(), max(1, len(indices)))) as pool:
            outcomes = list(pool.map(work, indices))
    except TargetError as exc:
        raise DomainError(str(exc)) from None

    instances, skipped, finals = [], [], []
    for i, res, reason in outcomes:
        if res is None:
            log.warning("test instance %d skipped: %s", i, reason)
            skipped.append({"test_index": i, "reason": reason})
            continue
        iid = f"inst_{i:05d}"
        atomic_write(series_dir / f"{iid}_original.csv", series_csv(res.original))
        atomic_write(series_dir / f"{iid}_counterfactual.csv", series_csv(res.counterfactual))
        atomic_write(series_dir / f"{iid}_loss.csv", _csv_bytes(
            ("iteration",) + LOSS_COLUMNS,
            ([it] + [repr(float(v)) for v in row] for it, row in enumerate(res.trajectory))))
        nb_rows = []
        for rank, tid in enumerate(res.neighbor_ids, start=1):
            for t, row in enumerate(ds.X_train[tid]):
                nb_rows.append([rank, int(tid), t] + [repr(float(v)) for v in row])
        atomic_write(series_dir / f"{iid}_neighbors.csv", _csv_bytes(
            ["neighbor", "train_index", "t"] + [f"ch{c}" for c in range(ds.channels)], nb_rows))
        final = res.trajectory[-1].tolist() if len(res.trajectory) else [0.0] * len(LOSS_COLUMNS)
        finals.append(final)
        instances.append({
            "id": iid, "test_index": i,
            "source": ds.labels[res.source], "target": ds.labels[res.target],
            "true_label": ds.labels[int(ds.y_test[i])],
            "valid": bool(res.valid), "trivial": bool(res.trivial),
            "best_iteration": res.best_iteration, "target_probability": res.target_probability,
            "neighbor_ids": [int(t) for t in res.neighbor_ids],
            "final_losses": dict(zip(LOSS_COLUMNS, final)),
        })

    n = len(instances)
    summary = {
        "dataset": ds.name,
        "n_requested": len(indices),
        "n_explained": n,
        "n_skipped": len(skipped),
        "skipped": skipped,
        "validity": (sum(r["valid"] for r in instances) / n) if n else None,
        "mean_final_losses": dict(zip(LOSS_COLUMNS, np.mean(finals, axis=0).tolist())) if n else None,
        "space": "z-normalized with train-split statistics",
        "instances": instances,
        "config": cfg,
    }
    atomic_write(series_dir / "manifest.json", _json_bytes(summary))
    atomic_write(cfg["out"], _json_bytes(summary))
    log.info("explained %d instances (%d skipped); validity %s", n, len(skipped), summary["validity"])
    return EXIT_OK


def _read_manifest(results_dir: Path) -> dict:
    path = results_dir / "manifest.json"
    if not results_dir.is_dir():
        raise FileNotFoundError(f"results directory not found: {results_dir}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_results(results_dir, labels) -> list[CfeResult]:
    """Rebuild counterfactual results from an explain output directory (CSV files + manifest)."""
    results_dir = Path(results_dir)
    manifest = _read_manifest(results_dir)
    out = []
    for inst in manifest["instances"]:
        orig = read_series_csv(results_dir / f"{inst['id']}_original.csv")
        cf = read_series_csv(results_dir / f"{inst['id']}_counterfactual.csv")
        out.append(CfeResult(orig, cf, labels.index(inst["source"]), labels.index(inst["target"]),
                             bool(inst["valid"]), np.zeros((0, len(LOSS_COLUMNS))),
                             np.array(inst["neighbor_ids"], dtype=np.int64), 0, inst.get("best_iteration"),
                             trivial=bool(inst.get("trivial", False))))
    return out


def cmd_evaluate(cfg) -> int:
    model, stats = load_model(cfg["model"])
    ds = _load_data_for(model, stats, cfg["data"])
    results = load_results(cfg["results"], list(ds.labels))
    if not results:
        raise DomainError(f"no explained instances in {cfg['results']}")
    rep = evaluate(results, model, ds.X_train, ds.y_train, seed=cfg["seed"])
    top = rep["all"]
    body = {
        "dataset": ds.name,
        "n": top["n"],
        "val": top["validity"],
        "l1": top["l1"],
        "l2": top["l2"],
        "dtw_plausibility": top["dtw_plausibility"],
        "iso_nominal_fraction": top["iso_nominal_fraction"],
        "original_dtw_plausibility": rep["original_dtw_plausibility"],
        "mode": {"all": rep["all"], "valid_only": rep["valid_only"]},
        "space": "z-normalized with train-split statistics; dtw_plausibility divided by d*T",
        "config": cfg,
    }
    atomic_write(cfg["out"], _json_bytes(body))
    log.info("val %.3f l1 %.3f l2 %.3f dtw %.4f iso %.3f", top["validity"], top["l1"], top["l2"],
             top["dtw_plausibility"], top["iso_nominal_fraction"])
    return EXIT_OK


def cmd_plot_data(cfg) -> int:
    results_dir = Path(cfg["results"])
    manifest = _read_manifest(results_dir)
    out_dir = Path(cfg["out"]) if cfg["out"] else results_dir
    for inst in manifest["instances"]:
        iid = inst["id"]
        rows = []

        def emit(role, values):
            for t, row in enumerate(values):
                for ch, v in enumerate(row):
                    rows.append([role, t, ch, v])

        emit("original", _raw_rows(results_dir / f"{iid}_original.csv"))
        emit("counterfactual", _raw_rows(results_dir / f"{iid}_counterfactual.csv"))
        with open(results_dir / f"{iid}_neighbors.csv", encoding="utf-8", newline="") as fh:
            nb = list(csv.reader(fh))[1:]
        by_rank: dict[int, list] = {}
        for r in nb:
            by_rank.setdefault(int(r[0]), []).append(r[3:])
        for rank in sorted(by_rank):
            emit(f"neighbor_{rank}", by_rank[rank])
        atomic_write(out_dir / f"{iid}_plot.csv", _csv_bytes(["series_role", "t", "ch", "value"], rows))
    log.info("plot data for %d instances written to %s", len(manifest["instances"]), out_dir)
    return EXIT_OK


def _raw_rows(path) -> list[list[str]]:
    # values are passed through as their CSV text, untouched
    with open(path, encoding="utf-8", newline="") as fh:
        return [r[1:] for r in list(csv.reader(fh))[1:]]


COMMANDS = {
    "generate-cbf": cmd_generate_cbf,
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "plot-data": cmd_plot_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        cfg = effective_config(args.command, args, parser)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OSError, DataFormatError, ModelFormatError, json.JSONDecodeError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (DomainError, TargetError) as exc:
        log.error("precondition failed: %s", exc)
        return EXIT_DOMAIN
    except ValueError as exc:
        # remaining ValueErrors come from library preconditions (bad shapes, invalid configs)
        log.error("precondition failed: %s", exc)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
