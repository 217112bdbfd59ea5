"""Command-line driver.

Every command reads a JSON config (``--config``), lets individual flags
override its keys, rejects unknown keys, and writes its outputs plus a
``manifest.json`` (input hashes, resolved config, config hash, versions,
seed) into ``--out-dir``. Exit status: 0 success, 2 usage or config error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from types import SimpleNamespace

import numpy as np
import scipy

from . import __version__
from .affinity import AffinityModel
from .background import BackgroundFit, fit_plugins
from .detect import DEFAULT_TAU, DEFAULT_THRESHOLDS, VARIANTS, detect_dataset
from .errors import DataError, DataFormatError, NumericalError
from .evaluation import ma_pa_table, roc
from .gee import fit_dataset
from .io import (column_floats, read_dataset, read_json, read_table, sha256_file,
                 write_dataset, write_json, write_table)
from .sim import (SimConfig, TagSimConfig, default_latin_square, generate, generate_tags,
                  two_group_design)
from .tagscreen import screen_tags

LOG2E = 1.0 / np.log(2.0)


class UsageError(Exception):
    """Bad command line or configuration (exit status 2)."""


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

DEFAULTS = {
    "simulate": {
        "out_dir": None, "design": "latin_square", "seed": 0, "replicates": 3,
        "concentrations0": None, "concentrations1": None, "sim": {},
    },
    "fit-background": {
        "out_dir": None, "dataset": None, "mode": "pm_mm", "span": 0.4, "df": 5,
        "signal_fraction": 0.1, "affinity": None,
    },
    "detect": {
        "out_dir": None, "dataset": None, "background": None, "variant": "model_pm_mm",
        "tau": DEFAULT_TAU, "thresholds": list(DEFAULT_THRESHOLDS), "per_array": False,
    },
    "diffexp": {
        "out_dir": None, "dataset": None, "background": None, "condition0": None,
        "condition1": None, "level": 0.01, "estimate_offsets": True,
    },
    "tagscreen": {
        "out_dir": None, "dataset": None, "threshold": 0.0,
    },
    "roc": {
        "out_dir": None, "scores": None, "score_column": "p_value", "lower_is_better": None,
        "truth": None, "label_column": "present",
    },
    "ma-pa": {
        "out_dir": None, "diffexp": None, "detection": None, "level": 0.01,
    },
}

INPUT_KEYS = ("dataset", "background", "affinity", "scores", "truth", "diffexp", "detection")


def _parse_flag(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(command, config_path=None, overrides=None):
    cfg = dict(DEFAULTS[command])
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {unknown}")
        cfg.update(loaded)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    _validate(command, cfg)
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise UsageError(f"missing required setting {k!r} (--{k.replace('_', '-')})")


def _check(cond, message):
    if not cond:
        raise UsageError(message)


def _validate(command, cfg):
    _require(cfg, "out_dir")
    if command == "simulate":
        _check(cfg["design"] in ("latin_square", "two_group", "tags"),
               f"design must be latin_square, two_group or tags, got {cfg['design']!r}")
        _check(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a nonnegative integer")
        _check(isinstance(cfg["replicates"], int) and cfg["replicates"] >= 1,
               "replicates must be a positive integer")
        _check(isinstance(cfg["sim"], dict), "sim must be an object")
        if cfg["design"] == "two_group":
            _require(cfg, "concentrations0", "concentrations1")
            _check(len(cfg["concentrations0"]) == len(cfg["concentrations1"]),
                   "concentrations0 and concentrations1 differ in length")
    elif command == "fit-background":
        _require(cfg, "dataset")
        _check(cfg["mode"] in ("pm_mm", "half_price"), "mode must be pm_mm or half_price")
        _check(isinstance(cfg["span"], (int, float)) and 0 < cfg["span"] <= 1,
               "span must lie in (0, 1]")
        _check(isinstance(cfg["df"], int) and cfg["df"] >= 3, "df must be an integer >= 3")
        _check(isinstance(cfg["signal_fraction"], (int, float))
               and 0 < cfg["signal_fraction"] <= 1, "signal_fraction must lie in (0, 1]")
    elif command == "detect":
        _require(cfg, "dataset")
        _check(cfg["variant"] in VARIANTS, f"variant must be one of {VARIANTS}")
        if cfg["variant"] != "mas5":
            _require(cfg, "background")
        _check(isinstance(cfg["tau"], (int, float)) and -1 < cfg["tau"] < 1, "tau must lie in (-1, 1)")
        th = cfg["thresholds"]
        _check(isinstance(th, list) and len(th) == 2 and 0 <= th[0] <= th[1] <= 1,
               "thresholds must be [lower, upper] with 0 <= lower <= upper <= 1")
        _check(isinstance(cfg["per_array"], bool), "per_array must be true or false")
    elif command == "diffexp":
        _require(cfg, "dataset", "background")
        _check(isinstance(cfg["level"], (int, float)) and 0 < cfg["level"] < 1,
               "level must lie in (0, 1)")
        _check(isinstance(cfg["estimate_offsets"], bool), "estimate_offsets must be true or false")
        _check((cfg["condition0"] is None) == (cfg["condition1"] is None),
               "give both condition0 and condition1 or neither")
    elif command == "tagscreen":
        _require(cfg, "dataset")
        _check(isinstance(cfg["threshold"], (int, float)), "threshold must be a number")
    elif command == "roc":
        _require(cfg, "scores", "truth")
        _check(cfg["lower_is_better"] in (None, True, False), "lower_is_better must be true or false")
    elif command == "ma-pa":
        _require(cfg, "diffexp", "detection")
        _check(isinstance(cfg["level"], (int, float)) and 0 < cfg["level"] < 1,
               "level must lie in (0, 1)")


def _config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def _write_manifest(command, cfg, outputs):
    out_dir = cfg["out_dir"]
    inputs = {}
    for k in INPUT_KEYS:
        if cfg.get(k):
            inputs[k] = {"path": cfg[k], "sha256": sha256_file(cfg[k])}
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": _config_hash(cfg),
        "inputs": inputs,
        "outputs": {name: sha256_file(os.path.join(out_dir, name)) for name in outputs},
        "seed": cfg.get("seed"),
        "versions": {"probelevel": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _out(cfg, name):
    return os.path.join(cfg["out_dir"], name)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_simulate(cfg):
    try:
        if cfg["design"] == "tags":
            dataset, truth = generate_tags(TagSimConfig.from_dict(cfg["sim"]), cfg["seed"])
        else:
            if cfg["design"] == "latin_square":
                design = default_latin_square()
                if cfg["replicates"] != design.replicates:
                    design = type(design)(design.levels, design.assignment, cfg["replicates"])
            else:
                design = two_group_design(cfg["concentrations0"], cfg["concentrations1"],
                                          cfg["replicates"])
            dataset, truth = generate(design, SimConfig.from_dict(cfg["sim"]), cfg["seed"])
    except (KeyError, TypeError) as exc:
        raise UsageError(f"invalid simulation settings: {exc}") from None
    write_dataset(dataset, _out(cfg, "dataset.tsv"))
    if cfg["design"] == "tags":
        cols = ("gene_id", "category", "group", "log_ratio", "alive_R", "alive_G")
        rows = [(gid, truth.category[g], int(truth.group[g]), float(truth.log_ratio[g]),
                 bool(truth.alive[g, 0]), bool(truth.alive[g, 1]))
                for g, gid in enumerate(dataset.gene_ids)]
    else:
        cols = ("gene_id", "array_id", "condition", "concentration", "present", "theta",
                "is_spike")
        th = truth.params.theta[:, :, 0]
        rows = [(gid, a.array_id, a.condition, float(truth.concentration[g, i]),
                 bool(truth.present[g, i]), float(th[g, i]), bool(truth.is_spike[g]))
                for g, gid in enumerate(dataset.gene_ids) for i, a in enumerate(dataset.arrays)]
    write_table(_out(cfg, "truth.tsv"), cols, rows)
    return ["dataset.tsv", "truth.tsv"]


def _load_background(path):
    try:
        return BackgroundFit.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a background fit ({exc})") from None


def cmd_fit_background(cfg):
    dataset = read_dataset(cfg["dataset"])
    affinity = None
    if cfg["affinity"]:
        try:
            affinity = AffinityModel.from_dict(read_json(cfg["affinity"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{cfg['affinity']}: not an affinity model ({exc})") from None
    fit = fit_plugins(dataset, affinity, cfg["mode"], cfg["span"], cfg["df"],
                      cfg["signal_fraction"])
    write_json(_out(cfg, "background.json"), fit.to_dict())
    write_json(_out(cfg, "affinity.json"), fit.affinity.to_dict())
    return ["background.json", "affinity.json"]


def cmd_detect(cfg):
    dataset = read_dataset(cfg["dataset"])
    fit = _load_background(cfg["background"]) if cfg["variant"] != "mas5" else None
    per_array = cfg["per_array"] or cfg["variant"] == "mas5"
    results = detect_dataset(dataset, fit, cfg["variant"], cfg["tau"],
                             tuple(cfg["thresholds"]), per_array)
    group_col = "array_id" if per_array else "condition"
    cols = ("gene_id", "variant", group_col, "statistic", "p_value", "call")
    rows = [(r.gene_id, r.variant, r.condition, r.statistic, r.p_value, r.call) for r in results]
    write_table(_out(cfg, "detection.tsv"), cols, rows)
    return ["detection.tsv"]


def cmd_diffexp(cfg):
    dataset = read_dataset(cfg["dataset"])
    fit = _load_background(cfg["background"])
    if not fit.has_signal:
        raise DataError("background fit lacks signal parameters")
    if fit.n_arrays != dataset.n_arrays:
        raise DataError("background fit and dataset have different array counts")
    fits, used = fit_dataset(dataset, fit, cfg["condition0"], cfg["condition1"],
                             cfg["estimate_offsets"])
    cols = ("gene_id", "beta0", "beta1", "beta1_log2", "se_beta1", "p_value", "status",
            "iterations")
    rows = [(f.gene_id, f.beta0, f.beta1, f.beta1 * LOG2E, f.se_beta1, f.p_value, f.status,
             f.iterations) for f in fits]
    write_table(_out(cfg, "diffexp.tsv"), cols, rows)
    write_json(_out(cfg, "offsets.json"), {"nu": used.nu.tolist(),
                                           "array_ids": dataset.array_ids})
    return ["diffexp.tsv", "offsets.json"]


def cmd_tagscreen(cfg):
    dataset = read_dataset(cfg["dataset"])
    fit, results = screen_tags(dataset, cfg["threshold"])
    cols = ("gene_id", "llr", "classification", "both_alive", "log_ratio", "log2_ratio")
    rows = [(r.gene_id, r.llr, r.classification, r.both_alive,
             None if np.isnan(r.log_ratio) else r.log_ratio,
             None if np.isnan(r.log_ratio) else r.log_ratio * LOG2E) for r in results]
    write_table(_out(cfg, "tagscreen.tsv"), cols, rows)
    write_json(_out(cfg, "mixture.json"), {"R": fit.R.to_dict(), "G": fit.G.to_dict()})
    return ["tagscreen.tsv", "mixture.json"]


_LABELS = {"1": True, "0": False, "true": True, "false": False, "True": True, "False": False}


def cmd_roc(cfg):
    s_path, t_path = cfg["scores"], cfg["truth"]
    s_cols, s_rows = read_table(s_path)
    t_cols, t_rows = read_table(t_path)
    keys = [c for c in ("gene_id", "array_id", "condition") if c in s_cols and c in t_cols]
    if "gene_id" not in keys:
        raise DataFormatError(s_path, 1, "gene_id", "both tables need a gene_id column")
    if cfg["label_column"] not in t_cols:
        raise DataFormatError(t_path, 1, cfg["label_column"], "column not found")
    labels = {}
    for ln, r in enumerate(t_rows, start=2):
        v = r[cfg["label_column"]]
        if v not in _LABELS:
            raise DataFormatError(t_path, ln, cfg["label_column"], f"invalid label {v!r}")
        labels.setdefault(tuple(r[k] for k in keys), _LABELS[v])
    scores = column_floats(s_path, s_rows, cfg["score_column"])
    lower = cfg["lower_is_better"]
    if lower is None:
        lower = cfg["score_column"] == "p_value"
    truth = []
    for ln, r in enumerate(s_rows, start=2):
        key = tuple(r[k] for k in keys)
        if key not in labels:
            raise DataFormatError(s_path, ln, keys[0], f"no truth label for {key}")
        truth.append(labels[key])
    table = roc(-scores if lower else scores, np.array(truth))
    sign = -1.0 if lower else 1.0
    rows = [(int(fp), int(tp), None if k == 0 else sign * table.thresholds[k - 1])
            for k, (fp, tp) in enumerate(zip(table.false_positives, table.true_positives))]
    write_table(_out(cfg, "roc.tsv"), ("false_positives", "true_positives", "threshold"), rows)
    write_json(_out(cfg, "roc.json"), {"auc": table.auc, "n_positive": table.n_positive,
                                       "n_negative": table.n_negative})
    return ["roc.tsv", "roc.json"]


def cmd_ma_pa(cfg):
    d_path = cfg["diffexp"]
    _, rows = read_table(d_path)
    b0 = column_floats(d_path, rows, "beta0")
    b1 = column_floats(d_path, rows, "beta1")
    se = column_floats(d_path, rows, "se_beta1")
    fits = [SimpleNamespace(gene_id=r["gene_id"], beta0=x0, beta1=x1, se_beta1=s)
            for r, x0, x1, s in zip(rows, b0, b1, se)]
    p_path = cfg["detection"]
    _, drows = read_table(p_path)
    pv = column_floats(p_path, drows, "p_value")
    det = {}
    for r, p in zip(drows, pv):
        det[r["gene_id"]] = min(det.get(r["gene_id"], np.inf), p)
    if not set(det) & {f.gene_id for f in fits}:
        raise DataError("diffexp and detection tables share no genes")
    table = ma_pa_table(fits, det, cfg["level"])
    cols = ("gene_id", "average_log2", "fold_change_log2", "se_log2", "lower", "upper",
            "detection_p")
    out = [(r.gene_id, r.average, r.fold_change, r.se, r.lower, r.upper,
            None if np.isnan(r.detection_p) else r.detection_p) for r in table]
    write_table(_out(cfg, "mapa.tsv"), cols, out)
    return ["mapa.tsv"]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-background": cmd_fit_background,
    "detect": cmd_detect,
    "diffexp": cmd_diffexp,
    "tagscreen": cmd_tagscreen,
    "roc": cmd_roc,
    "ma-pa": cmd_ma_pa,
}

HELP = {
    "simulate": "draw a synthetic dataset and its ground truth",
    "fit-background": "estimate optical floor, background curves and variance components",
    "detect": "presence calls (MAS5 signed-rank or model-based)",
    "diffexp": "per-gene fold changes, standard errors and p-values",
    "tagscreen": "two-colour tag screen: mixture fit, llr and log ratios",
    "roc": "ROC table and AUC of a score column against truth labels",
    "ma-pa": "MA-PA plot table from diffexp and detection results",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="probelevel", description="Probe-level microarray analysis.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="JSON config; flags override its keys")
        for key, default in defaults.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           type=_parse_flag, metavar="VALUE",
                           help=f"(default: {json.dumps(default)})")
    return parser


def run(argv=None):
    """Parse ``argv`` and run one command; returns the list of outputs."""
    args = build_parser().parse_args(argv)
    command = args.command
    overrides = {k: getattr(args, k) for k in DEFAULTS[command]}
    if overrides.get("out_dir") is not None:
        overrides["out_dir"] = str(overrides["out_dir"])
    cfg = resolve_config(command, args.config, overrides)
    outputs = COMMANDS[command](cfg)
    _write_manifest(command, cfg, outputs)
    return outputs


def main(argv=None):
    try:
        run(argv)
    except UsageError as exc:
        print(f"probelevel: usage error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"probelevel: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError) as exc:
        print(f"probelevel: data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
