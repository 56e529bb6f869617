"""Command-line entry point.

Every subcommand reads an optional TOML config (``--config``) and accepts
overrides of any config value as ``--section.key VALUE`` (or
``--section.key=VALUE``); a bare ``--key`` works when the key name is
unique across sections. Exit status: 0 on success, 1 on usage errors,
2 when the command fails at run time.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, load_config, parse_value, resolve_key
from .dataio import ANOMALY, NORMAL, Dataset, load_ucr_dataset, major_class, synthesize_dataset
from .errors import ConfigError, Seq2GMMError

log = logging.getLogger("seq2gmm")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SUBCOMMANDS = ("synth", "segment", "train", "score", "eval", "contaminate", "deletion", "ablate", "export-latent")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seq2gmm", allow_abbrev=False, description="Group anomaly detection for quasi-periodic time series.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress (repeat for debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_, *, data=True, model=False, out=None):
        p = sub.add_parser(name, help=help_, allow_abbrev=False)
        p.add_argument("--config", type=Path, help="TOML config with [data] [model] [train] [experiment]")
        if data:
            p.add_argument("--input", type=Path, help="UCR-style file (label first) or dataset JSON")
        if model:
            p.add_argument("--model", type=Path, required=model == "required", help="model file")
        if out:
            p.add_argument("--out", type=Path, required=out == "required", help="output path")
        return p

    add("synth", "write a synthetic dataset (TSV/CSV in label-first layout, or JSON)", data=False,
        out="required")
    add("segment", "optimise breakpoints for every series", out="required")
    add("train", "train a model", out=None).add_argument("--model", type=Path, required=True,
                                                         help="model file to write")
    add("score", "score series with a trained model", model="required", out="required")
    add("eval", "evaluate a model on labelled data, or run the benchmark experiment", model=True, out=None) \
        .add_argument("--out", type=Path, help="results directory (benchmark) or JSON file (model)")
    for name, help_ in (("contaminate", "contamination sweep"), ("deletion", "deletion robustness sweep"),
                        ("ablate", "segment-count ablation")):
        add(name, help_, data=False, out=None).add_argument("--out", type=Path, help="results directory")
    add("export-latent", "write latent vectors and their 2-D projection", model="required", out="required")
    return parser


def _split_overrides(extra: Sequence[str]) -> dict:
    overrides = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise UsageError(f"unexpected argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            name, raw = name.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"option --{name} needs a value")
            raw = extra[i + 1]
            i += 1
        try:
            section, key = resolve_key(name)
        except ConfigError as exc:
            raise UsageError(f"unrecognized option --{name} ({exc})") from None
        overrides[f"{section}.{key}"] = parse_value(raw)
        i += 1
    return overrides


# ----------------------------------------------------------------------
# data helpers


def _load_input(path: Path | None, cfg: ExperimentConfig, normal_class=None) -> Dataset:
    if path is None:
        if cfg.data["source"] == "ucr":
            path = Path(cfg.data["train"])
        else:
            return synthesize_dataset(cfg.synth_config(), normalize=bool(cfg.data["normalize"]))
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    if path.suffix == ".json":
        return Dataset.load_json(path)
    nc = cfg.data["normal_class"] if normal_class is None else normal_class
    if nc is None:
        nc = major_class(path)
    return load_ucr_dataset(path, nc, bool(cfg.data["normalize"]))


def write_label_first(dataset: Dataset, path: Path) -> None:
    """Write series as label-first rows; class 0 marks Normal, 1 Anomaly, unless a source class exists."""
    sep = "," if path.suffix == ".csv" else "\t"
    with open(path, "w") as fh:
        for s in dataset.series:
            cls = s.source_class if s.source_class is not None else (1 if s.label == ANOMALY else 0)
            fh.write(sep.join([str(cls), *map(repr, s.values.tolist())]) + "\n")


# ----------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: ExperimentConfig) -> None:
    ds = synthesize_dataset(cfg.synth_config(), normalize=False)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if args.out.suffix == ".json":
        ds.save_json(args.out)
    else:
        write_label_first(ds, args.out)
    print(f"wrote {len(ds)} series to {args.out}")


def cmd_segment(args, cfg: ExperimentConfig) -> None:
    from .segmentation import optimize_breakpoints, select_num_segments

    ds = _load_input(args.input, cfg)
    tconf = cfg.training_config()
    M = tconf.M
    if M is None:
        pool = Dataset(ds.name, ds.normals() or ds.series, ds.normal_class)
        M = select_num_segments(pool, tconf.M_max, tconf.resample_len, tconf.seed)
    doc = {"M": M, "series": {s.id: optimize_breakpoints(s, M).to_dict() for s in ds.series}}
    args.out.write_text(json.dumps(doc, indent=1))
    print(f"M={M}; wrote breakpoints of {len(ds)} series to {args.out}")


def cmd_train(args, cfg: ExperimentConfig) -> None:
    from .modelio import save_model
    from .trainer import surrogate_train

    ds = _load_input(args.input, cfg)
    train = Dataset(ds.name, ds.normals(), ds.normal_class) if ds.anomalies() and ds.normals() else ds
    if train is not ds:
        log.info("training on the %d Normal series of %s", len(train), ds.name)
    model, trace = surrogate_train(train, cfg.training_config(), bool(cfg.data["normalize"]))
    args.model.parent.mkdir(parents=True, exist_ok=True)
    side = save_model(model, args.model, trace, train)
    print(f"M={model.num_segments} K={model.gmm.K}; wrote {args.model} and {side}")


def _model_and_data(args, cfg):
    from .modelio import load_model

    if args.model is None:
        raise UsageError("--model is required")
    model = load_model(args.model)
    ds = _load_input(args.input, cfg)
    return model, ds


def cmd_score(args, cfg: ExperimentConfig) -> None:
    from .scoring import score_dataset, write_reports_csv, write_reports_jsonl

    model, ds = _model_and_data(args, cfg)
    reports = score_dataset(ds, model, cfg.experiment["aggregation"])
    if args.out.suffix == ".csv":
        write_reports_csv(reports, args.out)
    else:
        write_reports_jsonl(reports, args.out)
    print(f"scored {len(reports)} series; wrote {args.out}")


def cmd_eval(args, cfg: ExperimentConfig) -> None:
    if args.model is None:
        from .experiments import run_benchmark

        out = args.out or Path(cfg.experiment["out"])
        res = run_benchmark(cfg, out)
        print(json.dumps(res.to_dict(), indent=1))
        return
    from .metrics import auc, aupr
    from .scoring import score_dataset

    model, ds = _model_and_data(args, cfg)
    reports = score_dataset(ds, model, cfg.experiment["aggregation"])
    scores = [r.series_score for r in reports]
    labels = [r.label for r in reports]
    doc = {"series": len(reports), "normal": labels.count(NORMAL), "anomaly": labels.count(ANOMALY),
           "auc": auc(scores, labels), "aupr": aupr(scores, labels)}
    text = json.dumps(doc, indent=1)
    if args.out is not None:
        args.out.write_text(text)
    print(text)


def _experiment(kind: str):
    def run(args, cfg: ExperimentConfig) -> None:
        from .experiments import run_experiment

        cfg.experiment["kind"] = kind
        cfg.validate()
        out = args.out or Path(cfg.experiment["out"])
        table = run_experiment(cfg, out)
        rows = table if isinstance(table, list) else [table.to_dict()]
        print((out / "results.md").read_text() if (out / "results.md").is_file() else json.dumps(rows))

    return run


def cmd_export_latent(args, cfg: ExperimentConfig) -> None:
    from . import plotting
    from .scoring import export_latent, write_latent_csv

    model, ds = _model_and_data(args, cfg)
    rows = export_latent(ds, model)
    write_latent_csv(rows, args.out)
    if cfg.experiment["figures"] and rows:
        fig = plotting.latent_scatter(np.array([r.y2d for r in rows]), [r.label for r in rows],
                                      args.out.with_suffix(".png"))
        print(f"wrote {fig}")
    print(f"wrote {len(rows)} latent rows to {args.out}")


COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "contaminate": _experiment("contamination"),
    "deletion": _experiment("deletion"),
    "ablate": _experiment("ablation"),
    "export-latent": cmd_export_latent,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(SUBCOMMANDS))
        overrides = _split_overrides(extra)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
        cfg = load_config(args.config, overrides)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"seq2gmm: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"seq2gmm: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"seq2gmm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Seq2GMMError, OSError, ValueError, ArithmeticError) as exc:
        print(f"seq2gmm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
