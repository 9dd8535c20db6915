"""Experiment command line: training runs, ablations, hyperparameter
sweeps, graph export, synthetic data generation and report aggregation.

Configuration is a flat key=value file with section prefixes (see
KEY_TYPES); command-line flags override file values, file values override
defaults, and unknown keys are errors.  Every run writes the fully
resolved spec next to its outputs so it can be reproduced exactly.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import energy_graph as eg
from . import market_data as md
from . import metrics as mt
from . import model as mdl
from . import synth
from .errors import ConfigError, DataError, NumericError

DEFAULT_RATIOS = (457, 63, 261)

KEY_TYPES = {
    "data.manifest": "path",
    "data.indicators": "namelist",
    "data.ratios": "ratios",
    "graph.k": "float",
    "graph.s": "float",
    "model.tau": "int",
    "model.hidden": "int",
    "model.heads": "int",
    "model.layers": "int",
    "model.phi": "int",
    "model.alpha": "int",
    "train.lr": "float",
    "train.wd": "float",
    "train.epochs": "int",
    "train.seed": "int",
    "train.seeds": "intlist",
    "train.grad_clip": "float",
    "out.dir": "path",
}

SWEEP_AXES = {
    "tau": ("model.tau", "int"),
    "k": ("graph.k", "float"),
    "s": ("graph.s", "float"),
    "heads": ("model.heads", "int"),
    "layers": ("model.layers", "int"),
}


@dataclasses.dataclass
class ExperimentSpec:
    mode: str
    manifest: str | None
    out_dir: str
    config: mdl.ModelConfig
    seeds: list[int]
    indicators: list[str]
    ratios: tuple[int, int, int]
    range_check: bool = True

    def resolved(self) -> dict:
        blob = dataclasses.asdict(self)
        blob["config"] = dataclasses.asdict(self.config)
        return blob


def _parse_value(key: str, raw: str):
    kind = KEY_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "namelist":
            return [p.strip() for p in raw.split(",") if p.strip()]
        if kind == "intlist":
            return [int(p) for p in raw.split(",") if p.strip()]
        if kind == "ratios":
            parts = [int(p) for p in raw.replace(":", ",").split(",")]
            if len(parts) != 3:
                raise ValueError("need three integers")
            return tuple(parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def read_config_file(path) -> dict:
    """key=value lines; '#' comments and blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, value)
    return values


def parse_spec(config_path, overrides: dict, mode: str, range_check: bool = True) -> ExperimentSpec:
    """Resolve defaults < config file < flag overrides into a full spec."""
    values: dict = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    for key, raw in overrides.items():
        if key not in KEY_TYPES:
            raise ConfigError(f"unknown configuration key {key!r}")
        if raw is not None:
            values[key] = _parse_value(key, raw) if isinstance(raw, str) else raw

    config = mdl.ModelConfig(
        tau=values.get("model.tau", mdl.ModelConfig.tau),
        k=values.get("graph.k", mdl.ModelConfig.k),
        s=values.get("graph.s", mdl.ModelConfig.s),
        phi=values.get("model.phi", mdl.ModelConfig.phi),
        alpha=values.get("model.alpha", mdl.ModelConfig.alpha),
        hidden=values.get("model.hidden", mdl.ModelConfig.hidden),
        heads=values.get("model.heads", mdl.ModelConfig.heads),
        layers=values.get("model.layers", mdl.ModelConfig.layers),
        lr=values.get("train.lr", mdl.ModelConfig.lr),
        wd=values.get("train.wd", mdl.ModelConfig.wd),
        epochs=values.get("train.epochs", mdl.ModelConfig.epochs),
        seed=values.get("train.seed", mdl.ModelConfig.seed),
        grad_clip=values.get("train.grad_clip", None),
    )
    indicators = values.get("data.indicators", list(md.DEFAULT_INDICATORS))
    config.f = len(indicators)
    config.validate(strict_ranges=range_check)

    seeds = values.get("train.seeds", [config.seed])
    if not seeds:
        raise ConfigError("seed list must not be empty")
    return ExperimentSpec(
        mode=mode,
        manifest=values.get("data.manifest"),
        out_dir=values.get("out.dir", "runs/latest"),
        config=config,
        seeds=seeds,
        indicators=indicators,
        ratios=values.get("data.ratios", DEFAULT_RATIOS),
        range_check=range_check,
    )


def write_resolved_spec(spec: ExperimentSpec, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "spec_resolved.json").write_text(
        json.dumps(spec.resolved(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_datasets(spec: ExperimentSpec, graph_source: str = "energy"):
    """Panel pipeline shared by all data-driven commands; graph_source is
    'energy' (dynamic) or 'sector' (static, for ablations)."""
    if spec.manifest is None:
        raise ConfigError(f"mode {spec.mode!r} requires a dataset manifest (data.manifest / --manifest)")
    panel = md.load_panel(spec.manifest, min_days=spec.config.tau + spec.config.phi)
    panel = md.select_indicators(panel, spec.indicators)
    if graph_source == "sector":
        if not panel.sectors or any(t not in panel.sectors for t in panel.tickers):
            raise ConfigError("sector graph requested but the manifest lacks sector entries")
        splits = md.split_periods(panel, spec.ratios, spec.config.tau, spec.config.phi)
        norm = md.normalize(panel, splits)
        adjacency = eg.sector_adjacency(panel.sectors, panel.tickers)
        out = {}
        for name, ts in (("train", splits.train), ("validation", splits.validation),
                         ("test", splits.test)):
            samples = []
            for t in ts:
                ws = md.build_sample(norm, t, spec.config.tau, spec.config.phi, spec.config.alpha)
                snap = eg.GraphSnapshot(t=t, features=ws.features, adjacency=adjacency,
                                        k=spec.config.k, tau=spec.config.tau,
                                        threshold=spec.config.s)
                samples.append(mdl.Sample(snapshot=snap, labels=ws.labels))
            out[name] = samples
        return panel, out
    return panel, mdl.build_datasets(panel, spec.config, spec.ratios)


def _write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def train_one(spec: ExperimentSpec, seed: int, datasets, out_dir: Path,
              label: str = "") -> dict:
    """One seeded training run; writes history, metrics and checkpoint."""
    config = dataclasses.replace(spec.config, seed=seed)
    result = mdl.train(datasets["train"], datasets["validation"], config)
    test = mt.evaluate(result.params, datasets["test"]) if datasets["test"] else None
    suffix = f"{label}_seed{seed}" if label else f"seed{seed}"
    _write_history(result.history, out_dir / f"history_{suffix}.jsonl")
    mdl.save_model(result.params, out_dir / f"model_{suffix}.bin")
    record = {
        "seed": seed,
        "label": label or "train",
        "best_epoch": result.best_epoch,
        "val_acc": result.best_val_acc,
        "parameters": result.params.parameter_count(),
        "test": test,
    }
    (out_dir / f"metrics_{suffix}.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return record


def summarize(records: list[dict], metric_path=("test", "acc")) -> dict:
    def get(rec):
        value = rec
        for key in metric_path:
            value = value[key]
        return value
    values = np.array([get(r) for r in records], dtype=float)
    return {"mean": float(values.mean()), "std": float(values.std()),  # population std
            "n": len(records)}


def cmd_train(spec: ExperimentSpec) -> int:
    out_dir = Path(spec.out_dir)
    write_resolved_spec(spec, out_dir)
    _, datasets = load_datasets(spec)
    records = [train_one(spec, seed, datasets, out_dir) for seed in spec.seeds]
    summary = {
        "acc": summarize(records, ("test", "acc")),
        "mcc": summarize(records, ("test", "mcc")),
        "f1": summarize(records, ("test", "f1")),
        "records": records,
    }
    (out_dir / "run_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for name in ("acc", "mcc", "f1"):
        s = summary[name]
        print(f"test {name}: {s['mean']:.4f} +- {s['std']:.4f} over {s['n']} seed(s)")
    return 0


def cmd_eval(spec: ExperimentSpec, model_path: str) -> int:
    params = mdl.load_model(model_path)
    eval_spec = dataclasses.replace(spec, config=params.config)
    out_dir = Path(spec.out_dir)
    write_resolved_spec(eval_spec, out_dir)
    _, datasets = load_datasets(eval_spec)
    record = mt.evaluate(params, datasets["test"])
    (out_dir / "metrics_eval.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(record, sort_keys=True))
    return 0


ABLATION_VARIANTS = [
    # (label, graph source, parallel attention); the four module toggles
    ("energy_attn", "energy", True),
    ("energy_plain", "energy", False),
    ("sector_plain", "sector", False),
    ("sector_attn", "sector", True),
]


def cmd_ablate(spec: ExperimentSpec) -> int:
    out_dir = Path(spec.out_dir)
    write_resolved_spec(spec, out_dir)
    by_source = {
        "energy": load_datasets(spec, "energy")[1],
        "sector": load_datasets(spec, "sector")[1],  # fails fast if sectors missing
    }
    table: dict[str, list[dict]] = {}
    for label, source, parallel in ABLATION_VARIANTS:
        variant_spec = dataclasses.replace(
            spec, config=dataclasses.replace(spec.config, parallel_attention=parallel))
        records = [train_one(variant_spec, seed, by_source[source], out_dir, label=label)
                   for seed in spec.seeds]
        table[label] = records
    report = {
        "seeds": spec.seeds,
        "variants": {
            label: {
                "graph": source,
                "parallel_attention": parallel,
                "parameters": table[label][0]["parameters"],
                "val_acc": summarize(table[label], ("val_acc",)),
                "test_acc": summarize(table[label], ("test", "acc")),
            }
            for label, source, parallel in ABLATION_VARIANTS
        },
    }
    (out_dir / "ablation.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{'variant':>14} {'graph':>7} {'attn':>5} {'params':>8} {'val acc':>16} {'test acc':>16}")
    for label, source, parallel in ABLATION_VARIANTS:
        v = report["variants"][label]
        print(f"{label:>14} {source:>7} {str(parallel):>5} {v['parameters']:>8} "
              f"{v['val_acc']['mean']:.4f} +- {v['val_acc']['std']:.4f} "
              f"{v['test_acc']['mean']:.4f} +- {v['test_acc']['std']:.4f}")
    return 0


def cmd_sweep(spec: ExperimentSpec, axis: str, grid_raw: str) -> int:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    key, kind = SWEEP_AXES[axis]
    grid = [
        _parse_value(key, part.strip())
        for part in grid_raw.split(",") if part.strip()
    ]
    if not grid:
        raise ConfigError("sweep grid must not be empty")
    out_dir = Path(spec.out_dir)
    write_resolved_spec(spec, out_dir)
    rows = []
    for value in grid:
        value_spec = dataclasses.replace(
            spec, config=dataclasses.replace(spec.config, **{_axis_field(axis): value}))
        value_spec.config.validate(strict_ranges=spec.range_check)
        _, datasets = load_datasets(value_spec)
        for seed in spec.seeds:
            record = train_one(value_spec, seed, datasets, out_dir, label=f"{axis}{value}")
            rows.append((value, seed, record["test"]["acc"], record["test"]["mcc"],
                         record["test"]["f1"]))
    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("axis_value,seed,acc,mcc,f1\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
    summary = sweep_summary(rows)
    (out_dir / "sweep_summary.json").write_text(
        json.dumps({"axis": axis, "values": summary}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    for value, stats in summary.items():
        print(f"{axis}={value}: acc {stats['acc']['mean']:.4f} +- {stats['acc']['std']:.4f}")
    return 0


def _axis_field(axis: str) -> str:
    return {"tau": "tau", "k": "k", "s": "s", "heads": "heads", "layers": "layers"}[axis]


def sweep_summary(rows) -> dict:
    """Per-axis-value mean/std (population) of each metric."""
    summary: dict = {}
    for value in sorted({row[0] for row in rows}):
        chunk = [row for row in rows if row[0] == value]
        summary[str(value)] = {
            name: {"mean": float(np.mean([row[i] for row in chunk])),
                   "std": float(np.std([row[i] for row in chunk]))}
            for name, i in (("acc", 2), ("mcc", 3), ("f1", 4))
        }
    return summary


def read_sweep_csv(path) -> list[tuple]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "axis_value,seed,acc,mcc,f1":
            raise DataError(f"unexpected sweep CSV header in {path}")
        for line in fh:
            value, seed, acc, mcc, f1 = line.strip().split(",")
            rows.append((_maybe_number(value), int(seed), float(acc), float(mcc), float(f1)))
    return rows


def _maybe_number(raw: str):
    try:
        f = float(raw)
        return int(f) if f.is_integer() and "." not in raw else f
    except ValueError:
        return raw


def cmd_graphgen(spec: ExperimentSpec, t: int | None) -> int:
    out_dir = Path(spec.out_dir)
    write_resolved_spec(spec, out_dir)
    if spec.manifest is None:
        raise ConfigError("graphgen requires a dataset manifest")
    panel = md.load_panel(spec.manifest, min_days=spec.config.tau + spec.config.phi)
    panel = md.select_indicators(panel, spec.indicators)
    splits = md.split_periods(panel, spec.ratios, spec.config.tau, spec.config.phi)
    norm = md.normalize(panel, splits)
    if t is None:
        t = splits.train[-1]
    ws = md.build_sample(norm, t, spec.config.tau, spec.config.phi, spec.config.alpha)
    snap = eg.snapshot(t, ws.features, spec.config.k, spec.config.tau, spec.config.s)
    edges = eg.export_edges(snap.adjacency, panel.tickers, out_dir / f"edges_t{t}.tsv")
    eg.export_dense(snap.adjacency, panel.tickers, out_dir / f"adjacency_t{t}.csv")
    print(f"t={t} ({panel.dates[t]}): {edges} edges -> {out_dir / f'edges_t{t}.tsv'}")
    return 0


def cmd_synth(out: str, n: int, days: int, f: int, seed: int, rule: str) -> int:
    if f != len(md.DEFAULT_INDICATORS):
        raise ConfigError(
            f"synthetic datasets carry the full CSV schema; F is fixed at "
            f"{len(md.DEFAULT_INDICATORS)} by the default selection, got {f}")
    rule_spec = synth.RuleSpec(rule_id=rule)
    manifest = synth.write_dataset(out, n, days, seed, rule_spec)
    resolved = {"mode": "synth", "out": str(out), "n": n, "days": days, "f": f,
                "seed": seed, "rule": dataclasses.asdict(rule_spec)}
    (Path(out) / "spec_resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(manifest)
    return 0


def cmd_report(run_dir: str) -> int:
    run_dir = Path(run_dir)
    files = sorted(run_dir.rglob("metrics_*seed*.json"))
    records = []
    for path in files:
        blob = json.loads(path.read_text(encoding="utf-8"))
        if blob.get("test"):
            records.append(blob)
    if not records:
        raise DataError(f"no per-seed metrics files under {run_dir}")
    by_label: dict[str, list[dict]] = {}
    for record in records:
        by_label.setdefault(record.get("label", "train"), []).append(record)
    summary = {
        label: {name: summarize(chunk, ("test", name)) for name in ("acc", "mcc", "f1")}
        for label, chunk in sorted(by_label.items())
    }
    (run_dir / "report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{'label':>14} {'n':>3} {'acc':>18} {'mcc':>18} {'f1':>18}")
    for label, stats in summary.items():
        cells = " ".join(f"{stats[m]['mean']:.4f} +- {stats[m]['std']:.4f}" for m in ("acc", "mcc", "f1"))
        print(f"{label:>14} {stats['acc']['n']:>3} {cells}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1
        raise ConfigError(message)


FLAG_TO_KEY = {
    "manifest": "data.manifest",
    "indicators": "data.indicators",
    "ratios": "data.ratios",
    "k": "graph.k",
    "s": "graph.s",
    "tau": "model.tau",
    "hidden": "model.hidden",
    "heads": "model.heads",
    "layers": "model.layers",
    "phi": "model.phi",
    "lr": "train.lr",
    "wd": "train.wd",
    "epochs": "train.epochs",
    "seed": "train.seed",
    "seeds": "train.seeds",
    "grad_clip": "train.grad_clip",
    "out": "out.dir",
}


def _add_common_flags(sub):
    sub.add_argument("--config", default=None, help="key=value configuration file")
    sub.add_argument("--manifest", default=None)
    sub.add_argument("--out", default=None)
    sub.add_argument("--indicators", default=None, help="comma-separated channel names")
    sub.add_argument("--ratios", default=None, help="train:validation:test, e.g. 457:63:261")
    sub.add_argument("--tau", default=None)
    sub.add_argument("--k", default=None)
    sub.add_argument("--s", default=None)
    sub.add_argument("--hidden", default=None)
    sub.add_argument("--heads", default=None)
    sub.add_argument("--layers", default=None)
    sub.add_argument("--phi", default=None)
    sub.add_argument("--lr", default=None)
    sub.add_argument("--wd", default=None)
    sub.add_argument("--epochs", default=None)
    sub.add_argument("--seed", default=None)
    sub.add_argument("--seeds", default=None, help="comma-separated seed list")
    sub.add_argument("--grad-clip", dest="grad_clip", default=None)
    sub.add_argument("--no-range-check", action="store_true",
                     help="permit hyperparameters outside the documented ranges")


def build_parser() -> _Parser:
    parser = _Parser(prog="trendgat", description=__doc__)
    subs = parser.add_subparsers(dest="mode", required=True)
    for mode in ("train", "ablate", "graphgen"):
        _add_common_flags(subs.add_parser(mode))
    evalp = subs.add_parser("eval")
    _add_common_flags(evalp)
    evalp.add_argument("--model", required=True, help="model checkpoint to evaluate")
    sweep = subs.add_parser("sweep")
    _add_common_flags(sweep)
    sweep.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sweep.add_argument("--grid", required=True, help="comma-separated grid values")
    subs.choices["graphgen"].add_argument("--t", type=int, default=None,
                                          help="time index (default: last training day)")
    synthp = subs.add_parser("synth")
    synthp.add_argument("--out", required=True)
    synthp.add_argument("--n", type=int, default=20)
    synthp.add_argument("--days", type=int, default=600)
    synthp.add_argument("--f", type=int, default=4)
    synthp.add_argument("--seed", type=int, default=0)
    synthp.add_argument("--rule", default="momentum-v1")
    reportp = subs.add_parser("report")
    reportp.add_argument("--dir", required=True, help="run directory to aggregate")
    return parser


def spec_from_args(args) -> ExperimentSpec:
    overrides = {}
    for flag, key in FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return parse_spec(args.config, overrides, args.mode,
                      range_check=not getattr(args, "no_range_check", False))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.mode == "synth":
            return cmd_synth(args.out, args.n, args.days, args.f, args.seed, args.rule)
        if args.mode == "report":
            return cmd_report(args.dir)
        spec = spec_from_args(args)
        if args.mode == "train":
            return cmd_train(spec)
        if args.mode == "eval":
            return cmd_eval(spec, args.model)
        if args.mode == "ablate":
            return cmd_ablate(spec)
        if args.mode == "sweep":
            return cmd_sweep(spec, args.axis, args.grid)
        if args.mode == "graphgen":
            return cmd_graphgen(spec, args.t)
        raise ConfigError(f"unknown mode {args.mode!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
