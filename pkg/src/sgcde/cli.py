"""Command-line entry point: simulate, filter, train, eval, export-plot, verify, pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dynamics as dyn
from .config import ExperimentConfig, load_config, write_echo
from .errors import ConfigError, IoError, SgcdeError

log = logging.getLogger("sgcde")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


# paths


def _output(out: Path, name: str) -> Path:
    """Resolve an output file under the output directory; refuse to write elsewhere."""
    p = Path(name)
    if not p.is_absolute():
        return out / p
    try:
        p.resolve().relative_to(out.resolve())
    except ValueError:
        raise ConfigError(f"{p} lies outside the output directory {out}") from None
    return p


def _input(out: Path, name: Optional[str], what: str) -> Path:
    if not name:
        raise ConfigError(f"missing {what} path")
    for cand in (Path(name), out / name):
        if cand.is_file():
            return cand
    raise ConfigError(f"{what} {name} not found")


def _prepare(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    root = logging.getLogger("sgcde")
    target = str((out / "sgcde.log").resolve())
    if not any(getattr(h, "baseFilename", None) == target for h in root.handlers):
        fh = logging.FileHandler(target)
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def _read_records(path: Path) -> list[dict]:
    try:
        return dyn.read_jsonl(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read dataset {path}: {exc}") from exc


def _split(records: list[dict], name: str) -> list[dict]:
    if name == "all" or not any("split" in r for r in records):
        return records
    return [r for r in records if r.get("split") == name]


def _torch_setup():
    import torch

    torch.set_num_threads(1)
    return torch


# stages


def simulate(cfg: ExperimentConfig, out: Path, data_name: str = "data.jsonl") -> Path:
    path = _output(out, data_name)
    _prepare(out)
    records = dyn.generate_dataset(cfg.data)
    dyn.write_jsonl(records, path, meta=dyn.dataset_meta(cfg.data))
    log.info("wrote %d trajectories to %s", len(records), path)
    return path


def filter_data(data: Path, out: Path, output_name: str, window: int, order: int) -> tuple[Path, dict]:
    from . import so3
    from .sgfilter import smooth_trajectory

    records = _read_records(data)
    path = _output(out, output_name)
    _prepare(out)
    raw_err, smooth_err = [], []
    with open(path, "w") as fh:
        for rec in records:
            tr = dyn.record_to_trajectory(rec)
            smoothed, omega = smooth_trajectory(tr.t, tr.noisy, window // 2, order)
            raw_err.append(np.degrees(so3.rge(tr.noisy, tr.clean)).mean())
            smooth_err.append(np.degrees(so3.rge(smoothed, tr.clean)).mean())
            fh.write(json.dumps({"id": tr.id, "t": tr.t.tolist(), "smoothed": smoothed.reshape(-1, 9).tolist(),
                                 "omega_world": omega.tolist()}) + "\n")
    summary = {"window": window, "order": order, "n": len(records),
               "noisy_rge_deg": float(np.mean(raw_err)), "smoothed_rge_deg": float(np.mean(smooth_err))}
    (out / (Path(output_name).stem + "_summary.json")).write_text(json.dumps(summary, indent=2) + "\n")
    return path, summary


def train_model(cfg: ExperimentConfig, data: Path, out: Path, ckpt_name: str = "model.json") -> tuple[Path, list[dict]]:
    torch = _torch_setup()
    from . import checkpoint
    from .model import CdeModel
    from .plotting import plot_training
    from .training import train

    records = _read_records(data)
    train_recs, val_recs = _split(records, "train"), [r for r in records if r.get("split") == "val"]
    if not train_recs:
        raise ConfigError(f"{data} has no training trajectories")
    ckpt = _output(out, ckpt_name)
    _prepare(out)
    torch.manual_seed(cfg.seed)
    model = CdeModel(cfg.model, seed=cfg.seed)
    history = train(model, train_recs, cfg.train, val_recs)
    checkpoint.save(model, ckpt, extra=cfg.to_dict())
    (out / "history.json").write_text(json.dumps(history) + "\n")
    plot_training(history, out / "training.png")
    log.info("final train loss %.4f", history[-1]["train_loss"])
    return ckpt, history


def eval_models(cfg: ExperimentConfig, data: Path, out: Path, ckpt: Optional[Path], report_name: str = "report.json", split: str = "test"):
    from .evaluate import baseline_methods, cde_method, evaluate
    from .plotting import plot_nfe, plot_rge

    records = _split(_read_records(data), split)
    if not records:
        raise ConfigError(f"{data} has no '{split}' trajectories")
    methods = {}
    if ckpt is not None:
        _torch_setup()
        from . import checkpoint

        model = checkpoint.load(ckpt)
        name = "sg-ncde" if model.cfg.path == "sg" else "hermite-ncde"
        methods[name] = cde_method(model, cfg.eval.solver, cfg.eval.rtol, cfg.eval.atol, cfg.eval.dt)
    methods.update(baseline_methods(cfg.eval, cfg.baselines))
    report_path = _output(out, report_name)
    _prepare(out)
    report = evaluate(methods, records, cfg.eval)
    report.write_json(report_path)
    text = report.text_table()
    report_path.with_suffix(".txt").write_text(text)
    plot_rge(report, report_path.with_name(report_path.stem + "_rge.png"))
    plot_nfe(report, report_path.with_name(report_path.stem + "_nfe.png"))
    return report_path, report


def export_plots(report_path: Path, out: Path, data: Optional[Path] = None) -> list[Path]:
    from .evaluate import EvalReport
    from .plotting import export_csv, export_projections, plot_nfe, plot_rge, plot_s2

    report = EvalReport.read_json(report_path)
    records = _read_records(data) if data is not None else None
    _prepare(out)
    paths = export_csv(report, out)
    paths.append(plot_rge(report, out / "rge.png"))
    nfe = plot_nfe(report, out / "nfe.png")
    if nfe is not None:
        paths.append(nfe)
    if records:
        paths += export_projections(records, out)
        paths.append(plot_s2(records, out / "s2.png"))
    return paths


def run_pipeline(cfg: ExperimentConfig) -> dict[str, Path]:
    """simulate -> train -> eval -> export, all under ``cfg.out``."""
    out = Path(cfg.out)
    _prepare(out)
    write_echo(cfg, out / "config.json", {"command": "pipeline"})
    data = simulate(cfg, out)
    ckpt, _ = train_model(cfg, data, out)
    report_path, _ = eval_models(cfg, data, out, ckpt)
    exports = export_plots(report_path, out / "csv", data)
    return {"data": data, "checkpoint": ckpt, "report": report_path, "exports": out / "csv", "n_exports": len(exports)}


# argument parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed")
    p.add_argument("--config", default=argparse.SUPPRESS, help="TOML experiment file")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=JSON",
                   help="override a config value, e.g. train.steps=50")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="sgcde", parents=[common], description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a rigid-body dataset")
    p.add_argument("--scenario")
    p.add_argument("--count", type=int)
    p.add_argument("--delta", type=float, help="noise level in radians")
    p.add_argument("--workers", type=int)
    p.add_argument("--data", default="data.jsonl", help="output JSONL (under --out)")

    p = sub.add_parser("filter", parents=[common], help="SG-smooth noisy trajectories")
    p.add_argument("--data", required=False)
    p.add_argument("--window", type=int, default=13)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--output", default="filtered.jsonl")

    p = sub.add_parser("train", parents=[common], help="train a neural CDE")
    p.add_argument("--data")
    p.add_argument("--order", type=int, choices=(1, 2))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--latent", type=int)
    p.add_argument("--path", choices=("sg", "hermite"))
    p.add_argument("--ckpt", default="model.json")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint and baselines")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--horizons", help="comma-separated seconds, e.g. 0.8,1.2")
    p.add_argument("--baselines", help="comma-separated subset of cv,sg,conservational or 'none'")
    p.add_argument("--solver", choices=("dopri45", "rk4"))
    p.add_argument("--split", default="test", help="dataset split to evaluate, or 'all'")
    p.add_argument("--report", default="report.json")

    p = sub.add_parser("export-plot", parents=[common], help="CSV and figure export of a report")
    p.add_argument("--report", required=False)
    p.add_argument("--data", help="dataset for S^2 trajectory projections")

    p = sub.add_parser("verify", parents=[common], help="run the named invariant checks")
    p.add_argument("--ckpt", help="also validate this checkpoint file")
    p.add_argument("--only", help="comma-separated check names")

    sub.add_parser("pipeline", parents=[common], help="simulate, train, eval and export in one run")
    return ap


def _cli_overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        o["out"] = args.out
    data = {k: getattr(args, k, None) for k in ("scenario", "count", "delta", "workers")}
    model = {"order": getattr(args, "order", None) if args.command == "train" else None,
             "latent": getattr(args, "latent", None), "path": getattr(args, "path", None)}
    train = {"steps": getattr(args, "steps", None), "lr": getattr(args, "lr", None),
             "batch_size": getattr(args, "batch_size", None)}
    ev = {"solver": getattr(args, "solver", None)}
    if getattr(args, "horizons", None):
        try:
            ev["horizons"] = [float(h) for h in args.horizons.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --horizons {args.horizons!r}") from exc
    for name, sec in (("data", data), ("model", model), ("train", train), ("eval", ev)):
        sec = {k: v for k, v in sec.items() if v is not None}
        if sec:
            o[name] = sec
    if getattr(args, "baselines", None):
        o["baselines"] = [] if args.baselines == "none" else args.baselines.split(",")
    return o


def _dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(getattr(args, "config", None), getattr(args, "set", []) or [], cli=_cli_overrides(args))
    if args.command == "train" and getattr(args, "seed", None) is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    out = Path(cfg.out)
    cmd = args.command

    if cmd == "verify":
        from .verify import check_names, format_table, run_checks

        names = args.only.split(",") if args.only else None
        if names and set(names) - set(check_names()):
            raise ConfigError(f"unknown checks {sorted(set(names) - set(check_names()))}")
        results = run_checks(cfg.seed, names, args.ckpt)
        sys.stdout.write(format_table(results))
        return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY

    if cmd == "simulate":
        path = simulate(cfg, out, args.data)
        write_echo(cfg, out / "simulate_config.json", vars(args))
        print(path)
    elif cmd == "filter":
        data = _input(out, args.data, "dataset")
        path, summary = filter_data(data, out, args.output, args.window, args.order)
        write_echo(cfg, out / "filter_config.json", vars(args))
        print(json.dumps(summary))
    elif cmd == "train":
        data = _input(out, args.data, "dataset")
        ckpt, history = train_model(cfg, data, out, args.ckpt)
        write_echo(cfg, out / "train_config.json", vars(args))
        print(f"{ckpt}  final loss {history[-1]['train_loss']:.4f}")
    elif cmd == "eval":
        data = _input(out, args.data, "dataset")
        ckpt = _input(out, args.ckpt, "checkpoint") if args.ckpt else None
        path, report = eval_models(cfg, data, out, ckpt, args.report, args.split)
        write_echo(cfg, out / "eval_config.json", vars(args))
        sys.stdout.write(report.text_table())
    elif cmd == "export-plot":
        report = _input(out, args.report, "report")
        data = _input(out, args.data, "dataset") if args.data else None
        paths = export_plots(report, out, data)
        print("\n".join(map(str, paths)))
    elif cmd == "pipeline":
        arts = run_pipeline(cfg)
        print(json.dumps({k: str(v) for k, v in arts.items()}, indent=2))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("sgcde")
    root.setLevel(logging.INFO)
    root.handlers = [h for h in root.handlers if not type(h) is logging.StreamHandler] + [console]
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SgcdeError, ArithmeticError) as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
