"""Command-line front end: generate, train, evaluate, predict, plot-data.

All commands are non-interactive, driven by a JSON run configuration plus a
few override flags, and exit nonzero with a machine-parsable "error:" line on
any failure.  A run is reproducible from its configuration and seeds alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dataset import (
    RngSeed,
    SampleSet,
    export_dataset_csv,
    failed_rows,
    generate_targets,
    load_dataset,
    sample_parameters,
    save_dataset,
)
from .dynsys import ParameterDomain, SystemSpec, circuit_system, default_domain
from .evaluation import error_stats, format_error_table, write_report_csv
from .integrator import TimeGrid, ToleranceSettings, solve_trajectory
from .neuralnet import (
    Normalizer,
    TransferKind,
    forward,
    init_weights,
    load_model,
    save_model,
)
from .training import TrainConfig, TrainMethod, train, write_training_log

_ROLES = ("train", "validation", "test")


class ConfigError(RuntimeError):
    """Invalid or inconsistent run configuration."""


@dataclasses.dataclass
class RunConfig:
    """Everything a run needs; serializable, so runs regenerate identically."""

    system: str = "circuit"
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    m: int = 200
    rtol: float = 1e-4
    atol: float = 1e-6
    n_train: int = 500
    n_validation: int = 500
    n_test: int = 500
    seed_data: int = 20250819
    seed_weights: int = 20250819
    hidden: List[int] = dataclasses.field(default_factory=lambda: [400, 400])
    transfer: str = "tansig"
    training: Dict = dataclasses.field(default_factory=dict)
    on_failure: str = "abort"
    workers: int = 1
    out: str = "run"

    @classmethod
    def from_dict(cls, doc: Dict) -> "RunConfig":
        cfg = cls()
        cfg.system = doc.get("system", cfg.system)
        domain = doc.get("domain", {})
        cfg.lower = domain.get("lower")
        cfg.upper = domain.get("upper")
        cfg.m = int(doc.get("grid", {}).get("m", cfg.m))
        tol = doc.get("tolerances", {})
        cfg.rtol = float(tol.get("rtol", cfg.rtol))
        cfg.atol = float(tol.get("atol", cfg.atol))
        samples = doc.get("samples", {})
        cfg.n_train = int(samples.get("train", cfg.n_train))
        cfg.n_validation = int(samples.get("validation", cfg.n_validation))
        cfg.n_test = int(samples.get("test", cfg.n_test))
        cfg.seed_data = int(doc.get("seed_data", cfg.seed_data))
        cfg.seed_weights = int(doc.get("seed_weights", cfg.seed_weights))
        network = doc.get("network", {})
        cfg.hidden = [int(h) for h in network.get("hidden", cfg.hidden)]
        cfg.transfer = network.get("transfer", cfg.transfer)
        cfg.training = dict(doc.get("training", {}))
        generation = doc.get("generation", {})
        cfg.on_failure = generation.get("on_failure", cfg.on_failure)
        cfg.workers = int(generation.get("workers", cfg.workers))
        cfg.out = doc.get("out", cfg.out)
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> Dict:
        doc: Dict = {
            "system": self.system,
            "grid": {"m": self.m},
            "tolerances": {"rtol": self.rtol, "atol": self.atol},
            "samples": {
                "train": self.n_train,
                "validation": self.n_validation,
                "test": self.n_test,
            },
            "seed_data": self.seed_data,
            "seed_weights": self.seed_weights,
            "network": {"hidden": list(self.hidden), "transfer": self.transfer},
            "training": dict(self.training),
            "generation": {"on_failure": self.on_failure, "workers": self.workers},
            "out": self.out,
        }
        if self.lower is not None or self.upper is not None:
            doc["domain"] = {"lower": self.lower, "upper": self.upper}
        return doc

    def resolve_system(self) -> SystemSpec:
        """Built-in circuit, or a plug-in "package.module:factory" returning
        a SystemSpec when called with no arguments."""
        if self.system == "circuit":
            return circuit_system()
        if ":" not in self.system:
            raise ConfigError(
                f"unknown system {self.system!r}; use 'circuit' or 'package.module:factory'"
            )
        mod_name, _, attr = self.system.partition(":")
        try:
            factory = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load system factory {self.system!r}: {exc}") from exc
        spec = factory()
        if not isinstance(spec, SystemSpec):
            raise ConfigError(f"{self.system!r} did not return a SystemSpec")
        return spec

    def resolve_domain(self) -> ParameterDomain:
        if self.lower is None and self.upper is None:
            if self.system == "circuit":
                return default_domain()
            raise ConfigError("plug-in systems require explicit domain bounds in the config")
        if self.lower is None or self.upper is None:
            raise ConfigError("domain needs both lower and upper bounds")
        return ParameterDomain(np.asarray(self.lower), np.asarray(self.upper))

    def tolerance_settings(self) -> ToleranceSettings:
        return ToleranceSettings(rtol=self.rtol, atol=self.atol)

    def train_config(self) -> TrainConfig:
        allowed = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(self.training) - allowed
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return TrainConfig(**self.training)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_paths(data_dir: Path) -> Dict[str, Path]:
    return {role: data_dir / f"{role}.ds" for role in _ROLES}


def _load_sets(data_dir: Path) -> Dict[str, SampleSet]:
    sets = {}
    for role, path in _dataset_paths(data_dir).items():
        if not path.exists():
            raise ConfigError(f"missing dataset file {path}; run 'generate' first")
        sets[role] = load_dataset(path)
    return sets


def cmd_generate(cfg: RunConfig, csv_export: bool = False) -> None:
    spec = cfg.resolve_system()
    domain = cfg.resolve_domain()
    grid = TimeGrid.for_system(spec, m=cfg.m)
    tol = cfg.tolerance_settings()
    out = _out_dir(cfg)

    counts = {"train": cfg.n_train, "validation": cfg.n_validation, "test": cfg.n_test}
    seed = RngSeed(cfg.seed_data, "sampling")
    all_params = sample_parameters(domain, sum(counts.values()), seed)

    start_row = 0
    for role in _ROLES:
        k = counts[role]
        params = all_params[start_row : start_row + k]
        start_row += k
        t_start = time.perf_counter()
        targets = generate_targets(
            spec, params, grid, tol, on_failure=cfg.on_failure, workers=cfg.workers
        )
        elapsed = time.perf_counter() - t_start
        bad = failed_rows(targets)
        if bad.size:
            keep = np.setdiff1d(np.arange(k), bad)
            params, targets = params[keep], targets[keep]
        sample_set = SampleSet(role, params, targets, grid, seed)
        path = _dataset_paths(out)[role]
        save_dataset(sample_set, path)
        if csv_export:
            export_dataset_csv(sample_set, path.with_suffix(".csv"))
        print(f"{role}: k={sample_set.k} written to {path} ({elapsed:.1f} s, {bad.size} failures)")

    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2))


def cmd_train(cfg: RunConfig, data_dir: Optional[str] = None) -> None:
    out = _out_dir(cfg)
    sets = _load_sets(Path(data_dir) if data_dir else out)
    train_set = sets["train"]

    norm = Normalizer.from_training(train_set.params, train_set.targets)
    sizes = [train_set.q] + list(cfg.hidden) + [train_set.grid.m]
    kind = TransferKind(cfg.transfer)
    net = init_weights(sizes, kind, RngSeed(cfg.seed_weights, "weights"))
    tcfg = cfg.train_config()

    if kind is TransferKind.HARDLIM:
        print("note: hard-limit hidden layers have zero derivative; hidden weights stay "
              "at their random initialization and only the output layer is trained")

    t_start = time.perf_counter()
    model, record = train(net, norm, train_set, sets["validation"], sets["test"], tcfg)
    elapsed = time.perf_counter() - t_start

    final = {
        role: float(np.mean((forward(model, norm, s.params) - s.targets) ** 2))
        for role, s in sets.items()
    }
    metadata = {
        "method": tcfg.method.value,
        "transfer": kind.value,
        "stop_reason": record.stop_reason.value,
        "best_epoch": record.best_epoch,
        "elapsed_epochs": record.elapsed_epochs,
        "final_mse": final,
        "seed_weights": cfg.seed_weights,
        "seed_data": cfg.seed_data,
    }
    save_model(model, norm, out / "model.tjn", metadata)
    write_training_log(record, out / "training_log.csv")
    print(
        f"trained {tcfg.method.value}/{kind.value}: {record.elapsed_epochs} epochs in "
        f"{elapsed:.1f} s, stop {record.stop_reason.value}, best epoch {record.best_epoch}"
    )
    print(
        "final MSE: "
        + ", ".join(f"{role} {final[role]:.4g}" for role in _ROLES)
    )


def cmd_evaluate(cfg: RunConfig, model_path: Optional[str] = None, data_dir: Optional[str] = None) -> None:
    out = _out_dir(cfg)
    net, norm, metadata = load_model(Path(model_path) if model_path else out / "model.tjn")
    sets = _load_sets(Path(data_dir) if data_dir else out)

    label = f"{metadata.get('method', '?')}/{metadata.get('transfer', '?')}"
    reports = {}
    for role in _ROLES:
        report = error_stats(net, norm, sets[role])
        reports[role] = report
        write_report_csv(report, out / f"errors_{role}.csv")
    table = format_error_table({label: reports})
    (out / "report.txt").write_text(table)
    print(table, end="")
    mse_line = ", ".join(f"{role} {reports[role].mse:.4g}" for role in _ROLES)
    print(f"MSE: {mse_line}")


def cmd_predict(cfg: RunConfig, params: str, compare: bool = False) -> None:
    out = _out_dir(cfg)
    net, norm, _ = load_model(out / "model.tjn")
    p = np.array([float(v) for v in params.split(",")], dtype=np.float64)

    t_start = time.perf_counter()
    y = forward(net, norm, p)
    t_forward = time.perf_counter() - t_start

    spec = cfg.resolve_system()
    grid = TimeGrid.for_system(spec, m=len(y))
    rows = np.column_stack([grid.points, y])
    np.savetxt(out / "prediction.csv", rows, delimiter=",", header="t,y", comments="", fmt="%.17g")
    print(f"forward pass: {t_forward * 1e3:.3f} ms, wrote {out / 'prediction.csv'}")

    if compare:
        t_start = time.perf_counter()
        y_ref = solve_trajectory(spec, p, grid, cfg.tolerance_settings())
        t_solve = time.perf_counter() - t_start
        rel = np.max(np.abs(y - y_ref)) / max(1e-300, float(np.max(np.abs(y_ref))))
        print(
            f"integration: {t_solve * 1e3:.1f} ms "
            f"(speedup x{t_solve / max(t_forward, 1e-12):.0f}, max rel deviation {rel:.3g})"
        )


def cmd_plot_data(cfg: RunConfig, indices: str, role: str = "test") -> None:
    out = _out_dir(cfg)
    net, norm, _ = load_model(out / "model.tjn")
    if role not in _ROLES:
        raise ConfigError(f"role must be one of {_ROLES}")
    sample_set = _load_sets(out)[role]
    idx_list = [int(v) for v in indices.split(",")]
    for idx in idx_list:
        if not 0 <= idx < sample_set.k:
            raise IndexError(f"sample index {idx} out of range [0, {sample_set.k})")
    t = sample_set.grid.points
    for idx in idx_list:
        pred = forward(net, norm, sample_set.params[idx])
        path = out / f"sample_{idx}.csv"
        with open(path, "w") as fh:
            fh.write("t,y_true,y_predicted\n")
            for row in zip(t, sample_set.targets[idx], pred):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        print(f"wrote {path}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajsurrogate",
        description="Train and evaluate neural-network surrogates of "
        "parameter-to-trajectory maps defined by DAE/ODE initial value problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration file")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed-data", type=int, help="sampling seed (overrides config)")
        sp.add_argument("--seed-weights", type=int, help="weight-init seed (overrides config)")
        sp.add_argument("--method", choices=[m.value for m in TrainMethod],
                        help="training method (overrides config)")
        sp.add_argument("--transfer", choices=[k.value for k in TransferKind],
                        help="hidden transfer function (overrides config)")

    sp = sub.add_parser("generate", help="sample parameters and solve target trajectories")
    common(sp)
    sp.add_argument("--csv", action="store_true", help="also export datasets as CSV")

    sp = sub.add_parser("train", help="train a surrogate on generated datasets")
    common(sp)
    sp.add_argument("--data", help="directory with train/validation/test .ds files")

    sp = sub.add_parser("evaluate", help="error statistics of a trained model")
    common(sp)
    sp.add_argument("--model", help="model file (default <out>/model.tjn)")
    sp.add_argument("--data", help="directory with dataset files")

    sp = sub.add_parser("predict", help="evaluate the surrogate at one parameter vector")
    common(sp)
    sp.add_argument("--params", required=True, help="comma-separated parameter values")
    sp.add_argument("--compare", action="store_true",
                    help="also integrate the system and report both timings")

    sp = sub.add_parser("plot-data", help="emit per-sample overlay CSVs for plotting")
    common(sp)
    sp.add_argument("--indices", required=True, help="comma-separated sample indices")
    sp.add_argument("--role", default="test", help="which sample set (default test)")

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg.out = args.out
    if args.seed_data is not None:
        cfg.seed_data = args.seed_data
    if args.seed_weights is not None:
        cfg.seed_weights = args.seed_weights
    if args.method is not None:
        cfg.training["method"] = args.method
    if args.transfer is not None:
        cfg.transfer = args.transfer
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "generate":
            cmd_generate(cfg, csv_export=args.csv)
        elif args.command == "train":
            cmd_train(cfg, data_dir=args.data)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, model_path=args.model, data_dir=args.data)
        elif args.command == "predict":
            cmd_predict(cfg, params=args.params, compare=args.compare)
        elif args.command == "plot-data":
            cmd_plot_data(cfg, indices=args.indices, role=args.role)
        return 0
    except Exception as exc:  # noqa: BLE001 - single exit point for the CLI
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
