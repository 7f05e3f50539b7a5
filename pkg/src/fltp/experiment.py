"""Sweep execution: every (method, penetration, vehicle count, repeat) cell
runs on its own deterministically derived seed, methods within a cell share
the scenario, and all artifacts are byte-reproducible for any worker count."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .federated import (
    EvalSet,
    VehicleData,
    evaluate_global,
    run_fedavg_round,
    run_flt_round,
    save_checkpoint,
)
from .metrics import RoundReport
from .model import ModelParams, train_local
from .seeding import TAG_CELL, TAG_INIT, TAG_SCENARIO, TAG_TRAIN, derive_rng, derive_seed
from .simulate import assemble_datasets, pooled_training_set
from .trace import generate_scenario

log = logging.getLogger(__name__)

ROUNDS_HEADER = [
    "run_id",
    "method",
    "penetration",
    "n_vehicles",
    "repeat",
    "round",
    "mode",
    "pred_error_m",
    "atk_accuracy",
    "loss",
]

SUMMARY_HEADER = [
    "method",
    "penetration",
    "n_vehicles",
    "repeats",
    "final_round",
    "acc_mean",
    "acc_std",
    "err_mean",
    "err_std",
    "acc_improvement_pct",
    "err_improvement_pct",
]


@dataclass(frozen=True)
class SweepCell:
    method: str
    penetration: float
    n_vehicles: int
    repeat: int
    pen_idx: int
    veh_idx: int

    @property
    def run_id(self) -> str:
        return f"{self.method}_p{self.penetration:g}_v{self.n_vehicles}_rep{self.repeat}"


def cell_seed(master_seed: int, pen_idx: int, veh_idx: int, repeat: int) -> int:
    """Per-cell seed. Method identity is deliberately excluded so all methods
    of a cell share scenario, datasets, and initialization."""
    return derive_seed(master_seed, TAG_CELL, pen_idx, veh_idx, repeat)


def accuracy_improvement_pct(value: float, baseline: float) -> float:
    """Relative accuracy gain over a baseline, in percent."""
    if baseline <= 0:
        raise ValueError(f"baseline accuracy must be > 0, got {baseline}")
    return (value - baseline) / baseline * 100.0


def error_improvement_pct(value: float, baseline: float) -> float:
    """Relative error reduction against a baseline, in percent."""
    if baseline <= 0:
        raise ValueError(f"baseline error must be > 0, got {baseline}")
    return (baseline - value) / baseline * 100.0


def build_cell_data(cfg: ExperimentConfig, penetration: float, n_vehicles: int, seed: int):
    """Scenario + datasets + initial model for one cell seed."""
    scen_cfg = replace(
        cfg.scenario,
        n_vehicles=n_vehicles,
        penetration=penetration,
        rng_seed=derive_seed(seed, TAG_SCENARIO),
    )
    scenario = generate_scenario(scen_cfg)
    vehicles, eval_set = assemble_datasets(scenario, cfg.attack, cfg.norm, cfg.train_fraction)
    initial = ModelParams.init(cfg.train.hidden_size, derive_rng(seed, TAG_INIT))
    return scenario, vehicles, eval_set, initial


def run_method_rounds(
    cfg: ExperimentConfig,
    method: str,
    vehicles: list[VehicleData],
    eval_set: EvalSet,
    initial: ModelParams,
    seed: int,
    checkpoint_dir: Path | None = None,
) -> list[RoundReport]:
    """Drive one method over cfg.train.global_rounds rounds on prepared data."""
    params = initial.copy()
    prev_accuracy = 0.0
    reports: list[RoundReport] = []
    if method == "centralized":
        pooled_x, pooled_y = pooled_training_set(vehicles)

    for round_idx in range(1, cfg.train.global_rounds + 1):
        if method == "fl-tp":
            params, report = run_flt_round(
                params,
                vehicles,
                eval_set,
                round_idx=round_idx,
                prev_accuracy=prev_accuracy,
                gate=cfg.gate,
                influence=cfg.influence,
                train=cfg.train,
                norm=cfg.norm,
                seed=seed,
                judgment_threshold=cfg.judgment_threshold,
            )
        elif method == "fed-avg":
            params, report = run_fedavg_round(
                params,
                vehicles,
                eval_set,
                round_idx=round_idx,
                train=cfg.train,
                norm=cfg.norm,
                seed=seed,
                judgment_threshold=cfg.judgment_threshold,
            )
        elif method == "centralized":
            t0 = time.perf_counter()
            params, _ = train_local(
                params,
                pooled_x,
                pooled_y,
                episodes=cfg.train.local_episodes,
                batch_size=cfg.train.batch_size,
                learning_rate=cfg.train.learning_rate,
                momentum=cfg.train.momentum,
                rng=derive_rng(seed, TAG_TRAIN, round_idx, 0),
            )
            err, acc, per_type, loss_value = evaluate_global(
                params, eval_set, cfg.norm, cfg.judgment_threshold
            )
            report = RoundReport(
                round_idx=round_idx,
                method="centralized",
                mode="centralized",
                prediction_error=err,
                prediction_accuracy=acc,
                loss=loss_value,
                per_type_accuracy=per_type,
                wall_clock_s=time.perf_counter() - t0,
            )
        else:
            raise ValueError(f"unknown method: {method!r}")
        prev_accuracy = report.prediction_accuracy
        reports.append(report)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, round_idx, params, report)
    return reports


def run_cell(cfg: ExperimentConfig, cell: SweepCell) -> list[RoundReport]:
    seed = cell_seed(cfg.master_seed, cell.pen_idx, cell.veh_idx, cell.repeat)
    _, vehicles, eval_set, initial = build_cell_data(cfg, cell.penetration, cell.n_vehicles, seed)
    checkpoint_dir = None
    if cfg.checkpoints:
        checkpoint_dir = Path(cfg.out_dir) / "checkpoints" / cell.run_id
    t0 = time.perf_counter()
    reports = run_method_rounds(cfg, cell.method, vehicles, eval_set, initial, seed, checkpoint_dir)
    log.info("cell %s finished in %.1fs", cell.run_id, time.perf_counter() - t0)
    return reports


def _fmt(x: float) -> str:
    return repr(float(x))


def write_rounds_csv(path: Path, cell: SweepCell, reports: list[RoundReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_HEADER)
        for rep in reports:
            writer.writerow(
                [
                    cell.run_id,
                    cell.method,
                    _fmt(cell.penetration),
                    cell.n_vehicles,
                    cell.repeat,
                    rep.round_idx,
                    rep.mode,
                    _fmt(rep.prediction_error),
                    _fmt(rep.prediction_accuracy),
                    _fmt(rep.loss),
                ]
            )


def sweep_cells(cfg: ExperimentConfig) -> list[SweepCell]:
    cells = []
    for method in cfg.methods:
        for pen_idx, pen in enumerate(cfg.penetrations):
            for veh_idx, n_veh in enumerate(cfg.vehicle_counts):
                for repeat in range(cfg.repeats):
                    cells.append(SweepCell(method, pen, n_veh, repeat, pen_idx, veh_idx))
    return cells


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[Path]:
    """Execute the full sweep; returns the paths of all files written.

    Cells may run on several worker threads; outputs are identical for any
    worker count because every cell is seeded and written independently and
    the summary is assembled in canonical cell order.
    """
    cfg.validate()
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(cfg)

    if threads == 1:
        all_reports = [run_cell(cfg, cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_reports = list(pool.map(lambda c: run_cell(cfg, c), cells))

    written: list[Path] = []
    for cell, reports in zip(cells, all_reports):
        path = out_dir / f"rounds_{cell.run_id}.csv"
        write_rounds_csv(path, cell, reports)
        written.append(path)

    final_rows = [
        {
            "method": cell.method,
            "penetration": cell.penetration,
            "n_vehicles": cell.n_vehicles,
            "repeat": cell.repeat,
            "round": reports[-1].round_idx,
            "pred_error_m": reports[-1].prediction_error,
            "atk_accuracy": reports[-1].prediction_accuracy,
        }
        for cell, reports in zip(cells, all_reports)
    ]
    summary_path = out_dir / "summary.csv"
    write_summary_csv(summary_path, final_rows)
    written.append(summary_path)
    return written


def write_summary_csv(path: Path, final_rows: list[dict]) -> None:
    """Aggregate final-round rows into one row per (method, penetration,
    n_vehicles) with mean/std across repeats and improvement-over-centralized
    columns (nan when no centralized baseline exists for the group)."""
    groups: dict[tuple[str, float, int], list[dict]] = {}
    for row in final_rows:
        groups.setdefault((row["method"], row["penetration"], row["n_vehicles"]), []).append(row)

    stats: dict[tuple[str, float, int], dict] = {}
    for key, rows in groups.items():
        accs = np.array([r["atk_accuracy"] for r in rows], dtype=float)
        errs = np.array([r["pred_error_m"] for r in rows], dtype=float)
        stats[key] = {
            "repeats": len(rows),
            "final_round": max(r["round"] for r in rows),
            "acc_mean": float(accs.mean()),
            "acc_std": float(accs.std(ddof=1)) if len(rows) >= 2 else float("nan"),
            "err_mean": float(errs.mean()),
            "err_std": float(errs.std(ddof=1)) if len(rows) >= 2 else float("nan"),
        }

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for (method, pen, n_veh), st in sorted(
            stats.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])
        ):
            base = stats.get(("centralized", pen, n_veh))
            acc_gain = (
                accuracy_improvement_pct(st["acc_mean"], base["acc_mean"])
                if base is not None and base["acc_mean"] > 0
                else float("nan")
            )
            err_gain = (
                error_improvement_pct(st["err_mean"], base["err_mean"])
                if base is not None and base["err_mean"] > 0
                else float("nan")
            )
            writer.writerow(
                [
                    method,
                    _fmt(pen),
                    n_veh,
                    st["repeats"],
                    st["final_round"],
                    _fmt(st["acc_mean"]),
                    _fmt(st["acc_std"]),
                    _fmt(st["err_mean"]),
                    _fmt(st["err_std"]),
                    _fmt(acc_gain),
                    _fmt(err_gain),
                ]
            )


def export_summary(rounds_dir: str | Path, out_file: str | Path) -> Path:
    """Rebuild the summary from the per-round CSV files in a directory."""
    rounds_dir = Path(rounds_dir)
    files = sorted(rounds_dir.glob("rounds_*.csv"))
    if not files:
        raise ValueError(f"no rounds_*.csv files under {rounds_dir}")
    final_by_run: dict[str, dict] = {}
    for path in files:
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                row = {
                    "method": rec["method"],
                    "penetration": float(rec["penetration"]),
                    "n_vehicles": int(rec["n_vehicles"]),
                    "repeat": int(rec["repeat"]),
                    "round": int(rec["round"]),
                    "pred_error_m": float(rec["pred_error_m"]),
                    "atk_accuracy": float(rec["atk_accuracy"]),
                }
                run_id = rec["run_id"]
                prev = final_by_run.get(run_id)
                if prev is None or row["round"] > prev["round"]:
                    final_by_run[run_id] = row
    out_file = Path(out_file)
    # Numeric sort (not run_id string sort: "rep10" < "rep2") so per-group
    # accumulation order — and therefore every output bit — matches the order
    # run_experiment feeds write_summary_csv.
    finals = sorted(
        final_by_run.values(),
        key=lambda r: (r["method"], r["penetration"], r["n_vehicles"], r["repeat"]),
    )
    write_summary_csv(out_file, finals)
    return out_file
