"""Grid x trials experiment execution and result files.

A grid cell is the base configuration with one value substituted from each
sweep list (the cartesian product).  Trial ``t`` of cell ``c`` runs with
seed ``derive_seed(base.seed, c, t)``, so any single trial can be re-run in
isolation from the results file.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

from ..core import Algorithm, ConfigError, SimConfig, Variant
from ..engine import RunResult, simulate
from ..rng import derive_seed
from .checks import DEFAULT_C0, DEFAULT_SPREAD, NEEDS_TRACE, Cell, CheckResult, run_checks

CSV_COLUMNS = ("cell_id", "algorithm", "n", "m", "d", "mode", "variant", "trial", "seed",
               "max_load", "min_load", "gap", "mean_retries", "sum_est_gap",
               "est_avg_max_error", "nonpositive_gap_fraction", "messages", "rounds")

_CONFIG_FIELDS = {f.name for f in fields(SimConfig)}
# sweep keys that are not SimConfig fields
_RATIO_KEYS = ("ratio", "m_over_n")


class ExperimentIOError(RuntimeError):
    """Writing a result file failed; the message names the path and cell."""


def config_from_dict(data: dict) -> SimConfig:
    """Build a SimConfig from JSON-style values.

    ``weight_model`` may be a mapping or a ``uniform:w,k``-style string;
    ``md_dist`` of ``custom:<file>`` loads ``md_weights`` from a JSON file.
    """
    data = dict(data)
    wm = data.get("weight_model")
    if isinstance(wm, str):
        from ..weighted import parse_weight_dist
        data["weight_model"] = parse_weight_dist(wm)
    md_dist = data.pop("md_dist", None)
    if md_dist is not None and md_dist != "uniform":
        if not str(md_dist).startswith("custom:"):
            raise ConfigError(f"md_dist must be 'uniform' or 'custom:<file>', got {md_dist!r}")
        from ..multidim import load_md_weights
        data["md_weights"] = load_md_weights(str(md_dist)[len("custom:"):])
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown configuration fields: {', '.join(sorted(unknown))}")
    if "variant" not in data:
        if data.get("weight_model") is not None:
            data["variant"] = Variant.WEIGHTED
        elif data.get("dims") is not None:
            data["variant"] = Variant.MULTIDIM
    return SimConfig(**data)


@dataclass
class ExperimentSpec:
    base: SimConfig
    sweep: Optional[dict] = None
    trials_per_cell: Optional[int] = None
    checks: list = field(default_factory=list)
    c0: float = DEFAULT_C0
    spread: float = DEFAULT_SPREAD

    def __post_init__(self):
        if isinstance(self.base, dict):
            self.base = config_from_dict(self.base)
        if self.trials_per_cell is None:
            self.trials_per_cell = self.base.trials
        if self.trials_per_cell < 1:
            raise ConfigError("trials_per_cell must be >= 1")
        if self.sweep is not None:
            bad = [k for k in self.sweep if k not in _CONFIG_FIELDS and k not in _RATIO_KEYS]
            if bad:
                raise ConfigError(f"unknown sweep keys: {', '.join(bad)}")
            for k, v in self.sweep.items():
                if not isinstance(v, list):
                    raise ConfigError(f"sweep values must be lists, got {k}={v!r}")
        self.checks = list(self.checks or [])

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        allowed = {"base", "sweep", "trials_per_cell", "checks", "c0", "spread"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown experiment fields: {', '.join(sorted(unknown))}")
        if "base" not in data:
            raise ConfigError("experiment config needs a 'base' configuration")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentSpec":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read experiment config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "sweep": self.sweep,
                "trials_per_cell": self.trials_per_cell, "checks": self.checks,
                "c0": self.c0, "spread": self.spread}

    def cells(self) -> list[SimConfig]:
        """All grid cells in row-major order of the sweep keys."""
        if self.sweep is None:
            return [self.base]
        keys = list(self.sweep)
        out = []
        for idx, combo in enumerate(itertools.product(*(self.sweep[k] for k in keys))):
            changes = dict(zip(keys, combo))
            for rk in _RATIO_KEYS:
                if rk in changes:
                    ratio = changes.pop(rk)
                    changes["m"] = int(round(ratio * changes.get("n", self.base.n)))
            algo = Algorithm(changes.get("algorithm", self.base.algorithm))
            if algo is not Algorithm.ONE_PLUS_BETA:
                changes["beta"] = None
            if "n" in changes and "gamma_max" not in changes:
                changes["gamma_max"] = None
            try:
                out.append(self.base.with_(**changes))
            except ConfigError as exc:
                raise ConfigError(f"cell {idx} ({changes}): {exc}") from None
        return out


@dataclass
class ExperimentResult:
    cells: list[Cell]
    checks: list[CheckResult]
    rows: list[dict]
    files: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def result_row(cell_id: int, trial: int, run: RunResult) -> dict:
    cfg, rep = run.config, run.report
    return {
        "cell_id": cell_id,
        "algorithm": cfg.algorithm.value,
        "n": cfg.n,
        "m": cfg.m,
        "d": cfg.d,
        "mode": cfg.mode.value,
        "variant": cfg.variant.value,
        "trial": trial,
        "seed": run.seed,
        "max_load": rep.max_load,
        "min_load": rep.min_load,
        "gap": rep.gap,
        "mean_retries": rep.mean_retries,
        "sum_est_gap": rep.sum_est_gap,
        "est_avg_max_error": rep.est_avg_max_error,
        "nonpositive_gap_fraction": rep.nonpositive_gap_fraction,
        "messages": rep.messages,
        "rounds": rep.rounds if rep.rounds is not None else "",
    }


def _write(path: Path, cell: Optional[int], writer: Callable) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer(fh)
    except OSError as exc:
        where = f" (cell {cell})" if cell is not None else ""
        raise ExperimentIOError(f"cannot write {path}{where}: {exc}") from exc


def write_csv(path: Path, rows: Sequence[dict]) -> None:
    def w(fh):
        out = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        out.writeheader()
        for row in rows:
            out.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    _write(path, None, w)


def write_json(path: Path, payload, cell: Optional[int] = None) -> None:
    _write(path, cell, lambda fh: json.dump(payload, fh, indent=2, default=_json_default))


def write_trace(path: Path, records, cell: Optional[int] = None) -> None:
    def w(fh):
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")
    _write(path, cell, w)


def _json_default(x):
    if hasattr(x, "item"):
        return x.item()
    if hasattr(x, "value"):
        return x.value
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _json_rows(rows: Sequence[dict]) -> list[dict]:
    return [{k: (None if v == "" else v) for k, v in r.items()} for r in rows]


def run_experiment(spec: ExperimentSpec, out_dir: Optional[str | Path] = None, fmt: str = "csv",
                   trace: bool = False,
                   progress: Optional[Callable[[str], None]] = None) -> ExperimentResult:
    """Execute every cell and trial, evaluate the enabled checks and write results.

    Files written to ``out_dir`` (when given): ``results.csv`` or
    ``results.json``, ``checks.json``, ``metadata.json`` and, with
    ``trace``, ``traces/cell<c>_trial<t>.jsonl``.  The result's
    ``exit_code`` is nonzero iff any check failed.
    """
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
    configs = spec.cells()
    checks_need_trace = any(c in NEEDS_TRACE for c in spec.checks)
    need_trace = trace or checks_need_trace
    out = Path(out_dir) if out_dir is not None else None
    cells: list[Cell] = []
    rows: list[dict] = []
    files: dict = {}
    for cid, cfg in enumerate(configs):
        runs = []
        for t in range(spec.trials_per_cell):
            seed = derive_seed(cfg.seed, cid, t)
            run = simulate(cfg, seed=seed, trace=need_trace)
            rows.append(result_row(cid, t, run))
            if trace and out is not None:
                p = out / "traces" / f"cell{cid}_trial{t}.jsonl"
                write_trace(p, run.trace, cid)
                files.setdefault("traces", []).append(str(p))
            if not checks_need_trace:
                run.trace = None
            runs.append(run)
        cells.append(Cell(cid, cfg, runs))
        if progress:
            gaps = [r.report.gap for r in runs]
            progress(f"cell {cid}: {cfg.algorithm.value} n={cfg.n} m={cfg.m} d={cfg.d} "
                     f"{cfg.variant.value}/{cfg.mode.value} mean gap {sum(gaps) / len(gaps):.3f}")
    checks = run_checks(spec.checks, cells, spec.c0, spec.spread)
    if out is not None:
        if fmt == "csv":
            files["results"] = str(out / "results.csv")
            write_csv(out / "results.csv", rows)
        else:
            files["results"] = str(out / "results.json")
            write_json(out / "results.json", _json_rows(rows))
        files["checks"] = str(out / "checks.json")
        write_json(out / "checks.json", [c.to_dict() for c in checks])
        files["metadata"] = str(out / "metadata.json")
        write_json(out / "metadata.json", {
            "spec": spec.to_dict(),
            "cells": len(configs),
            "gap_constant_c0": spec.c0,
            "gap_constant_note": "c0 is an acceptance threshold chosen for this harness",
            "passed": all(c.passed for c in checks),
        })
    return ExperimentResult(cells, checks, rows, files)
