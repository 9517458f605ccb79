"""
One-parameter sweeps running an analysis or a simulation per value.

Values run concurrently on a thread pool capped by ``CANARD_LAB_THREADS``. Each value gets its own
system instance and output folder, and the records are merged in value order, so the outputs do
not depend on scheduling.
"""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
from pydictnest import flatten_dict

from canardlab.exceptions import EvaluationException, IntegrationException, ModelException
from canardlab.odeint import SolverOptions
from canardlab.pseudosing import Box, SearchOptions
from canardlab.report import (
    SCHEMA_VERSION,
    analyze,
    model_record,
    report_to_dict,
    simulate_to_files,
    summary_record,
)
from canardlab.slowfast import SlowFastSystem, with_params
from canardlab.utils import dump_dict_to_file, next_free_folder, to_jsonable

logger = logging.getLogger(__name__)

THREADS_ENV = "CANARD_LAB_THREADS"

MODES = ("analyze", "simulate")


def thread_count() -> int:
    """
    Size of the sweep thread pool: ``CANARD_LAB_THREADS`` if set, else ``min(4, cpu_count)``.
    Invalid values fall back to a single thread.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        logger.warning(f"Invalid {THREADS_ENV}='{raw}', running the sweep on 1 thread")
        return 1
    return n


@dataclass
class SweepInfo:
    n_values: int = 0
    n_failed: int = 0
    n_threads: int = 0
    time_taken: float = -1.0


@dataclass
class SweepResult:
    parameter: str
    mode: str
    out_dir: Path
    records: list[dict]
    info: SweepInfo = field(default_factory=SweepInfo)


class ParameterSweep:
    """
    Runs ``mode`` (``"analyze"`` or ``"simulate"``) for every value of one parameter of ``system``.

    Outputs go to ``<out_dir>/<parameter>_<index>/``: ``report.json`` in analysis mode,
    ``trajectory.csv``, ``trajectory.plot`` and ``trajectory.json`` in simulation mode.
    ``summary.json`` and the flattened ``summary.csv`` hold one record per value.
    """

    def __init__(
        self,
        system: SlowFastSystem,
        parameter: str,
        values: Sequence[float],
        out_dir: Path,
        mode: str = "analyze",
        box: Optional[Box] = None,
        grid_per_axis: int = 10,
        search_options: SearchOptions = SearchOptions(),
        solver_options: SolverOptions = SolverOptions(),
        t_span: tuple[float, float] = (0.0, 100.0),
        transient: float = 20.0,
        n_samples: Optional[int] = None,
        eta: float = 0.05,
        render: bool = False,
        equilibria: bool = False,
    ):
        if mode not in MODES:
            raise ValueError(f"Unknown sweep mode '{mode}', available: {MODES}")
        if parameter not in system.params and parameter != "epsilon":
            raise ModelException(
                f"'{system.name}' has no parameter '{parameter}'. Known parameters: {sorted(system.params)} and epsilon"
            )
        self.system = system
        self.parameter = parameter
        self.values = [float(v) for v in values]
        self.out_dir = Path(out_dir)
        self.mode = mode
        self.box = box
        self.grid_per_axis = grid_per_axis
        self.search_options = search_options
        self.solver_options = solver_options
        self.t_span = t_span
        self.transient = transient
        self.n_samples = n_samples
        self.eta = eta
        self.render = render
        self.equilibria = equilibria
        self.info = SweepInfo()

    def value_dir(self, index: int) -> Path:
        return self.out_dir / f"{self.parameter}_{index:03d}"

    def hook_pre_sweep(self):
        self.info = SweepInfo(n_values=len(self.values), n_threads=thread_count())

        logger.info("Start sweep")
        logger.info(f"    System: {self.system.name}, mode: {self.mode}")
        logger.info(f"    Parameter {self.parameter}: {self.values}")
        logger.info(f"    Output: {self.out_dir}, threads: {self.info.n_threads}")

        self.time_sweep_start = time.time()

    def hook_post_sweep(self, records: list[dict]):
        self.time_sweep_end = time.time()
        self.info.time_taken = self.time_sweep_end - self.time_sweep_start
        self.info.n_failed = sum(1 for r in records if r["status"] != "ok")

        if self.info.n_failed > 0:
            logger.warning(f"{self.info.n_failed} of {self.info.n_values} sweep values failed")

        logger.info("End sweep")
        logger.info(f"    Failed values {self.info.n_failed}")
        logger.info(f"    Time taken {self.info.time_taken} seconds")

    def _run_value(self, index: int, value: float) -> dict:
        record = {"index": index, "value": value, "status": "ok", "error": None}
        folder = self.value_dir(index)
        try:
            system = with_params(self.system, {self.parameter: value})
            if self.mode == "analyze":
                report = analyze(system, self.box, self.grid_per_axis, self.search_options, self.equilibria)
                dump_dict_to_file(folder / "report.json", report_to_dict(report))
                record.update(summary_record(report))
                if report.failed:
                    record["status"] = "failed"
                    record["error"] = "; ".join(report.errors)
            else:
                run = simulate_to_files(
                    system,
                    folder / "trajectory",
                    t_span=self.t_span,
                    transient=self.transient,
                    solver_options=self.solver_options,
                    n_samples=self.n_samples,
                    eta=self.eta,
                    render=self.render,
                    box=self.box,
                    grid_per_axis=self.grid_per_axis,
                    search_options=self.search_options,
                )
                record["metrics"] = run["metrics"]
                record["n_samples"] = run["n_samples"]
        except (ModelException, EvaluationException, IntegrationException, ValueError) as e:
            logger.debug(f"Sweep value {self.parameter} = {value} failed", exc_info=True)
            record["status"] = "failed"
            record["error"] = f"{type(e).__name__}: {e}"
        record["output"] = folder.name
        return record

    def write_summary(self, records: list[dict]) -> None:
        summary = {
            "schema_version": SCHEMA_VERSION,
            "model": model_record(self.system),
            "parameter": self.parameter,
            "mode": self.mode,
            "records": records,
        }
        dump_dict_to_file(self.out_dir / "summary.json", summary)

        rows = [flatten_dict(to_jsonable(r)) for r in records]
        pd.DataFrame(rows).to_csv(self.out_dir / "summary.csv", index=False, lineterminator="\n")

    def run(self) -> SweepResult:
        self.hook_pre_sweep()
        self.out_dir.mkdir(exist_ok=True, parents=True)

        if len(self.values) > 0:
            with ThreadPoolExecutor(max_workers=self.info.n_threads) as pool:
                futures = [pool.submit(self._run_value, i, v) for i, v in enumerate(self.values)]
                records = [f.result() for f in futures]
        else:
            records = []

        self.write_summary(records)
        self.hook_post_sweep(records)
        return SweepResult(self.parameter, self.mode, self.out_dir, records, self.info)


def parse_values(text: str) -> list[float]:
    """
    Parse a comma separated value list. ``start:stop:num`` expands to ``num`` evenly spaced values.
    An empty string gives an empty list.
    """
    values = []
    for item in (s.strip() for s in text.split(",")):
        if item == "":
            continue
        if ":" in item:
            start, stop, num = item.split(":")
            n = int(num)
            if n < 1:
                raise ValueError(f"Range '{item}' needs at least one value")
            step = 0.0 if n == 1 else (float(stop) - float(start)) / (n - 1)
            values.extend(float(start) + i * step for i in range(n))
        else:
            values.append(float(item))
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"Sweep values must be finite, got {values}")
    return values


def run_sweep(
    system: SlowFastSystem,
    parameter: str,
    values: Sequence[float],
    out_dir: Path,
    mode: str = "analyze",
    **kwargs,
) -> SweepResult:
    """
    Sweep ``parameter`` over ``values``. ``out_dir`` is never overwritten, an existing folder
    moves the sweep to ``<out_dir>_0``, ``<out_dir>_1``, ...

    Keyword arguments are passed on to :class:`ParameterSweep`.
    """
    return ParameterSweep(system, parameter, values, next_free_folder(Path(out_dir)), mode, **kwargs).run()
