"""
Analysis reports combining the Jacobian and the flow curvature canard tests of one system, and the
file outputs of a simulation run.

:func:`report_to_dict` turns a report into a nested dictionary that serializes deterministically
through :func:`canardlab.utils.dumps`. Timings are kept out of it so that repeated runs give
identical text.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from canardlab import __version__
from canardlab.curvature import CurvatureAnalysis, canard_verdict_curvature
from canardlab.data_utils import write_trajectory_csv
from canardlab.exceptions import EvaluationException, NotAnEquilibriumException
from canardlab.odeint import SolverOptions, canard_metrics, simulate
from canardlab.plot_utils import projections_for, render_projections, write_plot_script
from canardlab.pseudosing import (
    Box,
    Equilibrium,
    JacobianAnalysis,
    SearchOptions,
    canard_verdict_jacobian,
    find_equilibria,
    find_pseudo_singular,
)
from canardlab.slowfast import SlowFastSystem, model_to_dict
from canardlab.utils import dump_dict_to_file, to_jsonable

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


@dataclass
class AnalysisReport:
    system: SlowFastSystem
    box: Optional[Box]
    grid_per_axis: int
    options: SearchOptions
    jacobian: Optional[JacobianAnalysis] = None
    curvature: Optional[CurvatureAnalysis] = None
    equilibria: Optional[list[Equilibrium]] = None
    errors: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return len(self.errors) > 0

    @property
    def agrees(self) -> Optional[bool]:
        return None if self.curvature is None else self.curvature.agrees


def analyze(
    system: SlowFastSystem,
    box: Optional[Box] = None,
    grid_per_axis: int = 10,
    options: SearchOptions = SearchOptions(),
    equilibria: bool = False,
) -> AnalysisReport:
    """
    Run both canard tests on ``system``. Numerical failures are recorded in ``errors`` and the
    stages that completed are kept.

    Args:
        system (SlowFastSystem): The system.
        box (Optional[Box]): Search box in full coordinates.
        grid_per_axis (int): Seeds per axis of the pseudo-singular search.
        options (SearchOptions): Newton settings.
        equilibria (bool): Also locate the equilibria of the full system inside the box.

    Raises:
        ValueError: For an invalid box or grid.
    """
    report = AnalysisReport(system, box, grid_per_axis, options)

    try:
        report.jacobian = canard_verdict_jacobian(system, box, grid_per_axis, options)
    except EvaluationException as e:
        logger.error(f"Pseudo-singular search of {system.name} failed: {e}")
        report.errors.append(f"jacobian: {e}")
        return report

    try:
        report.curvature = canard_verdict_curvature(system, report.jacobian.points)
    except (EvaluationException, NotAnEquilibriumException) as e:
        logger.error(f"Curvature test of {system.name} failed: {e}")
        report.errors.append(f"curvature: {e}")

    if equilibria:
        try:
            report.equilibria = find_equilibria(system, box, grid_per_axis, options)
        except EvaluationException as e:
            logger.error(f"Equilibrium search of {system.name} failed: {e}")
            report.errors.append(f"equilibria: {e}")

    for point in report.jacobian.points:
        if point.error is not None:
            report.errors.append(f"point {point.chart_coords}: {point.error}")

    return report


def model_record(system: SlowFastSystem) -> dict:
    record = model_to_dict(system)
    record["builtin"] = system.builtin
    return record


def report_to_dict(report: AnalysisReport) -> dict:
    """The JSON document of a report (schema version ``1.0``)"""
    jacobian = None
    if report.jacobian is not None:
        jacobian = to_jsonable(report.jacobian)
        del jacobian["info"]["time_taken"]
        for key in ("system", "params", "options", "box", "grid_per_axis"):
            del jacobian[key]

    curvature = None
    if report.curvature is not None:
        curvature = to_jsonable(report.curvature)
        del curvature["system"], curvature["params"]

    verdicts = {
        "jacobian": None if report.jacobian is None else report.jacobian.verdict,
        "curvature": None if report.curvature is None else report.curvature.verdict,
        "agrees": report.agrees,
    }

    document = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "canardlab", "version": __version__},
        "model": model_record(report.system),
        "options": {
            "box": None if report.jacobian is None else report.jacobian.box,
            "grid_per_axis": report.grid_per_axis,
            "search": report.options,
        },
        "jacobian": jacobian,
        "curvature": curvature,
        "verdicts": verdicts,
        "errors": report.errors,
    }
    if report.equilibria is not None:
        document["equilibria"] = report.equilibria
    return to_jsonable(document)


def summary_record(report: AnalysisReport) -> dict:
    """Short per-run record used by the sweep summary"""
    jacobian = report.jacobian
    return to_jsonable(
        {
            "jacobian_verdict": None if jacobian is None else jacobian.verdict,
            "curvature_verdict": None if report.curvature is None else report.curvature.verdict,
            "agrees": report.agrees,
            "n_points": None if jacobian is None else len(jacobian.points),
            "thresholds": {}
            if jacobian is None
            else {c.condition: c.satisfied for c in jacobian.threshold_checks},
        }
    )


def canard_reference_point(
    system: SlowFastSystem,
    box: Optional[Box] = None,
    grid_per_axis: int = 10,
    options: SearchOptions = SearchOptions(),
) -> Optional[list[float]]:
    """Full coordinates of the first pseudo-singular point in the box, None when there is none"""
    try:
        points = find_pseudo_singular(system, box, grid_per_axis, options)
    except EvaluationException as e:
        logger.warning(f"No reference point for the canard metrics of {system.name}: {e}")
        return None
    if len(points) == 0:
        logger.warning(f"{system.name} has no pseudo-singular point in the box, canard metrics are skipped")
        return None
    return points[0].full_coords


def simulate_to_files(
    system: SlowFastSystem,
    output_prefix: Path,
    x0: Optional[Sequence[float]] = None,
    t_span: tuple[float, float] = (0.0, 100.0),
    transient: float = 20.0,
    solver_options: SolverOptions = SolverOptions(),
    n_samples: Optional[int] = None,
    eta: float = 0.05,
    render: bool = False,
    box: Optional[Box] = None,
    grid_per_axis: int = 10,
    search_options: SearchOptions = SearchOptions(),
) -> dict:
    """
    Integrate ``system`` and write ``<output_prefix>.csv``, the gnuplot script ``<output_prefix>.plot``
    and the run record ``<output_prefix>.json`` (plus PNG projections when ``render`` is set).

    The canard metrics are measured against the first pseudo-singular point found in ``box``.

    Returns:
        dict: The run record, as written to ``<output_prefix>.json``.

    Raises:
        IntegrationException: If the integration fails.
    """
    output_prefix = Path(output_prefix)
    output_prefix.parent.mkdir(exist_ok=True, parents=True)
    csv_path = output_prefix.with_name(f"{output_prefix.name}.csv")
    plot_path = output_prefix.with_name(f"{output_prefix.name}.plot")

    trajectory = simulate(system, x0, t_span, transient, solver_options, n_samples)
    write_trajectory_csv(trajectory, csv_path)

    projections = projections_for(trajectory.variables, system.builtin)
    write_plot_script(plot_path, csv_path, trajectory.variables, projections, title=system.name)
    images = render_projections(trajectory, projections, output_prefix, system.name) if render else []

    reference = canard_reference_point(system, box, grid_per_axis, search_options)
    metrics = None if reference is None else canard_metrics(trajectory, system, reference, eta)

    record = to_jsonable(
        {
            "schema_version": SCHEMA_VERSION,
            "tool": {"name": "canardlab", "version": __version__},
            "model": model_record(system),
            "initial_state": trajectory.states[0],
            "t_span": list(t_span),
            "n_samples": len(trajectory),
            "solver": trajectory.meta,
            "metrics": metrics,
            "files": {
                "csv": csv_path.name,
                "plot": plot_path.name,
                "images": [p.name for p in images],
            },
        }
    )
    dump_dict_to_file(output_prefix.with_name(f"{output_prefix.name}.json"), record)
    return record
