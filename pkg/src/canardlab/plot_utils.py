import threading
from pathlib import Path
from typing import Optional, Sequence

import matplotlib.pyplot as plt

from canardlab.odeint import Trajectory

# pyplot keeps global state, sweeps render from several threads
_PYPLOT_LOCK = threading.Lock()

# projections of the built-in models: (x, y, z) in 3D and the (z, x) plane for the 3D circuit,
# (u, z, x) for the 4D circuit
BUILTIN_PROJECTIONS = {
    "chua3": [("x", "y", "z"), ("z", "x")],
    "chua4": [("u", "z", "x")],
}


def projections_for(variables: Sequence[str], builtin: Optional[str] = None) -> list[tuple[str, ...]]:
    if builtin in BUILTIN_PROJECTIONS:
        return BUILTIN_PROJECTIONS[builtin]
    variables = tuple(variables)
    if len(variables) >= 3:
        return [variables[:3], (variables[-1], variables[0])]
    return [variables[:2]]


def gnuplot_script(
    csv_path: Path,
    variables: Sequence[str],
    projections: Sequence[tuple[str, ...]],
    title: str = "",
) -> str:
    """
    A gnuplot script drawing each projection of the trajectory in ``csv_path`` (columns ``t`` and
    then ``variables``). The CSV is referenced by file name, so the script must sit next to it.
    """
    column = {name: i + 2 for i, name in enumerate(variables)}
    lines = [
        f"# trajectory projections of {title}".rstrip(),
        'set datafile separator ","',
        "set key off",
        "set grid",
    ]
    for projection in projections:
        using = ":".join(str(column[name]) for name in projection)
        command = "splot" if len(projection) == 3 else "plot"
        lines.append(f'set xlabel "{projection[0]}"')
        lines.append(f'set ylabel "{projection[1]}"')
        if len(projection) == 3:
            lines.append(f'set zlabel "{projection[2]}"')
        lines.append(f'set title "{title} ({", ".join(projection)})"')
        lines.append(f'{command} "{Path(csv_path).name}" skip 1 using {using} with lines lw 1')
        lines.append("pause -1")
    return "\n".join(lines) + "\n"


def write_plot_script(
    path: Path,
    csv_path: Path,
    variables: Sequence[str],
    projections: Sequence[tuple[str, ...]],
    title: str = "",
) -> None:
    path = Path(path)
    path.parent.mkdir(exist_ok=True, parents=True)
    with open(path, "w", newline="\n") as f:
        f.write(gnuplot_script(csv_path, variables, projections, title))


def render_projections(
    trajectory: Trajectory,
    projections: Sequence[tuple[str, ...]],
    output_prefix: Path,
    title: str = "",
) -> list[Path]:
    """
    Save one PNG per projection, named ``<output_prefix>_<a>_<b>[_<c>].png``.
    """
    column = {name: i for i, name in enumerate(trajectory.variables)}
    output_prefix = Path(output_prefix)
    written = []

    with _PYPLOT_LOCK:
        for projection in projections:
            data = [trajectory.states[:, column[name]] for name in projection]

            plt.close()
            fig = plt.figure()
            if len(projection) == 3:
                ax = fig.add_subplot(projection="3d")
                ax.plot(*data, lw=0.8)
                ax.set_zlabel(projection[2])
            else:
                ax = fig.add_subplot()
                ax.plot(*data, lw=0.8)
            ax.set_xlabel(projection[0])
            ax.set_ylabel(projection[1])
            ax.set_title(f"{title} ({', '.join(projection)})")
            fig.tight_layout()

            outpath = output_prefix.with_name(f"{output_prefix.name}_{'_'.join(projection)}.png")
            fig.savefig(outpath, dpi=150)
            plt.close()
            written.append(outpath)

    return written
