from pathlib import Path

import numpy as np
import pandas as pd

from canardlab.odeint import Trajectory


def trajectory_to_dataframe(trajectory: Trajectory) -> pd.DataFrame:
    df = pd.DataFrame(trajectory.states, columns=list(trajectory.variables))
    df.insert(0, "t", trajectory.times)
    return df


def write_trajectory_csv(trajectory: Trajectory, path: Path) -> None:
    """Write a trajectory as CSV with header ``t,<variables>``, 17 significant digits and LF line endings.

    Args:
        trajectory (Trajectory): The trajectory to write.
        path (Path): Output file, parent folders are created.
    """
    path = Path(path)
    path.parent.mkdir(exist_ok=True, parents=True)
    trajectory_to_dataframe(trajectory).to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n"
    )


def read_trajectory_csv(path: Path) -> Trajectory:
    """Load a trajectory CSV written by :func:`write_trajectory_csv`.

    The CSV must include a `t` column followed by one column per state variable.

    Args:
        path (Path): Path to the CSV file.

    Returns:
        Trajectory: times, states and variable names; ``meta`` is empty.

    Raises:
        FileNotFoundError: If the CSV file does not exist.
        KeyError: If the `t` column is missing.
        ValueError: If any entry is not numeric.
    """
    df = pd.read_csv(path, float_precision="round_trip")
    if "t" not in df.columns:
        raise KeyError(f"Error while processing {path}. CSV must contain a 't' column.")

    variables = tuple(c for c in df.columns if c != "t")
    try:
        times = df["t"].to_numpy(dtype=float)
        states = df[list(variables)].to_numpy(dtype=float)
    except ValueError as err:
        raise ValueError(
            f"Error while processing {path}. All entries must be numeric."
        ) from err

    return Trajectory(
        variables=variables,
        times=times,
        states=np.asarray(states).reshape(len(times), len(variables)),
    )
