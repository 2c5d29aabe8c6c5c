"""File emission for verification reports and solver artifacts.

``emit_report`` walks a report's artifacts and writes one delimited file
per artifact (plus a figure where one is meaningful), together with a
machine-readable JSON summary of the check records.  All delimited output
is deterministic: rerunning the same configuration reproduces the files
byte for byte.  Figures are rendered once per run and are not part of the
byte-stability contract.
"""

import json
import os

from .figures import save_paths_figure, save_riccati_figure, save_sweep_figure
from .problem_io import (ensemble_sample_to_csv, gains_to_csv, mean_to_csv,
                         riccati_to_csv, sweep_to_csv)
from .riccati import RiccatiSolution
from .simulation import MeanTrajectory, PathEnsemble
from .synthesis import FeedbackLaw
from .verify import SweepResult, VerificationReport


def _slug(title):
    keep = [c if c.isalnum() else "_" for c in title.lower()]
    out = "".join(keep).strip("_")
    while "__" in out:
        out = out.replace("__", "_")
    return out[:40]


def report_to_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")


def emit_report(report, out_dir, prefix=None, figures=True):
    """Write a report's summary and artifacts into ``out_dir``.

    Returns the list of written file paths.  CSV artifacts: Riccati paths,
    gain schedules, mean trajectories, sweep curves and path samples;
    sweeps and Riccati solutions additionally get a rendered figure.
    """
    os.makedirs(out_dir, exist_ok=True)
    prefix = prefix if prefix is not None else _slug(report.title)
    written = []

    def target(name, ext):
        stem = f"{prefix}_{name}" if prefix else name
        return os.path.join(out_dir, f"{stem}.{ext}")

    if isinstance(report, VerificationReport):
        path = target("report", "json")
        report_to_json(report, path)
        written.append(path)

    grid = report.artifacts.get("grid")
    for key, artifact in report.artifacts.items():
        if isinstance(artifact, RiccatiSolution):
            path = target(key, "csv")
            riccati_to_csv(artifact, path)
            written.append(path)
            if figures:
                fig = target(key, "png")
                save_riccati_figure(artifact, fig, title=report.title)
                written.append(fig)
        elif isinstance(artifact, FeedbackLaw):
            path = target(key, "csv")
            gains_to_csv(artifact, path)
            written.append(path)
        elif isinstance(artifact, MeanTrajectory) and grid is not None:
            path = target(key, "csv")
            mean_to_csv(artifact, grid, path)
            written.append(path)
        elif isinstance(artifact, PathEnsemble) and grid is not None:
            path = target(key, "csv")
            ensemble_sample_to_csv(artifact, grid, path)
            written.append(path)
            if figures:
                fig = target(key, "png")
                save_paths_figure(artifact, grid, fig, title=report.title)
                written.append(fig)
        elif isinstance(artifact, SweepResult):
            if not artifact.values:
                continue
            path = target(key, "csv")
            sweep_to_csv(artifact, path)
            written.append(path)
            if figures:
                fig = target(key, "png")
                save_sweep_figure(artifact, fig, title=report.title)
                written.append(fig)
    return written
