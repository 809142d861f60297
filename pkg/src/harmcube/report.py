"""Artifact writers: delimited tables, text reports, and theta plots.

Every writer goes through :func:`atomic_write`, which stages the file
next to its destination and renames it into place only when the
producer finished cleanly.  A crashed run therefore never leaves a
truncated artifact behind.

Numbers are formatted with ``%.17g`` so a float64 survives the round
trip through text unchanged; rerunning the same configuration gives
byte-identical tables.
"""

import contextlib
import csv
import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .grid import save_fields  # noqa: E402

# stable ids inside the SVG output, instead of a per-process hash seed
plt.rcParams["svg.hashsalt"] = "harmcube"

_SVG_META = {"Date": None}


@contextlib.contextmanager
def atomic_write(path, mode="w", **kwargs):
    """Yield a handle to a staged file; rename over ``path`` on success."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, staging = tempfile.mkstemp(dir=directory,
                                   prefix=os.path.basename(path) + ".",
                                   suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(staging, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(staging)
        raise


def _cell(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_csv(path, header, rows):
    """RFC-style CSV with mandatory header; floats as %.17g."""
    with atomic_write(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_text(path, text):
    with atomic_write(path, "w") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")
    return path


def write_levels_csv(path, levels):
    """Per-level table: one row per theta in ascending order."""
    header = ("theta", "area", "chi", "boundary_length", "gb_residual",
              "regular")
    rows = [(lv["theta"], lv["area"], lv["chi"], lv["boundary_length"],
             lv["gb_residual"], lv["regular"]) for lv in levels]
    return write_csv(path, header, rows)


def write_record_csv(path, record):
    """Single-row table of a flat name -> scalar mapping."""
    keys = list(record)
    return write_csv(path, keys, [[record[k] for k in keys]])


def save_solution(path, solution):
    """Solved fields in the binary grid-field container."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fields = {"u": solution.u,
              "grad_norm": solution.grad_norm,
              "du1": solution.du[..., 0],
              "du2": solution.du[..., 1],
              "du3": solution.du[..., 2]}
    save_fields(path, solution.grid, fields, metric=solution.metric)
    return path


def _polyline_figure(path, x, y, xlabel, ylabel, title):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    try:
        ax.plot(x, y, "-o", markersize=3, linewidth=1.2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        with atomic_write(path, "wb") as fh:
            fig.savefig(fh, format="svg", metadata=_SVG_META)
    finally:
        plt.close(fig)
    return path


def render_theta_plots(out_dir, levels):
    """Area, Euler characteristic and closure residual against theta."""
    thetas = [lv["theta"] for lv in levels]
    plan = (
        ("area_theta.svg", [lv["area"] for lv in levels],
         "level area", "Level set area"),
        ("chi_theta.svg", [lv["chi"] for lv in levels],
         "Euler characteristic", "Level set topology"),
        ("gb_residual_theta.svg", [lv["gb_residual"] for lv in levels],
         "closure residual", "Curvature closure residual"),
    )
    written = []
    for name, values, ylabel, title in plan:
        written.append(_polyline_figure(os.path.join(out_dir, name),
                                        thetas, values, "theta", ylabel,
                                        title))
    return written
