"""Report figures rendered to PNG with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import ReferenceLine  # noqa: E402
from .lateral_planner import PlanResult  # noqa: E402

DPI = 120


def _equal_if_compact(ax, x, y, limit=5.0):
    """Equal axes unless the path is so elongated the plot would be flat."""
    span_x, span_y = np.ptp(x), np.ptp(y)
    if min(span_x, span_y) * limit >= max(span_x, span_y):
        ax.set_aspect("equal", adjustable="datalim")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_reference(line: ReferenceLine, path, control_points=(), waypoints=None) -> Path:
    """Reference line in the plane and its curvature profile."""
    fig, (ax, axk) = plt.subplots(1, 2, figsize=(11, 4.5))
    ax.plot(line.x, line.y, "-", color="tab:blue", lw=1.2, label="reference line")
    if waypoints is not None and len(waypoints):
        ax.plot(waypoints[:, 0], waypoints[:, 1], ".", color="0.5", ms=3, label="waypoints")
    for k, cps in enumerate(control_points):
        cps = np.asarray(cps)
        ax.plot(cps[:, 0], cps[:, 1], "o--", color="tab:red", ms=4, lw=0.8, label="control points" if k == 0 else None)
    _equal_if_compact(ax, line.x, line.y)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=8)
    axk.plot(line.s, line.curvature, color="tab:blue", lw=1.0)
    axk.set_xlabel("s [m]")
    axk.set_ylabel("curvature [1/m]")
    axk.grid(alpha=0.3)
    return _save(fig, path)


def plot_candidates(result: PlanResult, path) -> Path:
    """Candidate end states coloured by status with the selected one marked."""
    fig, (ax, axt) = plt.subplots(1, 2, figsize=(11, 4.5))
    st = result.status
    groups = ((st == -1, "tab:blue", "unchecked"), (st == 0, "0.4", "collides"), (st == 1, "tab:green", "feasible"))
    for mask, color, label in groups:
        if np.any(mask):
            ax.plot(result.end_l[mask], result.end_d[mask], ".", color=color, ms=3, label=label)
    sel = result.selected
    ax.plot(result.end_l[sel], result.end_d[sel], "+", color="tab:red", ms=14, mew=2, label="selected")
    ax.set_xlabel("end station l_e [m]")
    ax.set_ylabel("end offset d_e [m]")
    ax.legend(loc="best", fontsize=8)
    smp = result.trajectory.samples
    axt.plot(smp.l, smp.d, color="tab:red")
    axt.set_xlabel("l [m]")
    axt.set_ylabel("d [m]")
    axt.set_title("selected lateral profile", fontsize=10)
    axt.grid(alpha=0.3)
    return _save(fig, path)


def plot_trace(trace, path, obstacles=()) -> Path:
    """Driven path, tracking errors and longitudinal signals over time."""
    t = trace.column("t")
    fig, axes = plt.subplots(2, 2, figsize=(12, 8))
    ax = axes[0, 0]
    if trace.reference is not None:
        ax.plot(trace.reference.x, trace.reference.y, "--", color="0.5", lw=0.8, label="reference")
    for _, x, y in trace.paths[:: max(1, len(trace.paths) // 20)]:
        ax.plot(x, y, color="tab:orange", lw=0.5, alpha=0.5)
    ax.plot(trace.column("x"), trace.column("y"), color="tab:blue", lw=1.2, label="rear axle")
    t_end = float(t[-1])
    for k, ob in enumerate(obstacles):
        for tt, alpha in ((0.0, 0.3), (t_end, 0.8)):
            p = ob.at(tt).points
            ax.plot(p[:, 0], p[:, 1], ".", color="tab:red", ms=1, alpha=alpha, label="obstacle" if k == 0 and tt == 0 else None)
    _equal_if_compact(ax, trace.column("x"), trace.column("y"))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=8)

    ax = axes[0, 1]
    ax.plot(t, trace.column("e_fa"), label="e_fa (plan)")
    ax.plot(t, -trace.column("e_ref"), label="offset from reference (left +)")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("[m]")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)

    ax = axes[1, 0]
    ax.plot(t, trace.column("v"), label="v [m/s]")
    ax.plot(t, trace.column("u"), label="u [m/s^2]")
    ax.plot(t, trace.column("a"), label="a [m/s^2]")
    ax.set_xlabel("t [s]")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)

    ax = axes[1, 1]
    ax.plot(t, trace.column("delta"), label="steering [rad]")
    clr = trace.column("min_clearance")
    if np.any(np.isfinite(clr)):
        ax2 = ax.twinx()
        ax2.plot(t, clr, color="tab:red", lw=0.8, label="clearance [m]")
        ax2.set_ylabel("clearance [m]")
        ax2.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("t [s]")
    ax.grid(alpha=0.3)
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)
