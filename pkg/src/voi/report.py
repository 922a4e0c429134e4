"""Output writers for the command-line front end.

Everything here is deterministic for identical inputs: floats are formatted
with a fixed precision, JSON keys are sorted, and the SVG renderer pins the
hash salt and strips the embedded date so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_EVSI_FIELDS = ["model", "method", "n", "point", "lo95", "hi95", "seconds"]
_RESIDUAL_FIELDS = ["model", "method", "n", "index", "fitted", "residual"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return "" if v is None else str(v)


@dataclass(frozen=True)
class EvsiRow:
    model: str
    method: str
    n: int
    point: float
    lo95: float
    hi95: float
    seconds: float

    def as_list(self) -> list[str]:
        return [_fmt(getattr(self, f)) for f in _EVSI_FIELDS]


def write_evsi_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_EVSI_FIELDS)
        for row in rows:
            w.writerow(row.as_list())


def write_residuals_csv(path, rows) -> None:
    """rows: iterables (model, method, n, index, fitted, residual); n may be
    None for fits shared across the whole size grid."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_RESIDUAL_FIELDS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_evsi_figure(path, model_name: str, grid, curves: dict, evppi: float | None) -> None:
    """EVSI against sample size, one curve per method, EVPPI as a black line.

    ``curves`` maps method name to (points, lo95, hi95) arrays aligned with
    ``grid``. A single-size grid degenerates to error-bar points.
    """
    plt.rcParams["svg.hashsalt"] = "voi"
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    xs = list(grid)
    for method, (pts, lo, hi) in sorted(curves.items()):
        if len(xs) > 1:
            ax.plot(xs, pts, marker="o", ms=3, label=method)
            ax.fill_between(xs, lo, hi, alpha=0.15, lw=0)
        else:
            err = [[pts[0] - lo[0]], [hi[0] - pts[0]]]
            ax.errorbar(xs, pts, yerr=err, marker="o", capsize=4, label=method)
    if evppi is not None:
        ax.axhline(evppi, color="black", lw=1.2, label="EVPPI")
    if len(xs) > 1 and min(xs) > 0 and max(xs) / min(xs) > 20:
        ax.set_xscale("log")
    ax.set_xlabel("study sample size n")
    ax.set_ylabel("EVSI")
    ax.set_title(model_name)
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
