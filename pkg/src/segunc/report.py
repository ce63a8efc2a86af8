"""Writing AUC tables, curve tables and retention-curve figures."""
from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ValidationError  # noqa: E402
from .pipeline import IDEAL, RANDOM, MeasureReport  # noqa: E402
from .retention import CurveBundle, RetentionCurve  # noqa: E402

SCALE_LABELS = {"dsc": "DSC", "f1": "Lesion F1"}
TIMESTAMP_KEY = "generated_at"


def _fmt(x):
    return f"{float(x):.12g}"


def write_report_csv(report, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["measure", "mean_auc", "se"])
        for r in report.rows:
            w.writerow([r.measure, _fmt(r.mean_auc), _fmt(r.se)])


def write_report_json(report, path, timestamp=True):
    doc = report.to_json()
    if timestamp:
        doc[TIMESTAMP_KEY] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_report_json(path):
    with open(path) as f:
        doc = json.load(f)
    return MeasureReport.from_json(doc)


def write_curves_csv(bundles, path, per_patient=True):
    """One row per curve node: measure, patient_id (``MEAN`` for the average), fraction, value."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["measure", "patient_id", "fraction", "value"])
        for m, b in bundles.items():
            for x, y in zip(b.mean_curve.fractions, b.mean_curve.values):
                w.writerow([m, "MEAN", _fmt(x), _fmt(y)])
            if per_patient:
                for pid, c in b.curves.items():
                    for x, y in zip(c.fractions, c.values):
                        w.writerow([m, pid, _fmt(x), _fmt(y)])


def read_curves_csv(path):
    """Rebuild curve bundles from a file written by :func:`write_curves_csv`."""
    raw = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            pts = raw.setdefault(row["measure"], {}).setdefault(row["patient_id"], ([], []))
            pts[0].append(float(row["fraction"]))
            pts[1].append(float(row["value"]))
    bundles = {}
    for m, by_pid in raw.items():
        mean = RetentionCurve(*by_pid.pop("MEAN"))
        curves = {pid: RetentionCurve(x, y) for pid, (x, y) in by_pid.items()}
        mean_auc = sum(c.auc for c in curves.values()) / len(curves) if curves else mean.auc
        bundles[m] = CurveBundle(curves, mean, mean_auc)
    return bundles


def _series_style(measure):
    if measure == IDEAL:
        return dict(color="black", linestyle="--", linewidth=1.5)
    if measure == RANDOM:
        return dict(color="grey", linestyle=":", linewidth=1.5)
    return dict(linewidth=1.2)


def plot_curves(bundles, scale, path_stem, order=None):
    """Plot dataset-average curves, one series per measure, to ``.png`` and ``.svg``.

    Each series carries the SVG group id ``series-<measure>``.
    """
    order = order or list(bundles)
    with plt.rc_context({"svg.hashsalt": "segunc", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for m in order:
            c = bundles[m].mean_curve
            line, = ax.plot(c.fractions, c.values, label=f"{m} ({bundles[m].mean_auc:.4f})",
                            **_series_style(m))
            line.set_gid(f"series-{m}")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("Retention fraction")
        ax.set_ylabel(SCALE_LABELS.get(scale, scale))
        ax.legend(fontsize=7, loc="lower left")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        stem = Path(path_stem)
        fig.savefig(stem.with_suffix(".png"), dpi=120, metadata={"Software": None})
        fig.savefig(stem.with_suffix(".svg"), metadata={"Date": None, "Creator": None})
        plt.close(fig)


def emit_report(report, bundles, out_dir, figures=True, timestamp=True):
    """Write ``report.csv``, ``report.json``, ``curves.csv`` and optionally the curve figures."""
    if not report.rows:
        raise ValidationError("report has no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    write_report_json(report, out / "report.json", timestamp)
    write_curves_csv(bundles, out / "curves.csv")
    written = [out / "report.csv", out / "report.json", out / "curves.csv"]
    if figures:
        plot_curves(bundles, report.scale, out / "curves", [r.measure for r in report.rows])
        written += [out / "curves.png", out / "curves.svg"]
    return written


def emit_pipeline(result, out_dir, figures=True):
    out = Path(out_dir)
    files = []
    files += emit_report(result.dsc_report, result.dsc_bundles, out / "dsc", figures)
    files += emit_report(result.f1_report, result.f1_bundles, out / "f1", figures)
    return files
