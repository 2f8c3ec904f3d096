"""Report emission: accuracy tables (CSV + plain text), learning-curve CSV,
and self-contained SVG line plots rendered with matplotlib.

Floats are written with repr so parsing an emitted table reproduces the
in-memory values exactly. SVG output is made deterministic by pinning the
hash salt and dropping the creation date.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402
from .questions import FAMILIES  # noqa: E402

plt.rcParams["svg.hashsalt"] = "vqaprobe"

TABLE_COLUMNS = ("label", "overall", *FAMILIES, "answer_type")


def _fmt(x) -> str:
    return repr(float(x))


def write_table_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["label"], _fmt(row["overall"])]
                + [_fmt(row["per_family"][f]) for f in FAMILIES]
                + [_fmt(row["answer_type_accuracy"])]
            )


def read_table_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TABLE_COLUMNS:
            raise DataError(f"{path}: unexpected table header {header}")
        rows = []
        for rec in reader:
            rows.append(
                {
                    "label": rec[0],
                    "overall": float(rec[1]),
                    "per_family": {f: float(v) for f, v in zip(FAMILIES, rec[2:7])},
                    "answer_type_accuracy": float(rec[7]),
                }
            )
    return rows


def write_table_text(rows: list[dict], path) -> None:
    headers = ["method", "overall"] + [f.replace("_", " ") for f in FAMILIES] + ["answer type"]
    widths = [max(len(headers[0]), *(len(r["label"]) for r in rows))] + [12] * (len(headers) - 1)
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        cells = [row["label"].ljust(widths[0]), f"{100 * row['overall']:.1f}".ljust(12)]
        cells += [f"{100 * row['per_family'][f]:.1f}".ljust(12) for f in FAMILIES]
        cells += [f"{100 * row['answer_type_accuracy']:.1f}".ljust(12)]
        lines.append("  ".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curve_csv(curve: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "epoch", "train_loss", "val_loss", "val_accuracy"])
        for p in curve:
            writer.writerow(
                [
                    p["iteration"],
                    p["epoch"],
                    "" if p.get("train_loss") is None else _fmt(p["train_loss"]),
                    "" if p.get("val_loss") is None else _fmt(p["val_loss"]),
                    "" if p.get("val_accuracy") is None else _fmt(p["val_accuracy"]),
                ]
            )


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_loss_curves(curve: list[dict], path) -> None:
    train = [(p["iteration"], p["train_loss"]) for p in curve if p.get("train_loss") is not None]
    val = [(p["iteration"], p["val_loss"]) for p in curve if p.get("val_loss") is not None]
    if not train and not val:
        raise DataError("curve has no loss points to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    if train:
        ax.plot([x for x, _ in train], [y for _, y in train], label="train loss", color="#1f77b4")
    if val:
        ax.plot([x for x, _ in val], [y for _, y in val], label="val loss", color="#d62728")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title("training and validation loss")
    fig.tight_layout()
    _save_svg(fig, path)


def plot_accuracy_curve(curve: list[dict], path) -> None:
    pts = [(p["iteration"], p["val_accuracy"]) for p in curve if p.get("val_accuracy") is not None]
    if not pts:
        raise DataError("curve has no validation accuracy points")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", markersize=3, color="#2ca02c")
    ax.set_xlabel("iteration")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("validation accuracy")
    fig.tight_layout()
    _save_svg(fig, path)


def plot_fewshot(points: list[dict], path) -> None:
    if not points:
        raise DataError("few-shot sweep has no points")
    fractions = [p["fraction"] for p in points]
    overall = [p["metrics"]["report"]["overall"] for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(fractions, overall, marker="o", label="overall", color="#1f77b4")
    for fam in FAMILIES:
        accs = [p["metrics"]["report"]["per_family"][fam] for p in points]
        ax.plot(fractions, accs, marker=".", linewidth=0.8, alpha=0.6, label=fam.replace("_", " "))
    ax.set_xlabel("fraction of training scenes")
    ax.set_ylabel("validation accuracy")
    ax.set_xscale("log")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=7)
    ax.set_title("accuracy vs training-set fraction")
    fig.tight_layout()
    _save_svg(fig, path)


def _metrics_row(metrics: dict) -> dict:
    rep = metrics["report"]
    return {
        "label": metrics["label"],
        "overall": rep["overall"],
        "per_family": rep["per_family"],
        "answer_type_accuracy": rep["answer_type_accuracy"],
    }


def write_run_artifacts(run_dir) -> list[Path]:
    """Render the table, curve CSV, and SVG plots for one training run."""
    run_dir = Path(run_dir)
    metrics_path = run_dir / "metrics.json"
    if not metrics_path.exists():
        raise DataError(f"{run_dir}: metrics.json missing")
    try:
        metrics = json.loads(metrics_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{metrics_path}: corrupt metrics file: {exc}") from exc
    out = []
    write_table_csv([_metrics_row(metrics)], run_dir / "report.csv")
    write_table_text([_metrics_row(metrics)], run_dir / "report.txt")
    curve = metrics["report"]["curve"]
    write_curve_csv(curve, run_dir / "curve.csv")
    if any(p.get("train_loss") is not None or p.get("val_loss") is not None for p in curve):
        plot_loss_curves(curve, run_dir / "loss_curve.svg")
        out.append(run_dir / "loss_curve.svg")
    if any(p.get("val_accuracy") is not None for p in curve):
        plot_accuracy_curve(curve, run_dir / "accuracy_curve.svg")
        out.append(run_dir / "accuracy_curve.svg")
    out += [run_dir / "report.csv", run_dir / "report.txt", run_dir / "curve.csv"]
    return out


def write_sweep_artifacts(sweep_dir) -> list[Path]:
    sweep_dir = Path(sweep_dir)
    sweep_path = sweep_dir / "sweep.json"
    if not sweep_path.exists():
        raise DataError(f"{sweep_dir}: sweep.json missing")
    points = json.loads(sweep_path.read_text())
    if not points:
        raise DataError(f"{sweep_path}: empty sweep")
    rows = []
    with open(sweep_dir / "fewshot.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "overall", *FAMILIES])
        for p in sorted(points, key=lambda r: r["fraction"]):
            rep = p["metrics"]["report"]
            writer.writerow([_fmt(p["fraction"]), _fmt(rep["overall"])]
                            + [_fmt(rep["per_family"][f]) for f in FAMILIES])
            rows.append(_metrics_row(p["metrics"]))
    write_table_csv(rows, sweep_dir / "report.csv")
    write_table_text(rows, sweep_dir / "report.txt")
    plot_fewshot(sorted(points, key=lambda r: r["fraction"]), sweep_dir / "fewshot_curve.svg")
    return [sweep_dir / "fewshot.csv", sweep_dir / "report.csv", sweep_dir / "report.txt",
            sweep_dir / "fewshot_curve.svg"]


def report_directory(path) -> list[Path]:
    """Regenerate artifacts for a run directory or a sweep directory."""
    path = Path(path)
    if (path / "sweep.json").exists():
        produced = write_sweep_artifacts(path)
        for sub in sorted(path.glob("fraction_*")):
            if (sub / "metrics.json").exists():
                produced += write_run_artifacts(sub)
        return produced
    if (path / "metrics.json").exists():
        return write_run_artifacts(path)
    raise DataError(f"{path}: neither metrics.json nor sweep.json present")
