"""CSV and table output of evaluation results, training histories and attention weights."""
from __future__ import annotations

import csv
import os

import numpy as np

from .errors import DataError, UsageError

REPORT_COLUMNS = ("framework", "horizon", "radius", "mu", "sigma", "baseline_mu", "n_samples")


def format_table(reports) -> str:
    """Fixed-width table with one row per report."""
    head = ["framework", "T_f [s]", "R [m]", "mu", "sigma", "baseline mu", "samples"]
    rows = [[r.framework, f"{r.horizon:.1f}", f"{r.radius:.1f}", f"{r.mu:.3f}", f"{r.sigma:.3f}",
             f"{r.baseline_mu:.3f}", str(r.n_samples)] for r in reports]
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    line = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    rule = "-" * len(line(head))
    return "\n".join([line(head), rule] + [line(r) for r in rows]) + "\n"


def _open(path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def write_report_csv(reports, path):
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            row = r.row()
            w.writerow([row[c] if isinstance(row[c], str) else repr(row[c]) for c in REPORT_COLUMNS])


def write_history_csv(histories: dict, path):
    """``histories`` maps a run name to ``[(epoch, train_loss, val_loss), ...]``.

    A single run is written as ``epoch,train_loss,val_loss``; several runs
    get a leading ``run`` column.
    """
    several = len(histories) > 1
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow((("run",) if several else ()) + ("epoch", "train_loss", "val_loss"))
        for run, hist in histories.items():
            for epoch, tr, va in hist:
                w.writerow(([run] if several else []) + [int(epoch), repr(float(tr)), repr(float(va))])


def write_attention_csv(trace, path_input, path_temporal):
    """One row per (sample, step) holding that step's attention weights.

    Input attention rows hold the weights over slots at an encoder step;
    temporal rows hold the weights over encoder steps at a decoder step.
    """
    for weights, path, kind in ((trace.alpha, path_input, "slot"), (trace.beta, path_temporal, "source")):
        with _open(path) as fh:
            w = csv.writer(fh)
            width = weights[0].shape[-1] if weights else 0
            w.writerow(["sample", "step"] + [f"{kind}_{k}" for k in range(width)])
            stacked = np.stack(weights, axis=1) if weights else np.zeros((0, 0, 0))  # (B, steps, width)
            for b in range(stacked.shape[0]):
                for t in range(stacked.shape[1]):
                    w.writerow([b, t] + [repr(float(x)) for x in stacked[b, t]])


def emit_reports(results, out_dir, histories: dict | None = None, trace=None, stream=None) -> dict:
    """Write ``report.csv`` (plus history and attention files when given)
    into ``out_dir`` and print the table to ``stream``.  Returns the paths."""
    results = list(results)
    if not results:
        raise UsageError("no results to report")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    paths = {"report": os.path.join(out_dir, "report.csv")}
    write_report_csv(results, paths["report"])
    if histories:
        paths["history"] = os.path.join(out_dir, "history.csv")
        write_history_csv(histories, paths["history"])
    if trace is not None:
        paths["attention_input"] = os.path.join(out_dir, "attention_input.csv")
        paths["attention_temporal"] = os.path.join(out_dir, "attention_temporal.csv")
        write_attention_csv(trace, paths["attention_input"], paths["attention_temporal"])
    if stream is not None:
        stream.write(format_table(results))
    return paths
