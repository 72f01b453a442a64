"""Render a simulation trace into figures and a delimited summary table.

Consumes the JSONL trace written by `simulate` and produces, in an
output directory: report.csv (one row per epoch) plus PNG figures for
selection size and mean concept count, train-batch accuracy, true vs
estimated competence, and final difficulty estimates with their
posterior spread.
"""

from __future__ import annotations

import csv
import os
from typing import Any

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fileio import atomic_write

CSV_COLUMNS = [
    "epoch",
    "stage",
    "selected_count",
    "mean_concept_count",
    "batch_size",
    "train_accuracy",
    "fit_elbo",
    "fit_iterations",
    "fit_converged",
]


def write_epoch_csv(records: list[dict[str, Any]], path: str) -> None:
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([rec.get(col, "") for col in CSV_COLUMNS])


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_selection(records, path: str) -> None:
    epochs = [r["epoch"] for r in records]
    counts = [r["selected_count"] for r in records]
    mean_cc = [r["mean_concept_count"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, counts, "o-", color="tab:blue", label="selected questions")
    ax.set_xlabel("epoch")
    ax.set_ylabel("selected questions", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(epochs, mean_cc, "s--", color="tab:red", label="mean concepts per question")
    ax2.set_ylabel("mean concepts per selected question", color="tab:red")
    ax.set_title("Selection size and difficulty over the run")
    _save(fig, path)


def plot_accuracy(records, path: str) -> None:
    pts = [(r["epoch"], r["train_accuracy"]) for r in records if r["train_accuracy"] is not None]
    fig, ax = plt.subplots(figsize=(7, 4))
    if pts:
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", color="tab:green")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train-batch accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Accuracy on the selected batch")
    _save(fig, path)


def plot_competence(records, path: str) -> None:
    epochs = [r["epoch"] for r in records]
    true_mean = [float(np.mean(r["true_theta"])) for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, true_mean, "-", color="black", lw=2, label="true (mean over concepts)")
    est = [
        (r["epoch"], float(np.mean(r["estimated_theta"])))
        for r in records
        if r["estimated_theta"] is not None
    ]
    if est:
        ax.plot([p[0] for p in est], [p[1] for p in est], "o--", color="tab:purple",
                label="estimated (latest snapshot)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("competence (logit scale)")
    ax.legend()
    ax.set_title("Model competence over the run")
    _save(fig, path)


def plot_difficulty(records, path: str) -> None:
    final = records[-1]
    true_b = np.asarray(final["true_difficulties"], dtype=float)
    order = np.argsort(true_b)
    x = np.arange(true_b.size)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(x, true_b[order], "k.-", label="true difficulty")
    if final["estimated_b"] is not None:
        est = np.asarray(final["estimated_b"], dtype=float)[order]
        std = np.asarray(final["estimated_b_std"], dtype=float)[order]
        ax.errorbar(x, est, yerr=std, fmt="o", color="tab:orange", capsize=3,
                    label="estimated (posterior mean ± stddev)")
    ax.set_xlabel("concept (sorted by true difficulty)")
    ax.set_ylabel("difficulty (logit scale)")
    ax.legend()
    ax.set_title("Final difficulty estimates")
    _save(fig, path)


def render_report(records: list[dict[str, Any]], out_dir: str) -> list[str]:
    """Write all report artifacts; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    csv_path = os.path.join(out_dir, "report.csv")
    write_epoch_csv(records, csv_path)
    written.append(csv_path)
    if records:
        for name, renderer in (
            ("selection.png", plot_selection),
            ("accuracy.png", plot_accuracy),
            ("competence.png", plot_competence),
            ("difficulty.png", plot_difficulty),
        ):
            path = os.path.join(out_dir, name)
            renderer(records, path)
            written.append(path)
    return written
