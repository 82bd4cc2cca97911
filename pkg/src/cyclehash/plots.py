"""Render evaluation and training figures to files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_pr_curve(report, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    recall = [p[2] for p in report.pr_points]
    precision = [p[1] for p in report.pr_points]
    ax.plot(recall, precision, marker="o", markersize=3)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_title(f"PR curve ({report.direction})")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_precision_at(report, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ns = [p[0] for p in report.precision_at]
    ps = [p[1] for p in report.precision_at]
    ax.plot(ns, ps, marker="s", markersize=3)
    ax.set_xlabel("N")
    ax.set_ylabel("Precision@N")
    ax.set_title(f"Precision@N ({report.direction})")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_log(log_rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    its = range(len(log_rows))
    for name in ("rec_f", "sim_f", "rec_z", "sim_z"):
        ax.plot(its, [getattr(r, name) for r in log_rows], label=name)
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
