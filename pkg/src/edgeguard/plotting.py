"""Report figures, rendered off-screen to PNG files next to the delimited outputs."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fsutil import write_atomic  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _save(fig, path: str | Path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", bbox_inches="tight")
    plt.close(fig)
    return write_atomic(path, buf.getvalue())


def latency_figure(rows, path: str | Path) -> Path:
    """TCP and TCP+TLS transfer latency against file size (log x)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        sizes = [r.size / 1024 for r in rows]
        ax.plot(sizes, [r.tcp * 1e3 for r in rows], marker="o", ms=3, label="TCP")
        ax.plot(sizes, [r.tls * 1e3 for r in rows], marker="s", ms=3, label="TCP + TLS")
        ax.set_xscale("log")
        ax.set_xlabel("file size (KB)")
        ax.set_ylabel("latency (ms)")
        ax.legend(frameon=False)
        return _save(fig, path)


def confusion_figure(matrix, row_names: Sequence[str], col_names: Sequence[str], path: str | Path,
                     title: str = "") -> Path:
    m = np.asarray(matrix, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.1 * len(col_names) + 1.5, 0.8 * len(row_names) + 1.2))
        totals = m.sum(axis=1, keepdims=True)
        share = np.divide(m, totals, out=np.zeros_like(m), where=totals > 0)
        ax.imshow(share, cmap="Blues", vmin=0, vmax=1)
        ax.grid(False)
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                ax.text(j, i, f"{int(m[i, j])}", ha="center", va="center",
                        color="white" if share[i, j] > 0.6 else "black", fontsize=8)
        ax.set_xticks(range(len(col_names)), col_names, rotation=35, ha="right")
        ax.set_yticks(range(len(row_names)), row_names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def importance_figure(names: Sequence[str], importance, path: str | Path) -> Path:
    imp = np.asarray(importance, dtype=float)
    order = np.argsort(imp)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 0.18 * len(names) + 1.0))
        ax.barh([names[i] for i in order], imp[order], color="tab:blue")
        ax.set_xlabel("Gini importance")
        return _save(fig, path)


def auc_figure(auc: dict[str, float | None], path: str | Path) -> Path:
    names = list(auc)
    values = [np.nan if auc[n] is None else auc[n] for n in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(names, values, color="tab:green")
        ax.set_ylim(0, 1.02)
        ax.set_ylabel("one-vs-rest AUC")
        ax.tick_params(axis="x", rotation=30)
        return _save(fig, path)


def recall_figure(recall: dict[str, float | None], path: str | Path) -> Path:
    names = [n for n, v in recall.items() if v is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(names, [recall[n] for n in names], color="tab:orange")
        ax.set_ylim(0, 1.02)
        ax.set_ylabel("recall")
        ax.tick_params(axis="x", rotation=30)
        return _save(fig, path)
