"""Delimited series output and figure rendering for experiment runs.

series.csv carries the fixed columns t,mean,stderr,analytic,abs_err
(comma separated, dot decimals, LF line ends, header row; empty cells
where no analytic reference exists). Figures are rendered headlessly next
to the delimited output: the series with its standard-error band and
reference curve, and the solver residual history when one exists.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_series_csv(series: dict, path) -> None:
    t = series["t"]
    mean = series["mean"]
    stderr = series["stderr"]
    analytic = series.get("analytic")
    abs_err = series.get("abs_err")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,mean,stderr,analytic,abs_err\n")
        for k in range(len(t)):
            a = "" if analytic is None else repr(analytic[k])
            e = "" if abs_err is None else repr(abs_err[k])
            fh.write(f"{t[k]!r},{mean[k]!r},{stderr[k]!r},{a},{e}\n")


def render_series_figure(series: dict, path, title: str) -> None:
    t = np.asarray(series["t"], dtype=float)
    mean = np.asarray(series["mean"], dtype=float)
    stderr = np.asarray(series["stderr"], dtype=float)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.plot(t, mean, color="tab:blue", lw=1.6, label=series.get("label", "mean"))
    ax.fill_between(t, mean - 2 * stderr, mean + 2 * stderr, color="tab:blue", alpha=0.2,
                    label="mean +/- 2 stderr")
    if series.get("analytic") is not None:
        ax.plot(t, np.asarray(series["analytic"], dtype=float), "k--", lw=1.2, label="reference")
    ax.set_xlabel("t")
    ax.set_ylabel(series.get("label", "value"))
    ax.set_title(title)
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_convergence_figure(history, path, title: str) -> None:
    hist = np.asarray(history, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    positive = hist > 0
    ax.semilogy(np.arange(1, hist.size + 1)[positive], hist[positive], "o-", color="tab:red")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
