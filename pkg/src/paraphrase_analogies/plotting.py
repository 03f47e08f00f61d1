"""Figures rendered next to the report tables.

Everything goes through the Agg backend and PNG metadata is stripped, so
two identical runs write byte-identical images.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}


def _figure(width=4.0, height=None):
    golden = (np.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_correlation_histogram(report, path, width=0.02):
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        left, counts = report.histogram(width)
        ax.bar(left, counts, width=width, align="edge", color="0.35", edgecolor="white", linewidth=0.3)
        ax.axvline(report.mean, color="C3", lw=1, ls="--", label=f"mean {report.mean:.3f}")
        ax.set_xlabel("Pearson r, word vector vs. PMI row mapped by C+")
        ax.set_ylabel("words")
        finite = report.r[np.isfinite(report.r)]
        if len(finite):
            ax.set_xlim(max(-1.0, finite.min() - 0.05), min(1.0, finite.max() + 0.05))
        ax.legend(frameon=False)
        _save(fig, path)


def plot_word_probe(word_vector, approximation, word, path):
    r = np.corrcoef(word_vector, approximation)[0, 1]
    with plt.rc_context(_STYLE):
        fig, ax = _figure(3.2, 3.2)
        ax.scatter(approximation, word_vector, s=4, color="0.2", alpha=0.6, linewidths=0)
        ax.set_xlabel(f"PMI row of '{word}' mapped by pseudo-inverse")
        ax.set_ylabel(f"word vector of '{word}'")
        ax.set_title(f"r = {r:.3f}")
        _save(fig, path)


def plot_category_bars(codes, series: dict, path, ylabel, log=False):
    """Grouped bars, one group per category, one bar per named series."""
    with plt.rc_context(_STYLE):
        fig, ax = _figure(max(4.0, 0.28 * len(codes) * max(1, len(series))), 2.6)
        x = np.arange(len(codes))
        w = 0.8 / max(1, len(series))
        for i, (name, values) in enumerate(series.items()):
            ax.bar(x + i * w, np.nan_to_num(np.asarray(values, dtype=float)), width=w, label=name)
        ax.set_xticks(x + 0.4 - w / 2)
        ax.set_xticklabels(codes, rotation=90)
        ax.set_ylabel(ylabel)
        if log:
            ax.set_yscale("log")
        ax.legend(frameon=False, fontsize=7)
        _save(fig, path)
