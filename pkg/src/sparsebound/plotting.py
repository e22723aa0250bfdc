"""Matplotlib figures written next to the delimited outputs.

Every figure stores the provenance header (resolved config and master seed)
in its PNG text metadata, like the CSV files do in their comment block.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["rate_figure", "cone_figure", "lemma_figure", "comparison_figure"]


def _save(fig, path: Path, provenance: str) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Description": provenance, "Software": "sparsebound"})
    plt.close(fig)
    return path


def rate_figure(series: dict, path: Path, provenance: str) -> Path:
    """Log-log scatter of mean squared error against the rate predictor.

    ``series`` maps an estimator name to ``(predictor, mse, fit)``, where ``fit``
    is a RateFit or None.
    """
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for name, (x, y, fit) in series.items():
        x, y = np.asarray(x), np.asarray(y)
        (pts,) = ax.loglog(x, y, "o", ms=4, label=name)
        if fit is not None:
            xs = np.geomspace(x.min(), x.max(), 50)
            ax.loglog(xs, np.exp(fit.intercept) * xs**fit.slope, "-", color=pts.get_color(),
                      label=f"fit: slope {fit.slope:.3f}, r$^2$ {fit.r_squared:.3f}")
    ax.set_xlabel("rate predictor")
    ax.set_ylabel("mean squared L2 error")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path, provenance)


def cone_figure(labels, freqs, threshold: float, path: Path, provenance: str) -> Path:
    fig, ax = plt.subplots(figsize=(max(5.0, 0.25 * len(labels) + 2), 4.0))
    pos = np.arange(len(labels))
    ax.bar(pos, freqs, color="tab:blue")
    ax.axhline(threshold, color="tab:red", ls="--", lw=1, label=f"threshold {threshold:.3f}")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylim(min(0.8, float(np.min(freqs)) - 0.02) if len(freqs) else 0.8, 1.01)
    ax.set_ylabel("cone membership frequency")
    ax.legend(fontsize=8, loc="lower left")
    return _save(fig, path, provenance)


def lemma_figure(rows, path: Path, provenance: str) -> Path:
    """Largest observed weighted order statistic against the bound, per case."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    labels = [f"r={r.r}\n{r.family[:5]}\nd={r.delta:g}" for r in rows]
    pos = np.arange(len(rows))
    ax.bar(pos, [r.max_observed_ratio for r in rows], color="tab:green", label="max observed")
    ax.scatter(pos, [r.bound for r in rows], color="tab:red", marker="_", s=200, label="bound", zorder=3)
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, fontsize=6)
    ax.set_ylabel("sup_j g_(j) / (sigma lambda_j)")
    ax.legend(fontsize=8)
    return _save(fig, path, provenance)


def comparison_figure(comparisons, path: Path, provenance: str) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    data = [np.log([x for x in c.ratios if x is not None and np.isfinite(x)] or [np.nan]) for c in comparisons]
    ax.boxplot(data)
    ax.set_xticks(np.arange(1, len(comparisons) + 1))
    ax.set_xticklabels([c.shape.replace(",", "\n") for c in comparisons], fontsize=6)
    ax.axhline(0.0, color="grey", lw=1)
    ax.set_ylabel("log(group error / lasso error)")
    return _save(fig, path, provenance)
