"""Matplotlib figures for rolling and covariate-conditional diagnostics."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import quantile_bins, rolling_metric

COLORS = {
    "CP": "tab:gray",
    "LCP": "tab:brown",
    "ACI": "tab:blue",
    "DtACI": "tab:cyan",
    "OLCP": "tab:orange",
    "OLCP-Hedge": "tab:red",
}

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    # no Software/date metadata so reruns produce identical bytes
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def _band(ax, x, rows, color, label):
    rows = np.asarray(rows)
    mean = rows.mean(axis=0)
    ax.plot(x, mean, color=color, lw=1.2, label=label)
    if rows.shape[0] > 1:
        sd = rows.std(axis=0, ddof=1)
        ax.fill_between(x, mean - sd, mean + sd, color=color, alpha=0.2, lw=0)


def plot_rolling(rep_records, path, window=100, alpha=0.1, vline=None, title=None):
    """Rolling coverage (top) and rolling size (bottom) per method, mean +/- sd across reps.

    ``rep_records`` is a list (one entry per rep) of ``{method: [StepRecord]}``.
    """
    methods = list(rep_records[0])
    with plt.rc_context(RC):
        fig, (ax_c, ax_s) = plt.subplots(2, 1, figsize=(6.5, 4.8), sharex=True)
        for m in methods:
            covs, sizes, t_axis = [], [], None
            for recs in rep_records:
                r = recs[m]
                if len(r) < window:
                    continue
                covs.append(rolling_metric([x.covered for x in r], window))
                sizes.append(rolling_metric([x.size for x in r], window))
                t_axis = np.array([x.t for x in r])[window - 1:]
            if not covs:
                continue
            n = min(len(c) for c in covs)
            color = COLORS.get(m)
            _band(ax_c, t_axis[:n], [c[:n] for c in covs], color, m)
            _band(ax_s, t_axis[:n], [s[:n] for s in sizes], color, m)
        ax_c.axhline(1 - alpha, color="k", ls="--", lw=0.8)
        if vline is not None:
            for ax in (ax_c, ax_s):
                ax.axvline(vline, color="k", ls=":", lw=0.8)
        ax_c.set_ylabel(f"rolling coverage ({window})")
        ax_s.set_ylabel("rolling size")
        ax_s.set_xlabel("t")
        ax_c.legend(ncol=3, frameon=False)
        if title:
            ax_c.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def plot_conditional(reps, path, n_bins=10, alpha=0.1, title=None):
    """Coverage and mean size across quantile bins of a scalar covariate.

    ``reps`` is a list of ``(X, {method: [StepRecord]})`` where ``X`` holds the
    covariate of every streamed step; the first step of each stream is skipped
    by every method, so records align with ``X[1:]``.
    """
    methods = list(reps[0][1])
    with plt.rc_context(RC):
        fig, (ax_c, ax_s) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        for m in methods:
            cov_rows, size_rows, centers = [], [], []
            for X, recs in reps:
                r = recs[m]
                x = np.asarray(X, dtype=float).reshape(len(X), -1)[-len(r):, 0]
                b = quantile_bins(x, n_bins)
                cov_rows.append([np.mean([r[i].covered for i in np.flatnonzero(b == k)]) for k in range(n_bins)])
                size_rows.append([np.mean([r[i].size for i in np.flatnonzero(b == k)]) for k in range(n_bins)])
                centers.append([x[b == k].mean() for k in range(n_bins)])
            xc = np.mean(centers, axis=0)
            color = COLORS.get(m)
            _band(ax_c, xc, cov_rows, color, m)
            _band(ax_s, xc, size_rows, color, m)
        ax_c.axhline(1 - alpha, color="k", ls="--", lw=0.8)
        ax_c.set_xlabel("covariate")
        ax_s.set_xlabel("covariate")
        ax_c.set_ylabel("conditional coverage")
        ax_s.set_ylabel("average size")
        ax_s.legend(frameon=False, loc="upper center", ncol=2)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)
