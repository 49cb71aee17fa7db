"""Optional PNG figures rendered next to the CSV outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_LABELS = {"normal": "normal PF", "annealed": "annealed PF", "multiple_update": "multiple-update PF"}
# no timestamps or version strings, so reruns produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def plot_convergence(summary, path, threshold_cm=10.0):
    """Mean 3D error and fixed rate per epoch for each strategy."""
    fig, (ax_err, ax_fix) = plt.subplots(1, 2, figsize=(10, 4))
    epochs = np.arange(1, summary.epochs + 1)
    for name, s in summary.strategies.items():
        label = _LABELS.get(name, name)
        ax_err.semilogy(epochs, s.per_epoch_quantiles_cm["50"], marker="o", ms=3, label=label)
        ax_fix.plot(epochs, s.per_epoch_fix_pct, marker="o", ms=3, label=label)
    ax_err.axhline(threshold_cm, color="grey", ls="--", lw=0.8)
    ax_err.set(xlabel="epoch", ylabel="median 3D error [cm]")
    ax_fix.set(xlabel="epoch", ylabel="fixed rate [%]", ylim=(-2, 102))
    ax_fix.legend(loc="lower right")
    fig.suptitle(f"{summary.n_trials} trials, N={summary.n_particles}")
    _save(fig, path)


def plot_sweep(sweep, path):
    """Final-epoch fixed rate against particle count."""
    counts = sorted(sweep)
    strategies = list(sweep[counts[0]].strategies)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in strategies:
        rates = [sweep[n].strategies[name].final_fix_pct for n in counts]
        ax.plot(counts, rates, marker="o", label=_LABELS.get(name, name))
    ax.set_xscale("log")
    ax.set_xticks(counts, [str(n) for n in counts])
    ax.set(xlabel="particles", ylabel="final fixed rate [%]", ylim=(-2, 102))
    ax.legend()
    _save(fig, path)


def plot_gridmap(gmap, path):
    off = gmap.offsets
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    extent = (off[0], off[-1], off[0], off[-1])
    im = ax.imshow(gmap.values, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label="log-likelihood")
    axes = {"en": ("east [m]", "north [m]"), "eu": ("east [m]", "up [m]"), "nu": ("north [m]", "up [m]")}
    xl, yl = axes[gmap.plane]
    ax.plot(0, 0, "r+", ms=10)
    ax.set(xlabel=xl, ylabel=yl, title=gmap.selector)
    _save(fig, path)


def plot_error_cdf(result, path):
    thr, frac = zip(*result.cdf())
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(thr, frac, where="post")
    ax.axvline(0.1, color="grey", ls="--", lw=0.8)
    ax.set(xlabel="3D error threshold [m]", ylabel="fraction of epochs", ylim=(0, 1.02))
    _save(fig, path)
