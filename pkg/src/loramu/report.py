"""Figure rendering for the CLI report path (PNG files next to the CSV)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_ser_records", "plot_bound_curve", "plot_sca_trace"]


def plot_ser_records(records, path) -> None:
    """Semilog SER-vs-SNR curves, one line per experiment id."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    by_id = {}
    for r in records:
        by_id.setdefault(r.experiment_id, []).append(r)
    for exp_id, recs in by_id.items():
        recs = sorted(recs, key=lambda r: r.snr_db)
        ax.semilogy([r.snr_db for r in recs],
                    [max(r.ser_avg, 1.0 / (10 * r.trials)) for r in recs],
                    marker="o", label=exp_id)
    ax.set_xlabel("reference SNR (dB)")
    ax.set_ylabel("average SER")
    ax.grid(True, which="both", alpha=0.4)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bound_curve(p_th_grid, bound_values, path, p_th_opt=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.semilogy(p_th_grid, bound_values)
    if p_th_opt is not None:
        ax.axvline(p_th_opt, color="r", ls="--", label=f"opt {p_th_opt:.4g}")
        ax.legend()
    ax.set_xlabel("power threshold")
    ax.set_ylabel("identification error upper bound")
    ax.grid(True, which="both", alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sca_trace(trace, path) -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    its = [t.iteration for t in trace]
    ax1.plot(its, [t.lam for t in trace], marker=".")
    ax1.set_ylabel("lambda")
    ax1.grid(alpha=0.4)
    ax2.plot(its, [t.max_pair_jaccard for t in trace], marker=".", color="g")
    ax2.set_ylabel("max pair Jaccard")
    ax2.set_xlabel("iteration")
    ax2.grid(alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
