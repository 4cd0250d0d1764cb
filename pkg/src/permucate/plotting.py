"""Optional figure emission from result CSVs (post-hoc, never load-bearing)."""

from __future__ import annotations

from pathlib import Path

import pandas as pd

from .errors import DataError


def _save(fig, out_dir: Path, name: str) -> Path:
    out = out_dir / f"{name}.png"
    fig.savefig(out, dpi=150, bbox_inches="tight")
    return out


def plot_results(results_csv, out_dir) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    df = pd.read_csv(results_csv)
    if not len(df):
        raise DataError("results CSV is empty")
    experiment = str(df["experiment"].iloc[0])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    if experiment in ("fig1_ld_power", "s1_risk_compare"):
        for risk, rdf in df.groupby("risk_kind"):
            fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
            for ax, method in zip(axes, ("loco", "permucate")):
                sub = rdf[rdf["method"] == method]
                agg = sub.groupby(["variable", "n"])["psi"].agg(["mean", "std"]).reset_index()
                for var, vdf in agg.groupby("variable"):
                    ax.errorbar(vdf["n"], vdf["mean"], yerr=vdf["std"], label=f"x{var}")
                ax.set_title(method)
                ax.set_xlabel("n")
            axes[0].set_ylabel("importance")
            axes[0].legend(fontsize=7)
            paths.append(_save(fig, out_dir, f"{experiment}_{risk}"))
            plt.close(fig)
    elif experiment == "fig2_variance":
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        var2 = df[df["variable"] == 2]
        for method, mdf in var2.groupby("method"):
            v = mdf.groupby(["n", "seed"])["psi"].var().groupby("n").mean()
            axes[0].plot(v.index, v.values, marker="o", label=method)
        axes[0].set_xlabel("n"); axes[0].set_ylabel("fold variance of psi (x2)")
        axes[0].legend()
        diag = df.dropna(subset=["diagnostic_delta_beta"])
        if len(diag):
            by_n = diag.groupby("n")[["diagnostic_delta_beta", "diagnostic_nu_var"]].median()
            axes[1].semilogy(by_n.index, by_n["diagnostic_delta_beta"], marker="o", label="refit coef shift")
            axes[1].semilogy(by_n.index, by_n["diagnostic_nu_var"], marker="s", label="cond-mean variance")
            axes[1].set_xlabel("n"); axes[1].legend()
        paths.append(_save(fig, out_dir, experiment))
        plt.close(fig)
    elif experiment == "fig3_tp_accuracy":
        fig, ax = plt.subplots(figsize=(6, 4))
        # detection: per-seed mean psi sign is not enough; plot mean psi per n/d
        for (method, d), mdf in df.groupby(["method", "d"]):
            agg = mdf.groupby("n")["psi"].mean()
            ax.plot(agg.index, agg.values, marker="o", label=f"{method} d={d}")
        ax.set_xlabel("n"); ax.set_ylabel("mean importance"); ax.legend(fontsize=7)
        paths.append(_save(fig, out_dir, experiment))
        plt.close(fig)
    elif experiment == "s4_delta_beta_dims":
        fig, ax = plt.subplots(figsize=(6, 4))
        diag = df.dropna(subset=["diagnostic_delta_beta"])
        for d, ddf in diag.groupby("d"):
            agg = ddf.groupby("n")["diagnostic_delta_beta"].mean()
            ax.semilogy(agg.index, agg.values, marker="o", label=f"d={d}")
        ax.set_xlabel("n"); ax.set_ylabel("refit coefficient shift"); ax.legend()
        paths.append(_save(fig, out_dir, experiment))
        plt.close(fig)
    else:
        raise DataError(f"unknown experiment in results CSV: {experiment!r}")
    return paths
