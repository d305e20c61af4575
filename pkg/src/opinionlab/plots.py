"""Static plot files from scenario results.  Pure post-processing."""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_series_csv(path: str) -> dict[str, list[float]]:
    with open(path) as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        table: dict[str, list[float]] = {c: [] for c in cols}
        for row in reader:
            for c, v in zip(cols, row):
                table[c].append(float(v))
    return table


def _load_result_dir(result_dir: str) -> tuple[dict, dict]:
    with open(os.path.join(result_dir, "result.json")) as fh:
        result = json.load(fh)
    series = {}
    for name in result.get("series_files", []):
        path = os.path.join(result_dir, f"series_{name}.csv")
        if os.path.exists(path):
            series[name] = _read_series_csv(path)
    return result, series


def emit_plots(result_dir: str, out_dir: str | None = None) -> list[str]:
    """Render every recognized series of a written result to PNG files."""
    result, series = _load_result_dir(result_dir)
    out_dir = out_dir or result_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []

    for name, table in sorted(series.items()):
        path = os.path.join(out_dir, f"{name}.png")
        fig, ax = plt.subplots(figsize=(7, 4.5))
        if name.startswith("probes") or name == "envelope":
            t = table["t"]
            for col in sorted(table):
                if col == "t":
                    continue
                ax.plot(t, table[col], lw=0.9, label=col)
            ax.set_xlabel("t")
            ax.set_ylabel("opinion")
            ax.legend(fontsize=7, ncol=2)
            ax.set_title(f"{result['scenario']}: trajectories")
        elif name.startswith("lyapunov"):
            ax.semilogy([t for t, v in zip(table["t"], table["L"]) if v > 0],
                        [v for v in table["L"] if v > 0], lw=1.0)
            ax.set_xlabel("t")
            ax.set_ylabel("L(t)")
            ax.set_title(f"{result['scenario']}: weighted disagreement decay")
        elif name == "pt_decay":
            ax.loglog(table["t"], table["p_t"], ".", ms=3)
            slope = result["metrics"].get("slope")
            if slope is not None:
                ax.set_title(f"max walk probability, fitted slope {slope:.3f}")
            ax.set_xlabel("t")
            ax.set_ylabel("p_t")
        elif name == "sweep":
            eps = table["eps"]
            for col in sorted(table):
                if col.startswith("mean_error"):
                    ax.plot(eps, table[col], "o-", label=col)
            ax.set_xlabel("eps")
            ax.set_ylabel("mean audited error")
            ax.set_xscale("log")
            ax.legend(fontsize=8)
            ax.set_title(f"{result['scenario']}: learning error vs eps")
        else:
            cols = [c for c in sorted(table) if c != "t"]
            x = table.get("t", list(range(len(table[cols[0]]))))
            for col in cols:
                ax.plot(x, table[col], label=col)
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
