"""Deterministic SVG rendering of convergence tables."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

WIDTH_PX, HEIGHT_PX, DPI = 800, 600, 72


def render_convergence(table, path, expected_order=None, title=None):
    """Log-log error against step count, one line per ``N``; writes an 800x600 SVG."""
    with plt.rc_context({"svg.hashsalt": "evospace", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(WIDTH_PX / DPI, HEIGHT_PX / DPI), dpi=DPI)
        M = np.asarray(table.M_list, dtype=float)
        for i, N in enumerate(table.N_list):
            e = table.errors[i]
            ok = e > 0
            ax.loglog(M[ok], e[ok], marker="o", label=f"N = {N} (order {table.orders[N]:.3f})")
        if expected_order is not None and np.any(table.errors > 0):
            e0 = float(np.max(table.errors[:, 0]))
            ax.loglog(M, e0 * (M / M[0]) ** (-expected_order), "k--", lw=1, label=f"slope -{expected_order:g}")
        ax.set_xlabel("time steps M")
        ax.set_ylabel("L2(V) error")
        ax.set_title(title or f"{table.scheme} convergence")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
