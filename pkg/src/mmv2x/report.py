"""Figure rendering for sweep results: one PNG per metric, analytic curve
plus Monte Carlo error bars, written next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_results"]

_METRIC_LABELS = {
    "sc": "SINR coverage probability",
    "pc": "connectivity probability",
    "rc": "rate coverage probability",
    "p_local": "P(local retrieval)",
    "p_v2i": "P(V2I retrieval)",
    "p_v2v": "P(V2V retrieval)",
    "avg_conn_time": "average connection time [s]",
    "throughput": "throughput [bit/slot]",
    "delay": "delay [slots]",
}


def render_results(rows, out_dir, stem: str):
    """Render one figure per metric found in ``rows``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = sorted({r["metric"] for r in rows})
    written = []
    for metric in metrics:
        sel = [r for r in rows if r["metric"] == metric and not r.get("error")]
        if not sel:
            continue
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        param = sel[0]["sweep_param"]
        for engine, style in (("analytic", "-"), ("mc", "o")):
            pts = [r for r in sel if r["engine"] == engine]
            if not pts:
                continue
            pts.sort(key=lambda r: r["value"])
            xs = [r["value"] for r in pts]
            ys = [r["estimate"] for r in pts]
            if engine == "mc":
                lows = [r["estimate"] - r["ci_lo"] if r.get("ci_lo") is not None else 0.0
                        for r in pts]
                highs = [r["ci_hi"] - r["estimate"] if r.get("ci_hi") is not None else 0.0
                         for r in pts]
                ax.errorbar(xs, ys, yerr=[lows, highs], fmt=style, ms=4,
                            capsize=3, label="Monte Carlo")
            else:
                ax.plot(xs, ys, style, label="analytic")
        ax.set_xlabel(param)
        ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
        ax.grid(True, alpha=0.4)
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{stem}_{metric}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
