"""``kolmopinn report``: convergence tables for the reference solver and PNG figures.

CSV tables are the primary output; each figure is rendered from a table
written alongside it, so everything plotted can be re-plotted elsewhere.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import artifacts  # noqa: E402
from .config import RunConfig, build_pde  # noqa: E402
from .studies import mc_rate_study, riemann_rate_study  # noqa: E402


def _rates(cfg: RunConfig, pde, out):
    rp = cfg.section("report")
    x = np.full(pde.dim, 0.5 * (pde.lower + pde.upper)) if rp.get("x") is None else np.asarray(rp["x"], float)
    t = 0.5 * pde.horizon if rp.get("t") is None else float(rp["t"])
    seed = cfg.seed_for("report")
    sizes_n = sorted(int(n) for n in rp["riemann_sizes"])
    written = []
    mc = mc_rate_study(pde, x, t, sizes_n[len(sizes_n) // 2], [int(m) for m in rp["mc_sizes"]],
                       int(rp["replicates"]), int(rp["reference_paths"]), seed, threads=cfg.threads)
    meta = {"config": cfg.echo(), "x": x.tolist(), "t": t, "slope": mc.slope}
    written.append(artifacts.write_csv(out / "mc_rate.csv", mc.header, mc.rows, meta))
    studies = [("Monte-Carlo error vs M", "M", mc.rows, 1, mc.slope)]
    if pde.exact is not None:
        rr = riemann_rate_study(pde, x, t, sizes_n, int(rp["reference_paths"]), seed, threads=cfg.threads)
        meta = {"config": cfg.echo(), "x": x.tolist(), "t": t, "slope": rr.slope, "exact": rr.reference}
        written.append(artifacts.write_csv(out / "riemann_rate.csv", rr.header, rr.rows, meta))
        studies.append(("Riemann-sum error vs N", "N", rr.rows, 3, rr.slope))

    fig, axes = plt.subplots(1, len(studies), figsize=(5 * len(studies), 4), squeeze=False)
    for ax, (title, xlabel, rows, col, slope) in zip(axes[0], studies):
        n = np.array([r[0] for r in rows], float)
        e = np.array([r[col] for r in rows], float)
        ax.loglog(n, e, "o-", label=f"fitted slope {slope:.2f}")
        ax.loglog(n, e[0] * (n / n[0]) ** (-0.5), "k--", lw=0.8, label="slope -1/2")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("error")
        ax.set_title(title)
        ax.legend()
    fig.tight_layout()
    written.append(artifacts.save_figure(fig, out / "rates.png"))
    plt.close(fig)
    return written


def _loss_figure(out):
    path = out / "loss_history.csv"
    if not path.is_file():
        return []
    header, data = artifacts.read_csv(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("interior", "spatial", "temporal", "best_total"):
        ax.semilogy(data[:, 0], data[:, header.index(name)], label=name, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("squared training error")
    ax.legend()
    fig.tight_layout()
    written = [artifacts.save_figure(fig, out / "loss_history.png")]
    plt.close(fig)
    return written


def _dynkin_figure(out, dim: int):
    path = out / "dynkin.csv"
    if not path.is_file() or dim != 1:
        return []
    header, data = artifacts.read_csv(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    x, t = data[:, 0], data[:, header.index("t")]
    est, se = data[:, header.index("estimate")], data[:, header.index("stderr")]
    for tv in np.unique(t):
        m = t == tv
        line = ax.errorbar(x[m], est[m], yerr=3 * se[m], fmt="o", ms=3, label=f"t = {tv:.3g}")
        if "exact" in header:
            order = np.argsort(x[m])
            ax.plot(x[m][order], data[m, header.index("exact")][order], "-", color=line[0].get_color(), lw=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("u(x, t)")
    ax.set_title("Dynkin estimates (bars: 3 standard errors)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    written = [artifacts.save_figure(fig, out / "dynkin.png")]
    plt.close(fig)
    return written


def build_report(cfg: RunConfig):
    out = cfg.output
    pde = build_pde(cfg, attach_boundary=False)
    written = _rates(cfg, pde, out)
    written += _loss_figure(out)
    written += _dynkin_figure(out, pde.dim)
    return written
