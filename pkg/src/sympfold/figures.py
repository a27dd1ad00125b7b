"""SVG figures for the CLI reports (factor-1 projections of each stage)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no date so repeated runs give identical files
plt.rcParams["svg.hashsalt"] = "sympfold"
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _rect(ax, r, **kw):
    q0, q1, p0, p1 = r
    ax.plot([q0, q1, q1, q0, q0], [p0, p0, p1, p1, p0], **kw)


def dimension_plot(est, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    x = np.log(1 / np.asarray(est.scales))
    y = np.log(np.asarray(est.counts, dtype=float))
    ax.plot(x, y, "o", ms=4)
    ax.plot(x, est.slope * x + est.intercept, "-", lw=1, label=f"slope {est.slope:.4f}")
    ax.set_xlabel("log 1/h")
    ax.set_ylabel("log N(h)")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def fold_stages(snap, path, R=None, c=1.0):
    """Four panels: theta image in V_delta, the folded upper half, after the flow, in R."""
    if "delta" not in snap:
        return
    d = snap["delta"]
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
    slit = np.array([(0, -1), (1, -1), (1, 0), (d, 0), (d, d), (1, d), (1, 1), (0, 1), (0, -1)])
    kw = dict(s=1, lw=0)
    ax = axes[0]
    ax.plot(slit[:, 0], slit[:, 1], "k-", lw=0.8)
    th, plus = snap["theta"], snap["plus"]
    ax.scatter(th[plus, 0], th[plus, 1], c="tab:red", **kw)
    ax.scatter(th[~plus, 0], th[~plus, 1], c="tab:blue", **kw)
    ax.set_title("A in V_delta")
    for ax, key, title in ((axes[1], "folded", "upper half folded"),
                           (axes[2], "displaced", "after the flow")):
        ax.plot([0, 1, 1, 0, 0], [-1, -1, 0, 0, -1], "k-", lw=0.8)
        ax.scatter(snap["minus"][:, 0], snap["minus"][:, 1], c="tab:blue", **kw)
        ax.scatter(snap[key][:, 0], snap[key][:, 1], c="tab:red", **kw)
        ax.set_title(title)
    ax = axes[3]
    fin = snap["final"] / c
    ax.scatter(fin[:, 0], fin[:, 1], c="tab:purple", **kw)
    if R is not None:
        _rect(ax, R, color="k", lw=0.8)
    ax.set_title("in R")
    for ax in axes:
        ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    _save(fig, path)


def displacement_plot(a, b, v0, t, path):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(b[:, 0], b[:, 1], s=2, lw=0, c="tab:blue", label="B")
    ax.scatter(a[:, 0] + t * v0[0], a[:, 1] + t * v0[1], s=2, lw=0, c="tab:red", label="A + t v0")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(frameon=False, markerscale=4)
    fig.tight_layout()
    _save(fig, path)
