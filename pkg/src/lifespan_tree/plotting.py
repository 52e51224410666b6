"""Static figures for reports: cut-tree scatter, 3-D tree, confusion and divergence heatmaps.

All figures use the Agg backend and strip timestamps from file metadata so
that identical inputs give identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "lifespan-tree",
    "svg.fonttype": "none",
}
_META = {"svg": {"Date": None, "Creator": None}, "png": {"Software": None}}


def _colors(labels):
    cmap = plt.get_cmap("tab10")
    return {lab: cmap(i % 10) for i, lab in enumerate(labels)}


def _save(fig, path):
    path = str(path)
    ext = path.rsplit(".", 1)[-1].lower()
    fig.savefig(path, metadata=_META.get(ext), dpi=120)
    plt.close(fig)
    return path


def plot_cut_tree(rows, labels, path, age=None):
    """2-D slice of the tree: cloud points faint, branch points bold, test subjects as stars."""
    colors = _colors(labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4.5))
        for kind, size, alpha, marker in (("cloud", 4, 0.25, "o"), ("branch", 30, 1.0, "o"),
                                          ("test", 80, 1.0, "*")):
            for lab in labels:
                pts = np.array([(r[3], r[4]) for r in rows if r[0] == kind and r[1] == lab])
                if pts.size:
                    ax.scatter(pts[:, 0], pts[:, 1], s=size, alpha=alpha, marker=marker,
                               color=colors[lab], label=lab if kind == "branch" else None,
                               edgecolors="k" if kind == "test" else "none", linewidths=0.5)
        ax.set_xlabel("embedding 1")
        ax.set_ylabel("embedding 2")
        if age is not None:
            ax.set_title(f"cut at {age:g} y")
        ax.legend(frameon=False, loc="best")
        fig.tight_layout()
        return _save(fig, path)


def plot_tree_3d(tree, path):
    """Branches as polylines over (x, y, age) with the control trunk in grey."""
    colors = _colors(tree.order)
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5.5, 5))
        ax = fig.add_subplot(projection="3d")
        if tree.trunk.shape[0]:
            ax.plot(tree.trunk[:, 1], tree.trunk[:, 2], tree.trunk[:, 0], color="0.5", lw=2)
        for lab in tree.order:
            pts = tree.branches[lab]
            ax.plot(pts[:, 1], pts[:, 2], pts[:, 0], color=colors[lab], lw=2, label=lab)
        ax.set_xlabel("embedding 1")
        ax.set_ylabel("embedding 2")
        ax.set_zlabel("age (y)")
        ax.legend(frameon=False, loc="upper left")
        return _save(fig, path)


def plot_confusion(matrix, labels, path, title=None):
    m = np.asarray(matrix)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.55 * len(labels) + 2, 0.5 * len(labels) + 1.5))
        ax.imshow(m, cmap="Blues")
        ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
        ax.set_yticks(range(len(labels)), labels)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        hi = m.max() if m.size else 0
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                ax.text(j, i, str(int(m[i, j])), ha="center", va="center", fontsize=7,
                        color="w" if m[i, j] > hi / 2 else "k")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_divergence(values, populations, ages, path, structure_names=None, top=20):
    """Heatmap of |population - control| per structure for each (population, age) column.

    ``values`` has shape (len(populations) * len(ages), n_structures); only
    the ``top`` structures with the largest maximum divergence are drawn.
    """
    V = np.asarray(values, dtype=float)
    order = np.argsort(-V.max(axis=0), kind="stable")[:top]
    cols = [f"{p} {a}" for p in populations for a in ages]
    names = structure_names or [str(i) for i in range(V.shape[1])]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.35 * len(cols) + 3, 0.22 * len(order) + 1.5))
        im = ax.imshow(V[:, order].T, cmap="magma_r", aspect="auto")
        ax.set_xticks(range(len(cols)), cols, rotation=90)
        ax.set_yticks(range(len(order)), [names[i] for i in order])
        fig.colorbar(im, ax=ax, label="|z difference|")
        fig.tight_layout()
        return _save(fig, path)
