"""Optional figures for the CLI report path.

matplotlib is imported lazily so the numerical core never depends on it;
install the ``plot`` extra to use these functions.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

PHASE_COLORS = {"P": "#d9d9d9", "N": "#1f77b4", "D": "#d62728", "T": "#2ca02c",
                "SMF": "#ff7f0e", "SMF_CDW": "#9467bd", "U": "#8c564b", None: "#000000"}


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def phase_diagram(records, path) -> Path:
    """Scatter of phase labels in the (g, h) plane."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, color in PHASE_COLORS.items():
        pts = [(r["g"], r["h"]) for r in records if r["phase"] == label]
        if pts:
            g, h = np.array(pts).T
            ax.scatter(g, h, c=color, s=18, marker="s", label=label or "unconverged")
    ax.set_xlabel(r"$g/\Delta$")
    ax.set_ylabel(r"$h/\Delta$")
    ax.legend(fontsize=7, loc="upper left", frameon=False)
    return _save(fig, path)


def magnetization_curves(records, path) -> Path:
    """M_z(h) for every g column of a sweep."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for g in sorted({r["g"] for r in records}):
        col = sorted((r for r in records if r["g"] == g), key=lambda r: r["h"])
        ax.step([r["h"] for r in col], [r["M_z"] for r in col], where="mid", lw=1,
                label=f"g = {g:g}")
    ax.set_xlabel(r"$h/\Delta$")
    ax.set_ylabel(r"$M_z$")
    if len(ax.lines) <= 8:
        ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def classical_map(rows, path) -> Path:
    """Optimal dimerization and strong-bond triplet fraction against J for each field."""
    plt = _pyplot()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    for h in sorted({r["h"] for r in rows}):
        col = sorted((r for r in rows if r["h"] == h), key=lambda r: r["J"])
        J = [r["J"] for r in col]
        a1.plot(J, [r["delta_star"] for r in col], lw=1, label=f"h = {h:g}")
        a2.plot(J, [r["T_S"] for r in col], lw=1)
    a1.set_xlabel(r"$J/V_L$")
    a1.set_ylabel(r"$\delta^*/a$")
    a2.set_xlabel(r"$J/V_L$")
    a2.set_ylabel(r"$T_S$")
    if len(a1.lines) <= 8:
        a1.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def profiles(record: dict, path) -> Path:
    """Site profiles of <sigma^z>, <sigma~^z>, <sigma~^x> stored in a point record."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3))
    for key, label in (("sz", r"$\sigma^z$"), ("tz", r"$\tilde\sigma^z$"), ("tx", r"$\tilde\sigma^x$")):
        if record.get(key) is not None:
            ax.plot(record[key], marker=".", lw=0.8, label=label)
    ax.set_xlabel("site")
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    fig.clf()
    import matplotlib.pyplot as plt
    plt.close(fig)
    return path
