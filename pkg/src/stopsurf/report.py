"""Render an artifact directory into figures and a plain-text report.

Everything is driven by what the manifest lists: the value heatmap with
the boundary overlay always renders from the solve grids; the boundary
surface, continuity modulus, and martingale figures appear when the
corresponding artifacts exist.  A value slice is exported as CSV next to
the figures so the plots can be reproduced outside this package.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import artifacts as art

__all__ = ["render_report"]


def _load_outputs(artifacts_dir: Path) -> tuple[dict, dict]:
    manifest = art.verify_manifest(artifacts_dir)
    by_name = {e["name"]: artifacts_dir / e["path"] for e in manifest["outputs"]}
    return manifest, by_name


def _fig_value_heatmap(value, mask, outdir) -> Path:
    nt, nx, ny = value.shape
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    j = ny // 2
    im0 = axes[0].imshow(value[0].T, origin="lower", aspect="auto", cmap="viridis")
    axes[0].set_title("value at the first time level")
    axes[0].set_xlabel("x index")
    axes[0].set_ylabel("y index")
    fig.colorbar(im0, ax=axes[0])
    im1 = axes[1].imshow(mask[:, :, j].T, origin="lower", aspect="auto",
                         cmap="Greys", interpolation="nearest")
    axes[1].set_title(f"exercise mask, y index {j} (t left to right)")
    axes[1].set_xlabel("t index")
    axes[1].set_ylabel("x index")
    fig.colorbar(im1, ax=axes[1])
    path = outdir / "value_heatmap.png"
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _fig_boundary(boundary_csv: Path, outdir: Path) -> Path | None:
    data = np.genfromtxt(boundary_csv, delimiter=",", names=True)
    if data.size == 0:
        return None
    ys = np.unique(data["y"])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    shown = 0
    for yv in ys:
        rows = data[data["y"] == yv]
        finite = np.isfinite(rows["x_star"])
        if not finite.any():
            continue
        ax.plot(rows["t"][finite], rows["x_star"][finite], lw=1.4,
                label=f"y = {yv:.3g}")
        shown += 1
        if shown >= 7:
            break
    if shown == 0:
        plt.close(fig)
        return None
    ax.set_xlabel("t")
    ax.set_ylabel("stopping surface x*(t, y)")
    ax.set_title("extracted stopping surface")
    ax.legend(fontsize=8)
    path = outdir / "boundary_surface.png"
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _fig_continuity(continuity: dict, outdir: Path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 3.8))
    modulus = continuity.get("modulus", {})
    keys = sorted(modulus, key=lambda k: int(k))
    axes[0].bar(range(len(keys)), [modulus[k] for k in keys],
                tick_label=[f"{k} step(s)" for k in keys], color="#4878cf")
    axes[0].set_title("modulus of continuity")
    axes[0].set_ylabel("max |x* difference|")
    steps = continuity.get("max_step", {})
    axes[1].bar(range(len(steps)), [steps[a] for a in sorted(steps)],
                tick_label=sorted(steps), color="#6acc65")
    axes[1].set_title("largest single-step increment per axis")
    path = outdir / "continuity_modulus.png"
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _fig_martingale(mart: dict, outdir: Path) -> Path:
    cps = np.asarray(mart["checkpoints"], dtype=float)
    sm = np.asarray(mart["stopped_mean"], dtype=float)
    ss = np.asarray(mart["stopped_se"], dtype=float)
    um = np.asarray(mart["unstopped_mean"], dtype=float)
    us = np.asarray(mart["unstopped_se"], dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.errorbar(cps, sm, yerr=3 * ss, fmt="o-", capsize=3,
                label="stopped process mean (+-3 SE)")
    ax.errorbar(cps, um, yerr=3 * us, fmt="s--", capsize=3,
                label="unstopped process mean (+-3 SE)")
    ax.set_xlabel("checkpoint time")
    ax.set_ylabel("discounted value process mean")
    ax.set_title("martingale / supermartingale diagnostics")
    ax.legend(fontsize=8)
    path = outdir / "martingale.png"
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _assumptions_text(assumptions: dict) -> list[str]:
    lines = ["hypothesis catalog:"]
    width = max(len(i["id"]) for i in assumptions["items"])
    for item in assumptions["items"]:
        margin = item.get("margin")
        m = f"{margin:.4g}" if isinstance(margin, (int, float)) else str(margin)
        lines.append(f"  {item['id']:<{width}}  {item['status']:<14} margin={m}"
                     + (f"  [{item['notes']}]" if item.get("notes") else ""))
    return lines


def render_report(artifacts_dir: Path, outdir: Path) -> list[Path]:
    manifest, by_name = _load_outputs(artifacts_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    lines = [
        "stopsurf run report",
        f"problem: {manifest['problem']['path']} "
        f"(sha256 {manifest['problem']['sha256'][:12]}...)",
        f"grid: nt={manifest['grid']['nt']} nx={manifest['grid']['nx']} "
        f"ny={manifest['grid']['ny']}",
        f"solver: {manifest['solver']}",
        f"flags: {manifest['flags']}",
        "",
    ]

    if "value" in by_name and by_name["value"].suffix == ".grid":
        _, _, value = art.read_grid_binary(by_name["value"])
        _, _, mask = art.read_grid_binary(by_name["mask"])
        written.append(_fig_value_heatmap(value, mask, outdir))
        slice_path = outdir / "value_slice.csv"
        j = value.shape[2] // 2
        with open(slice_path, "w") as f:
            f.write("x_index,value_t0\n")
            for i in range(value.shape[1]):
                f.write(f"{i},{value[0, i, j]:.17g}\n")
        written.append(slice_path)
        lines.append(f"value range at first level: [{value[0].min():.6g}, "
                     f"{value[0].max():.6g}]")

    if "boundary" in by_name:
        fig = _fig_boundary(by_name["boundary"], outdir)
        if fig is not None:
            written.append(fig)

    if "continuity" in by_name:
        with open(by_name["continuity"]) as f:
            continuity = json.load(f)
        written.append(_fig_continuity(continuity, outdir))
        lines.append(f"continuity flags: {continuity['flags']}; "
                     f"max step: {continuity['max_step']}")
        if "smooth_fit" in continuity:
            lines.append(f"smooth-fit residuals: {continuity['smooth_fit']}")

    if "assumptions" in by_name:
        with open(by_name["assumptions"]) as f:
            assumptions = json.load(f)
        lines.extend(_assumptions_text(assumptions))

    if "martingale" in by_name:
        with open(by_name["martingale"]) as f:
            mart = json.load(f)
        written.append(_fig_martingale(mart, outdir))
        lines.append(f"martingale checkpoints: {mart['checkpoints']}")
        lines.append(f"stopped means: {mart['stopped_mean']}")

    if "policy" in by_name:
        with open(by_name["policy"]) as f:
            policy = json.load(f)
        lines.append(f"policy estimate: {policy['policy']['value']:.6g} "
                     f"+- {policy['policy']['std_error']:.3g}")
        lines.append(f"regression estimate: {policy['regression']['value']:.6g} "
                     f"+- {policy['regression']['std_error']:.3g}")

    report_path = outdir / "report.txt"
    with open(report_path, "w") as f:
        f.write("\n".join(lines) + "\n")
    written.append(report_path)

    # only report files living under the artifact dir can be manifest-listed
    recordable = [(f"report-{p.name}", p) for p in written
                  if artifacts_dir.resolve() in p.resolve().parents]
    if recordable:
        with art.output_lock(artifacts_dir):
            art.record_outputs(artifacts_dir, recordable)
    return written