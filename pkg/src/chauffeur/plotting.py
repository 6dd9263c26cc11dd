"""Static, byte-deterministic SVG charts: sweep curves, embeddings, trajectories."""
from __future__ import annotations

import math

import numpy as np

from .errors import MissingInput
from .geometry import rect_corners

W, H, PAD = 640, 480, 56
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _f(v) -> str:
    return f"{float(v):.3f}"


class _Canvas:
    def __init__(self, title: str):
        self.parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
                      f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
                      f'<text x="{W / 2}" y="22" text-anchor="middle" font-family="sans-serif" '
                      f'font-size="15">{_esc(title)}</text>']

    def add(self, s: str):
        self.parts.append(s)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.parts + ["</svg>"]) + "\n")


def _esc(s) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Axes:
    """Maps data coordinates to the plot area, optionally with equal aspect."""

    def __init__(self, xs, ys, equal=False):
        x0, x1 = float(np.min(xs)), float(np.max(xs))
        y0, y1 = float(np.min(ys)), float(np.max(ys))
        if x1 - x0 < 1e-9:
            x0, x1 = x0 - 1.0, x1 + 1.0
        if y1 - y0 < 1e-9:
            y0, y1 = y0 - 1.0, y1 + 1.0
        mx, my = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
        self.x0, self.x1, self.y0, self.y1 = x0 - mx, x1 + mx, y0 - my, y1 + my
        self.sx = (W - 2 * PAD) / (self.x1 - self.x0)
        self.sy = (H - 2 * PAD) / (self.y1 - self.y0)
        if equal:
            self.sx = self.sy = min(self.sx, self.sy)

    def px(self, x):
        return PAD + (x - self.x0) * self.sx

    def py(self, y):
        return H - PAD - (y - self.y0) * self.sy

    def polyline(self, pts, color, width=1.5, dash=None):
        d = " ".join(f"{_f(self.px(x))},{_f(self.py(y))}" for x, y in pts)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'

    def frame(self, xlabel, ylabel, ticks=5):
        out = [f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="#444"/>']
        for i in range(ticks + 1):
            xv = self.x0 + (self.x1 - self.x0) * i / ticks
            yv = self.y0 + (self.y1 - self.y0) * i / ticks
            out.append(f'<text x="{_f(PAD + (W - 2 * PAD) * i / ticks)}" y="{H - PAD + 16}" text-anchor="middle" '
                       f'font-family="sans-serif" font-size="10">{xv:.3g}</text>')
            out.append(f'<text x="{PAD - 6}" y="{_f(H - PAD - (H - 2 * PAD) * i / ticks + 3)}" text-anchor="end" '
                       f'font-family="sans-serif" font-size="10">{yv:.3g}</text>')
        out.append(f'<text x="{W / 2}" y="{H - 14}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12">{_esc(xlabel)}</text>')
        out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
                   f'transform="rotate(-90 16 {H / 2})">{_esc(ylabel)}</text>')
        return out


def sweep_svg(rows, path, metric: str = "AR", title: str = None) -> None:
    """One curve per ``max_yaw`` (degrees in the legend) over ``max_xy``."""
    rows = list(rows)
    if not rows:
        raise MissingInput("no sweep rows to plot")
    yaws = sorted({r["max_yaw"] for r in rows})
    xs = [r["max_xy"] for r in rows]
    ys = [r[metric] for r in rows]
    ax = _Axes(xs, ys)
    c = _Canvas(title or f"{metric} under ego shifting")
    for s in ax.frame("max shift xy (m)", metric):
        c.add(s)
    for k, yaw in enumerate(yaws):
        pts = sorted((r["max_xy"], r[metric]) for r in rows if r["max_yaw"] == yaw)
        color = PALETTE[k % len(PALETTE)]
        c.add(ax.polyline(pts, color, 2.0))
        for x, y in pts:
            c.add(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="3" fill="{color}"/>')
        ly = PAD + 14 + 14 * k
        c.add(f'<text x="{W - PAD - 4}" y="{ly}" text-anchor="end" font-family="sans-serif" font-size="11" '
              f'fill="{color}">yaw {math.degrees(yaw):.3g} deg</text>')
    c.write(path)


def embedding_svg(ids, points, labels, selected, path, title: str = "scenario embedding") -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        raise MissingInput("no embedding points to plot")
    ax = _Axes(points[:, 0], points[:, 1], equal=True)
    c = _Canvas(title)
    chosen = set(selected)
    for i, (x, y) in enumerate(points):
        lab = int(labels[i]) if labels is not None and len(labels) else 0
        color = PALETTE[lab % len(PALETTE)] if lab >= 0 else "#777"
        c.add(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="3" fill="{color}" fill-opacity="0.7"/>')
        if ids[i] in chosen:
            c.add(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="7" fill="none" stroke="black" '
                  f'stroke-width="1.5"/>')
    c.write(path)


def trajectory_svg(scenario, trajectories, path, title: str = None) -> None:
    """Top-down view: road edges, routing, t=0 agent boxes, and ego paths."""
    trajectories = [np.asarray(t, dtype=float) for t in trajectories]
    if scenario is None:
        raise MissingInput("no scenario to plot")
    pts = [p for p in scenario.map_polylines] + [scenario.routing] + [t[:, :2] for t in trajectories if len(t)]
    allp = np.concatenate(pts)
    ax = _Axes(allp[:, 0], allp[:, 1], equal=True)
    c = _Canvas(title or scenario.id)
    for poly, kind in zip(scenario.map_polylines, scenario.polyline_kinds):
        color = "#333" if kind == "road_edge" else "#bbb"
        c.add(ax.polyline(poly, color, 1.5))
    c.add(ax.polyline(scenario.routing, "#2ca02c", 3.0, dash="6 4"))
    for i, a in enumerate(scenario.agents):
        s0 = a.states[0]
        corners = rect_corners(np.array([s0[0], s0[1], a.length, a.width, s0[2]]))
        d = " ".join(f"{_f(ax.px(x))},{_f(ax.py(y))}" for x, y in corners)
        fill = "#1f77b4" if i == scenario.ego_index else "#999"
        c.add(f'<polygon points="{d}" fill="{fill}" fill-opacity="0.6" stroke="black" stroke-width="0.5"/>')
    for k, t in enumerate(trajectories):
        if len(t):
            c.add(ax.polyline(t[:, :2], PALETTE[(k + 1) % len(PALETTE)], 1.5))
    c.write(path)
