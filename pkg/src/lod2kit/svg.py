"""Debug drawings of partitions and regularity links."""

from __future__ import annotations

import numpy as np

LINK_COLORS = {"parallel": "#2a9d2a", "orthogonal": "#8e44ad"}


def _frame(points, size=800, pad=20):
    lo = points.min(axis=0)
    span = max(float((points.max(axis=0) - lo).max()), 1e-9)
    s = (size - 2 * pad) / span

    def tx(p):
        p = np.asarray(p, float)
        return pad + (p[..., 0] - lo[0]) * s, size - pad - (p[..., 1] - lo[1]) * s

    return tx


def partition_svg(partition, graph=None, path=None, size=800, title=""):
    """SVG text of the cells (filled by label) and, if given, the graph's links."""
    V = partition.vertices
    pts = [V] + ([partition.footprint.outer] if partition.footprint is not None else [])
    tx = _frame(np.concatenate(pts), size)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">']
    if title:
        out.append(f'<title>{title}</title>')
    for k, c in enumerate(partition.cells):
        hue = (37 * (c.label if c.label is not None else k)) % 360
        d = []
        for loop in c.loops:
            x, y = tx(V[loop])
            d.append("M " + " L ".join(f"{a:.2f} {b:.2f}" for a, b in zip(x, y)) + " Z")
        out.append(f'<path d="{" ".join(d)}" fill="hsl({hue},55%,80%)" fill-rule="evenodd" stroke="#333" stroke-width="1"/>')
    if partition.footprint is not None:
        x, y = tx(partition.footprint.outer)
        pts_s = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        out.append(f'<polygon points="{pts_s}" fill="none" stroke="#c0392b" stroke-width="2" stroke-dasharray="6 4"/>')
    if graph is not None:
        mids = [0.5 * (V[a] + V[b]) if max(a, b) < len(V) else None for a, b in graph.nodes]
        for i, j, rel in graph.links:
            if mids[i] is None or mids[j] is None:
                continue
            (x1, y1), (x2, y2) = tx(mids[i]), tx(mids[j])
            out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{LINK_COLORS[rel]}" stroke-width="1.5" opacity="0.7"/>')
    x, y = tx(V)
    for a, b in zip(x, y):
        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="#000"/>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
