"""Per-atom attributions (saliency, gradient activation maps) and SVG depictions."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .chem import AROMATIC, DOUBLE, TRIPLE, Molecule, parse_smiles
from .errors import BadLayerIndex, MultiOutputUnsupported, ShapeMismatch
from .featurize import encode_mol
from .graph import GraphTensor
from .layers import GnnModel
from .rng import stream

POSITIVE = (27, 120, 55)  # green
NEGATIVE = (118, 42, 131)  # purple
NEUTRAL = (247, 247, 247)


@dataclass
class AttributionMap:
    smiles: str
    scores: np.ndarray
    kind: str
    prediction: float
    symbols: Optional[list] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["atom_index", "element", "score"])
            symbols = self.symbols or [""] * len(self.scores)
            for i, (sym, s) in enumerate(zip(symbols, self.scores)):
                w.writerow([i, sym, repr(float(s))])


def _output_selector(model: GnnModel, target_index: Optional[int]) -> np.ndarray:
    k = model.num_outputs
    if target_index is None:
        if k != 1:
            raise MultiOutputUnsupported(f"model has {k} outputs; pass target_index")
        target_index = 0
    if not 0 <= target_index < k:
        raise MultiOutputUnsupported(f"target_index {target_index} out of range for {k} outputs")
    sel = np.zeros((1, k))
    sel[0, target_index] = 1.0
    return sel


def _single(g: GraphTensor) -> None:
    if g.num_subgraphs != 1:
        raise ShapeMismatch("attribution needs a single-molecule graph")


def saliency(model: GnnModel, g: GraphTensor, target_index: Optional[int] = None,
             smiles: str = "", symbols=None) -> AttributionMap:
    """score_i = sum_d |d y / d x_id| over the input node features."""
    _single(g)
    sel = _output_selector(model, target_index)
    tape = ad.Tape()
    x = tape.variable(g.node_feature, name="node_feature")
    out = model.forward(g, node_input=x, bound=model.bind(None))
    y = ad.sum(ad.mul(out, sel))
    tape.backward(y)
    scores = np.abs(tape.grad(x)).sum(axis=1)
    return AttributionMap(smiles, scores, "saliency", y.item(), symbols)


def gradcam(model: GnnModel, g: GraphTensor, layer_index: Optional[int] = None,
            target_index: Optional[int] = None, smiles: str = "", symbols=None) -> AttributionMap:
    """Signed map: score_i = sum_d alpha_d h_id with alpha_d = mean_i d y / d h_id.

    ``layer_index`` picks a graph layer (default: the last one before readout).
    """
    _single(g)
    graph_layers = model.graph_layer_indices
    if layer_index is None:
        layer_index = graph_layers[-1]
    if layer_index < 0:
        layer_index += len(graph_layers)
    if layer_index not in graph_layers:
        raise BadLayerIndex(f"layer {layer_index} is not a graph layer (valid: {graph_layers})")
    sel = _output_selector(model, target_index)
    bound = model.bind(None)
    h = model.forward(g, bound=bound, stop_at=layer_index).data
    tape = ad.Tape()
    hv = tape.variable(h, name="embedding")
    out = model.forward(g, node_input=hv, bound=bound, start_at=layer_index + 1)
    y = ad.sum(ad.mul(out, sel))
    tape.backward(y)
    alpha = tape.grad(hv).mean(axis=0)
    return AttributionMap(smiles, h @ alpha, "gradcam", y.item(), symbols)


def explain(model: GnnModel, smiles: str, method: str = "gradcam", layer_index: Optional[int] = None,
            target_index: Optional[int] = None) -> AttributionMap:
    mol = parse_smiles(smiles)
    g = encode_mol(mol, model.feature_config)
    symbols = [a.symbol for a in mol.atoms]
    if method == "saliency":
        return saliency(model, g, target_index, smiles, symbols)
    if method == "gradcam":
        return gradcam(model, g, layer_index, target_index, smiles, symbols)
    raise ValueError(f"unknown attribution method {method!r}")


# ------------------------------------------------------------------ layout

def _target_distances(mol: Molecule) -> np.ndarray:
    n = len(mol.atoms)
    d = np.full((n, n), np.inf)
    for s in range(n):
        d[s, s] = 0.0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in mol.neighbors(u):
                if d[s, v] == np.inf:
                    d[s, v] = d[s, u] + 1
                    queue.append(v)
    # ring members sit on a regular polygon with unit edges
    for ring in mol.rings:
        k = len(ring)
        for a in range(k):
            for b in range(a + 1, k):
                step = min(b - a, k - (b - a))
                chord = np.sin(np.pi * step / k) / np.sin(np.pi / k)
                i, j = ring[a], ring[b]
                d[i, j] = d[j, i] = min(d[i, j], chord)
    finite = d[np.isfinite(d)]
    gap = (finite.max() if finite.size else 0.0) + 2.0
    d[~np.isfinite(d)] = gap
    return d


def layout(mol: Molecule, seed: int = 0, iterations: int = 300) -> np.ndarray:
    """2D coordinates (unit bond length) by stress majorization on graph distances."""
    n = len(mol.atoms)
    if n == 1:
        return np.zeros((1, 2))
    d = _target_distances(mol)
    w = np.zeros_like(d)
    off = ~np.eye(n, dtype=bool)
    w[off] = 1.0 / d[off] ** 2
    x = stream(seed, "layout").uniform(-1.0, 1.0, size=(n, 2)) * np.sqrt(n)
    lap = -w.copy()
    lap[np.diag_indices(n)] = w.sum(axis=1)
    pinv = np.linalg.pinv(lap)
    for _ in range(iterations):
        diff = x[:, None, :] - x[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        b = np.zeros_like(d)
        nz = off & (dist > 1e-12)
        b[nz] = -w[nz] * d[nz] / dist[nz]
        b[np.diag_indices(n)] = -b.sum(axis=1)
        x_new = pinv @ (b @ x)
        if np.max(np.abs(x_new - x)) < 1e-9:
            x = x_new
            break
        x = x_new
    return x - x.mean(axis=0)


# --------------------------------------------------------------------- svg

def score_color(value: float, scale: float) -> str:
    t = 0.0 if scale <= 0 else max(-1.0, min(1.0, value / scale))
    end = POSITIVE if t >= 0 else NEGATIVE
    rgb = [round(n + abs(t) * (e - n)) for n, e in zip(NEUTRAL, end)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def render_svg(amap: AttributionMap, seed: int = 0, bond_px: float = 40.0) -> str:
    """SVG 1.1 depiction: bonds as lines, atoms as score-colored circles, plus a legend."""
    mol = parse_smiles(amap.smiles)
    if len(amap.scores) != len(mol.atoms):
        raise ShapeMismatch("score count does not match atom count")
    xy = layout(mol, seed) * bond_px
    margin, legend_h = 30.0, 40.0
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    xy = xy - lo + margin
    width = max(hi[0] - lo[0] + 2 * margin, 160.0)
    height = hi[1] - lo[1] + 2 * margin + legend_h
    scale = float(np.max(np.abs(amap.scores))) if len(amap.scores) else 0.0
    f = "{:.2f}".format
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{f(width)}" '
        f'height="{f(height)}" viewBox="0 0 {f(width)} {f(height)}">',
        f'<title>{_escape(amap.smiles)} ({amap.kind})</title>',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        '<g stroke="#333333" stroke-width="2" stroke-linecap="round">',
    ]
    for b in mol.bonds:
        (x1, y1), (x2, y2) = xy[b.src], xy[b.dst]
        v = np.array([x2 - x1, y2 - y1])
        nrm = np.array([-v[1], v[0]]) / (np.linalg.norm(v) or 1.0) * 4.0
        offsets = {DOUBLE: (-0.5, 0.5), TRIPLE: (-1.0, 0.0, 1.0)}.get(b.order, (0.0,))
        for o in offsets:
            dx, dy = nrm * o
            out.append(f'<line x1="{f(x1 + dx)}" y1="{f(y1 + dy)}" x2="{f(x2 + dx)}" y2="{f(y2 + dy)}"/>')
        if b.order == AROMATIC:
            dx, dy = nrm
            out.append(f'<line x1="{f(x1 + dx)}" y1="{f(y1 + dy)}" x2="{f(x2 + dx)}" '
                       f'y2="{f(y2 + dy)}" stroke-dasharray="3,3"/>')
    out.append("</g>")
    out.append('<g font-family="sans-serif" font-size="11" text-anchor="middle">')
    for a, s in zip(mol.atoms, amap.scores):
        x, y = xy[a.index]
        out.append(f'<circle cx="{f(x)}" cy="{f(y)}" r="10" fill="{score_color(float(s), scale)}" '
                   f'stroke="#555555" stroke-width="1"><title>{a.index} {a.symbol} {float(s):.4g}</title></circle>')
        out.append(f'<text x="{f(x)}" y="{f(y + 4)}">{_escape(a.symbol)}</text>')
    out.append("</g>")
    # legend: purple (negative) to green (positive)
    ly = height - legend_h + 10
    lx, lw = margin, width - 2 * margin
    out.append('<defs><linearGradient id="legend" x1="0" x2="1" y1="0" y2="0">'
               f'<stop offset="0" stop-color="{score_color(-1, 1)}"/>'
               f'<stop offset="0.5" stop-color="{score_color(0, 1)}"/>'
               f'<stop offset="1" stop-color="{score_color(1, 1)}"/></linearGradient></defs>')
    out.append(f'<rect x="{f(lx)}" y="{f(ly)}" width="{f(lw)}" height="8" fill="url(#legend)" stroke="#999999"/>')
    out.append(f'<g font-family="sans-serif" font-size="10"><text x="{f(lx)}" y="{f(ly + 20)}">{-scale:.3g}</text>'
               f'<text x="{f(lx + lw)}" y="{f(ly + 20)}" text-anchor="end">{scale:.3g}</text>'
               f'<text x="{f(lx + lw / 2)}" y="{f(ly + 20)}" text-anchor="middle">{amap.kind}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
