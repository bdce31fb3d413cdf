"""Embedding export, CSV round-tripping and SVG scatter plots."""
from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .data import RelationDataset, featurize_dataset
from .fewshot import EpisodeSpec, episode_rng, sample_episode

EXPORT_STREAM = 3
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


@dataclass
class EmbeddingMatrix:
    ids: list[str]
    labels: list[str]
    values: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 2 or len(self.ids) != len(self.values) or len(self.labels) != len(self.values):
            raise ValueError("ids, labels and rows must agree")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding matrix contains non-finite values")


def write_matrix_csv(m: EmbeddingMatrix, path, column_prefix: str = "dim_", columns: list[str] | None = None) -> None:
    cols = columns or [f"{column_prefix}{j}" for j in range(m.values.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if m.meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in sorted(m.meta.items())) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "class", *cols])
        for i, lab, row in zip(m.ids, m.labels, m.values):
            w.writerow([i, lab, *(repr(float(x)) for x in row)])


def read_matrix_csv(path) -> EmbeddingMatrix:
    meta: dict[str, str] = {}
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                for item in line[1:].split():
                    k, _, v = item.partition("=")
                    meta[k] = v
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, None)
    if not header or header[:2] != ["instance_id", "class"]:
        raise ValueError(f"{path}: expected header starting with instance_id,class")
    for rec in reader:
        if rec:
            rows.append(rec)
    ids = [r[0] for r in rows]
    labels = [r[1] for r in rows]
    values = np.array([[float(x) for x in r[2:]] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 2)
    return EmbeddingMatrix(ids, labels, values, meta)


def export_embeddings(
    checkpoint: Checkpoint,
    dataset: RelationDataset,
    spec: EpisodeSpec,
    seed: int,
    out_path=None,
    source: str = "",
) -> EmbeddingMatrix:
    """Encode the support set of one seeded episode (queries are not used)."""
    encoder = checkpoint.encoder()
    feats = featurize_dataset(dataset, encoder.vocab, encoder.cfg.max_rel)
    position = {id(f): (rel, i) for rel, fs in feats.items() for i, f in enumerate(fs)}
    ep = sample_episode(feats, spec, episode_rng(seed, 0, EXPORT_STREAM))
    support = ep.flat_support()
    with T.no_grad():
        emb = encoder.encode(support).data.astype(np.float64)
    ids = [f"{position[id(f)][0]}:{position[id(f)][1]}" for f in support]
    labels = [f.relation_id for f in support]
    meta = {"seed": str(seed), "nway": str(spec.n_way), "kshot": str(spec.k_shot), "model": checkpoint.config.model_name.replace(" ", "")}
    if source:
        meta["source"] = source
    m = EmbeddingMatrix(ids, labels, emb, meta)
    if out_path is not None:
        write_matrix_csv(m, out_path)
    return m


def render_scatter(coords: np.ndarray, labels, out_path, title: str = "", size: int = 600) -> None:
    """Write a standalone SVG scatter plot, one colour per class."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = [str(x) for x in labels]
    if len(coords) < 1:
        raise ValueError("nothing to plot")
    if coords.shape != (len(labels), 2):
        raise ValueError("coords must be n x 2 and match labels")
    classes = list(dict.fromkeys(labels))
    legend_w = 160
    plot = size
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    span = hi - lo

    def px(p):
        x = (p[0] - lo[0]) / span[0] * plot
        y = plot - (p[1] - lo[1]) / span[1] * plot
        return f"{x:.3f}", f"{y:.3f}"

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(plot + legend_w), height=str(plot),
                     viewBox=f"0 0 {plot + legend_w} {plot}")
    if title:
        ET.SubElement(svg, "title").text = title
    ET.SubElement(svg, "rect", x="0", y="0", width=str(plot), height=str(plot), fill="white", stroke="black")
    points = ET.SubElement(svg, "g", id="points")
    for p, lab in zip(coords, labels):
        cx, cy = px(p)
        color = PALETTE[classes.index(lab) % len(PALETTE)]
        ET.SubElement(points, "circle", cx=cx, cy=cy, r="3", fill=color, attrib={"class": lab})
    legend = ET.SubElement(svg, "g", id="legend")
    for k, lab in enumerate(classes):
        y = 20 + 18 * k
        ET.SubElement(legend, "rect", x=str(plot + 10), y=str(y - 9), width="10", height="10",
                      fill=PALETTE[k % len(PALETTE)])
        ET.SubElement(legend, "text", x=str(plot + 26), y=str(y), attrib={"font-size": "12"}).text = lab
    try:
        ET.ElementTree(svg).write(Path(out_path), encoding="utf-8", xml_declaration=True)
    except OSError as exc:
        raise OSError(f"cannot write {out_path}: {exc}") from exc
