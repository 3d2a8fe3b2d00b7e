"""Graph data model and the canonical on-disk bundle format.

A bundle directory holds `meta.json` plus, per graph, `edges.csv` (undirected
pairs, no self-loops), `features.csv` (sparse node,feat,value triplets),
`labels.csv` and `masks.csv`; inductive bundles add `splits.json` assigning
whole graphs to train/val/test. In memory the adjacency is always symmetric
CSR with all self-loops present.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MASK_NONE, MASK_TRAIN, MASK_VAL, MASK_TEST = 0, 1, 2, 3
_MASK_NAMES = {MASK_NONE: "none", MASK_TRAIN: "train", MASK_VAL: "val", MASK_TEST: "test"}
_MASK_CODES = {v: k for k, v in _MASK_NAMES.items()}


class GraphFormatError(Exception):
    """A bundle directory violates the canonical format."""


@dataclass
class Graph:
    """One graph: symmetric self-looped CSR adjacency, features, labels, masks."""

    name: str
    n: int
    csr_offsets: np.ndarray          # int64, length n+1
    csr_targets: np.ndarray          # int64, sorted within each row
    features: np.ndarray             # float, n x F
    labels: np.ndarray               # int64 (n,) or uint8 (n, L) for multilabel
    masks: np.ndarray                # uint8 codes, length n
    n_undirected: int = 0            # unique undirected edges, self-loops excluded
    n_directed_slots: int = 0        # directed slots excluding self-loops (2x undirected)

    def degree(self, i: int) -> int:
        return int(self.csr_offsets[i + 1] - self.csr_offsets[i])

    def mask_index(self, code: int) -> np.ndarray:
        return np.flatnonzero(self.masks == code)


@dataclass
class DatasetBundle:
    task: str                        # 'transductive' | 'inductive'
    graphs: list[Graph]
    n_features: int
    n_classes: int
    multilabel: bool
    graph_split: dict[str, str] = field(default_factory=dict)

    @property
    def graph(self) -> Graph:
        if len(self.graphs) != 1:
            raise ValueError("bundle holds multiple graphs; pick one explicitly")
        return self.graphs[0]

    def graphs_for(self, split: str) -> list[Graph]:
        return [g for g in self.graphs if self.graph_split.get(g.name) == split]


def build_csr(n: int, pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CSR from undirected pairs (self-loops excluded): symmetrize + add loops."""
    if pairs.size:
        src = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    else:
        src = dst = np.arange(n)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    offsets = np.cumsum(offsets)
    return offsets.astype(np.int64), dst.astype(np.int64)


def neighbors(g: Graph, i: int) -> np.ndarray:
    """Sorted neighborhood of node i, including i itself (self-loop)."""
    if not 0 <= i < g.n:
        raise IndexError(f"node {i} out of range for graph of {g.n} nodes")
    return g.csr_targets[g.csr_offsets[i]:g.csr_offsets[i + 1]]


def edge_arrays(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Directed edge list (src, dst) implied by the CSR, self-loops included.

    dst is the CSR row (the node doing the aggregation), src the neighbor.
    """
    dst = np.repeat(np.arange(g.n, dtype=np.int64), np.diff(g.csr_offsets))
    return g.csr_targets.copy(), dst


def _canonical_pairs(rows: list[tuple[int, int]], n: int, where: str) -> np.ndarray:
    """Validate, canonicalize to u<v, warn-and-drop duplicates and self-loops."""
    seen: set[tuple[int, int]] = set()
    out = []
    dupes = 0
    loops = 0
    for u, v in rows:
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"{where}: node id out of range in edge ({u},{v})")
        if u == v:
            loops += 1
            continue
        key = (u, v) if u < v else (v, u)
        if key in seen:
            dupes += 1
            continue
        seen.add(key)
        out.append(key)
    if dupes:
        warnings.warn(f"{where}: dropped {dupes} duplicate edge(s)")
    if loops:
        warnings.warn(f"{where}: dropped {loops} explicit self-loop(s); loops are implicit")
    return np.array(sorted(out), dtype=np.int64).reshape(-1, 2)


def _read_csv(path: Path, header: str) -> list[list[str]]:
    if not path.is_file():
        raise GraphFormatError(f"missing file: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != header:
        raise GraphFormatError(f"{path}: expected header {header!r}")
    return [ln.split(",") for ln in lines[1:]]


def _load_graph(gdir: Path, name: str, n_features: int, n_classes: int,
                multilabel: bool, row_normalize: bool) -> Graph:
    label_rows = _read_csv(gdir / "labels.csv", "node,class" if not multilabel else "node,bitvector")
    n = len(label_rows)
    node_seen = np.zeros(n, dtype=bool)
    if multilabel:
        labels = np.zeros((n, n_classes), dtype=np.uint8)
    else:
        labels = np.zeros(n, dtype=np.int64)
    for row in label_rows:
        i = int(row[0])
        if not 0 <= i < n:
            raise GraphFormatError(f"{gdir}/labels.csv: node {i} out of range (n={n})")
        if node_seen[i]:
            raise GraphFormatError(f"{gdir}/labels.csv: duplicate node {i}")
        node_seen[i] = True
        if multilabel:
            bits = row[1]
            if len(bits) != n_classes or set(bits) - {"0", "1"}:
                raise GraphFormatError(f"{gdir}/labels.csv: bad bitvector for node {i}")
            labels[i] = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
        else:
            c = int(row[1])
            if not 0 <= c < n_classes:
                raise GraphFormatError(f"{gdir}/labels.csv: label {c} out of range for node {i}")
            labels[i] = c
    if not node_seen.all():
        raise GraphFormatError(f"{gdir}/labels.csv: nodes without labels present")

    edge_rows = _read_csv(gdir / "edges.csv", "src,dst")
    pairs = _canonical_pairs([(int(r[0]), int(r[1])) for r in edge_rows], n, str(gdir / "edges.csv"))

    features = np.zeros((n, n_features), dtype=np.float64)
    for row in _read_csv(gdir / "features.csv", "node,feat,value"):
        i, f, v = int(row[0]), int(row[1]), float(row[2])
        if not 0 <= i < n:
            raise GraphFormatError(f"{gdir}/features.csv: node {i} out of range")
        if not 0 <= f < n_features:
            raise GraphFormatError(f"{gdir}/features.csv: feature {f} out of range")
        features[i, f] = v
    if row_normalize:
        norms = features.sum(axis=1, keepdims=True)
        np.divide(features, norms, out=features, where=norms != 0)

    masks = np.zeros(n, dtype=np.uint8)
    for row in _read_csv(gdir / "masks.csv", "node,split"):
        i = int(row[0])
        if not 0 <= i < n:
            raise GraphFormatError(f"{gdir}/masks.csv: node {i} out of range")
        if row[1] not in _MASK_CODES:
            raise GraphFormatError(f"{gdir}/masks.csv: unknown split {row[1]!r}")
        masks[i] = _MASK_CODES[row[1]]

    offsets, targets = build_csr(n, pairs)
    return Graph(name=name, n=n, csr_offsets=offsets, csr_targets=targets,
                 features=features, labels=labels, masks=masks,
                 n_undirected=len(pairs), n_directed_slots=2 * len(pairs))


def load_bundle(path, row_normalize: bool = False) -> DatasetBundle:
    """Load and validate a canonical bundle directory."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise GraphFormatError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    for key in ("task", "n_features", "n_classes", "multilabel"):
        if key not in meta:
            raise GraphFormatError(f"meta.json: missing key {key!r}")
    task = meta["task"]
    if task not in ("transductive", "inductive"):
        raise GraphFormatError(f"meta.json: unknown task {task!r}")

    if task == "transductive":
        g = _load_graph(root, root.name or "graph", meta["n_features"],
                        meta["n_classes"], meta["multilabel"], row_normalize)
        bundle = DatasetBundle(task=task, graphs=[g], n_features=meta["n_features"],
                               n_classes=meta["n_classes"], multilabel=meta["multilabel"])
    else:
        names = meta.get("graphs")
        if not names:
            raise GraphFormatError("meta.json: inductive bundle needs a 'graphs' list")
        splits_path = root / "splits.json"
        if not splits_path.is_file():
            raise GraphFormatError(f"missing file: {splits_path}")
        graph_split = json.loads(splits_path.read_text(encoding="utf-8"))
        graphs = []
        for name in names:
            if graph_split.get(name) not in ("train", "val", "test"):
                raise GraphFormatError(f"splits.json: graph {name!r} has no valid split")
            graphs.append(_load_graph(root / name, name, meta["n_features"],
                                      meta["n_classes"], meta["multilabel"], row_normalize))
        bundle = DatasetBundle(task=task, graphs=graphs, n_features=meta["n_features"],
                               n_classes=meta["n_classes"], multilabel=meta["multilabel"],
                               graph_split=graph_split)
    problems = validate(bundle)
    if problems:
        raise GraphFormatError("bundle failed validation: " + "; ".join(problems))
    return bundle


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def _save_graph(g: Graph, gdir: Path, multilabel: bool) -> None:
    gdir.mkdir(parents=True, exist_ok=True)
    lines = ["src,dst"]
    for i in range(g.n):
        for j in neighbors(g, i):
            if i < j:
                lines.append(f"{i},{j}")
    (gdir / "edges.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["node,feat,value"]
    rows, cols = np.nonzero(g.features)
    for i, f in zip(rows, cols):
        lines.append(f"{i},{f},{_fmt(g.features[i, f])}")
    (gdir / "features.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if multilabel:
        lines = ["node,bitvector"]
        for i in range(g.n):
            lines.append(f"{i},{''.join('1' if b else '0' for b in g.labels[i])}")
    else:
        lines = ["node,class"]
        for i in range(g.n):
            lines.append(f"{i},{int(g.labels[i])}")
    (gdir / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["node,split"]
    for i in range(g.n):
        lines.append(f"{i},{_MASK_NAMES[int(g.masks[i])]}")
    (gdir / "masks.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_bundle(bundle: DatasetBundle, path) -> None:
    """Write a bundle back out in the canonical directory format."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"task": bundle.task, "n_features": bundle.n_features,
            "n_classes": bundle.n_classes, "multilabel": bundle.multilabel}
    if bundle.task == "inductive":
        meta["graphs"] = [g.name for g in bundle.graphs]
        (root / "splits.json").write_text(json.dumps(bundle.graph_split, indent=1),
                                          encoding="utf-8")
        for g in bundle.graphs:
            _save_graph(g, root / g.name, bundle.multilabel)
    else:
        _save_graph(bundle.graph, root, bundle.multilabel)
    (root / "meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def validate(bundle: DatasetBundle) -> list[str]:
    """Run every structural invariant; returns a list of violations (empty = ok)."""
    problems: list[str] = []
    for g in bundle.graphs:
        tag = f"graph {g.name!r}"
        off, tgt = g.csr_offsets, g.csr_targets
        if off.shape != (g.n + 1,) or off[0] != 0 or (np.diff(off) < 0).any():
            problems.append(f"{tag}: csr_offsets not a valid nondecreasing index")
            continue
        if off[-1] != len(tgt):
            problems.append(f"{tag}: csr_offsets[-1] != len(csr_targets)")
            continue
        if tgt.size and (tgt.min() < 0 or tgt.max() >= g.n):
            problems.append(f"{tag}: edge target out of range")
            continue
        pairs = {(i, int(j)) for i in range(g.n) for j in neighbors(g, i)}
        for i, j in pairs:
            if (j, i) not in pairs:
                problems.append(f"{tag}: edge ({i},{j}) has no reverse edge")
                break
        for i in range(g.n):
            if (i, i) not in pairs:
                problems.append(f"{tag}: node {i} is missing its self-loop")
                break
        if g.features.shape != (g.n, bundle.n_features):
            problems.append(f"{tag}: feature matrix shape {g.features.shape} != "
                            f"({g.n}, {bundle.n_features})")
        if bundle.multilabel:
            if g.labels.shape != (g.n, bundle.n_classes):
                problems.append(f"{tag}: multilabel matrix has wrong shape")
            elif not np.isin(g.labels, (0, 1)).all():
                problems.append(f"{tag}: multilabel entries outside {{0,1}}")
        else:
            if g.labels.shape != (g.n,):
                problems.append(f"{tag}: label vector has wrong shape")
            elif g.labels.size and (g.labels.min() < 0 or g.labels.max() >= bundle.n_classes):
                problems.append(f"{tag}: label outside [0, {bundle.n_classes})")
        if not np.isin(g.masks, (MASK_NONE, MASK_TRAIN, MASK_VAL, MASK_TEST)).all():
            problems.append(f"{tag}: unknown mask code")
    if bundle.task == "inductive":
        for split in ("train", "val", "test"):
            if not bundle.graphs_for(split):
                problems.append(f"inductive bundle has no {split} graphs")
        assigned = [bundle.graph_split.get(g.name) for g in bundle.graphs]
        if any(s not in ("train", "val", "test") for s in assigned):
            problems.append("some graphs are missing a split assignment")
    return problems


def standard_splits(bundle: DatasetBundle, kind: str = "planetoid-standard",
                    seed: int = 0, sizes: tuple[int, int, int] | None = None) -> DatasetBundle:
    """Resolve node masks: keep the shipped standard split, or draw a random one."""
    if bundle.task != "transductive":
        raise ValueError("node-level splits only apply to transductive bundles")
    g = bundle.graph
    if kind == "planetoid-standard":
        # one code per node, so splits are disjoint by storage
        if not (g.masks == MASK_TRAIN).any():
            raise ValueError("bundle ships no train mask; use a random split")
        return bundle
    if kind != "random":
        raise ValueError(f"unknown split kind {kind!r}")
    if sizes is None or len(sizes) != 3:
        raise ValueError("random split needs (train, val, test) sizes")
    n_train, n_val, n_test = map(int, sizes)
    if n_train + n_val + n_test > g.n:
        raise ValueError(f"requested split sizes sum to {n_train + n_val + n_test} > n={g.n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.n)
    masks = np.zeros(g.n, dtype=np.uint8)
    masks[perm[:n_train]] = MASK_TRAIN
    masks[perm[n_train:n_train + n_val]] = MASK_VAL
    masks[perm[n_train + n_val:n_train + n_val + n_test]] = MASK_TEST
    new_graph = replace(g, masks=masks)
    return replace(bundle, graphs=[new_graph])
