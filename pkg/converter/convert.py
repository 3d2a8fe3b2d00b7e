#!/usr/bin/env python3
"""One-shot converter from the upstream citation-network and protein-graph
distributions into the canonical bundle directory format.

Planetoid input (ind.<name>.x/.tx/.allx/.y/.ty/.ally/.graph/.test.index):
pickled scipy sparse feature blocks, one-hot label blocks, an adjacency dict,
and the test id list. Output is a transductive bundle with the standard split
masks (20 labeled nodes per class for training, 500 validation, 1000 test, as
shipped by the distribution's block layout).

Protein-graph input ({train,valid,test}_graph.json + _feats.npy + _labels.npy
+ _graph_id.npy): node-link JSON over all nodes of a split plus per-node
feature/label arrays and a graph-id array. Output is an inductive bundle
with one directory per graph and a splits.json manifest.

This tool is standalone: its only contract with the training package is the
bundle directory format itself.

Usage:
  python convert.py planetoid --src upstream/ --name cora --dst data/cora
  python convert.py ppi --src upstream/ppi --dst data/ppi
"""

from __future__ import annotations

import argparse
import hashlib
import json
import pickle
import sys
import warnings
from pathlib import Path

import numpy as np

MASK_NAMES = ("none", "train", "val", "test")


class ConvertError(Exception):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def _require(path: Path) -> Path:
    if not path.is_file():
        raise ConvertError(f"missing file: {path}")
    return path


def _md5(path: Path) -> str:
    h = hashlib.md5()
    h.update(path.read_bytes())
    return h.hexdigest()


def _check_checksums(paths: list[Path], manifest_path: str | None) -> None:
    if not manifest_path:
        return
    manifest = json.loads(Path(manifest_path).read_text())
    for p in paths:
        want = manifest.get(p.name)
        if want and want != _md5(p):
            warnings.warn(f"checksum mismatch for {p.name}: expected {want}")


def _unpickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def _to_dense(block) -> np.ndarray:
    if hasattr(block, "todense"):
        return np.asarray(block.todense(), dtype=np.float64)
    return np.asarray(block, dtype=np.float64)


def write_edges(path: Path, pairs: list[tuple[int, int]]) -> None:
    lines = ["src,dst"] + [f"{u},{v}" for u, v in sorted(pairs)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_features(path: Path, features: np.ndarray) -> None:
    lines = ["node,feat,value"]
    rows, cols = np.nonzero(features)
    for i, f in zip(rows, cols):
        lines.append(f"{i},{f},{_fmt(features[i, f])}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_masks(path: Path, masks: np.ndarray) -> None:
    lines = ["node,split"] + [f"{i},{MASK_NAMES[m]}" for i, m in enumerate(masks)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def canonical_pairs(edges, n: int) -> list[tuple[int, int]]:
    """Undirected-once edges: dedupe, drop self-loops, validate ids."""
    seen = set()
    loops = dupes = 0
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < n and 0 <= v < n):
            raise ConvertError(f"edge ({u},{v}) out of range for n={n}")
        if u == v:
            loops += 1
            continue
        key = (u, v) if u < v else (v, u)
        if key in seen:
            dupes += 1
            continue
        seen.add(key)
    if loops:
        warnings.warn(f"dropped {loops} self-loop(s); they are implicit downstream")
    if dupes:
        warnings.warn(f"dropped {dupes} duplicate edge(s)")
    return sorted(seen)


# ---------------------------------------------------------------------------
# Planetoid citation sets


def convert_planetoid(src_dir: str, name: str, dst_dir: str,
                      checksums: str | None = None) -> dict:
    if name not in ("cora", "citeseer", "pubmed"):
        raise ConvertError(f"unknown dataset name {name!r}")
    src = Path(src_dir)
    files = {suffix: _require(src / f"ind.{name}.{suffix}")
             for suffix in ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")}
    _check_checksums(list(files.values()), checksums)

    x = _to_dense(_unpickle(files["x"]))
    y = np.asarray(_unpickle(files["y"]), dtype=np.int64)
    tx = _to_dense(_unpickle(files["tx"]))
    ty = np.asarray(_unpickle(files["ty"]), dtype=np.int64)
    allx = _to_dense(_unpickle(files["allx"]))
    ally = np.asarray(_unpickle(files["ally"]), dtype=np.int64)
    graph = _unpickle(files["graph"])
    test_index = np.array([int(ln) for ln in
                           files["test.index"].read_text().split()], dtype=np.int64)

    n_allx, n_feat = allx.shape
    n_classes = y.shape[1]
    lo, hi = int(test_index.min()), int(test_index.max())
    if lo != n_allx:
        warnings.warn(f"test ids start at {lo}, expected {n_allx}")
    span = hi - lo + 1
    n = n_allx + span

    # project the tx/ty blocks into the full id space; tx row i belongs to the
    # i-th id in the test.index file (file order, not sorted). Ids missing
    # from test.index (the known citeseer gap) stay as zero rows.
    features = np.zeros((n, n_feat), dtype=np.float64)
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    features[:n_allx] = allx
    onehot[:n_allx] = ally
    features[test_index] = tx
    onehot[test_index] = ty
    isolated = sorted(set(range(lo, hi + 1)) - set(int(t) for t in test_index))
    if isolated:
        warnings.warn(f"{name}: {len(isolated)} isolated test id(s) filled with "
                      f"zero features")

    # rows without any label bit (unlabeled or isolated) fall back to class 0;
    # they are never inside a split mask
    labels = onehot.argmax(axis=1)

    masks = np.zeros(n, dtype=np.int64)
    masks[:len(y)] = 1
    masks[len(y):min(len(y) + 500, n_allx)] = 2  # validation stays in the allx block
    masks[test_index] = 3

    edges = []
    for u, nbrs in graph.items():
        for v in nbrs:
            edges.append((int(u), int(v)))
    pairs = canonical_pairs(edges, n)

    dst = Path(dst_dir)
    dst.mkdir(parents=True, exist_ok=True)
    (dst / "meta.json").write_text(json.dumps(
        {"task": "transductive", "n_features": n_feat, "n_classes": n_classes,
         "multilabel": False}, indent=1), encoding="utf-8")
    write_edges(dst / "edges.csv", pairs)
    write_features(dst / "features.csv", features)
    (dst / "labels.csv").write_text(
        "node,class\n" + "".join(f"{i},{labels[i]}\n" for i in range(n)),
        encoding="utf-8")
    write_masks(dst / "masks.csv", masks)
    stats = {"name": name, "n": n, "n_features": n_feat, "n_classes": n_classes,
             "undirected_edges": len(pairs), "directed_edge_slots": 2 * len(pairs),
             "train": int((masks == 1).sum()), "val": int((masks == 2).sum()),
             "test": int((masks == 3).sum()), "isolated_test_ids": len(isolated)}
    return stats


# ---------------------------------------------------------------------------
# protein-interaction multi-graph set


_SPLIT_ALIASES = {"train": "train", "valid": "val", "test": "test"}


def convert_ppi(src_dir: str, dst_dir: str, checksums: str | None = None) -> dict:
    src = Path(src_dir)
    dst = Path(dst_dir)
    dst.mkdir(parents=True, exist_ok=True)
    names: list[str] = []
    split_map: dict[str, str] = {}
    n_feat = n_labels = None
    node_total = 0
    for upstream_split, split in _SPLIT_ALIASES.items():
        gpath = _require(src / f"{upstream_split}_graph.json")
        feats = np.load(_require(src / f"{upstream_split}_feats.npy"))
        labels = np.load(_require(src / f"{upstream_split}_labels.npy"))
        graph_id = np.load(_require(src / f"{upstream_split}_graph_id.npy"))
        _check_checksums([gpath], checksums)
        payload = json.loads(gpath.read_text())
        links = payload.get("links", [])
        if feats.shape[0] != labels.shape[0] or feats.shape[0] != graph_id.shape[0]:
            raise ConvertError(f"{upstream_split}: node counts differ between arrays")
        if n_feat is None:
            n_feat, n_labels = feats.shape[1], labels.shape[1]
        elif (n_feat, n_labels) != (feats.shape[1], labels.shape[1]):
            raise ConvertError("feature/label widths differ across splits")

        by_graph: dict[int, np.ndarray] = {
            int(gid): np.flatnonzero(graph_id == gid)
            for gid in np.unique(graph_id)
        }
        local_of = np.full(graph_id.shape[0], -1, dtype=np.int64)
        graph_of = np.full(graph_id.shape[0], -1, dtype=np.int64)
        for gid, idx in by_graph.items():
            local_of[idx] = np.arange(idx.size)
            graph_of[idx] = gid
        edges_by_graph: dict[int, list] = {gid: [] for gid in by_graph}
        for link in links:
            u, v = int(link["source"]), int(link["target"])
            if graph_of[u] != graph_of[v]:
                raise ConvertError(f"cross-graph edge ({u},{v}) in {upstream_split}")
            edges_by_graph[int(graph_of[u])].append((int(local_of[u]), int(local_of[v])))

        for seq, gid in enumerate(sorted(by_graph)):
            idx = by_graph[gid]
            gname = f"{split}_{seq}"
            names.append(gname)
            split_map[gname] = split
            gdir = dst / gname
            gdir.mkdir(parents=True, exist_ok=True)
            write_edges(gdir / "edges.csv", canonical_pairs(edges_by_graph[gid], idx.size))
            write_features(gdir / "features.csv", feats[idx])
            lines = ["node,bitvector"]
            for i in range(idx.size):
                bits = "".join("1" if b else "0" for b in labels[idx[i]])
                lines.append(f"{i},{bits}")
            (gdir / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
            write_masks(gdir / "masks.csv",
                        np.full(idx.size, MASK_NAMES.index(split), dtype=np.int64))
            node_total += idx.size
    (dst / "splits.json").write_text(json.dumps(split_map, indent=1), encoding="utf-8")
    (dst / "meta.json").write_text(json.dumps(
        {"task": "inductive", "n_features": n_feat, "n_classes": n_labels,
         "multilabel": True, "graphs": names}, indent=1), encoding="utf-8")
    per_split = {s: sum(1 for v in split_map.values() if v == s)
                 for s in ("train", "val", "test")}
    return {"graphs": len(names), "per_split": per_split, "n_features": n_feat,
            "n_labels": n_labels, "nodes": node_total,
            "mean_nodes_per_graph": node_total / len(names)}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="convert", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("planetoid")
    p.add_argument("--src", required=True)
    p.add_argument("--name", required=True, choices=("cora", "citeseer", "pubmed"))
    p.add_argument("--dst", required=True)
    p.add_argument("--checksums", default=None)
    p = sub.add_parser("ppi")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--checksums", default=None)
    args = ap.parse_args(argv)
    try:
        if args.command == "planetoid":
            stats = convert_planetoid(args.src, args.name, args.dst, args.checksums)
        else:
            stats = convert_ppi(args.src, args.dst, args.checksums)
    except ConvertError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(stats, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
