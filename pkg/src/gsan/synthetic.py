"""Synthetic datasets: a separable stochastic-block-model fixture, random
graphs for scaling measurements, and a tiny multilabel multi-graph bundle.

These back the test suite and the acceptance gate, so everything here is
fully determined by its seed.
"""

from __future__ import annotations

import numpy as np

from .graph import (
    MASK_TEST,
    MASK_TRAIN,
    MASK_VAL,
    DatasetBundle,
    Graph,
    build_csr,
)


def _graph_from_pairs(name: str, n: int, pairs: np.ndarray, features, labels,
                      masks=None) -> Graph:
    offsets, targets = build_csr(n, pairs)
    return Graph(name=name, n=n, csr_offsets=offsets, csr_targets=targets,
                 features=np.asarray(features, dtype=np.float64),
                 labels=labels,
                 masks=np.zeros(n, dtype=np.uint8) if masks is None else masks,
                 n_undirected=len(pairs), n_directed_slots=2 * len(pairs))


def sbm_bundle(n: int = 30, n_blocks: int = 2, p_in: float = 0.5, p_out: float = 0.05,
               n_features: int = 8, noise: float = 0.3, seed: int = 0,
               sizes: tuple[int, int, int] = (10, 10, 10)) -> DatasetBundle:
    """Two-community SBM whose labels equal block membership and whose features
    leak the block id, so the task is solvable by construction."""
    rng = np.random.default_rng(seed)
    blocks = np.arange(n) % n_blocks
    pairs = []
    for u in range(n):
        for v in range(u + 1, n):
            p = p_in if blocks[u] == blocks[v] else p_out
            if rng.random() < p:
                pairs.append((u, v))
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    features = rng.normal(0.0, noise, size=(n, n_features))
    for i in range(n):
        features[i, blocks[i] % n_features] += 1.0
    n_train, n_val, n_test = sizes
    if n_train + n_val + n_test > n:
        raise ValueError("split sizes exceed node count")
    perm = rng.permutation(n)
    masks = np.zeros(n, dtype=np.uint8)
    masks[perm[:n_train]] = MASK_TRAIN
    masks[perm[n_train:n_train + n_val]] = MASK_VAL
    masks[perm[n_train + n_val:n_train + n_val + n_test]] = MASK_TEST
    g = _graph_from_pairs("sbm", n, pairs, features, blocks.astype(np.int64), masks)
    return DatasetBundle(task="transductive", graphs=[g], n_features=n_features,
                         n_classes=n_blocks, multilabel=False)


def random_graph(n: int, n_edges: int, n_features: int, n_classes: int,
                 seed: int = 0, name: str = "random") -> Graph:
    """Uniform random undirected graph with random features and labels."""
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, int]] = set()
    attempts = 0
    while len(seen) < n_edges and attempts < 20 * n_edges:
        u, v = rng.integers(0, n, size=2)
        attempts += 1
        if u == v:
            continue
        seen.add((min(u, v), max(u, v)))
    pairs = np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)
    features = rng.normal(size=(n, n_features))
    labels = rng.integers(0, n_classes, size=n).astype(np.int64)
    return _graph_from_pairs(name, n, pairs, features, labels)


def random_bundle(n: int, n_edges: int, n_features: int, n_classes: int,
                  seed: int = 0) -> DatasetBundle:
    g = random_graph(n, n_edges, n_features, n_classes, seed)
    rng = np.random.default_rng(seed + 1)
    masks = rng.integers(1, 4, size=n).astype(np.uint8)
    g.masks = masks
    return DatasetBundle(task="transductive", graphs=[g], n_features=n_features,
                         n_classes=n_classes, multilabel=False)


def inductive_toy_bundle(n_per_graph: int = 60, n_labels: int = 3,
                         n_train_graphs: int = 3, seed: int = 0) -> DatasetBundle:
    """Small multilabel graphs (train/val/test) where each label is the sign of
    the neighborhood-mean feature (self-loop included), i.e. exactly what one
    round of uniform attention reads off, so the task is separable by
    construction."""
    rng = np.random.default_rng(seed)
    roles = [("g-train%d" % i, "train") for i in range(n_train_graphs)]
    roles += [("g-val", "val"), ("g-test", "test")]
    graphs = []
    split = {}
    for name, role in roles:
        n = n_per_graph
        features = 2.0 * rng.normal(size=(n, n_labels))
        labels = (features > 0).astype(np.uint8)
        # homophilous edges: only nodes with identical label patterns connect,
        # so neighborhood mixing reinforces the per-node signal
        pairs = []
        for u in range(n):
            for v in range(u + 1, n):
                if (labels[u] == labels[v]).all() and rng.random() < 0.3:
                    pairs.append((u, v))
        pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        graphs.append(_graph_from_pairs(name, n, pairs, features, labels))
        split[name] = role
    return DatasetBundle(task="inductive", graphs=graphs, n_features=n_labels,
                         n_classes=n_labels, multilabel=True, graph_split=split)
