import numpy as np
import pytest

from gsan import tensor as tz
from gsan.config import RunConfig
from gsan.graph import DatasetBundle, Graph, build_csr


@pytest.fixture(autouse=True)
def f64_mode():
    tz.set_default_dtype("f64")
    yield
    tz.set_default_dtype("f64")


def graph_from_pairs(n, pairs, n_features=4, n_classes=2, seed=0, name="toy"):
    """Small helper: build a Graph with random features and labels."""
    rng = np.random.default_rng(seed)
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    offsets, targets = build_csr(n, pairs)
    return Graph(name=name, n=n, csr_offsets=offsets, csr_targets=targets,
                 features=rng.normal(size=(n, n_features)),
                 labels=rng.integers(0, n_classes, size=n).astype(np.int64),
                 masks=np.zeros(n, dtype=np.uint8),
                 n_undirected=len(pairs), n_directed_slots=2 * len(pairs))


def bundle_of(graph, n_classes=2, multilabel=False):
    return DatasetBundle(task="transductive", graphs=[graph],
                         n_features=graph.features.shape[1],
                         n_classes=n_classes, multilabel=multilabel)


@pytest.fixture
def tiny_cfg():
    return RunConfig(heads=2, hidden=3, layers=1, dropout=0.0,
                     expansion=2, k_state=4, k_w=3)
