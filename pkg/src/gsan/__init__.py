"""GSAN: masked multi-head graph attention composed with a gated selective
state-space block, trained from scratch (numpy + its own autodiff tape) for
transductive and inductive node classification."""

from .config import GsanConfig, RunConfig
from .graph import (
    DatasetBundle,
    Graph,
    GraphFormatError,
    load_bundle,
    neighbors,
    save_bundle,
    standard_splits,
    validate,
)
from .layers import (
    GalParams,
    GsanParams,
    S3mParams,
    gal_attention_matrix,
    gal_forward,
    gsan_forward,
    init_params,
    layer_norm,
    s3m_block,
    selective_scan,
)
from .tensor import Tape, Tensor, backward, set_default_dtype
from .training import (
    DivergenceError,
    EarlyStop,
    OptimState,
    TrainReport,
    accuracy,
    adam_step,
    masked_cross_entropy,
    micro_f1,
    multilabel_bce,
    penalty,
    run_repeats,
    train,
    train_inductive,
    train_transductive,
)

__version__ = "0.1.0"
