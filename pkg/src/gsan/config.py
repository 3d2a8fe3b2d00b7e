"""Run configuration: model hyperparameters plus optimizer/protocol settings.

A RunConfig round-trips losslessly through flat JSON and is echoed into every
artifact a run produces, so any output can be traced back to its exact setup.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


@dataclass
class GsanConfig:
    """Architecture hyperparameters.

    Defaults follow the published protocol where it speaks (8 heads, 8 hidden
    units per head, dropout 0.6) and block-family convention where it does not
    (expansion 2, 16 states, kernel width 4).
    """

    layers: int = 2
    heads: int = 8
    hidden: int = 8                  # units per attention head
    expansion: int = 2               # inner width = expansion * model width
    k_state: int = 16                # states per scan channel
    k_w: int = 4                     # causal conv kernel width
    dropout: float = 0.6
    attn_dropout: float = 0.0
    leaky_slope: float = 0.2
    attention: str = "gatv1"         # 'gatv1' (written equation) | 'gatv2'
    gal_activation: str = "elu"      # 'elu' | 'leaky_relu'
    final_head: str = "average"      # 'average' | 'concat' head reduction
    task_head: str = "softmax"       # 'softmax' | 'sigmoid' (multilabel)
    scan_order: str = "natural"      # 'natural' | 'degree' | 'random'
    scan_constant_u: bool = False    # ablation: constant-input scan reading

    def validate(self) -> None:
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        for name in ("heads", "hidden", "expansion", "k_state", "k_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.attn_dropout < 1.0:
            raise ValueError("attn_dropout must be in [0, 1)")
        if self.attention not in ("gatv1", "gatv2"):
            raise ValueError("attention must be 'gatv1' or 'gatv2'")
        if self.gal_activation not in ("elu", "leaky_relu"):
            raise ValueError("gal_activation must be 'elu' or 'leaky_relu'")
        if self.final_head not in ("average", "concat"):
            raise ValueError("final_head must be 'average' or 'concat'")
        if self.task_head not in ("softmax", "sigmoid"):
            raise ValueError("task_head must be 'softmax' or 'sigmoid'")
        if self.scan_order not in ("natural", "degree", "random"):
            raise ValueError("scan_order must be 'natural', 'degree' or 'random'")

    @property
    def f_model(self) -> int:
        return self.heads * self.hidden

    @property
    def f_inner(self) -> int:
        return self.expansion * self.f_model

    @property
    def penultimate_width(self) -> int:
        return self.hidden if self.final_head == "average" else self.f_model


@dataclass
class RunConfig(GsanConfig):
    """Everything a training run needs, serializable as one flat JSON object."""

    lr: float = 0.005
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l1: float = 0.0
    l2: float = 0.0
    smooth_l1: float = 0.0
    patience: int = 10
    max_epochs: int = 1000
    seed: int = 0
    dtype: str = "f64"               # 'f64' (tests) | 'f32' (fast runs)
    split: str = "standard"          # 'standard' | 'random'
    split_sizes: list[int] = field(default_factory=lambda: [0, 0, 0])
    row_normalize: bool = False
    data: str = ""
    out: str = ""

    def validate(self) -> None:
        super().validate()
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.dtype not in ("f32", "f64"):
            raise ValueError("dtype must be 'f32' or 'f64'")
        if self.split not in ("standard", "random"):
            raise ValueError("split must be 'standard' or 'random'")
        for name in ("lr", "weight_decay", "l1", "l2", "smooth_l1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))
