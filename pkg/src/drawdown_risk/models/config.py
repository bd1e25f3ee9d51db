from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

from ..preprocess import NoiseConfig

ARCHITECTURES = ("linear", "logistic", "mlp", "gru")
ACTIVATIONS = ("sigmoid", "tanh", "relu")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture choice.

    ``layer_sizes`` lists the hidden widths of an MLP; the output layer is
    added automatically. ``hidden_size`` is the GRU state width, read out by a
    linear layer on the final hidden state.
    """

    architecture: str = "mlp"
    task: str = "classification"
    layer_sizes: tuple[int, ...] = (8,)
    activation: str = "tanh"
    hidden_size: int = 8
    dropout_p: float = 0.0
    batch_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.architecture == "logistic" and self.task != "classification":
            raise ValueError("logistic architecture requires the classification task")
        if self.architecture == "mlp":
            if not self.layer_sizes or min(self.layer_sizes) < 1:
                raise ValueError("mlp layer_sizes must be a nonempty list of positive widths")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")
        if self.architecture == "gru" and self.hidden_size < 1:
            raise ValueError("gru hidden_size must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.batch_norm and self.architecture != "mlp":
            raise ValueError("batch_norm is only available for mlp hidden layers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "layer_sizes": tuple(d.get("layer_sizes", (8,)))})


@dataclass(frozen=True)
class RegularizationConfig:
    """Elastic-net penalty ``r*lam*sum|w| + (1-r)*lam*0.5*sum w^2`` over weights only.

    ``early_stopping_patience=None`` disables early stopping.
    """

    lam: float = 0.0
    l1_ratio: float = 0.0
    early_stopping_patience: Optional[int] = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError("mix ratio r must be in [0, 1]")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 0:
            raise ValueError("early_stopping_patience must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    max_epochs: int = 100
    validation_fraction: float = 0.2
    input_noise: Optional[NoiseConfig] = None
    loss: str = "cross_entropy"
    grad_clip_norm: Optional[float] = field(default=None)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.loss not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
