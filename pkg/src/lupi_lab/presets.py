"""Named benchmark presets.

Each preset binds an architecture family, an optimizer, and distillation
settings for one experiment group:

    exp1            single softmax layer on 50 features; clean-score labels
    exp3            same architecture; relevant-feature labels
    mnist           two ReLU hidden layers of 20; digit classification
    tram-synthetic  two tanh hidden layers of 64; noisy-annotator regression
    real-world      two GELU hidden layers of 64 with a residual skip

Widths refer to hidden layers; the input and output widths come from the
dataset at hand, so the MlpSpec constructors take them as arguments.  The
shared-extractor decomposition puts the first hidden layer in the
extractor and the remaining layers in each head; the PI head gets one
extra hidden layer (first-hidden width) after the privileged features are
concatenated.  Keeping the later layers inside the No-PI head matters:
with a bare linear readout the deployed path cannot track the extractor
it is stop-gradiented from, and plateaus at the best affine fit.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import rng
from .lupi import DistillConfig
from .net import MlpSpec, TrainConfig

__all__ = [
    "PRESET_NAMES",
    "Preset",
    "get_preset",
    "model_spec",
    "teacher_spec",
    "train_config",
    "distill_config",
    "tram_specs",
]

PRESET_NAMES = ("exp1", "exp3", "mnist", "tram-synthetic", "real-world")

_TAG_EXTRACTOR = 11
_TAG_PI_HEAD = 12
_TAG_NOPI_HEAD = 13
_TAG_TEACHER = 14


@dataclass(frozen=True)
class Preset:
    """Frozen bundle of architecture and training hyperparameters."""

    name: str
    task: str  # regression | binary | multiclass
    hidden: tuple  # hidden-layer widths of the deployable model
    hidden_activation: str
    output_activation: str
    residual: bool
    loss: str
    optimizer: str
    learning_rate: float
    beta1: float
    beta2: float
    rms_decay: float
    eps: float
    weight_decay: float
    epochs: int
    batch_size: int
    temperature: float
    imitation: float
    teacher_input: str


_COMMON = {"beta1": 0.9, "beta2": 0.999, "rms_decay": 0.9, "eps": 1e-7,
           "weight_decay": 0.0}

_PRESETS = {
    "exp1": Preset(
        name="exp1", task="binary", hidden=(), hidden_activation="tanh",
        output_activation="softmax", residual=False, loss="mse",
        optimizer="rmsprop", learning_rate=1e-3, epochs=400, batch_size=32,
        temperature=1.0, imitation=1.0, teacher_input="z_only", **_COMMON),
    "exp3": Preset(
        name="exp3", task="binary", hidden=(), hidden_activation="tanh",
        output_activation="softmax", residual=False, loss="mse",
        optimizer="rmsprop", learning_rate=1e-3, epochs=245, batch_size=64,
        temperature=1.0, imitation=1.0, teacher_input="z_only", **_COMMON),
    "mnist": Preset(
        name="mnist", task="multiclass", hidden=(20, 20),
        hidden_activation="relu", output_activation="softmax", residual=False,
        loss="mse", optimizer="rmsprop", learning_rate=1e-3, epochs=50,
        batch_size=32, temperature=10.0, imitation=1.0,
        teacher_input="z_only", **_COMMON),
    "tram-synthetic": Preset(
        name="tram-synthetic", task="regression", hidden=(64, 64),
        hidden_activation="tanh", output_activation="identity",
        residual=False, loss="mse", optimizer="adam", learning_rate=1e-3,
        epochs=200, batch_size=16, temperature=1.0, imitation=1.0,
        teacher_input="concat_xz", **_COMMON),
    "real-world": Preset(
        name="real-world", task="binary", hidden=(64, 64),
        hidden_activation="gelu", output_activation="softmax", residual=True,
        loss="cross_entropy", optimizer="adam", learning_rate=1e-3, beta1=0.9,
        beta2=0.95, rms_decay=0.9, eps=1e-7, weight_decay=0.1, epochs=50,
        batch_size=32, temperature=1.0, imitation=1.0,
        teacher_input="concat_xz"),
}


def get_preset(name: str) -> Preset:
    """Look a preset up by name; unknown names list the known ones."""
    try:
        return _PRESETS[name]
    except KeyError:
        known = ", ".join(PRESET_NAMES)
        raise ValueError(f"unknown preset {name!r}; available: {known}") from None


def model_spec(preset: Preset, in_width: int, out_width: int,
               init_seed: int = 0) -> MlpSpec:
    """Architecture of the deployable (No-PI / student) model."""
    return MlpSpec(
        layer_widths=(in_width, *preset.hidden, out_width),
        hidden_activation=preset.hidden_activation,
        output_activation=preset.output_activation,
        residual=preset.residual,
        init_seed=init_seed,
    )


def teacher_spec(preset: Preset, d_x: int, d_z: int, out_width: int,
                 init_seed: int = 0) -> MlpSpec:
    """Teacher architecture; the input width follows the preset's
    teacher-input convention."""
    in_width = d_z if preset.teacher_input == "z_only" else d_x + d_z
    return model_spec(preset, in_width, out_width,
                      init_seed=rng.derive_seed(init_seed, _TAG_TEACHER))


def train_config(preset: Preset, *, epochs: int | None = None,
                 batch_size: int | None = None,
                 shuffle_seed: int = 0) -> TrainConfig:
    """TrainConfig carrying the preset's optimizer settings."""
    return TrainConfig(
        loss=preset.loss,
        optimizer=preset.optimizer,
        learning_rate=preset.learning_rate,
        beta1=preset.beta1,
        beta2=preset.beta2,
        rms_decay=preset.rms_decay,
        eps=preset.eps,
        weight_decay=preset.weight_decay,
        epochs=preset.epochs if epochs is None else epochs,
        batch_size=preset.batch_size if batch_size is None else batch_size,
        shuffle_seed=shuffle_seed,
    )


def distill_config(preset: Preset) -> DistillConfig:
    return DistillConfig(temperature=preset.temperature,
                         imitation=preset.imitation)


def tram_specs(preset: Preset, d_x: int, d_z: int, out_width: int,
               init_seed: int = 0) -> tuple:
    """Shared-extractor decomposition of the preset's architecture.

    Returns (extractor, pi_head, nopi_head).  The extractor is the first
    hidden layer ending in the hidden activation; the No-PI head holds the
    remaining hidden layers plus the output; the PI head prepends one
    extra hidden layer (first-hidden width) after concatenating the
    privileged features.  The composed No-PI path therefore matches the
    deployable architecture exactly.  Residual skips are not carried into
    the decomposition: the split severs the layer pair they would span.
    """
    if not preset.hidden:
        raise ValueError(
            f"preset {preset.name!r} has no hidden layer to share")
    h1, rest = preset.hidden[0], preset.hidden[1:]
    act = preset.hidden_activation
    extractor = MlpSpec(
        layer_widths=(d_x, h1), hidden_activation=act, output_activation=act,
        init_seed=rng.derive_seed(init_seed, _TAG_EXTRACTOR))
    pi_head = MlpSpec(
        layer_widths=(h1 + d_z, h1, *rest, out_width),
        hidden_activation=act, output_activation=preset.output_activation,
        init_seed=rng.derive_seed(init_seed, _TAG_PI_HEAD))
    nopi_head = MlpSpec(
        layer_widths=(h1, *rest, out_width), hidden_activation=act,
        output_activation=preset.output_activation,
        init_seed=rng.derive_seed(init_seed, _TAG_NOPI_HEAD))
    return extractor, pi_head, nopi_head
