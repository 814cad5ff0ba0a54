"""Shared-encoder multi-head model.

One small MLP encodes a flattened (t x b) sample; every active task owns a
single dense output head on top of the shared code. The domain head is the
only one wired through the gradient reversal op, so its loss pushes the
encoder toward domain-indistinguishable features while the head itself
still learns to discriminate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Task
from .errors import DataFormatError
from .nn import Activation, DenseLayer, GradTape

CHECKPOINT_VERSION = 1

# Task order used for deterministic iteration everywhere.
TASK_ORDER = (Task.CROP, Task.ROTATION, Task.TIME_SEGMENT, Task.BAND, Task.DOMAIN)

# Tasks trained with a 1-unit sigmoid head and binary cross-entropy.
BINARY_TASKS = frozenset({Task.ROTATION, Task.DOMAIN})


@dataclass(frozen=True)
class TaskActivation:
    """Which output heads exist on the model."""

    crop: bool = True
    rotation: bool = False
    time_segment: bool = False
    band: bool = False
    domain: bool = False

    _FLAGS = {
        Task.CROP: "crop",
        Task.ROTATION: "rotation",
        Task.TIME_SEGMENT: "time_segment",
        Task.BAND: "band",
        Task.DOMAIN: "domain",
    }

    def is_active(self, task: Task) -> bool:
        return getattr(self, self._FLAGS[task])

    def active(self) -> tuple[Task, ...]:
        return tuple(t for t in TASK_ORDER if self.is_active(t))

    def ssl(self) -> tuple[Task, ...]:
        """The self-supervised pretext tasks (not crop, not domain)."""
        return tuple(t for t in (Task.ROTATION, Task.TIME_SEGMENT, Task.BAND)
                     if self.is_active(t))

    @classmethod
    def from_variant(cls, name: str) -> "TaskActivation":
        """Parse labels like ``baseline``, ``baseline+R+T+B+D`` (R=rotation,
        T=time-segment, B=band, D=domain)."""
        parts = name.strip().lower().split("+")
        if parts[0] != "baseline":
            raise ValueError(f"variant must start with 'baseline', got {name!r}")
        flags = dict(crop=True, rotation=False, time_segment=False,
                     band=False, domain=False)
        letter = {"r": "rotation", "t": "time_segment", "b": "band", "d": "domain"}
        for part in parts[1:]:
            if part not in letter:
                raise ValueError(f"unknown task letter {part!r} in variant {name!r}")
            flags[letter[part]] = True
        return cls(**flags)

    def variant_name(self) -> str:
        suffix = "".join(
            "+" + letter
            for letter, task in (("R", Task.ROTATION), ("T", Task.TIME_SEGMENT),
                                 ("B", Task.BAND), ("D", Task.DOMAIN))
            if self.is_active(task)
        )
        return "baseline" + suffix


@dataclass(frozen=True)
class ModelConfig:
    t_steps: int = 10
    bands: int = 7
    cutoff: int = 2
    tasks: TaskActivation = field(default_factory=TaskActivation)
    hidden: tuple[int, ...] = (64, 32)
    seed: int = 0

    def __post_init__(self):
        if self.t_steps < 2 or self.bands < 1:
            raise ValueError(f"invalid sample shape {self.t_steps}x{self.bands}")
        if self.cutoff < 1 or self.t_steps % self.cutoff != 0:
            raise ValueError(
                f"cutoff must divide the {self.t_steps} timesteps, got {self.cutoff}"
            )
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if not self.tasks.active():
            raise ValueError("at least one task must be active")


def head_spec(task: Task, t_steps: int, bands: int, cutoff: int) -> tuple[int, Activation]:
    """Output units and activation for a task head."""
    if task is Task.CROP:
        return 4, Activation.SOFTMAX
    if task is Task.ROTATION:
        return 1, Activation.SIGMOID
    if task is Task.TIME_SEGMENT:
        return t_steps // cutoff, Activation.SOFTMAX
    if task is Task.BAND:
        return bands, Activation.SOFTMAX
    if task is Task.DOMAIN:
        return 1, Activation.SIGMOID
    raise ValueError(f"no head defined for task {task}")


class ModelGraph:
    """Encoder layers plus one output head per active task."""

    def __init__(self, encoder: list[DenseLayer], heads: dict[Task, DenseLayer],
                 grl_on_domain: bool, t_steps: int, bands: int, cutoff: int) -> None:
        code_dim = encoder[-1].out_dim
        for task, head in heads.items():
            if head.in_dim != code_dim:
                raise ValueError(
                    f"{task.value} head expects input {head.in_dim}, encoder "
                    f"produces {code_dim}"
                )
        self.encoder = encoder
        self.heads = heads
        self.grl_on_domain = grl_on_domain
        self.t_steps = t_steps
        self.bands = bands
        self.cutoff = cutoff

    @property
    def input_dim(self) -> int:
        return self.t_steps * self.bands

    def active_tasks(self) -> tuple[Task, ...]:
        return tuple(t for t in TASK_ORDER if t in self.heads)

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.encoder:
            params.extend([layer.weights, layer.bias])
        for task in self.active_tasks():
            head = self.heads[task]
            params.extend([head.weights, head.bias])
        return params

    def copy(self) -> "ModelGraph":
        return ModelGraph(
            [layer.copy() for layer in self.encoder],
            {task: head.copy() for task, head in self.heads.items()},
            self.grl_on_domain,
            self.t_steps,
            self.bands,
            self.cutoff,
        )


def build(config: ModelConfig) -> ModelGraph:
    """Initialize a graph with Glorot weights, seeded per layer.

    Each layer draws from its own (seed, kind, index) stream, so adding or
    removing a head never changes how the other layers initialize.
    """
    def layer_rng(kind: int, index: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(kind, index))
        )

    encoder = []
    in_dim = config.t_steps * config.bands
    for i, width in enumerate(config.hidden):
        encoder.append(DenseLayer.glorot(in_dim, width, Activation.RELU, layer_rng(0, i)))
        in_dim = width

    heads = {}
    for task in config.tasks.active():
        units, activation = head_spec(task, config.t_steps, config.bands, config.cutoff)
        heads[task] = DenseLayer.glorot(in_dim, units, activation,
                                        layer_rng(1, TASK_ORDER.index(task)))
    return ModelGraph(encoder, heads, grl_on_domain=config.tasks.domain,
                      t_steps=config.t_steps, bands=config.bands,
                      cutoff=config.cutoff)


def encode(graph: ModelGraph, batch: np.ndarray, tape: GradTape | None = None) -> np.ndarray:
    """Flatten a (n, t, b) batch and run it through the shared encoder."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ValueError(f"batch must have shape (n, t, b), got {batch.shape}")
    h = batch.reshape(batch.shape[0], -1)
    for layer in graph.encoder:
        h = nn.dense_forward(layer, h, tape)
    return h


def forward_task(graph: ModelGraph, batch: np.ndarray, task: Task,
                 tape: GradTape | None = None) -> np.ndarray:
    """Shared encoding routed through one task head.

    The domain task passes through gradient reversal first (identity in
    value, negation in gradient).
    """
    if task not in graph.heads:
        raise ValueError(f"task {task.value} has no head on this model")
    h = encode(graph, batch, tape)
    if task is Task.DOMAIN and graph.grl_on_domain:
        h = nn.grl_forward(h, tape)
    return nn.dense_forward(graph.heads[task], h, tape)


def task_loss(graph: ModelGraph, batch: np.ndarray, labels: np.ndarray, task: Task,
              tape: GradTape | None = None) -> float:
    """Cross-entropy of the proper kind: binary for the sigmoid heads
    (rotation, domain), categorical for the softmax heads."""
    out = forward_task(graph, batch, task, tape)
    if task in BINARY_TASKS:
        probs = out[:, 0]
        if tape is not None:
            # Reshape the loss gradient back to the head's (n, 1) output.
            tape.record(lambda upstream: upstream[:, None])
        return nn.binary_xent(probs, labels, tape)
    return nn.categorical_xent(out, labels, tape)


def total_loss(graph: ModelGraph, batches: dict[Task, tuple[np.ndarray, np.ndarray]]) -> float:
    """Unweighted sum of the active tasks' losses, one batch per task."""
    if not batches:
        raise ValueError("total_loss needs at least one task batch")
    return sum(task_loss(graph, x, y, task) for task, (x, y) in batches.items())


def save_checkpoint(graph: ModelGraph, path) -> None:
    """Serialize all parameter tensors to JSON, losslessly for float64."""
    def layer_dict(layer: DenseLayer) -> dict:
        return {
            "in_dim": layer.in_dim,
            "out_dim": layer.out_dim,
            "activation": layer.activation.value,
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
        }

    doc = {
        "format_version": CHECKPOINT_VERSION,
        "t_steps": graph.t_steps,
        "bands": graph.bands,
        "cutoff": graph.cutoff,
        "grl_on_domain": graph.grl_on_domain,
        "encoder": [layer_dict(layer) for layer in graph.encoder],
        "heads": {task.value: layer_dict(graph.heads[task])
                  for task in graph.active_tasks()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> ModelGraph:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version!r}")

    def from_dict(entry: dict) -> DenseLayer:
        layer = DenseLayer(
            np.array(entry["weights"], dtype=np.float64),
            np.array(entry["bias"], dtype=np.float64),
            Activation(entry["activation"]),
        )
        if layer.in_dim != entry["in_dim"] or layer.out_dim != entry["out_dim"]:
            raise DataFormatError(f"{path}: checkpoint shape header mismatch")
        return layer

    return ModelGraph(
        [from_dict(entry) for entry in doc["encoder"]],
        {Task(name): from_dict(entry) for name, entry in doc["heads"].items()},
        bool(doc["grl_on_domain"]),
        int(doc["t_steps"]),
        int(doc["bands"]),
        int(doc["cutoff"]),
    )
