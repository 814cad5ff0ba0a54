"""Training protocols: few-shot joint training, standard training with
patience and learning-rate halving, and unsupervised domain adaptation.

All protocols share one step primitive: compute each scheduled task's loss
on its own batch, merge the gradients, and take a single Adam step over the
shared parameters. Self-supervised datasets are built once per run from the
raw samples; the crop labels of the adaptation target are stripped on entry
and can never influence training.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .data import (Task, TaskDataset, make_band, make_domain, make_rotation,
                   make_time_segment, make_union_unlabeled, sample_few_shot)
from .errors import ConfigError
from .model import (BINARY_TASKS, TASK_ORDER, ModelConfig, ModelGraph,
                    TaskActivation, build, forward_task, task_loss)
from .nn import Adam, GradTape


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    main_epochs: int = 2000
    ssl_epochs: int | None = None  # None: 20 for one pretext task, 10 for more
    batch_size: int = 256
    seed: int = 0
    tasks: TaskActivation = field(default_factory=TaskActivation)
    cutoff: int = 2
    repeats: int = 1
    hidden: tuple[int, ...] = (64, 32)
    shots: int | None = None  # resample k per class from the few-shot pool
    eval_every: int = 100     # 0: evaluate only at the end
    log_every: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.main_epochs < 1:
            raise ConfigError(f"main_epochs must be >= 1, got {self.main_epochs}")
        if self.ssl_epochs is not None and not 0 <= self.ssl_epochs <= self.main_epochs:
            raise ConfigError(
                f"ssl_epochs must lie in [0, main_epochs], got {self.ssl_epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.shots is not None and self.shots < 1:
            raise ConfigError(f"shots must be >= 1, got {self.shots}")
        if self.eval_every < 0 or self.log_every < 1:
            raise ConfigError("eval_every must be >= 0 and log_every >= 1")


@dataclass(frozen=True)
class PatiencePolicy:
    patience: int = 25
    lr_halving: bool = True
    min_lr: float = 0.00005
    max_epochs: int = 1000

    def __post_init__(self):
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be >= 1")
        if self.min_lr <= 0:
            raise ConfigError(f"min_lr must be positive, got {self.min_lr}")


@dataclass
class EpochRecord:
    epoch: int
    task: str
    loss: float
    accuracy: float | None = None
    lr: float | None = None


@dataclass
class RunResult:
    seed: int
    history: list[EpochRecord]
    final_accuracy: dict[str, float]
    wall_time_s: float
    best_epoch: int | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    """Aggregate over repeated runs; the headline metric is crop accuracy."""

    config: dict
    runs: list[RunResult]
    accuracies: list[float]
    mean_accuracy: float
    std_accuracy: float
    wall_time_s: float
    final_graph: ModelGraph | None = None  # last repeat's model; not serialized

    def to_dict(self) -> dict:
        doc = {
            "config": self.config,
            "accuracies": self.accuracies,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "wall_time_s": self.wall_time_s,
            "runs": [
                {
                    "seed": run.seed,
                    "final_accuracy": run.final_accuracy,
                    "best_epoch": run.best_epoch,
                    "wall_time_s": run.wall_time_s,
                    "extras": run.extras,
                    "history": [asdict(rec) for rec in run.history],
                }
                for run in self.runs
            ],
        }
        return doc


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # (classes, classes), rows = true label


def evaluate(graph: ModelGraph, dataset: TaskDataset, task: Task) -> Evaluation:
    """Accuracy and confusion matrix of one head on a labeled dataset.

    Softmax heads predict the argmax; sigmoid heads threshold at 0.5.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if (dataset.labels < 0).any():
        raise ValueError("evaluation dataset must be fully labeled")
    out = forward_task(graph, dataset.values, task)
    if task in BINARY_TASKS:
        preds = (out[:, 0] > 0.5).astype(np.int64)
        classes = 2
    else:
        preds = out.argmax(axis=1)
        classes = out.shape[1]
    if dataset.labels.max() >= classes:
        raise ValueError(
            f"dataset labels go up to {dataset.labels.max()} but the "
            f"{task.value} head has {classes} classes"
        )
    confusion = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, preds), 1)
    accuracy = float(np.trace(confusion) / len(dataset))
    return Evaluation(accuracy, confusion)


def joint_step(graph: ModelGraph, opt: Adam,
               batches: dict[Task, tuple[np.ndarray, np.ndarray]]) -> dict[Task, float]:
    """One optimizer step on the summed loss of the given task batches."""
    grads: dict[int, np.ndarray] = {}
    losses: dict[Task, float] = {}
    for task in TASK_ORDER:
        if task not in batches:
            continue
        x, y = batches[task]
        tape = GradTape()
        losses[task] = task_loss(graph, x, y, task, tape)
        nn.merge_grads(grads, tape.backward(1.0))
    opt.step(grads)
    return losses


def _run_task_epoch(graph: ModelGraph, opt: Adam, dataset: TaskDataset, task: Task,
                    batch_size: int, rng: np.random.Generator) -> float:
    """One shuffled pass over the dataset; returns the mean sample loss."""
    order = rng.permutation(len(dataset))
    total = 0.0
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        losses = joint_step(graph, opt, {task: (dataset.values[idx], dataset.labels[idx])})
        total += losses[task] * idx.size
    return total / order.size


def build_ssl_datasets(samples: TaskDataset, tasks: TaskActivation,
                       cutoff: int) -> dict[Task, TaskDataset]:
    """Construct the active pretext-task datasets from raw samples (labels
    are ignored; the datasets are fixed for the whole run)."""
    out = {}
    if tasks.rotation:
        out[Task.ROTATION] = make_rotation(samples)
    if tasks.time_segment:
        out[Task.TIME_SEGMENT] = make_time_segment(samples, cutoff)
    if tasks.band:
        out[Task.BAND] = make_band(samples)
    return out


def resolve_ssl_epochs(config: TrainConfig) -> int:
    if config.ssl_epochs is not None:
        return config.ssl_epochs
    n_ssl = len(config.tasks.ssl())
    if n_ssl == 0:
        return 0
    return 20 if n_ssl == 1 else 10


def _shuffle_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(17,)))


def _model_config(config: TrainConfig, dataset: TaskDataset, seed: int) -> ModelConfig:
    return ModelConfig(
        t_steps=dataset.t_steps,
        bands=dataset.bands,
        cutoff=config.cutoff,
        tasks=config.tasks,
        hidden=tuple(config.hidden),
        seed=seed,
    )


_SSL_EVAL_CAP = 8192


def _ssl_task_accuracies(graph: ModelGraph, ssl_sets: dict[Task, TaskDataset]) -> dict[str, float]:
    """Diagnostic accuracy of each pretext head on (a deterministic stride
    sample of) its own dataset; capped so huge constructed sets stay cheap."""
    out = {}
    for task, ds in ssl_sets.items():
        if len(ds) > _SSL_EVAL_CAP:
            stride = int(np.ceil(len(ds) / _SSL_EVAL_CAP))
            ds = ds.subset(np.arange(0, len(ds), stride))
        out[task.value] = evaluate(graph, ds, task).accuracy
    return out


def _fewshot_once(config: TrainConfig, seed: int, few_shot_set: TaskDataset,
                  ssl_source_set: TaskDataset,
                  test_set: TaskDataset) -> tuple[RunResult, ModelGraph]:
    t0 = time.perf_counter()
    tasks = config.tasks
    train_set = few_shot_set
    if config.shots is not None:
        train_set = sample_few_shot(few_shot_set, config.shots, seed)
    graph = build(_model_config(config, train_set, seed))
    opt = Adam(graph.parameters(), lr=config.lr)
    ssl_sets = build_ssl_datasets(ssl_source_set, tasks, config.cutoff)
    ssl_budget = resolve_ssl_epochs(config) if ssl_sets else 0
    stride = max(1, config.main_epochs // ssl_budget) if ssl_budget else 0
    rng = _shuffle_rng(seed)

    history: list[EpochRecord] = []
    ssl_done = 0
    last = config.main_epochs - 1
    for epoch in range(config.main_epochs):
        if ssl_budget and ssl_done < ssl_budget and epoch % stride == 0:
            for task in tasks.ssl():
                loss = _run_task_epoch(graph, opt, ssl_sets[task], task,
                                       config.batch_size, rng)
                history.append(EpochRecord(epoch, task.value, loss))
            ssl_done += 1
        # The few-shot main task is trained full batch: one step per epoch.
        losses = joint_step(graph, opt,
                            {Task.CROP: (train_set.values, train_set.labels)})
        acc = None
        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            acc = evaluate(graph, test_set, Task.CROP).accuracy
        if epoch % config.log_every == 0 or acc is not None or epoch == last:
            history.append(EpochRecord(epoch, Task.CROP.value, losses[Task.CROP], acc))

    final = evaluate(graph, test_set, Task.CROP)
    final_accuracy = {Task.CROP.value: final.accuracy}
    final_accuracy.update(_ssl_task_accuracies(graph, ssl_sets))
    result = RunResult(
        seed=seed,
        history=history,
        final_accuracy=final_accuracy,
        wall_time_s=time.perf_counter() - t0,
        extras={"confusion": final.confusion.tolist(),
                "train_samples": len(train_set)},
    )
    return result, graph


def train_fewshot(config: TrainConfig, few_shot_set: TaskDataset,
                  ssl_source_set: TaskDataset, test_set: TaskDataset) -> ExperimentReport:
    """Joint few-shot protocol: the crop head trains full batch on the
    few-shot set for ``main_epochs``; each active pretext task trains on
    datasets built from ``ssl_source_set``, its epochs spread uniformly
    across the main run (first one up front). ``config.shots`` resamples
    k per class from the pool on every repeat."""
    if config.tasks.domain:
        raise ConfigError("the domain task is not part of the few-shot protocol")
    if not config.tasks.crop:
        raise ConfigError("the crop task must be active")
    return run_repeats(config, lambda cfg, seed: _fewshot_once(
        cfg, seed, few_shot_set, ssl_source_set, test_set))


def _snapshot(graph: ModelGraph) -> list[np.ndarray]:
    return [p.copy() for p in graph.parameters()]


def _restore(graph: ModelGraph, snapshot: list[np.ndarray]) -> None:
    for p, s in zip(graph.parameters(), snapshot):
        p[...] = s


def _standard_once(config: TrainConfig, policy: PatiencePolicy, seed: int,
                   train: TaskDataset, val: TaskDataset,
                   test: TaskDataset) -> tuple[RunResult, ModelGraph]:
    t0 = time.perf_counter()
    tasks = config.tasks
    graph = build(_model_config(config, train, seed))
    opt = Adam(graph.parameters(), lr=config.lr)
    ssl_sets = build_ssl_datasets(train, tasks, config.cutoff)
    rng = _shuffle_rng(seed)

    history: list[EpochRecord] = []
    best_acc = -1.0
    best_epoch = -1
    best_params = _snapshot(graph)
    since_improve = 0
    for epoch in range(policy.max_epochs):
        for task in tasks.ssl():
            loss = _run_task_epoch(graph, opt, ssl_sets[task], task,
                                   config.batch_size, rng)
            history.append(EpochRecord(epoch, task.value, loss, lr=opt.lr))
        crop_loss = _run_task_epoch(graph, opt, train, Task.CROP,
                                    config.batch_size, rng)
        val_acc = evaluate(graph, val, Task.CROP).accuracy
        history.append(EpochRecord(epoch, Task.CROP.value, crop_loss,
                                   accuracy=val_acc, lr=opt.lr))
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = _snapshot(graph)
            since_improve = 0
        else:
            since_improve += 1
        if since_improve >= policy.patience:
            if not policy.lr_halving or opt.lr <= policy.min_lr:
                break
            opt.lr = max(opt.lr / 2.0, policy.min_lr)
            since_improve = 0

    _restore(graph, best_params)
    final = evaluate(graph, test, Task.CROP)
    final_accuracy = {Task.CROP.value: final.accuracy}
    final_accuracy.update(_ssl_task_accuracies(graph, ssl_sets))
    result = RunResult(
        seed=seed,
        history=history,
        final_accuracy=final_accuracy,
        wall_time_s=time.perf_counter() - t0,
        best_epoch=best_epoch,
        extras={
            "confusion": final.confusion.tolist(),
            "best_val_accuracy": best_acc,
            "final_lr": opt.lr,
            "epochs_trained": history[-1].epoch + 1 if history else 0,
        },
    )
    return result, graph


def train_standard(config: TrainConfig, policy: PatiencePolicy, train: TaskDataset,
                   val: TaskDataset, test: TaskDataset) -> ExperimentReport:
    """Standard protocol: minibatch training with per-epoch validation.

    Every ``patience`` epochs without a validation-accuracy improvement the
    learning rate halves (floored at ``min_lr``); a stall at the floor halts
    the run. Parameters from the best validation epoch (ties -> earlier) are
    restored before the test evaluation. Active pretext tasks train one
    epoch each per main epoch, on datasets built from the training split.
    """
    if config.tasks.domain:
        raise ConfigError("the domain task is not part of the standard protocol")
    for name, ds in (("train", train), ("val", val), ("test", test)):
        if len(ds) == 0:
            raise ConfigError(f"{name} split is empty")
    return run_repeats(config, lambda cfg, seed: _standard_once(
        cfg, policy, seed, train, val, test))


def _da_once(config: TrainConfig, seed: int, source: TaskDataset,
             target_unlabeled: TaskDataset, target_test: TaskDataset,
             domain_eval: TaskDataset | None) -> tuple[RunResult, ModelGraph]:
    t0 = time.perf_counter()
    tasks = config.tasks
    # Labels of the adaptation target are stripped before anything else can
    # read them; only samples flow into the pretext and domain datasets.
    target_view = target_unlabeled.strip_labels()
    source_view = source.strip_labels()
    union = make_union_unlabeled(source_view, target_view)
    ssl_sets = build_ssl_datasets(union, tasks, config.cutoff)
    domain_set = make_domain(source_view, target_view) if tasks.domain else None

    graph = build(_model_config(config, source, seed))
    opt = Adam(graph.parameters(), lr=config.lr)
    rng = _shuffle_rng(seed)

    history: list[EpochRecord] = []
    for epoch in range(config.main_epochs):
        crop_loss = _run_task_epoch(graph, opt, source, Task.CROP,
                                    config.batch_size, rng)
        if epoch % config.log_every == 0 or epoch == config.main_epochs - 1:
            history.append(EpochRecord(epoch, Task.CROP.value, crop_loss))
        for task in tasks.ssl():
            loss = _run_task_epoch(graph, opt, ssl_sets[task], task,
                                   config.batch_size, rng)
            if epoch % config.log_every == 0 or epoch == config.main_epochs - 1:
                history.append(EpochRecord(epoch, task.value, loss))
        if domain_set is not None:
            loss = _run_task_epoch(graph, opt, domain_set, Task.DOMAIN,
                                   config.batch_size, rng)
            acc = None
            if domain_eval is not None:
                acc = evaluate(graph, domain_eval, Task.DOMAIN).accuracy
            history.append(EpochRecord(epoch, Task.DOMAIN.value, loss, accuracy=acc))

    final = evaluate(graph, target_test, Task.CROP)
    final_accuracy = {Task.CROP.value: final.accuracy}
    final_accuracy.update(_ssl_task_accuracies(graph, ssl_sets))
    extras = {"confusion": final.confusion.tolist()}
    if domain_set is not None and domain_eval is not None:
        extras["domain_eval_accuracy"] = evaluate(graph, domain_eval,
                                                  Task.DOMAIN).accuracy
    result = RunResult(
        seed=seed,
        history=history,
        final_accuracy=final_accuracy,
        wall_time_s=time.perf_counter() - t0,
        extras=extras,
    )
    return result, graph


def train_domain_adaptation(config: TrainConfig, source_labeled: TaskDataset,
                            target_unlabeled: TaskDataset, target_test: TaskDataset,
                            domain_eval: TaskDataset | None = None) -> ExperimentReport:
    """Unsupervised adaptation: crop trains on labeled source samples;
    pretext tasks train on the pooled unlabeled samples of both domains;
    the domain head (through gradient reversal) trains to tell the domains
    apart. Target crop labels are read only by the final test evaluation.

    ``domain_eval`` is an optional held-out domain-labeled dataset used to
    track how distinguishable the domains remain epoch by epoch.
    """
    if not config.tasks.crop:
        raise ConfigError("the crop task must be active")
    return run_repeats(config, lambda cfg, seed: _da_once(
        cfg, seed, source_labeled, target_unlabeled, target_test, domain_eval))


def run_repeats(config: TrainConfig,
                run_fn: Callable[[TrainConfig, int], tuple[RunResult, ModelGraph]]
                ) -> ExperimentReport:
    """Run ``config.repeats`` independent repeats with seeds base+i and
    aggregate mean and sample standard deviation of crop accuracy (a single
    repeat reports std 0)."""
    t0 = time.perf_counter()
    runs = []
    graph = None
    for i in range(config.repeats):
        result, graph = run_fn(config, config.seed + i)
        runs.append(result)
    accs = [run.final_accuracy[Task.CROP.value] for run in runs]
    mean = float(np.mean(accs))
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    cfg = asdict(config)
    cfg["tasks"] = config.tasks.variant_name()
    return ExperimentReport(
        config=cfg,
        runs=runs,
        accuracies=accs,
        mean_accuracy=mean,
        std_accuracy=std,
        wall_time_s=time.perf_counter() - t0,
        final_graph=graph,
    )
