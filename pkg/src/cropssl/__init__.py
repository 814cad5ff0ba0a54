"""Self-supervised multi-task learning for crop time-series classification.

The package trains a small shared-encoder classifier on pixel-wise
satellite time series (t dates x b spectral bands) jointly with
self-supervised pretext tasks whose labels come for free from the data's
structure: was the series time-reversed, which time segment is this, which
spectral band is this. A domain-detection head behind a gradient reversal
op extends the same machinery to unsupervised domain adaptation between
regions with different feature distributions.

Subpackages:

* :mod:`cropssl.nn` - dense layers, losses, Adam, gradient reversal, and a
  small reverse-mode tape.
* :mod:`cropssl.data` - the dataset model, CSV ingestion, and the
  pretext-label constructors.
* :mod:`cropssl.synth` - synthetic two-domain phenology generator.
* :mod:`cropssl.model` - shared encoder plus per-task heads.
* :mod:`cropssl.train` - few-shot, standard, and domain-adaptation
  protocols with repeated-run statistics.
* :mod:`cropssl.cli` - the ``cropssl`` command-line front end.
"""

from .data import (Task, TaskDataset, band_distribution_report, ingest_csv,
                   make_band, make_domain, make_rotation, make_time_segment,
                   make_union_unlabeled, sample_few_shot, write_csv)
from .model import (ModelConfig, ModelGraph, TaskActivation, build,
                    forward_task, load_checkpoint, save_checkpoint, task_loss,
                    total_loss)
from .synth import (CropTemplate, DomainShift, default_scenario,
                    default_shift, default_templates, generate, scenario)
from .train import (ExperimentReport, PatiencePolicy, TrainConfig, evaluate,
                    run_repeats, train_domain_adaptation, train_fewshot,
                    train_standard)

__version__ = "0.1.0"

__all__ = [
    "Task", "TaskDataset", "band_distribution_report", "ingest_csv",
    "make_band", "make_domain", "make_rotation", "make_time_segment",
    "make_union_unlabeled", "sample_few_shot", "write_csv",
    "ModelConfig", "ModelGraph", "TaskActivation", "build", "forward_task",
    "load_checkpoint", "save_checkpoint", "task_loss", "total_loss",
    "CropTemplate", "DomainShift", "default_scenario", "default_shift",
    "default_templates", "generate", "scenario",
    "ExperimentReport", "PatiencePolicy", "TrainConfig", "evaluate",
    "run_repeats", "train_domain_adaptation", "train_fewshot",
    "train_standard",
    "__version__",
]
