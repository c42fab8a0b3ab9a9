"""Temporal graph neural network training on a T-CSR graph."""
from .config import ModelConfig, preset
from .data import TemporalDataset, load_dataset, load_dataset_dir, planted_dataset
from .models import Batch, TemporalModel
from .sampler import SamplingConfig, TemporalSampler, sample_batch
from .sched import ChunkSchedule, dependency_stats, make_epoch_schedule
from .tgraph import DatasetSplit, TCsrGraph, TemporalEdge, build_tcsr
from .trainer import EvalReport, Trainer

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "preset", "TemporalDataset", "load_dataset", "load_dataset_dir",
    "planted_dataset", "Batch", "TemporalModel", "SamplingConfig", "TemporalSampler",
    "sample_batch", "ChunkSchedule", "dependency_stats", "make_epoch_schedule", "DatasetSplit",
    "TCsrGraph", "TemporalEdge", "build_tcsr", "EvalReport", "Trainer",
]
