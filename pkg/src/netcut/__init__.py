"""Multi-head dense networks that learn where to stop, then get cut there."""

from .aggregation import (LOG, PROB, PROB_NAIVE, aggregate, aggregate_log, aggregate_prob,
                          class_loss, time_reg, total_loss, weights)
from .architecture import ArchGraph, ModelParams, build_chain, head_costs, init_params, random_dag
from .compression import CutModel, Model, cut, forward_cut, load_model, save_model
from .data import Dataset, load_idx, synth_blobs
from .training import TrainConfig, TrajectoryLog, train

__all__ = [
    "LOG", "PROB", "PROB_NAIVE", "aggregate", "aggregate_log", "aggregate_prob", "class_loss",
    "time_reg", "total_loss", "weights", "ArchGraph", "ModelParams", "build_chain", "head_costs",
    "init_params", "random_dag", "CutModel", "Model", "cut", "forward_cut", "load_model",
    "save_model", "Dataset", "load_idx", "synth_blobs", "TrainConfig", "TrajectoryLog", "train",
]
