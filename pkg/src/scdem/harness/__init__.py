from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_from_dict, default_config, load_config
from .data import (Dataset, Task, TaskStream, build_class_incremental_stream, build_multi_domain_stream,
                   load_dataset, save_dataset, synth_gaussian_tasks)
from .metrics import MetricsReport, evaluate, evaluate_row, summarize
