"""Dynamic-expansion continual learning over multiple partially trainable backbones."""
from .backbones import Backbone, BackboneSnapshot, BackboneSpec, pretrain_backbone, snapshot_all
from .engine import TrainConfig, TrainState, run_stream, total_loss, train_task
from .experts import Expert, create_expert, freeze, predict
from .inference import RoutingConfig, class_il_predict, route, task_il_predict
from .regularizers import OTConfig, Selector, exact_ot, sinkhorn_distance

__version__ = "0.1.0"
