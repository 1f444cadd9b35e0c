"""Flow matching from frozen source tokens to task representations, at desk scale."""
from .embeddings import DecoderKind, TaskSpec, circular_task_embed, scale_embed, step_embed
from .errors import ContractError, DimensionError, FormatError, NumericError
from .flow import FlowConfig, TaskData, euler_integrate, interpolate, multiscale_sample, train
from .tasks import ORACLE, SyntheticWorld, TaskInstance, WorldDims, eval_fine_tuned, eval_zero_shot, generate_world
from .tokens import MultiScaleTokens, RepBatch
from .velocity import ArchDescriptor, VelocityParams, init_params, predict_velocity

__version__ = "0.1.0"
