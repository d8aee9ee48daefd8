from .checkpoint import (
    CheckpointError,
    CheckpointMismatchError,
    load_diffusion,
    save_diffusion,
)
from .network import DenoiserConfig, DenoiserNetwork, sinusoidal_embedding, stack_conditions
from .sampling import (
    RANDOM_SEED_MODE,
    SO_SEED_MODE,
    GenerationError,
    GenerationResult,
    generate_for_augmented,
    sample,
)
from .schedule import NoiseSchedule, forward_diffuse, linear_schedule, make_so_seed
from .training import (
    DiffusionTrainConfig,
    TrainingDivergedError,
    TrainState,
    loss_and_grads,
    smoothed,
    train,
    training_loss,
)

__all__ = [
    "CheckpointError",
    "CheckpointMismatchError",
    "DenoiserConfig",
    "DenoiserNetwork",
    "DiffusionTrainConfig",
    "GenerationError",
    "GenerationResult",
    "NoiseSchedule",
    "RANDOM_SEED_MODE",
    "SO_SEED_MODE",
    "TrainState",
    "TrainingDivergedError",
    "forward_diffuse",
    "generate_for_augmented",
    "linear_schedule",
    "load_diffusion",
    "loss_and_grads",
    "make_so_seed",
    "sample",
    "save_diffusion",
    "sinusoidal_embedding",
    "smoothed",
    "stack_conditions",
    "train",
    "training_loss",
]
