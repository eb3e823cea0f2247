from .tasks import Dataset, IdxFormatError, TaskSpec, load_idx, make_dataset
from .records import (MANIFEST_FORMAT_VERSION, ModelRecord, RegularizerSpec,
                      ZooManifest, derive_seed)
from .train import (GridPoint, TrainingShortfallError, accuracy,
                    build_generations, diagonal_fisher, expand_grid, finetune,
                    train_parents)

__all__ = [
    "Dataset", "IdxFormatError", "TaskSpec", "load_idx", "make_dataset",
    "MANIFEST_FORMAT_VERSION", "ModelRecord", "RegularizerSpec",
    "ZooManifest", "derive_seed",
    "GridPoint", "TrainingShortfallError", "accuracy", "build_generations",
    "diagonal_fisher", "expand_grid", "finetune", "train_parents",
]
