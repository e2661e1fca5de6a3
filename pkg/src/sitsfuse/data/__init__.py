from .batch import DATE_PAD, Batch, collate, normalize
from .folds import make_folds
from .io import (
    load_fold_samples,
    load_manifest,
    load_sample,
    save_manifest,
    save_sample,
)
from .tns import TensorFormatError, read_header, read_tensor, write_tensor
from .types import (
    AnnotationSet,
    DatasetManifest,
    ModalitySeries,
    MultimodalSample,
    ValidationError,
    background_class,
    n_semantic_classes,
    void_value,
)

__all__ = [
    "AnnotationSet",
    "Batch",
    "DATE_PAD",
    "DatasetManifest",
    "ModalitySeries",
    "MultimodalSample",
    "TensorFormatError",
    "ValidationError",
    "background_class",
    "collate",
    "load_fold_samples",
    "load_manifest",
    "load_sample",
    "make_folds",
    "n_semantic_classes",
    "normalize",
    "read_header",
    "read_tensor",
    "save_manifest",
    "save_sample",
    "void_value",
    "write_tensor",
]
