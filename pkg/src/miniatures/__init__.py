"""Patch-based classification of Persian miniature paintings.

Images are cut into five patches (four corners plus an overlapping
center), each patch is embedded by a frozen convolutional backbone,
a small trainable head classifies every patch, and the five patch
predictions are summed to decide the image's school.
"""

from .backbone import (
    BackboneManifest,
    FeatureExtractor,
    StubBackbone,
    extract_features,
    load_backbone,
    resolve_backbone,
)
from .dataset import (
    ArtSchool,
    DatasetManifest,
    FoldAssignment,
    ImageRecord,
    one_hot,
    scan_dataset,
    stratified_kfold,
)
from .evaluation import (
    EvalReport,
    FoldResult,
    accuracy,
    coefficient_of_variation,
    confusion_matrix,
    normalize_and_average,
    run_cross_validation,
)
from .features import FeatureStore, extract_dataset_features
from .fusion import decide, fuse
from .head import (
    HeadParams,
    TrainConfig,
    forward,
    init_head,
    load_checkpoint,
    loss_and_grad,
    predict_proba,
    save_checkpoint,
    train,
)
from .patching import (
    PatchPosition,
    PatchRect,
    PatchSet,
    PreprocSpec,
    extract_patch,
    load_image,
    make_patch_set,
    patch_rects,
    resize_normalize,
)

__version__ = "0.1.0"
