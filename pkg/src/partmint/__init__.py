"""Unsupervised mining of part detectors over frozen CNN feature maps.

Detectors are 1x1 correlation kernels trained with a locality objective
(each detector concentrates its spatially softmax-normalized activation)
and a unicity hinge (detectors do not pile onto the same cells).  Fitted
banks carry a Gaussian confidence model for part visibility and can back
a part-based classifier with per-part traceable logits.
"""

from partmint.bank import (
    BatchForward,
    DetectorBank,
    ForwardResult,
    forward,
    forward_batch,
    init_bank,
    summed_activation,
)
from partmint.calibration import (
    CalibrationParams,
    ConfidenceResult,
    confidence,
    fit_calibration,
    normal_cdf,
)
from partmint.classifier import (
    ClassifierHead,
    HeadTrainConfig,
    PartClassifier,
    PredictResult,
    evaluate_classifier,
    extract_part_vectors,
    head_forward,
    init_classifier,
    predict,
    train_classifier,
)
from partmint.dataio import (
    DatasetManifest,
    ManifestItem,
    SyntheticSpec,
    generate_synthetic,
    load_bank,
    load_calibration,
    load_classifier,
    load_features,
    load_manifest,
    read_feature_file,
    save_bank,
    save_calibration,
    save_classifier,
    save_manifest,
    synthesize,
    write_feature_file,
)
from partmint.kernels import BACKEND
from partmint.ops import argmax2d, conv1x1, spatial_softmax, uniform_filter_3x3
from partmint.training import (
    LossBreakdown,
    RmspropState,
    TrainConfig,
    TrainReport,
    attention_coverage,
    locality_loss,
    loss_and_gradient,
    rmsprop_step,
    total_loss,
    train,
    unicity_loss,
)

__version__ = "0.1.0"
