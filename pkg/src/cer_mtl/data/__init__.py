from .dataset import DataBundle, FramedDataset, fit_fused_normalizer, fused_matrix
from .features import (
    BODY_DIM,
    MODALITY_DIMS,
    SPEECH_DIM,
    DataError,
    FeatureImage,
    FeatureTrack,
    FramingConfig,
    LabelTrack,
    NormStats,
    average_annotators,
    compute_deltas,
    denormalize,
    fit_normalizer,
    frame_features,
    fuse_modalities,
    normalize,
    unfuse,
    with_deltas,
)
from .io import (
    MalformedHeaderError,
    ManifestEntry,
    NonFiniteValueError,
    ParseError,
    RaggedRowError,
    Recording,
    load_features_csv,
    load_labels_csv,
    load_manifest,
    load_recordings,
    write_features_csv,
    write_labels_csv,
    write_manifest,
)
from .splits import SessionSplit, split_sessions
from .synthetic import DIFFICULTIES, generate_synthetic, synthetic_recordings
