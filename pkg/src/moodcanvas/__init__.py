"""moodcanvas: music-driven control of class-conditional image generators.

The engine estimates sentiment attributes (valence, arousal) from audio,
builds a stable clustered view of a generator's attribute space, trains a
translator from attributes to (class, latent) controls, and renders a
song into a time-ordered frame manifest — optionally with style selection
and an external pixel backend over a line-delimited JSON bridge.
"""

from .core_types import (
    AttributeVector,
    AudioSegment,
    GeneratorVector,
    ImageHandle,
    SamplePair,
    divergence,
)
from .errors import (
    BackendError,
    CapabilityError,
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    FileIOError,
    FormatError,
    InsufficientDataError,
    MoodCanvasError,
    ParseError,
    PartialFailureError,
    ProtocolError,
    StageError,
    TrainingDivergedError,
    VersionedFormatError,
)
from .audio_features import (
    FeatureConfig,
    FeatureSequence,
    extract_feature_sequence,
    load_audio,
    load_feature_matrix,
    mel_filterbank,
    mfcc,
    cens,
    onset_envelope,
    save_feature_matrix,
    tempogram,
)
from .estimators import (
    MLPRegressor,
    TrainingConfig,
    VisualAttributeEstimator,
    ZScoreStats,
    compute_zscore_stats,
    gradient_check,
    load_annotations,
    load_mlp_regressor,
    load_training_set,
    predict_attributes,
    save_mlp_regressor,
    train_mlp_regressor,
    zscore_align,
    zscore_restore,
)
from .generator_backend import (
    GeneratorBackend,
    SyntheticBackend,
    SyntheticBackendSpec,
    SyntheticVisualEstimator,
    load_pairs,
    sample_generator_space,
    save_pairs,
)
from .attribute_view import (
    AttributeView,
    KMeansResult,
    build_attribute_view,
    instability_histogram,
    kmeans,
    load_view,
    save_view,
    surviving_pair_indices,
)
from .translator import (
    TranslationModel,
    TranslatorConfig,
    intrinsic_divergence,
    load_translator,
    roundtrip_divergence,
    save_translator,
    train_translator,
    translate,
)
from .stylizer import (
    BandThresholds,
    StyleEntry,
    StylePalette,
    build_style_palette,
    load_palette,
    save_palette,
    select_style,
    sentiment_band,
)
from .pipeline import (
    Bundle,
    FrameManifest,
    FrameRecord,
    StoryConfig,
    generate_story,
    interval_attributes,
    load_bundle,
    load_config,
    load_manifest,
    save_bundle,
    save_manifest,
)
from .bridge_client import (
    BridgeBackend,
    BridgeClient,
    BridgeStylizer,
    BridgeVisualEstimator,
)

__version__ = "0.1.0"
