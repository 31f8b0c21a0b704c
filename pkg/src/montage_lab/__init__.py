"""EEG montage analysis: ingestion, re-referencing, features, HMMs, DET."""

from .analysis import (
    EigenDecomposition,
    PrincipalComponentAnalysis,
    StatsSummary,
    compare_eigenvectors,
    pca,
    report_table,
)
from .errors import InputError, MontageLabError
from .evaluation import (
    CorpusSplit,
    DetCurve,
    MatrixResult,
    PipelineConfig,
    ScoreReport,
    det_curve,
    run_matrix,
    score,
)
from .features import (
    CepstralFeatureExtractor,
    FeatureConfig,
    FeatureSequence,
    deltas,
    differential_energy,
    extract,
    frame_count,
)
from .hmm import (
    Epoch,
    HmmModel,
    SeizureDetector,
    TrainConfig,
    classify,
    epochize,
    log_forward,
    train,
    viterbi,
)
from .ingest import (
    ChannelSignal,
    EventClass,
    LabelSet,
    Recording,
    ReferenceScheme,
    SynthConfig,
    generate_synthetic,
    parse_edf,
    parse_labels,
    write_edf,
)
from .montage import TCP_MONTAGE, MontageSpec, apply_montage, rereference
from .normalize import (
    CepstralMeanNormalizer,
    NormalizationConfig,
    NormalizationMode,
    normalize,
    normalize_recording,
)

__version__ = "0.1.0"

__all__ = [
    "CepstralFeatureExtractor",
    "CepstralMeanNormalizer",
    "ChannelSignal",
    "CorpusSplit",
    "DetCurve",
    "EigenDecomposition",
    "Epoch",
    "EventClass",
    "FeatureConfig",
    "FeatureSequence",
    "HmmModel",
    "InputError",
    "LabelSet",
    "MatrixResult",
    "MontageLabError",
    "MontageSpec",
    "NormalizationConfig",
    "NormalizationMode",
    "PipelineConfig",
    "PrincipalComponentAnalysis",
    "Recording",
    "ReferenceScheme",
    "ScoreReport",
    "SeizureDetector",
    "StatsSummary",
    "SynthConfig",
    "TCP_MONTAGE",
    "TrainConfig",
    "apply_montage",
    "classify",
    "compare_eigenvectors",
    "deltas",
    "det_curve",
    "differential_energy",
    "epochize",
    "extract",
    "frame_count",
    "generate_synthetic",
    "log_forward",
    "normalize",
    "normalize_recording",
    "parse_edf",
    "parse_labels",
    "pca",
    "rereference",
    "report_table",
    "run_matrix",
    "score",
    "train",
    "viterbi",
    "write_edf",
]
