"""Neural excitation vocoder: LP analysis/synthesis around a WaveNet-style excitation model.

Set ``EXCITNET_NUMBA=0`` before import to run the pure-numpy kernels.
"""

from ._backend import USE_NUMBA, backend_name
from .dsp import Signal, lp_analysis, lp_synthesis, mu_law_decode, mu_law_encode
from .features import AcousticFeatureSequence, AnalysisConfig, analyze
from .net import Checkpoint, NetConfig, init_network, load_checkpoint, receptive_field
from .vocoder import (
    MetricsReport,
    VocoderKind,
    copy_synthesis,
    prepare_dataset,
    synthesize,
    train_vocoder,
)

__version__ = "0.1.0"

__all__ = [
    "AcousticFeatureSequence", "AnalysisConfig", "Checkpoint", "MetricsReport", "NetConfig",
    "Signal", "USE_NUMBA", "VocoderKind", "analyze", "backend_name", "copy_synthesis",
    "init_network", "load_checkpoint", "lp_analysis", "lp_synthesis", "mu_law_decode",
    "mu_law_encode", "prepare_dataset", "receptive_field", "synthesize", "train_vocoder",
]
