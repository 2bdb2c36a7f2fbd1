"""Per-channel energy normalization (PCEN) frontends, fixed and trainable."""

from .dsp import AudioBuffer, EnergyGram, FrontendConfig, filterbank_energies, rms_dbfs, scale_to_dbfs
from .errors import PcenError
from .frontend import (
    FeatureGram,
    PcenParams,
    PerChannelSmoother,
    SingleSmoother,
    SmootherBank,
    combine_smoothers,
    iir_smooth,
    log_mel,
    pcen_compress,
    pcen_forward,
    stream_init,
    stream_step,
)
from .trainable import TrainablePcen, finite_diff_check, freeze, init_trainable, trainable_backward, trainable_forward
from .wav import read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "EnergyGram", "FrontendConfig", "filterbank_energies", "rms_dbfs", "scale_to_dbfs",
    "PcenError", "FeatureGram", "PcenParams", "PerChannelSmoother", "SingleSmoother", "SmootherBank",
    "combine_smoothers", "iir_smooth", "log_mel", "pcen_compress", "pcen_forward", "stream_init",
    "stream_step", "TrainablePcen", "finite_diff_check", "freeze", "init_trainable",
    "trainable_backward", "trainable_forward", "read_wav", "write_wav",
]
