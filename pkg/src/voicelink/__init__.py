"""Software twin of an RF-backscatter voice link: tag simulation, FM
demodulation, objective metrics and self-supervised separation/denoising."""

from .audio import AudioClip, read_wav, write_wav
from .corpus import CorpusSpec, gen_noise, gen_voice
from .demod import DemodConfig, demodulate
from .metrics import llr, si_sdr, stoi
from .pipeline import PipelineConfig, run_pipeline
from .tag import ChannelParams, IQTrace, TagParams, apply_channel, \
    synthesize_backscatter_iq

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "read_wav", "write_wav",
    "CorpusSpec", "gen_voice", "gen_noise",
    "DemodConfig", "demodulate",
    "si_sdr", "llr", "stoi",
    "PipelineConfig", "run_pipeline",
    "TagParams", "ChannelParams", "IQTrace",
    "synthesize_backscatter_iq", "apply_channel",
    "__version__",
]
