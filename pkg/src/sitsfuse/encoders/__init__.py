from .ltae import LTAE, AttentionMaps, LTAEConfig, MaskedSequenceError, TemporalAttentionCore
from .positional import positional_encoding
from .pse import PixelSetConfig, PixelSetEncoder, sample_pixel_set
from .utae import UTAE, UTAEConfig, UTAEOutput

__all__ = [
    "AttentionMaps",
    "LTAE",
    "LTAEConfig",
    "MaskedSequenceError",
    "PixelSetConfig",
    "PixelSetEncoder",
    "TemporalAttentionCore",
    "UTAE",
    "UTAEConfig",
    "UTAEOutput",
    "positional_encoding",
    "sample_pixel_set",
]
