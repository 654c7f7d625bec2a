"""Full-band hybrid acoustic echo cancellation.

Delay alignment (GCC-PHAT), a partitioned-block frequency-domain Kalman
filter and a Taylor-style neural post-filter, plus the data simulation,
losses, training loop and metrics around them.
"""

from taylor_aec.signal import AudioClip, ComplexSpectrogram, StftConfig, istft, read_wav, stft, write_wav

__all__ = [
    "AudioClip",
    "ComplexSpectrogram",
    "StftConfig",
    "istft",
    "read_wav",
    "stft",
    "write_wav",
]

__version__ = "0.1.0"
