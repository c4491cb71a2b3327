"""Low-cost privacy-preserving speech features and their privacy/utility evaluation.

Modules: ``audio_core`` (I/O, framing, Mel features), ``transforms`` (spectral
and temporal smoothing, McAdams anonymization, low-frequency audio),
``augmentation`` (noise and reverberation), ``metrics`` (WER, EER, MCC, DER,
bootstrap), ``proxies`` (classical ASR/ASV/VAD/diarization stand-ins),
``experiment`` and ``report`` (sweeps and their output), ``cli``.
"""

__version__ = "0.1.0"
