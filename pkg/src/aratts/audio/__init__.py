from aratts.audio.dsp import (
    AllSilent,
    AudioClip,
    AudioError,
    MalformedWav,
    MelSpectrogram,
    UnsupportedEncoding,
    hz_to_mel,
    load_wav,
    mel_filterbank,
    mel_spectrogram,
    resample,
    stft,
    trim_silence,
    write_wav,
)
from aratts.audio.melio import read_mel, write_mel

__all__ = [
    "AllSilent",
    "AudioClip",
    "AudioError",
    "MalformedWav",
    "MelSpectrogram",
    "UnsupportedEncoding",
    "hz_to_mel",
    "load_wav",
    "mel_filterbank",
    "mel_spectrogram",
    "read_mel",
    "resample",
    "stft",
    "trim_silence",
    "write_mel",
    "write_wav",
]
