"""Desk-scale Arabic text-to-speech: phonetizer, mel DSP, attention
spectrogram predictor and flow vocoder on a small numpy autodiff engine."""

__version__ = "0.1.0"
