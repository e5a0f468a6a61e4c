"""Streaming vibrotactile texture synthesis.

Converts a texture embedding plus live user action (normal force, planar
velocity) into a continuous acceleration waveform: an action-conditional
network predicts short-horizon magnitude DFT frames at the control-loop
rate, and a causal single-pass spectrogram inversion turns the frame
stream into audio-band acceleration samples in real time.
"""

from hapticsynth.spectral import FrameGeometry, MagnitudeFrame
from hapticsynth.engine import ProbeSample, RenderConfig, RenderSession

__version__ = "0.1.0"

__all__ = [
    "FrameGeometry",
    "MagnitudeFrame",
    "ProbeSample",
    "RenderConfig",
    "RenderSession",
    "__version__",
]
