"""OTFS delay-Doppler channel simulation and the unfolded BPIC detector."""

from .channel import (
    ChannelRealization,
    Frame,
    build_effective_channel,
    build_time_channel,
    frame_rng,
    sample_channel,
    simulate_frame,
    stack_frames,
)
from .core import RealModel, SystemConfig, make_constellation, to_real_model
from .detector import DetectorParams, detect, hard_decision, ml_oracle, mmse_init
from .errors import (
    CapacityError,
    ConfigError,
    FormatError,
    InputError,
    NumericalError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "ChannelRealization", "ConfigError", "DetectorParams", "FormatError",
    "Frame", "InputError", "NumericalError", "RealModel", "SystemConfig", "TrainingError",
    "build_effective_channel", "build_time_channel", "detect", "frame_rng", "hard_decision",
    "make_constellation", "ml_oracle", "mmse_init", "sample_channel", "simulate_frame",
    "stack_frames", "to_real_model",
]
