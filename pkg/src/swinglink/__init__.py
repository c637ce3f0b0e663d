"""Bit-level model of a duty-cycled low-swing SerDes link and its energy."""

from .channel import ChannelConfig
from .energy import DutyCycleParams, PowerProfile, bw_max, continuous_efficiency, energy_per_bit
from .link import ChipConfig, LinkParams, SimReport, measure_ber, run_handshake, run_transfer

__all__ = [
    "ChannelConfig",
    "ChipConfig",
    "DutyCycleParams",
    "LinkParams",
    "PowerProfile",
    "SimReport",
    "bw_max",
    "continuous_efficiency",
    "energy_per_bit",
    "measure_ber",
    "run_handshake",
    "run_transfer",
]
