"""Energy-aware trajectory and TDMA scheduling for UAV-mounted RIS and full-duplex relays."""

from uavnet.scenario import Airframe, Payload, RadioParams, Scenario, load_config, sample_ground_nodes

__all__ = [
    "Airframe",
    "Payload",
    "RadioParams",
    "Scenario",
    "load_config",
    "sample_ground_nodes",
]

__version__ = "0.1.0"
