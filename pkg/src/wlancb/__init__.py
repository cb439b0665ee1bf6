"""Dynamic channel bonding in CSMA/CA WLANs: Markov-network model and event-driven simulator."""
from .channels import ChannelAllocation, ChannelRange, Policy, select_channel
from .scenario import DeploymentSpec, Scenario, TrafficModel, WlanConfig, generate, load_config, load_fixture

__version__ = "0.1.0"

__all__ = ["ChannelAllocation", "ChannelRange", "Policy", "select_channel", "DeploymentSpec", "Scenario",
           "TrafficModel", "WlanConfig", "generate", "load_config", "load_fixture"]
