"""Minimal numpy network engine for the registration agent."""
from .checkpoint import (CheckpointError, ConfigMismatchError, CorruptCheckpointError,
                         load_checkpoint, save_checkpoint)
from .network import (ForwardTape, LstmState, NetworkConfig, NetworkConfigError, NetworkParams,
                      backward, forward, init_network, run_window)
from .optim import AdamState, SharedParameters, adam_step

__all__ = [
    "AdamState", "CheckpointError", "ConfigMismatchError", "CorruptCheckpointError",
    "ForwardTape", "LstmState", "NetworkConfig", "NetworkConfigError", "NetworkParams",
    "SharedParameters", "adam_step", "backward", "forward", "init_network", "load_checkpoint",
    "run_window", "save_checkpoint",
]
