"""Learning decentralized flocking controllers with delayed graph neural networks."""

from .controllers import (
    Arch,
    ControllerParams,
    FilterBank,
    Policy,
    backward,
    forward,
    forward_gc,
    forward_gcnn,
    forward_grnn,
    graph_conv,
    init_params,
)
from .flocking import FlockingConfig, SwarmState, generate_dataset, rollout
from .graph import AggregationBuffer, GraphSequence, GraphSnapshot, advance_buffer, delayed_k_hop_cone, shift
from .training import TrainConfig, gradient_check, train

__all__ = [
    "AggregationBuffer", "Arch", "ControllerParams", "FilterBank", "FlockingConfig", "GraphSequence",
    "GraphSnapshot", "Policy", "SwarmState", "TrainConfig", "advance_buffer", "backward",
    "delayed_k_hop_cone", "forward", "forward_gc", "forward_gcnn", "forward_grnn", "generate_dataset",
    "gradient_check", "graph_conv", "init_params", "rollout", "shift", "train",
]
