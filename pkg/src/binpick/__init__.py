"""Dynamic bin picking: manipulability-aware suction selection, bin tracking and MPPI control."""

from binpick.kinematics import JointState, KinematicChain, Pose, default_chain
from binpick.mlp import MlpModel, default_model

__all__ = ["JointState", "KinematicChain", "MlpModel", "Pose", "default_chain", "default_model"]
__version__ = "0.1.0"
