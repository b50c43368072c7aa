"""Toolchain for declarative robot device descriptions.

Parse and validate device documents, talk to (emulated) firmware over
positional-byte or delimited-ASCII protocols, expose differential-drive
concepts over a websocket bridge with device discovery, and generate
standalone driver source code.
"""

from .kinematics import Pose, Twist, WheelSpeeds, forward, integrate_pose, inverse
from .model import Diagnostic, RdisDocument
from .parser import canonicalize, load_document, parse_document, validate

__all__ = [
    "Diagnostic",
    "Pose",
    "RdisDocument",
    "Twist",
    "WheelSpeeds",
    "canonicalize",
    "forward",
    "integrate_pose",
    "inverse",
    "load_document",
    "parse_document",
    "validate",
]

__version__ = "0.1.0"
