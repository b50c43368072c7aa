"""Closed-form differential-drive kinematics and unicycle pose integration.

With wheel track L, the wheel/body velocity relation is

    left  = linear - angular * L / 2
    right = linear + angular * L / 2

and its inverse linear = (left + right) / 2, angular = (right - left) / L.

``integrate_pose`` advances a pose along the exact constant-twist arc:
theta' = theta + w*dt, and with turn radius R = v/w

    x += R * (sin theta' - sin theta)
    y -= R * (cos theta' - cos theta)

falling back to the straight-line form when |w*dt| < 1e-9 to avoid the
R = v/w singularity. Heading is normalized to (-pi, pi] after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_STRAIGHT_EPS = 1e-9


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class Twist:
    linear_mps: float
    angular_radps: float

    def __post_init__(self):
        _require_finite(linear_mps=self.linear_mps, angular_radps=self.angular_radps)


@dataclass(frozen=True)
class WheelSpeeds:
    left_mps: float
    right_mps: float

    def __post_init__(self):
        _require_finite(left_mps=self.left_mps, right_mps=self.right_mps)


@dataclass(frozen=True)
class Pose:
    x_m: float = 0.0
    y_m: float = 0.0
    theta_rad: float = 0.0

    def __post_init__(self):
        _require_finite(x_m=self.x_m, y_m=self.y_m, theta_rad=self.theta_rad)


def normalize_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.remainder(theta, math.tau)
    if t <= -math.pi:
        t += math.tau
    return t


def inverse(t: Twist, wheel_track_m: float) -> WheelSpeeds:
    """Wheel speeds realizing a body twist."""
    if wheel_track_m <= 0:
        raise ValueError(f"wheel track must be positive, got {wheel_track_m!r}")
    half = t.angular_radps * wheel_track_m / 2.0
    return WheelSpeeds(t.linear_mps - half, t.linear_mps + half)


def forward(w: WheelSpeeds, wheel_track_m: float) -> Twist:
    """Body twist produced by wheel speeds."""
    if wheel_track_m <= 0:
        raise ValueError(f"wheel track must be positive, got {wheel_track_m!r}")
    return Twist((w.left_mps + w.right_mps) / 2.0, (w.right_mps - w.left_mps) / wheel_track_m)


def integrate_pose(p: Pose, t: Twist, dt_s: float) -> Pose:
    """Advance a pose by holding the twist constant for ``dt_s`` seconds."""
    if dt_s < 0:
        raise ValueError(f"dt must be non-negative, got {dt_s!r}")
    v = t.linear_mps
    w = t.angular_radps
    theta2 = p.theta_rad + w * dt_s
    if abs(w * dt_s) < _STRAIGHT_EPS:
        x = p.x_m + v * dt_s * math.cos(p.theta_rad)
        y = p.y_m + v * dt_s * math.sin(p.theta_rad)
    else:
        radius = v / w
        x = p.x_m + radius * (math.sin(theta2) - math.sin(p.theta_rad))
        y = p.y_m - radius * (math.cos(theta2) - math.cos(p.theta_rad))
    return Pose(x, y, normalize_angle(theta2))
