"""Independent reference implementations used to pin expected test values.

These deliberately avoid the library's own code paths: the pose oracle is a
plain fixed-step Euler integrator, and the frame helpers build bytes by hand.
"""

import math

from rdis.kinematics import Pose, Twist


def euler_pose(p: Pose, t: Twist, dt_s: float, steps: int = 10000) -> tuple[float, float, float]:
    """Brute-force unicycle integration with ``steps`` Euler sub-steps."""
    x, y, theta = p.x_m, p.y_m, p.theta_rad
    h = dt_s / steps
    for _ in range(steps):
        x += t.linear_mps * h * math.cos(theta)
        y += t.linear_mps * h * math.sin(theta)
        theta += t.angular_radps * h
    return x, y, theta
