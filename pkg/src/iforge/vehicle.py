"""Vehicle data: physical parameters, operating bounds, model matrices.

Defaults reproduce the mid-size-sedan configuration used throughout
(synthesis, barriers, filters and simulation all pull from here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants (SI units)."""

    m: float = 1650.0        # total mass [kg]
    c_f: float = 133000.0    # front cornering stiffness [N/rad]
    c_r: float = 98800.0     # rear cornering stiffness [N/rad]
    a: float = 1.11          # CG to front axle [m]
    b: float = 1.59          # CG to rear axle [m]
    i_z: float = 2315.3      # yaw inertia [kg m^2]
    c0: float = 51.0         # rolling drag [N]
    c1: float = 1.26         # linear drag [N s/m]
    c2: float = 0.4342       # quadratic drag [N s^2/m^2]
    g: float = 9.81          # gravity [m/s^2]

    def __post_init__(self):
        for name in ("m", "c_f", "c_r", "a", "b", "i_z", "c0", "c1", "c2", "g"):
            if getattr(self, name) <= 0:
                raise ValueError(f"vehicle parameter {name} must be positive")


@dataclass(frozen=True)
class LkBounds:
    """Lateral-state box, steering limit, speed range, curvature-rate bound."""

    y_m: float = 0.9          # lateral offset [m]
    nu_m: float = 1.0         # lateral velocity [m/s]
    dpsi_m: float = 0.05      # yaw-angle error [rad]
    r_m: float = 0.3          # yaw rate [rad/s]
    delta_f_max: float = 0.06  # steering angle limit [rad]
    d_max: float = 0.1        # desired-yaw-rate bound [rad/s]
    v_low: float = 15.0       # speed range floor [m/s]
    v_high: float = 30.0      # speed range ceiling [m/s]

    def __post_init__(self):
        if not (0 < self.v_low < self.v_high):
            raise ValueError("need 0 < v_low < v_high")
        for name in ("y_m", "nu_m", "dpsi_m", "r_m", "delta_f_max", "d_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"bound {name} must be positive")

    @property
    def state_scales(self) -> np.ndarray:
        return np.array([self.y_m, self.nu_m, self.dpsi_m, self.r_m])


def drag_force(params: VehicleParams, v_f: float) -> float:
    """Aerodynamic + rolling resistance F_r = c0 + c1 v + c2 v^2 [N]."""
    return params.c0 + params.c1 * v_f + params.c2 * v_f * v_f


def lk_matrices(params: VehicleParams, v_f: float):
    """Lateral-yaw model matrices (A1(v_f), B1, E1) for state (y, nu, dpsi, r)."""
    if v_f <= 0:
        raise ValueError("v_f must be positive")
    p = params
    a22 = -(p.c_f + p.c_r) / (p.m * v_f)
    a24 = (p.b * p.c_r - p.a * p.c_f) / (p.m * v_f) - v_f
    a42 = (p.b * p.c_r - p.a * p.c_f) / (p.i_z * v_f)
    a44 = -(p.a ** 2 * p.c_f + p.b ** 2 * p.c_r) / (p.i_z * v_f)
    A1 = np.array([
        [0.0, 1.0, v_f, 0.0],
        [0.0, a22, 0.0, a24],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, a42, 0.0, a44],
    ])
    B1 = np.array([0.0, p.c_f / p.m, 0.0, p.a * p.c_f / p.i_z])
    E1 = np.array([0.0, 0.0, -1.0, 0.0])
    return A1, B1, E1
