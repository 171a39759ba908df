"""Three-DOF surface vessel model with thrust-rate augmentation.

States are plain float arrays:

* ``State6``  = ``[x, y, psi, u, v, r]``
* ``AugState`` = ``[x, y, psi, u, v, r, X, N]``
* control rate = ``[Xdelta, Ndelta]``
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class VesselParams:
    """Inertia, damping, propeller arm and actuator limits.

    Defaults are the identified values of the reference mono-hull.
    """

    M1: float = 493.77
    M2: float = 455.81
    M3: float = 55.81
    D1: float = 29.23
    D2: float = 2173.7
    D3: float = 17.7
    d: float = 0.28
    X_lim: float = 39.2
    N_lim: float = 10.84
    Xdelta_lim: float = 4.9
    Ndelta_lim: float = 1.35

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not np.isfinite(val) or val <= 0.0:
                raise ValueError(f"VesselParams.{name} must be positive, got {val}")

    def as_array(self):
        """Model coefficients ``[M1, M2, M3, D1, D2, D3]`` for the kernels."""
        return np.array([self.M1, self.M2, self.M3, self.D1, self.D2, self.D3])

    @property
    def tau_lim(self):
        return np.array([self.X_lim, self.N_lim])

    @property
    def rate_lim(self):
        return np.array([self.Xdelta_lim, self.Ndelta_lim])


def dynamics(s, tau, p):
    """Time derivative of a ``State6`` under force/torque ``tau = (X, N)``."""
    a = np.concatenate([np.asarray(s, dtype=float), np.asarray(tau, dtype=float)])
    return aug_dynamics(a, np.zeros(2), p)[:6]


def aug_dynamics(a, cr, p):
    """Time derivative of an ``AugState`` under control rate ``cr``."""
    a = np.asarray(a, dtype=float).reshape(1, 8)
    cr = np.asarray(cr, dtype=float).reshape(1, 2)
    return kernels.aug_rhs_np(a, cr, p.as_array())[0]


def integrate(a, cr, dt, p):
    """One classical RK4 step of :func:`aug_dynamics`; heading re-wrapped."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a = np.ascontiguousarray(a, dtype=float).reshape(1, 8)
    cr = np.ascontiguousarray(cr, dtype=float).reshape(1, 2)
    out = kernels.rk4(a, cr, float(dt), p.as_array())[0]
    out[2] = wrap_angle(out[2])
    return out


def thrust_split(X, N, d):
    """Left/right propeller forces for surge force ``X`` and yaw torque ``N``."""
    if d <= 0.0:
        raise ValueError("moment arm d must be positive")
    return 0.5 * (X + N / d), 0.5 * (X - N / d)


def thrust_join(F_l, F_r, d):
    """Inverse of :func:`thrust_split`."""
    return F_l + F_r, (F_l - F_r) * d
