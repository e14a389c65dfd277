"""Two-timescale plant models: slow target dynamics coupled with fast extra dynamics.

The plant class is

    x[t+1]  = f(x[t], xi[t], u[t], delta)      (target / slow state)
    xi[t+1] = g(xi[t], x[t], u[t], delta)      (extra / fast state)

where ``delta`` scales the slow update so the two subsystems evolve on
separate timescales. Every model exposes an equilibrium map ``xi_eq(x, u)``
that is a fixed point of ``g`` for frozen ``(x, u)``, and the reduced map

    f_R(x, u, delta) = f(x, xi_eq(x, u), u, delta)

used as the prediction model by the optimizer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PendulumParams",
    "PlantModel",
    "ActuatedPendulum",
    "LinearTwoTimescale",
    "step_target",
    "step_extra",
    "equilibrium_extra",
    "reduced_step",
    "validate_delta",
]


def _as_vector(v, dim: int, name: str) -> np.ndarray:
    """Coerce to a finite 1-D float vector of the expected length."""
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise ValueError(f"{name} must be a vector of length {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries: {arr}")
    return arr


def validate_delta(model: "PlantModel", delta: float) -> float:
    delta = float(delta)
    if not math.isfinite(delta) or delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    if delta >= model.delta_max:
        raise ValueError(f"delta must be < delta_max={model.delta_max}, got {delta}")
    return delta


@dataclass(frozen=True)
class PendulumParams:
    """Physical parameters of the motor-driven pendulum.

    ``L_tilde`` is the inductance scale: the physical armature inductance is
    ``L_tilde * delta``, which is what keeps the current loop fast relative
    to the mechanical states. The current error contracts by the factor
    ``1 - R_ohm / L_tilde`` per step, so ``L_tilde > R_ohm / 2`` is required
    for the fast subsystem to be exponentially stable.
    """

    l: float = 1.0          # pendulum length [m]
    mass: float = 0.5       # bob mass [kg]
    beta: float = 0.5       # viscous friction [N m s/rad]
    J: float = 0.5          # total inertia [kg m^2]
    K_t: float = 0.4        # torque constant [N m/A]
    K_e: float = 0.4        # back-EMF constant [V s/rad]
    R_ohm: float = 0.6      # armature resistance [ohm]
    L_tilde: float = 1.0    # inductance scale [H]
    grav: float = 9.81      # gravitational acceleration [m/s^2]

    def __post_init__(self):
        for name in ("l", "mass", "beta", "J", "K_t", "K_e", "R_ohm", "L_tilde", "grav"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"pendulum parameter {name} must be strictly positive, got {value}")
        if self.L_tilde <= self.R_ohm / 2.0:
            # Fast-subsystem contraction fails; keep the model constructible so
            # the certification pipeline can report the failure on its merits.
            warnings.warn(
                f"L_tilde={self.L_tilde} <= R_ohm/2={self.R_ohm / 2.0}: fast current "
                "error does not contract; certification will fail",
                stacklevel=2,
            )


class PlantModel:
    """Interface contract for a two-timescale plant.

    Concrete models provide the maps ``target_map`` (f), ``extra_map`` (g),
    ``equilibrium_map`` (xi_eq) and their Jacobians, plus dimensions
    ``n, p, m``, the equilibrium pair ``(x_star, u_star)`` and analytic
    Lipschitz constants where closed forms exist. All maps are pure
    functions; a model instance may be shared read-only across threads.
    """

    n: int
    p: int
    m: int
    delta_max: float = 1.0
    name: str = "plant"

    # Analytic Lipschitz constants (None when no closed form is available).
    lip_target_fast: float | None = None   # slow map w.r.t. (xi, u), delta-scaled
    lip_extra: float | None = None         # fast map w.r.t. (xi, x, u)
    lip_equilibrium: float | None = None   # xi_eq w.r.t. (x, u)

    @property
    def x_star(self) -> np.ndarray:
        return np.zeros(self.n)

    @property
    def u_star(self) -> np.ndarray:
        return np.zeros(self.m)

    def target_map(self, x: np.ndarray, xi: np.ndarray, u: np.ndarray, delta: float) -> np.ndarray:
        raise NotImplementedError

    def extra_map(self, xi: np.ndarray, x: np.ndarray, u: np.ndarray, delta: float) -> np.ndarray:
        raise NotImplementedError

    def equilibrium_map(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def target_jacobians(
        self, x: np.ndarray, xi: np.ndarray, u: np.ndarray, delta: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Jacobians of the target map: (df/dx, df/dxi, df/du)."""
        raise NotImplementedError

    def equilibrium_jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Jacobians of the equilibrium map: (dxi_eq/dx, dxi_eq/du)."""
        raise NotImplementedError

    def reduced_map(self, x: np.ndarray, u: np.ndarray, delta: float) -> np.ndarray:
        """Slow dynamics on the fast equilibrium manifold (by composition)."""
        return self.target_map(x, self.equilibrium_map(x, u), u, delta)

    def reduced_jacobians(self, x: np.ndarray, u: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
        """Jacobians of the reduced map, composed from f and xi_eq Jacobians."""
        xi = self.equilibrium_map(x, u)
        fx, fxi, fu = self.target_jacobians(x, xi, u, delta)
        ex, eu = self.equilibrium_jacobians(x, u)
        return fx + fxi @ ex, fxi @ eu + fu


class ActuatedPendulum(PlantModel):
    """Pendulum driven by a DC motor, discretized with forward Euler.

    State layout: x = (angle [rad], angular velocity [rad/s]), xi = armature
    current [A], u = armature voltage [V]. The current update is independent
    of ``delta`` because the physical inductance is itself scaled by ``delta``.
    """

    n = 2
    p = 1
    m = 1
    name = "pendulum"

    def __init__(self, params: PendulumParams | None = None, delta_max: float = 1.0):
        self.params = params or PendulumParams()
        self.delta_max = float(delta_max)
        p = self.params
        # Closed forms for this model: slow coupling K_t/J, fast map
        # max{|1-R/Lt|, Ke/Lt, 1/Lt}, equilibrium max{1, Ke}/R.
        self.lip_target_fast = p.K_t / p.J
        self.lip_extra = max(abs(1.0 - p.R_ohm / p.L_tilde), p.K_e / p.L_tilde, 1.0 / p.L_tilde)
        self.lip_equilibrium = max(1.0, p.K_e) / p.R_ohm

    def target_map(self, x, xi, u, delta):
        p = self.params
        theta = float(x[0])
        omega = float(x[1])
        accel = (
            -(p.beta / p.J) * omega
            - (p.mass * p.grav * p.l / p.J) * math.sin(theta)
            + (p.K_t / p.J) * float(xi[0])
        )
        return np.array([theta + delta * omega, omega + delta * accel])

    def extra_map(self, xi, x, u, delta):
        p = self.params
        value = (
            (1.0 - p.R_ohm / p.L_tilde) * float(xi[0])
            - (p.K_e / p.L_tilde) * float(x[1])
            + float(u[0]) / p.L_tilde
        )
        return np.array([value])

    def equilibrium_map(self, x, u):
        p = self.params
        return np.array([(-p.K_e * float(x[1]) + float(u[0])) / p.R_ohm])

    def target_jacobians(self, x, xi, u, delta):
        p = self.params
        fx = np.array(
            [
                [1.0, delta],
                [-delta * (p.mass * p.grav * p.l / p.J) * math.cos(float(x[0])), 1.0 - delta * p.beta / p.J],
            ]
        )
        fxi = np.array([[0.0], [delta * p.K_t / p.J]])
        fu = np.zeros((2, 1))
        return fx, fxi, fu

    def equilibrium_jacobians(self, x, u):
        p = self.params
        ex = np.array([[0.0, -p.K_e / p.R_ohm]])
        eu = np.array([[1.0 / p.R_ohm]])
        return ex, eu


class LinearTwoTimescale(PlantModel):
    """Scalar slow / scalar fast linear plant used to exercise certification.

    Dynamics:

        x[t+1]  = x + delta * (a_slow * x + b_slow * xi + c_slow * u)
        xi[t+1] = rho * xi + s_fast * x + e_fast * u

    with ``|rho| < 1`` so the fast error contracts by ``rho`` per step and
    ``xi_eq(x, u) = (s_fast * x + e_fast * u) / (1 - rho)``. Every constant in
    the certification chain has a simple closed form, which makes this model
    the ground-truth case for the pipeline.
    """

    n = 1
    p = 1
    m = 1
    name = "linear"

    def __init__(
        self,
        a_slow: float = -1.0,
        b_slow: float = 0.5,
        c_slow: float = 0.5,
        rho: float = 0.5,
        s_fast: float = 0.2,
        e_fast: float = 0.5,
        delta_max: float = 1.0,
    ):
        if not abs(rho) < 1.0:
            raise ValueError(f"fast pole rho must satisfy |rho| < 1, got {rho}")
        self.a_slow = float(a_slow)
        self.b_slow = float(b_slow)
        self.c_slow = float(c_slow)
        self.rho = float(rho)
        self.s_fast = float(s_fast)
        self.e_fast = float(e_fast)
        self.delta_max = float(delta_max)
        self.lip_target_fast = max(abs(self.b_slow), abs(self.c_slow))
        self.lip_extra = max(abs(self.rho), abs(self.s_fast), abs(self.e_fast))
        self.lip_equilibrium = max(abs(self.s_fast), abs(self.e_fast)) / (1.0 - self.rho)

    def target_map(self, x, xi, u, delta):
        return np.array(
            [float(x[0]) + delta * (self.a_slow * float(x[0]) + self.b_slow * float(xi[0]) + self.c_slow * float(u[0]))]
        )

    def extra_map(self, xi, x, u, delta):
        return np.array([self.rho * float(xi[0]) + self.s_fast * float(x[0]) + self.e_fast * float(u[0])])

    def equilibrium_map(self, x, u):
        return np.array([(self.s_fast * float(x[0]) + self.e_fast * float(u[0])) / (1.0 - self.rho)])

    def target_jacobians(self, x, xi, u, delta):
        fx = np.array([[1.0 + delta * self.a_slow]])
        fxi = np.array([[delta * self.b_slow]])
        fu = np.array([[delta * self.c_slow]])
        return fx, fxi, fu

    def equilibrium_jacobians(self, x, u):
        ex = np.array([[self.s_fast / (1.0 - self.rho)]])
        eu = np.array([[self.e_fast / (1.0 - self.rho)]])
        return ex, eu


def step_target(model: PlantModel, x, xi, u, delta: float) -> np.ndarray:
    """One slow-subsystem step x[t+1] = f(x, xi, u, delta)."""
    x = _as_vector(x, model.n, "x")
    xi = _as_vector(xi, model.p, "xi")
    u = _as_vector(u, model.m, "u")
    delta = validate_delta(model, delta)
    return model.target_map(x, xi, u, delta)


def step_extra(model: PlantModel, xi, x, u, delta: float) -> np.ndarray:
    """One fast-subsystem step xi[t+1] = g(xi, x, u, delta)."""
    xi = _as_vector(xi, model.p, "xi")
    x = _as_vector(x, model.n, "x")
    u = _as_vector(u, model.m, "u")
    delta = validate_delta(model, delta)
    return model.extra_map(xi, x, u, delta)


def equilibrium_extra(model: PlantModel, x, u) -> np.ndarray:
    """Fast-state fixed point xi_eq(x, u) for frozen (x, u)."""
    x = _as_vector(x, model.n, "x")
    u = _as_vector(u, model.m, "u")
    return model.equilibrium_map(x, u)


def reduced_step(model: PlantModel, x, u, delta: float) -> np.ndarray:
    """Reduced-order step f(x, xi_eq(x, u), u, delta), always by composition."""
    x = _as_vector(x, model.n, "x")
    u = _as_vector(u, model.m, "u")
    delta = validate_delta(model, delta)
    return model.reduced_map(x, u, delta)
