"""Surrogate precision stage: rigid body plus parasitic modes, feedback, lifting.

The plant for one decoupled axis is

    P(s) = 1 / (m s^2) + sum_i g_i / (s^2 + 2 zeta_i w_i s + w_i^2)

discretized with a zero-order hold. The feedback controller is a PID with
a lead network and a second-order roll-off, tuned for a crossover at a
tenth of the first parasitic mode unless told otherwise.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, signal

from . import _kernels
from .errors import ConfigError, DimensionError
from .lti import (
    DiscreteStateSpace,
    closed_loop_state_matrix,
    process_sensitivity,
    sensitivity,
)

MAX_DENSE_HORIZON = 8000


@dataclass(frozen=True)
class ParasiticMode:
    freq_hz: float
    damping: float
    gain: float  # modal compliance, 1/kg


@dataclass(frozen=True)
class PlantConfig:
    m: float = 5.0
    modes: tuple = ()
    Ts: float = 1e-3

    def __post_init__(self):
        modes = tuple(m if isinstance(m, ParasiticMode) else ParasiticMode(*m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        if not self.m > 0:
            raise ConfigError(f"mass must be positive, got {self.m}")
        if not self.Ts > 0:
            raise ConfigError(f"sample time must be positive, got {self.Ts}")
        nyq = 0.5 / self.Ts
        for md in modes:
            if not 0 < md.freq_hz < nyq:
                raise ConfigError(f"mode at {md.freq_hz} Hz is not below Nyquist ({nyq} Hz)")
            if not 0 < md.damping < 1:
                raise ConfigError(f"damping ratio {md.damping} outside (0, 1)")

    def to_dict(self):
        return {"m": self.m, "modes": [asdict(md) for md in self.modes], "Ts": self.Ts}

    @classmethod
    def from_dict(cls, d):
        modes = tuple(
            ParasiticMode(**md) if isinstance(md, dict) else ParasiticMode(*md) for md in d.get("modes", ())
        )
        return cls(m=d.get("m", 5.0), modes=modes, Ts=d.get("Ts", 1e-3))


@dataclass(frozen=True)
class ControllerConfig:
    """Loop-shaping knobs, all relative to the crossover frequency."""

    crossover_hz: float | None = None
    lead_ratio: float = 3.0
    integrator_ratio: float = 0.15
    rolloff_ratio: float = 6.0
    rolloff_damping: float = 0.7
    gain_scale: float = 1.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))


def build_plant(cfg: PlantConfig) -> DiscreteStateSpace:
    n = 2 + 2 * len(cfg.modes)
    A = np.zeros((n, n))
    B = np.zeros((n, 1))
    C = np.zeros((1, n))
    A[0, 1] = 1.0
    B[1, 0] = 1.0 / cfg.m
    C[0, 0] = 1.0
    for i, md in enumerate(cfg.modes):
        k = 2 + 2 * i
        w = 2 * math.pi * md.freq_hz
        A[k, k + 1] = 1.0
        A[k + 1, k] = -w * w
        A[k + 1, k + 1] = -2 * md.damping * w
        B[k + 1, 0] = md.gain
        C[0, k] = 1.0
    Ad, Bd, Cd, Dd, _ = signal.cont2discrete((A, B, C, np.zeros((1, 1))), cfg.Ts, method="zoh")
    return DiscreteStateSpace(Ad, Bd, Cd, Dd, cfg.Ts)


def crossover_hz(plant_cfg: PlantConfig, ctrl_cfg: ControllerConfig):
    if ctrl_cfg.crossover_hz is not None:
        return float(ctrl_cfg.crossover_hz)
    if plant_cfg.modes:
        return min(md.freq_hz for md in plant_cfg.modes) / 10.0
    # rigid plant: keep the roll-off well below Nyquist
    return 0.02 / plant_cfg.Ts


def build_controller(plant_cfg: PlantConfig, ctrl_cfg: ControllerConfig | None = None) -> DiscreteStateSpace:
    """Discrete PID + lead + roll-off controller (Tustin), stabilizing by construction."""
    ctrl_cfg = ctrl_cfg or ControllerConfig()
    wc = 2 * math.pi * crossover_hz(plant_cfg, ctrl_cfg)
    if wc * ctrl_cfg.rolloff_ratio * plant_cfg.Ts >= math.pi:
        raise ConfigError("roll-off frequency exceeds Nyquist; lower the crossover")
    if ctrl_cfg.gain_scale == 0.0:
        return DiscreteStateSpace.gain(0.0, plant_cfg.Ts)
    rho = ctrl_cfg.lead_ratio
    wz, wp = wc / rho, wc * rho
    wi = wc * ctrl_cfg.integrator_ratio
    wr = wc * ctrl_cfg.rolloff_ratio
    zr = ctrl_cfg.rolloff_damping
    num = np.polymul([1 / wz, 1], [1, wi])                 # lead zero, PI zero
    den = np.polymul([1 / wp, 1], [1, 0])                  # lead pole, integrator
    num = np.polymul(num, [wr * wr])
    den = np.polymul(den, [1, 2 * zr * wr, wr * wr])       # second-order roll-off
    jw = 1j * wc
    shape = np.polyval(num, jw) / np.polyval(den, jw)
    rigid = 1.0 / (plant_cfg.m * jw * jw)
    k = ctrl_cfg.gain_scale / abs(shape * rigid)
    A, B, C, D = signal.tf2ss(k * num, den)
    _, (scale, _) = linalg.matrix_balance(A, separate=True, permute=False)
    A = A * scale[None, :] / scale[:, None]
    B = B / scale[:, None]
    C = C * scale[None, :]
    Ad, Bd, Cd, Dd, _ = signal.cont2discrete((A, B, C, D), plant_cfg.Ts, method="bilinear")
    K = DiscreteStateSpace(Ad, Bd, Cd, Dd, plant_cfg.Ts)
    rho_cl = float(np.max(np.abs(np.linalg.eigvals(closed_loop_state_matrix(build_plant(plant_cfg), K)))))
    if rho_cl >= 1.0:
        raise ConfigError(f"controller does not stabilize the plant: closed-loop spectral radius {rho_cl:.6f}")
    return K


def mass_feedforward(traj, m):
    """Rigid-body feedforward force m * acceleration."""
    a = np.asarray(traj.a if hasattr(traj, "a") else traj, dtype=float)
    if a.ndim != 1:
        raise DimensionError("acceleration must be a 1-D signal")
    return m * a


def markov_parameters(sys: DiscreteStateSpace, n):
    if not sys.is_siso:
        raise DimensionError("lifting is implemented for SISO systems")
    return _kernels.markov(sys.A, sys.B, sys.C, sys.D, int(n))


def relative_degree(sys: DiscreteStateSpace, rtol=1e-12, horizon=64):
    """Index of the first Markov parameter that is not negligible."""
    h = markov_parameters(sys, horizon)
    scale = np.max(np.abs(h))
    if scale == 0.0:
        return 0
    return int(np.flatnonzero(np.abs(h) > rtol * scale)[0])


def lift(sys: DiscreteStateSpace, N, shift=0):
    """N x N lower-triangular Toeplitz matrix of Markov parameters.

    Entry (i, j) is h[i - j + shift]; ``shift=0`` is the ordinary lifted map,
    ``shift=d`` relates outputs d samples later to the inputs.
    """
    if N < 1:
        raise DimensionError("horizon must be at least 1")
    if N > MAX_DENSE_HORIZON:
        raise DimensionError(f"horizon {N} exceeds the dense-lift guard ({MAX_DENSE_HORIZON})")
    h = markov_parameters(sys, N + shift)[shift:]
    return _kernels.toeplitz_lower(np.ascontiguousarray(h), int(N))


@dataclass(frozen=True, eq=False)
class LoopSet:
    """Plant, controller, closed loops and their lifted forms over horizon N.

    The lifted error vector covers samples ``shift .. shift+N-1``, where
    ``shift`` is the relative degree of J; that keeps J_N invertible for
    strictly proper plants. References are shifted the same way, which is
    exact whenever the first ``shift`` reference samples are zero.
    """

    P: DiscreteStateSpace
    K: DiscreteStateSpace
    S: DiscreteStateSpace
    J: DiscreteStateSpace
    S_N: np.ndarray
    J_N: np.ndarray
    shift: int
    fingerprint: str = field(default="")

    @property
    def N(self):
        return self.J_N.shape[0]

    def shift_reference(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.N,):
            raise DimensionError(f"reference has {r.size} samples, loop horizon is {self.N}")
        d = self.shift
        if d and np.any(r[:d] != 0.0):
            raise DimensionError("shifted lifting needs the first samples of r to be zero")
        return np.concatenate([r[d:], np.full(d, r[-1])])

    def reference_error(self, r):
        """Lifted error with zero feedforward, S_N r (shifted window)."""
        return self.S_N @ self.shift_reference(r)

    def lifted_error(self, r, f):
        return self.reference_error(r) - self.J_N @ np.asarray(f, dtype=float)

    def tracking_error(self, r, f):
        """Tracking error e(0..N-1) for reference r under feedforward f."""
        e_vec = self.lifted_error(r, f)
        d = self.shift
        return np.concatenate([np.zeros(d), e_vec[: self.N - d]])


def loop_fingerprint(plant_cfg, ctrl_cfg, N, shift=None):
    payload = json.dumps(
        {"plant": plant_cfg.to_dict(), "controller": ctrl_cfg.to_dict(), "N": int(N), "shift": shift},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def build_loops(plant_cfg: PlantConfig, ctrl_cfg: ControllerConfig | None, N, shift=None):
    ctrl_cfg = ctrl_cfg or ControllerConfig()
    P = build_plant(plant_cfg)
    K = build_controller(plant_cfg, ctrl_cfg)
    S = sensitivity(P, K)
    J = process_sensitivity(P, K)
    d = relative_degree(J) if shift is None else int(shift)
    return LoopSet(
        P, K, S, J,
        S_N=lift(S, N),
        J_N=lift(J, N, shift=d),
        shift=d,
        fingerprint=loop_fingerprint(plant_cfg, ctrl_cfg, N, shift),
    )
