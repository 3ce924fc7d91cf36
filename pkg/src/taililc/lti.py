"""Discrete-time LTI systems: simulation, frequency response, loop algebra."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import AlgebraicLoopError, DimensionError, SingularFrequencyError


def _as_matrix(x, name):
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class DiscreteStateSpace:
    """x(k+1) = A x(k) + B u(k),  y(k) = C x(k) + D u(k).

    Matrices are copied and frozen (read-only) on construction.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Ts: float

    def __post_init__(self):
        D = _as_matrix(self.D, "D")
        n_y, n_u = D.shape
        A = np.array(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, 0))
        A = _as_matrix(A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        B = _as_matrix(self.B, "B") if n else np.zeros((0, n_u))
        C = _as_matrix(self.C, "C") if n else np.zeros((n_y, 0))
        if B.shape != (n, n_u):
            raise DimensionError(f"B has shape {B.shape}, expected {(n, n_u)}")
        if C.shape != (n_y, n):
            raise DimensionError(f"C has shape {C.shape}, expected {(n_y, n)}")
        if not self.Ts > 0:
            raise DimensionError(f"sample time must be positive, got {self.Ts}")
        for name, m in (("A", A), ("B", B), ("C", C), ("D", D)):
            m = np.ascontiguousarray(m)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        object.__setattr__(self, "Ts", float(self.Ts))

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.D.shape[1]

    @property
    def n_outputs(self):
        return self.D.shape[0]

    @property
    def is_siso(self):
        return self.D.shape == (1, 1)

    @classmethod
    def gain(cls, D, Ts=1.0):
        D = _as_matrix(D, "D")
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D, Ts)

    def spectral_radius(self):
        if self.n_states == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "Ts": self.Ts,
        }

    @classmethod
    def from_dict(cls, d):
        n_y, n_u = np.shape(d["D"])
        n = len(d["A"])
        A = np.array(d["A"], dtype=float).reshape(n, n)
        B = np.array(d["B"], dtype=float).reshape(n, n_u)
        C = np.array(d["C"], dtype=float).reshape(n_y, n)
        return cls(A, B, C, d["D"], d["Ts"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    omegas: np.ndarray
    values: np.ndarray  # shape (n_omega, n_y, n_u), complex

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 1:
            v = v.reshape(-1, 1, 1)
        if w.ndim != 1 or v.shape[0] != w.shape[0]:
            raise DimensionError("values must carry one matrix per frequency")
        if w.size > 1 and np.any(np.diff(w) <= 0):
            raise DimensionError("omegas must be strictly increasing")
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "values", v)

    def siso(self):
        """Scalar response for SISO systems."""
        return self.values[:, 0, 0]


def simulate(sys: DiscreteStateSpace, u):
    """Zero-initial-state response. A 1-D ``u`` is taken as a single input row."""
    u = np.asarray(u, dtype=float)
    squeeze = u.ndim == 1
    if squeeze:
        u = u.reshape(1, -1)
    if u.ndim != 2 or u.shape[0] != sys.n_inputs:
        raise DimensionError(f"input has shape {u.shape}, system expects {sys.n_inputs} rows")
    y = _kernels.ss_simulate(sys.A, sys.B, sys.C, sys.D, np.ascontiguousarray(u))
    if squeeze and sys.n_outputs == 1:
        return y[0]
    return y


def default_grid(n=2048):
    """Hybrid grid on (0, pi]: half log-spaced from 1e-4*pi, half linear."""
    n_log = n // 2
    w = np.concatenate([
        np.logspace(np.log10(np.pi * 1e-4), np.log10(np.pi), n_log),
        np.linspace(np.pi / (n - n_log), np.pi, n - n_log),
    ])
    return np.unique(w)


def freq_response(sys: DiscreteStateSpace, omegas=None):
    """Evaluate C (zI - A)^-1 B + D at z = exp(i omega)."""
    omegas = default_grid() if omegas is None else np.atleast_1d(np.asarray(omegas, dtype=float))
    n = sys.n_states
    z = np.exp(1j * omegas)
    vals = np.broadcast_to(sys.D.astype(complex), (omegas.size,) + sys.D.shape).copy()
    if n:
        eig = np.linalg.eigvals(sys.A)
        dist = np.min(np.abs(z[:, None] - eig[None, :]), axis=1)
        bad = np.flatnonzero(dist <= 1e-12 * max(1.0, np.max(np.abs(eig))))
        if bad.size:
            raise SingularFrequencyError(omegas[bad[0]])
        M = z[:, None, None] * np.eye(n) - sys.A
        X = np.linalg.solve(M, np.broadcast_to(sys.B, (omegas.size,) + sys.B.shape))
        vals += sys.C @ X
    return FrequencyResponse(omegas, vals)


def linf_norm(fr: FrequencyResponse):
    """Largest singular value over the grid.

    This is a grid estimate and never exceeds the true L-infinity norm.
    """
    if fr.omegas.size == 0:
        raise DimensionError("frequency grid is empty")
    return float(np.max(np.linalg.svd(fr.values, compute_uv=False)[:, 0]))


def _loop_matrices(P: DiscreteStateSpace, K: DiscreteStateSpace):
    """Feedback loop with feedforward: inputs (r, f), output e = r - y.

    u = f + K e is the plant input; returns the realization pieces of
    x+ = A x + Br r + Bf f,  e = Ce x + Der r + Def f.
    """
    if P.n_outputs != K.n_inputs or P.n_inputs != K.n_outputs:
        raise DimensionError("P and K dimensions do not form a loop")
    if not np.isclose(P.Ts, K.Ts):
        raise DimensionError(f"sample times differ: {P.Ts} vs {K.Ts}")
    n_y, n_u = P.n_outputs, P.n_inputs
    E = np.eye(n_y) + P.D @ K.D
    if np.linalg.cond(E) > 1e12:
        raise AlgebraicLoopError("I + D_P D_K is singular; the loop is ill-posed")
    M = np.linalg.inv(E)
    n_p, n_k = P.n_states, K.n_states
    Ce = -M @ np.hstack([P.C, P.D @ K.C])
    Der = M
    Def = -M @ P.D
    Cu = np.hstack([np.zeros((n_u, n_p)), K.C]) + K.D @ Ce
    Dur = K.D @ Der
    Duf = np.eye(n_u) + K.D @ Def
    A = np.zeros((n_p + n_k, n_p + n_k))
    A[:n_p, :n_p] = P.A
    A[n_p:, n_p:] = K.A
    A[:n_p] += P.B @ Cu
    A[n_p:] += K.B @ Ce
    Br = np.vstack([P.B @ Dur, K.B @ Der])
    Bf = np.vstack([P.B @ Duf, K.B @ Def])
    return A, Br, Bf, Ce, Der, Def


def sensitivity(P, K):
    """S = (I + PK)^-1, the map r -> e."""
    A, Br, _, Ce, Der, _ = _loop_matrices(P, K)
    return DiscreteStateSpace(A, Br, Ce, Der, P.Ts)


def process_sensitivity(P, K):
    """J = (I + PK)^-1 P, the map f -> y (so that e = S r - J f)."""
    A, _, Bf, Ce, _, Def = _loop_matrices(P, K)
    return DiscreteStateSpace(A, Bf, -Ce, -Def, P.Ts)


def closed_loop_state_matrix(P, K):
    return _loop_matrices(P, K)[0]


def simulate_feedback(P, K, r, f):
    """Two-block simulation of plant and controller, sample by sample.

    Independent of the closed-loop realization used by ``sensitivity``;
    returns the error e = r - y and the plant input u for SISO signals.
    """
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    if r.shape != f.shape or r.ndim != 1:
        raise DimensionError("r and f must be 1-D and equally long")
    if not (P.is_siso and K.is_siso):
        raise DimensionError("simulate_feedback handles SISO loops only")
    xp = np.zeros(P.n_states)
    xk = np.zeros(K.n_states)
    dp, dk = P.D[0, 0], K.D[0, 0]
    e = np.zeros_like(r)
    u = np.zeros_like(r)
    for k in range(r.size):
        # e = r - Cp xp - dp (f + Ck xk + dk e)
        yp_free = P.C[0] @ xp + dp * (f[k] + K.C[0] @ xk)
        e[k] = (r[k] - yp_free) / (1.0 + dp * dk)
        u[k] = f[k] + K.C[0] @ xk + dk * e[k]
        xp = P.A @ xp + P.B[:, 0] * u[k]
        xk = K.A @ xk + K.B[:, 0] * e[k]
    return e, u
