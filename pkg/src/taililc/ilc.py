"""Lifted-domain iterative learning control.

Trial recursion on a fixed reference r::

    e_k     = S_N r - J_N f_k
    f_{k+1} = Q (L e_k + f_k)

With a convergent filter pair the recursion has the fixed point
f_inf = (I - Q(I - L J_N))^-1 Q L S_N r.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg, signal

from .errors import DimensionError, DivergenceError, NonConvergentError, NumericalError
from .lti import DiscreteStateSpace


@dataclass(frozen=True, eq=False)
class ILCFilters:
    L: np.ndarray
    Q: np.ndarray
    lambda_reg: float = 0.0
    cutoff_hz: float | None = None
    learning_gain: float = 1.0

    def __post_init__(self):
        if self.L.shape != self.Q.shape or self.L.shape[0] != self.L.shape[1]:
            raise DimensionError(f"L {self.L.shape} and Q {self.Q.shape} must be equal square matrices")

    @property
    def N(self):
        return self.L.shape[0]

    def describe(self):
        return {
            "lambda_reg": float(self.lambda_reg),
            "cutoff_hz": self.cutoff_hz,
            "learning_gain": float(self.learning_gain),
            "N": int(self.N),
        }


@dataclass
class ILCTrialState:
    """Trial k with its feedforward f_k and resulting error e_k."""

    k: int
    f: np.ndarray
    e: np.ndarray
    l2: list = field(default_factory=list)
    linf: list = field(default_factory=list)

    def record(self):
        self.l2.append(float(np.linalg.norm(self.e)))
        self.linf.append(float(np.max(np.abs(self.e))) if self.e.size else 0.0)


def default_lambda(J_N):
    return 1e-8 * np.linalg.norm(J_N, 2) ** 2


def design_L(J_N, lambda_reg=0.0):
    """Regularized inverse (J^T J + lambda I)^-1 J^T of the lifted process sensitivity."""
    J_N = np.asarray(J_N, dtype=float)
    N = J_N.shape[0]
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    if lambda_reg == 0.0:
        diag = np.abs(np.diag(J_N))
        if np.allclose(J_N, np.tril(J_N), atol=0.0, rtol=0.0) and np.all(diag > 1e-300):
            return linalg.solve_triangular(J_N, np.eye(N), lower=True)
        try:
            L = linalg.solve(J_N, np.eye(N))
        except linalg.LinAlgError as exc:
            raise NumericalError("J_N is singular; use a positive lambda_reg") from exc
        return L
    G = J_N.T @ J_N + lambda_reg * np.eye(N)
    try:
        c = linalg.cho_factor(G)
    except linalg.LinAlgError as exc:
        raise NumericalError("normal matrix is not positive definite; increase lambda_reg") from exc
    return linalg.cho_solve(c, J_N.T)


def lowpass_lift(N, cutoff_hz, Ts, order=2):
    """Causal Butterworth lowpass as an N x N lifted matrix."""
    from .plant import lift

    b, a = signal.butter(order, cutoff_hz, fs=1.0 / Ts)
    A, B, C, D = signal.tf2ss(b, a)
    return lift(DiscreteStateSpace(A, B, C, D, Ts), N)


def design_Q(N, cutoff_hz=None, Ts=1.0, order=2):
    """Robustness filter: identity, or the zero-phase lowpass F^T F."""
    if cutoff_hz is None:
        return np.eye(N)
    if not 0 < cutoff_hz < 0.5 / Ts:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist)")
    F = lowpass_lift(N, cutoff_hz, Ts, order)
    Q = F.T @ F
    return 0.5 * (Q + Q.T)


def design_filters(J_N, lambda_reg=None, cutoff_hz=None, Ts=1.0, learning_gain=1.0):
    lam = default_lambda(J_N) if lambda_reg is None else float(lambda_reg)
    L = learning_gain * design_L(J_N, lam)
    Q = design_Q(J_N.shape[0], cutoff_hz, Ts)
    return ILCFilters(L, Q, lam, cutoff_hz, learning_gain)


def convergence_margin(J_N, L, Q):
    """Induced 2-norm of Q (I - J_N L), the finite-horizon convergence factor."""
    N = J_N.shape[0]
    return float(np.linalg.norm(Q @ (np.eye(N) - J_N @ L), 2))


def initial_state(r, S_N, J_N, f0=None):
    N = S_N.shape[0]
    r = np.asarray(r, dtype=float)
    if r.shape != (N,) or J_N.shape != (N, N):
        raise DimensionError("r, S_N and J_N lengths disagree")
    f = np.zeros(N) if f0 is None else np.array(f0, dtype=float)
    st = ILCTrialState(0, f, S_N @ r - J_N @ f)
    st.record()
    return st


def ilc_trial(state: ILCTrialState, r, S_N, J_N, filters: ILCFilters):
    """Advance one trial: f_{k+1} = Q(L e_k + f_k), then measure e_{k+1}."""
    r = np.asarray(r, dtype=float)
    if r.shape != state.f.shape or filters.N != r.size:
        raise DimensionError("trial vectors and filters disagree in length")
    f_next = filters.Q @ (filters.L @ state.e + state.f)
    e_next = S_N @ r - J_N @ f_next
    if not (np.all(np.isfinite(f_next)) and np.all(np.isfinite(e_next))):
        raise DivergenceError(f"non-finite signals at trial {state.k + 1}", trial=state.k + 1)
    new = ILCTrialState(state.k + 1, f_next, e_next, list(state.l2), list(state.linf))
    new.record()
    return new


def limit_policies(S_N, J_N, L, Q, r):
    """Fixed point (e_inf, f_inf) of the trial recursion."""
    N = J_N.shape[0]
    I = np.eye(N)
    R = I - Q @ (I - L @ J_N)
    rhs = Q @ (L @ (S_N @ r))
    try:
        lu = linalg.lu_factor(R, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NonConvergentError("resolvent I - Q(I - L J) is singular") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(np.diag(lu[0]))):
        raise NonConvergentError("resolvent I - Q(I - L J) is singular")
    f_inf = linalg.lu_solve(lu, rhs)
    e_inf = S_N @ r - J_N @ f_inf
    return e_inf, f_inf


def error_update(e_k, Sr, J_N, L, Q, reduced=False):
    """Next-trial error from the closed error recursion.

    The full form is (I - J Q J^-1) S r + J Q (J^-1 - L) e_k; the reduced
    form (I - Q) S r + Q (I - J L) e_k coincides with it whenever Q and J
    commute (scalar Q, or both causal time-invariant filters).
    """
    N = J_N.shape[0]
    I = np.eye(N)
    if reduced:
        return (I - Q) @ Sr + Q @ ((I - J_N @ L) @ e_k)
    Jinv = linalg.solve_triangular(J_N, I, lower=True)
    return (I - J_N @ Q @ Jinv) @ Sr + J_N @ (Q @ ((Jinv - L) @ e_k))


class ILCHistory(NamedTuple):
    l2: list
    linf: list
    f_change: list
    trials: int
    converged: bool


class ExpertResult(NamedTuple):
    f_star: np.ndarray
    e_final: np.ndarray
    history: ILCHistory


def run_expert(r, loops, filters: ILCFilters, tol=1e-8, max_trials=100, margin=None):
    """Iterate trials on trajectory reference r until the feedforward settles.

    ``r`` is the full reference (samples 0..N-1); the returned error covers
    the same samples. Stops when ||f_{k+1} - f_k|| / ||f_k|| < tol.
    """
    if margin is None:
        margin = convergence_margin(loops.J_N, filters.L, filters.Q)
    if margin >= 1.0:
        warnings.warn(f"ILC convergence margin {margin:.4f} is not below 1", RuntimeWarning, stacklevel=2)
    r_vec = loops.shift_reference(r)
    st = initial_state(r_vec, loops.S_N, loops.J_N)
    changes = []
    converged = False
    growth = 0
    for _ in range(max_trials):
        prev = st
        st = ilc_trial(st, r_vec, loops.S_N, loops.J_N, filters)
        df = float(np.linalg.norm(st.f - prev.f))
        nf = float(np.linalg.norm(prev.f))
        changes.append(df / nf if nf > 0 else (0.0 if df == 0 else np.inf))
        growth = growth + 1 if st.l2[-1] > st.l2[-2] and st.l2[-1] > st.l2[0] else 0
        if growth >= 5:
            raise DivergenceError(f"error norm grew for 5 consecutive trials (trial {st.k})", trial=st.k,
                                  curve=list(st.l2))
        if changes[-1] < tol:
            converged = True
            break
    e_full = np.concatenate([np.zeros(loops.shift), st.e[: loops.N - loops.shift]])
    hist = ILCHistory(list(st.l2), list(st.linf), changes, st.k, converged)
    return ExpertResult(st.f.copy(), e_full, hist)
