"""Fourth-order (snap-limited) point-to-point setpoints and trajectory classes.

A symmetric profile is fully described by four phase durations:
``t_s`` (constant snap), ``t_j`` (constant jerk), ``t_a`` (constant
acceleration) and ``t_v`` (constant velocity). With peak snap ``s``::

    jerk_peak = s t_s
    acc_peak  = s t_s (t_s + t_j)
    vel_peak  = s t_s (t_s + t_j) (2 t_s + t_j + t_a)
    distance  = vel_peak (4 t_s + 2 t_j + t_a + t_v)

Durations are rounded up to whole samples and the snap level is then
rescaled so the move lands exactly on the requested displacement. Because
the samples are produced by exact integration of a sample-held snap, every
bound stays satisfied after rounding, but the cruise velocity is generally a
hair below ``v_max`` (by a relative amount of order Ts / move time).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels, io
from .errors import ConfigError, DimensionError, ParameterError

PARAM_NAMES = ("displacement", "v_max", "a_max", "j_max", "s_max")


@dataclass(frozen=True)
class MotionProfileParams:
    displacement: float
    v_max: float
    a_max: float
    j_max: float
    s_max: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ParameterError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, val)
        for name in PARAM_NAMES[1:]:
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be strictly positive, got {getattr(self, name)}")

    def as_tuple(self):
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def scaled(self, factor):
        return MotionProfileParams(*(factor * v for v in self.as_tuple()))


@dataclass(frozen=True)
class PhasePlan:
    """Integer-sample phase lengths and the signed snap level."""

    n_snap: int
    n_jerk: int
    n_acc: int
    n_vel: int
    snap: float
    Ts: float

    @property
    def n_samples(self):
        """Number of samples including r(0) and the final resting sample."""
        return 2 * (4 * self.n_snap + 2 * self.n_jerk + self.n_acc) + self.n_vel + 1

    def snap_signal(self):
        ns, nj, na = self.n_snap, self.n_jerk, self.n_acc
        half = np.concatenate([
            np.ones(ns), np.zeros(nj), -np.ones(ns), np.zeros(na),
            -np.ones(ns), np.zeros(nj), np.ones(ns),
        ])
        unit = np.concatenate([half, np.zeros(self.n_vel), -half, [0.0]])
        return self.snap * unit


def phase_durations(params: MotionProfileParams):
    """Continuous-time phase durations (t_s, t_j, t_a, t_v) in seconds.

    Each phase is made as long as the remaining bounds allow, in order of
    increasing derivative order.
    """
    D = abs(params.displacement)
    if D == 0.0:
        return 0.0, 0.0, 0.0, 0.0
    s, j, a, v = params.s_max, params.j_max, params.a_max, params.v_max
    ts = min(j / s, math.sqrt(a / s), (v / (2.0 * s)) ** (1 / 3), (D / (8.0 * s)) ** 0.25)

    # x = t_s + t_j
    x_acc = a / (s * ts)
    x_vel = 0.5 * (-ts + math.sqrt(ts * ts + 4.0 * v / (s * ts)))

    def dist_x(x):
        return 2.0 * s * ts * x * (x + ts) ** 2 - D

    x_hi = max(ts, x_acc, x_vel) * 2.0 + 1.0
    while dist_x(x_hi) < 0:
        x_hi *= 2.0
    x_dist = brentq(dist_x, ts, x_hi, xtol=1e-15, rtol=1e-15) if dist_x(ts) < 0 else ts
    tj = max(0.0, min(x_acc, x_vel, x_dist) - ts)

    A = s * ts * (ts + tj)
    c = 2.0 * ts + tj
    y_vel = v / A
    y_dist = 0.5 * (-c + math.sqrt(c * c + 4.0 * D / A))
    ta = max(0.0, min(y_vel, y_dist) - c)

    V = A * (c + ta)
    tv = max(0.0, D / V - (4.0 * ts + 2.0 * tj + ta))
    return ts, tj, ta, tv


def _ceil_samples(t, Ts):
    if t <= 0.0:
        return 0
    return int(math.ceil(t / Ts - 1e-9))


def plan_fourth_order(params: MotionProfileParams, Ts):
    """Round the continuous plan to samples and solve for the snap level."""
    if not Ts > 0:
        raise ParameterError(f"sample time must be positive, got {Ts}")
    D = params.displacement
    if D == 0.0:
        return PhasePlan(0, 0, 0, 0, 0.0, Ts)
    ts, tj, ta, tv = phase_durations(params)
    ns = max(1, _ceil_samples(ts, Ts))
    nj, na, nv = (_ceil_samples(t, Ts) for t in (tj, ta, tv))
    prod = ns * (ns + nj) * (2 * ns + nj + na) * (4 * ns + 2 * nj + na + nv)
    snap = abs(D) / (prod * Ts ** 4)
    if not (snap > 0 and math.isfinite(snap)):
        raise ParameterError(f"degenerate phase plan for {params}")
    snap = min(snap, params.s_max)
    return PhasePlan(ns, nj, na, nv, math.copysign(snap, D), Ts)


@dataclass(frozen=True, eq=False)
class Trajectory:
    Ts: float
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray
    s: np.ndarray
    params: MotionProfileParams

    def __post_init__(self):
        n = len(self.r)
        for name in ("r", "v", "a", "j", "s"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise DimensionError(f"{name} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_samples(self):
        return self.r.size

    @property
    def t(self):
        return np.arange(self.n_samples) * self.Ts

    def padded(self, length):
        """Extend with a terminal dwell (position held, derivatives zero)."""
        n = self.n_samples
        if length < n:
            raise DimensionError(f"cannot pad a {n}-sample trajectory to {length}")
        if length == n:
            return self
        extra = length - n
        return Trajectory(
            self.Ts,
            np.concatenate([self.r, np.full(extra, self.r[-1])]),
            *(np.concatenate([getattr(self, k), np.zeros(extra)]) for k in ("v", "a", "j", "s")),
            params=self.params,
        )

    def cruise_window(self, rtol=1e-6):
        """Boolean mask of the constant-velocity interval.

        The plateau level is read from the trajectory's own velocity array.
        """
        vmax = np.max(np.abs(self.v))
        if vmax == 0.0:
            return np.zeros(self.n_samples, dtype=bool)
        return np.abs(np.abs(self.v) - vmax) < rtol * vmax

    def to_csv(self, path):
        io.write_columns_csv(path, {"t": self.t, "r": self.r, "v": self.v, "a": self.a, "j": self.j, "s": self.s})

    @classmethod
    def from_csv(cls, path, params, Ts=None):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if Ts is None:
            Ts = float(data[1, 0] - data[0, 0]) if data.shape[0] > 1 else 1.0
        return cls(Ts, data[:, 1], data[:, 2], data[:, 3], data[:, 4], data[:, 5], params)


def generate_fourth_order(params: MotionProfileParams, Ts):
    plan = plan_fourth_order(params, Ts)
    snap = plan.snap_signal()
    p, v, a, j = _kernels.integrate_snap(snap, float(Ts))
    return Trajectory(float(Ts), p, v, a, j, snap, params)


def grid_tuples(grid):
    """Parameter tuples in lexicographic order of grid indices."""
    missing = [n for n in PARAM_NAMES if n not in grid]
    if missing:
        raise ConfigError(f"grid is missing parameters {missing}")
    values = [list(grid[n]) for n in PARAM_NAMES]
    if any(len(v) == 0 for v in values):
        raise ConfigError("every grid axis needs at least one value")
    return list(itertools.product(*values))


@dataclass(frozen=True, eq=False)
class TrajectoryClass:
    members: tuple
    ids: tuple
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        if len(members) == 0:
            raise DimensionError("a trajectory class needs at least one member")
        n = members[0].n_samples
        Ts = members[0].Ts
        for m in members:
            if m.n_samples != n or m.Ts != Ts:
                raise DimensionError("class members must share Ts and sample count")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if len(self.ids) != len(members):
            raise DimensionError("one id per member required")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def n_t(self):
        return len(self.members)

    @property
    def n_samples(self):
        return self.members[0].n_samples

    @property
    def Ts(self):
        return self.members[0].Ts

    def references(self):
        """n_d x n_t matrix with one reference per column."""
        return np.column_stack([m.r for m in self.members])

    def subset(self, positions):
        positions = list(positions)
        return TrajectoryClass(
            tuple(self.members[p] for p in positions),
            tuple(self.ids[p] for p in positions),
            self.descriptor,
        )


def build_class(grid, Ts, length=None):
    """One member per grid tuple, padded with a terminal dwell to a common length."""
    members = []
    for idx, tup in enumerate(grid_tuples(grid)):
        try:
            members.append(generate_fourth_order(MotionProfileParams(*tup), Ts))
        except ParameterError as exc:
            raise ParameterError(f"grid tuple #{idx} {tup}: {exc}") from exc
    longest = max(m.n_samples for m in members)
    if length is None:
        length = longest
    elif length < longest:
        raise ParameterError(f"requested length {length} is shorter than the longest member ({longest})")
    descriptor = {
        "order": 4,
        "parameters": list(PARAM_NAMES),
        "grid": {n: [float(x) for x in grid[n]] for n in PARAM_NAMES},
        "Ts": float(Ts),
        "length": int(length),
    }
    return TrajectoryClass(
        tuple(m.padded(length) for m in members), tuple(range(len(members))), descriptor
    )


def required_length(grid, Ts):
    """Longest member length of a grid, from the phase plans alone."""
    return max(plan_fourth_order(MotionProfileParams(*t), Ts).n_samples for t in grid_tuples(grid))


def every_nth(n, offset=None):
    """Selector picking positions offset, offset+n, ... (offset defaults to n-1)."""
    start = n - 1 if offset is None else offset
    return lambda pos, member: pos >= start and (pos - start) % n == 0


def evenly_spaced(n_total, n_test):
    """Index set of ``n_test`` positions spread evenly over ``n_total``."""
    if not 0 < n_test < n_total:
        raise ConfigError(f"cannot select {n_test} of {n_total}")
    step = n_total / n_test
    return {int(step * (i + 0.5)) for i in range(n_test)}


def split_class(cls: TrajectoryClass, test_selector):
    """Split into (train, test). The selector is a predicate or a position set."""
    if callable(test_selector):
        test_pos = [p for p, m in enumerate(cls.members) if test_selector(p, m)]
    else:
        test_pos = sorted(test_selector)
        if len(set(test_pos)) != len(test_pos):
            raise ConfigError("duplicate positions in test selection")
        if any(p < 0 or p >= cls.n_t for p in test_pos):
            raise ConfigError("test selection out of range")
    test_set = set(test_pos)
    train_pos = [p for p in range(cls.n_t) if p not in test_set]
    if not test_pos or not train_pos:
        raise ConfigError("split must leave both train and test non-empty")
    return cls.subset(train_pos), cls.subset(test_pos)


def class_manifest(cls: TrajectoryClass, paths=None, split=None):
    entries = []
    for pos, (mid, m) in enumerate(zip(cls.ids, cls.members)):
        e = {"id": mid, "params": dict(zip(PARAM_NAMES, m.params.as_tuple()))}
        if paths is not None:
            e["file"] = str(paths[pos])
        if split is not None:
            e["split"] = split[pos]
        entries.append(e)
    return {"descriptor": cls.descriptor, "members": entries}


def write_class_manifest(path, cls, paths=None, split=None):
    io.write_json(path, class_manifest(cls, paths, split))
