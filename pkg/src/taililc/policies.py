"""Expert labelling, student policies and their evaluation."""
from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import dpca
from .errors import DimensionError, DivergenceError, NumericalError
from .ilc import ExpertResult, run_expert
from .mlp import (
    Regressor,
    TrainConfig,
    fit_regressor,
    load_arrays,
    regressor_arrays,
    regressor_from_arrays,
    save_arrays,
)


# ---------------------------------------------------------------------------
# expert labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LabeledData:
    H_r: np.ndarray
    H_f: np.ndarray
    ids: tuple
    results: tuple = field(default=(), repr=False)


def make_expert(loops, filters, tol=1e-8, max_trials=100, margin=None):
    def expert(r) -> ExpertResult:
        return run_expert(r, loops, filters, tol=tol, max_trials=max_trials, margin=margin)
    return expert


def label_dataset(cls, expert: Callable[[np.ndarray], ExpertResult], jobs=1):
    """Run the expert on every member; column i of (H_r, H_f) is (r_i, f*_i)."""
    members = list(cls.members)

    def one(m):
        try:
            return m, expert(m.r), None
        except (NumericalError, FloatingPointError) as exc:
            return m, None, exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(one, members))
    else:
        out = [one(m) for m in members]
    failed = [mid for mid, (_, res, err) in zip(cls.ids, out) if err is not None]
    if failed:
        raise DivergenceError(f"expert failed on trajectories {failed}")
    results = tuple(res for _, res, _ in out)
    H_r = np.column_stack([m.r for m in members])
    H_f = np.column_stack([res.f_star for res in results])
    return LabeledData(H_r, H_f, tuple(cls.ids), results)


# ---------------------------------------------------------------------------
# TAIL student: encoder -> regressor -> decoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StudentPolicy:
    encoder: dpca.DPCAProjector
    regressor: Regressor
    decoder: dpca.DPCAProjector

    def __post_init__(self):
        W0, Wl = self.regressor.params.weights[0], self.regressor.params.weights[-1]
        if W0.shape[0] != self.encoder.n_l or Wl.shape[1] != self.decoder.n_l:
            raise DimensionError("regressor widths must match the latent dimensions")

    @property
    def n_l(self):
        return self.encoder.n_l

    def predict_latent(self, r_l):
        return self.regressor.predict(np.asarray(r_l, dtype=float).T).T


def build_tail_policy(H_r, H_f, n_l, hidden, cfg: TrainConfig, center=False, standardize=True):
    """Fit both projectors, then train the latent regressor on encoded pairs."""
    H_r = np.asarray(H_r, dtype=float)
    H_f = np.asarray(H_f, dtype=float)
    if H_r.shape[1] != H_f.shape[1]:
        raise DimensionError("H_r and H_f need the same number of columns")
    enc = dpca.fit(H_r, n_l, center=center)
    dec = dpca.fit(H_f, n_l, center=center)
    R_l = dpca.encode(enc, H_r)
    F_l = dpca.encode(dec, H_f)
    reg, curve = fit_regressor(R_l.T, F_l.T, hidden, cfg, standardize=standardize)
    return StudentPolicy(enc, reg, dec), curve


def tail_predict(policy: StudentPolicy, r):
    """Single pass decode(regress(encode(r))); accepts one signal or columns."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] != policy.encoder.n_d:
        raise DimensionError(f"reference has {r.shape[0]} samples, policy expects {policy.encoder.n_d}")
    z = dpca.encode(policy.encoder, r)
    fl = policy.regressor.predict(np.atleast_2d(z.T)).T
    out = dpca.decode(policy.decoder, fl)
    return out[:, 0] if r.ndim == 1 else out


# ---------------------------------------------------------------------------
# NN-ILC baseline: samplewise map from motion derivatives to force
# ---------------------------------------------------------------------------

FEATURES = ("r", "v", "a", "j")


def nn_ilc_features(traj, names=FEATURES):
    return np.column_stack([getattr(traj, n) for n in names])


@dataclass(frozen=True, eq=False)
class NNILCPolicy:
    regressor: Regressor
    features: tuple = FEATURES

    def predict(self, traj):
        """Whole-signal prediction, all samples in one batch."""
        return self.regressor.predict(nn_ilc_features(traj, self.features))[:, 0]

    def predict_sample(self, x):
        return float(self.regressor.predict_one(x)[0])

    def predict_streaming(self, traj):
        """Sample-by-sample prediction, as the policy runs on a controller."""
        X = nn_ilc_features(traj, self.features)
        return np.array([self.predict_sample(x) for x in X])


def nn_ilc_build(cls, H_f, hidden, cfg: TrainConfig, features=FEATURES, standardize=True):
    """Pool (features(k), f*(k)) over every sample of every training member."""
    H_f = np.asarray(H_f, dtype=float)
    if H_f.shape != (cls.n_samples, cls.n_t):
        raise DimensionError(f"labels {H_f.shape} do not align with class ({cls.n_samples}, {cls.n_t})")
    X = np.vstack([nn_ilc_features(m, features) for m in cls.members])
    Y = H_f.T.reshape(-1, 1)
    reg, curve = fit_regressor(X, Y, hidden, cfg, standardize=standardize)
    return NNILCPolicy(reg, tuple(features)), curve


# ---------------------------------------------------------------------------
# distance measures
# ---------------------------------------------------------------------------

def eta(F_a, F_b):
    """Mean over columns of ||f_a,i - f_b,i||_2."""
    F_a = np.asarray(F_a, dtype=float)
    F_b = np.asarray(F_b, dtype=float)
    if F_a.shape != F_b.shape:
        raise DimensionError(f"signal sets differ in shape: {F_a.shape} vs {F_b.shape}")
    if F_a.ndim == 1:
        F_a, F_b = F_a[:, None], F_b[:, None]
    return float(np.mean(np.linalg.norm(F_a - F_b, axis=0)))


class EtaTerms(NamedTuple):
    direct: float   # expert vs student in the signal space
    term_nl: float  # expert vs its own latent reconstruction
    term_mu: float  # reconstruction vs student prediction


def eta_decomposed(F_star, F_rec, F_hat):
    return EtaTerms(eta(F_star, F_hat), eta(F_star, F_rec), eta(F_rec, F_hat))


def reconstruction_curve(H_f, candidates):
    """term_nl for each candidate latent dimension."""
    out = {}
    for n_l in candidates:
        proj = dpca.fit(H_f, n_l)
        out[int(n_l)] = float(np.mean(dpca.reconstruction_error(proj, H_f)))
    return out


def select_latent_dim(H_f, candidates, budget):
    """Smallest candidate whose reconstruction term is within budget.

    Falls back to the minimizing candidate. Returns (n_l, curve).
    """
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValueError("no candidate latent dimensions")
    curve = reconstruction_curve(H_f, cands)
    for c in cands:
        if curve[c] <= budget:
            return c, curve
    return min(cands, key=lambda c: (curve[c], c)), curve


# ---------------------------------------------------------------------------
# closed-loop evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalRow:
    traj_id: int
    split: str
    source: str
    peak_window: float
    rms_window: float
    peak_total: float
    n_window: int
    error: str = ""


@dataclass
class PolicyEvalReport:
    rows: list
    summary: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict, repr=False)

    def table(self, source, split=None, metric="peak_window"):
        return {
            r.traj_id: getattr(r, metric)
            for r in self.rows
            if r.source == source and (split is None or r.split == split) and not r.error
        }


def window_metrics(e, window):
    ew = e[window] if window.any() else e
    return float(np.max(np.abs(ew))), float(np.sqrt(np.mean(ew * ew))), float(np.max(np.abs(e)))


def evaluate(sources, members, loops, splits, keep_traces=False):
    """Closed-loop error for every (trajectory, source) cell.

    ``sources`` maps a name to a callable traj -> feedforward signal;
    ``members`` is a sequence of (traj_id, trajectory); ``splits`` maps
    traj_id to "train"/"test". A failing cell is recorded, not raised.
    """
    rows, traces = [], {}
    for tid, traj in members:
        window = traj.cruise_window()
        for name, fn in sources.items():
            try:
                f = np.asarray(fn(traj), dtype=float)
                if f.shape != traj.r.shape or not np.all(np.isfinite(f)):
                    raise DimensionError(f"feedforward shape {f.shape} or values invalid")
                e = loops.tracking_error(traj.r, f)
                pk, rms, tot = window_metrics(e, window)
                rows.append(EvalRow(tid, splits.get(tid, ""), name, pk, rms, tot, int(window.sum())))
                if keep_traces:
                    traces[(tid, name)] = e[window] if window.any() else e
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
                rows.append(EvalRow(tid, splits.get(tid, ""), name, np.nan, np.nan, np.nan, 0,
                                    f"{type(exc).__name__}: {exc}"))
    return PolicyEvalReport(rows, {}, traces)


def median_time(fn, repeats=5):
    """Median wall-clock seconds of ``repeats`` calls."""
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _projector_arrays(proj: dpca.DPCAProjector, prefix):
    out = {
        f"{prefix}T_E": proj.T_E,
        f"{prefix}T_D": proj.T_D,
        f"{prefix}singular_values": proj.singular_values,
        f"{prefix}spectrum": proj.spectrum,
    }
    if proj.mean is not None:
        out[f"{prefix}mean"] = proj.mean
    return out


def _projector_from(arrays, prefix, fingerprint=""):
    return dpca.DPCAProjector(
        arrays[f"{prefix}T_E"], arrays[f"{prefix}T_D"], arrays[f"{prefix}singular_values"],
        arrays[f"{prefix}spectrum"], arrays.get(f"{prefix}mean"), fingerprint,
    )


def save_tail_policy(path, policy: StudentPolicy, header=None):
    arrays = {}
    arrays.update(_projector_arrays(policy.encoder, "enc_"))
    arrays.update(_projector_arrays(policy.decoder, "dec_"))
    arrays.update(regressor_arrays(policy.regressor, "mu_"))
    head = {"kind": "tail", "n_l": int(policy.n_l), "n_layers": len(policy.regressor.params.weights),
            "encoder_fingerprint": policy.encoder.fingerprint, "decoder_fingerprint": policy.decoder.fingerprint}
    head.update(header or {})
    return save_arrays(path, head, arrays)


def load_tail_policy(path):
    head, arrays = load_arrays(path)
    if head.get("kind") != "tail":
        raise DimensionError(f"{path} is not a TAIL model file")
    reg = regressor_from_arrays(arrays, head["n_layers"], "mu_")
    return StudentPolicy(
        _projector_from(arrays, "enc_", head.get("encoder_fingerprint", "")),
        reg,
        _projector_from(arrays, "dec_", head.get("decoder_fingerprint", "")),
    ), head


def save_nnilc_policy(path, policy: NNILCPolicy, header=None):
    head = {"kind": "nnilc", "features": list(policy.features), "n_layers": len(policy.regressor.params.weights)}
    head.update(header or {})
    return save_arrays(path, head, regressor_arrays(policy.regressor))


def load_nnilc_policy(path):
    head, arrays = load_arrays(path)
    if head.get("kind") != "nnilc":
        raise DimensionError(f"{path} is not an NN-ILC model file")
    return NNILCPolicy(regressor_from_arrays(arrays, head["n_layers"]), tuple(head["features"])), head
