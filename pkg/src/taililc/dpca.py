"""Dual principal component analysis over signal datasets.

Columns of ``H`` (n_d x n_t) are signals. The right singular vectors V and
singular values come from the small n_t x n_t Gram problem H^T H, and

    T_E = Sigma^-1 V^T H^T      (n_l x n_d encoder)
    T_D = H V Sigma^-1          (n_d x n_l decoder)

which equal U^T and U for the leading n_l left singular vectors U. No mean
is removed unless ``center=True``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, RankError

# relative rank floor per route: forming H^T H squares the condition number,
# so the Gram route cannot resolve singular values below ~sqrt(eps) * sigma_1
RANK_RTOL = {"gram": 1e-7, "svd": 1e-12}


@dataclass(frozen=True, eq=False)
class SignalDataset:
    H: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        H = np.ascontiguousarray(self.H, dtype=float)
        if H.ndim != 2 or H.shape[1] < 1:
            raise DimensionError(f"dataset must be n_d x n_t with n_t >= 1, got {H.shape}")
        if not np.all(np.isfinite(H)):
            raise DimensionError("dataset contains non-finite entries")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        labels = tuple(self.labels) if self.labels else tuple(range(H.shape[1]))
        if len(labels) != H.shape[1]:
            raise DimensionError("one label per column required")
        object.__setattr__(self, "labels", labels)

    @property
    def n_d(self):
        return self.H.shape[0]

    @property
    def n_t(self):
        return self.H.shape[1]

    def fingerprint(self):
        return hashlib.sha256(np.ascontiguousarray(self.H, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class DPCAProjector:
    T_E: np.ndarray
    T_D: np.ndarray
    singular_values: np.ndarray
    spectrum: np.ndarray
    mean: np.ndarray | None = None
    fingerprint: str = ""

    @property
    def n_l(self):
        return self.T_E.shape[0]

    @property
    def n_d(self):
        return self.T_E.shape[1]

    def to_dict(self):
        return {
            "n_l": int(self.n_l),
            "T_E": self.T_E.tolist(),
            "T_D": self.T_D.tolist(),
            "singular_values": self.singular_values.tolist(),
            "spectrum": self.spectrum.tolist(),
            "mean": None if self.mean is None else self.mean.tolist(),
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d):
        mean = d.get("mean")
        return cls(
            np.array(d["T_E"], dtype=float),
            np.array(d["T_D"], dtype=float),
            np.array(d["singular_values"], dtype=float),
            np.array(d["spectrum"], dtype=float),
            None if mean is None else np.array(mean, dtype=float),
            d.get("fingerprint", ""),
        )


def _as_dataset(data):
    return data if isinstance(data, SignalDataset) else SignalDataset(np.asarray(data, dtype=float))


def _right_singular(H, method):
    if method == "gram":
        G = H.T @ H
        lam, V = np.linalg.eigh(0.5 * (G + G.T))
        order = np.argsort(lam)[::-1]
        lam, V = lam[order], V[:, order]
        return np.sqrt(np.clip(lam, 0.0, None)), V
    if method == "svd":
        _, sv, Vt = np.linalg.svd(H, full_matrices=False)
        return sv, Vt.T
    raise ValueError(f"unknown method {method!r}")


def fit(data, n_l, center=False, method="gram", rank_rtol=None):
    """Fit encoder/decoder with latent dimension ``n_l``."""
    ds = _as_dataset(data)
    H = ds.H
    mean = None
    if center:
        mean = H.mean(axis=1)
        H = H - mean[:, None]
    n_l = int(n_l)
    if not 1 <= n_l <= ds.n_t:
        raise RankError(f"n_l={n_l} must lie in [1, n_t={ds.n_t}]")
    sv, V = _right_singular(H, method)
    if rank_rtol is None:
        rank_rtol = RANK_RTOL[method]
    if sv[0] == 0.0 or sv[n_l - 1] <= rank_rtol * sv[0]:
        raise RankError(
            f"n_l={n_l} exceeds the numerical rank of the dataset (sigma = {sv[:n_l + 1]})", spectrum=sv
        )
    Vk = V[:, :n_l]
    inv = 1.0 / sv[:n_l]
    T_D = (H @ Vk) * inv[None, :]
    T_E = inv[:, None] * (Vk.T @ H.T)
    # sign convention: largest-magnitude entry of each component is positive
    idx = np.argmax(np.abs(T_D), axis=0)
    sgn = np.sign(T_D[idx, np.arange(n_l)])
    sgn[sgn == 0] = 1.0
    T_D = T_D * sgn[None, :]
    T_E = T_E * sgn[:, None]
    return DPCAProjector(T_E, T_D, sv[:n_l].copy(), sv.copy(), mean, ds.fingerprint())


def numerical_rank(data, rtol=None, method="gram"):
    sv, _ = _right_singular(_as_dataset(data).H, method)
    rtol = RANK_RTOL[method] if rtol is None else rtol
    return int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0


def encode(proj: DPCAProjector, x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != proj.n_d:
        raise DimensionError(f"signal has {x.shape[0]} samples, projector expects {proj.n_d}")
    if proj.mean is not None:
        x = x - (proj.mean if x.ndim == 1 else proj.mean[:, None])
    return proj.T_E @ x


def decode(proj: DPCAProjector, z):
    z = np.asarray(z, dtype=float)
    if z.shape[0] != proj.n_l:
        raise DimensionError(f"latent vector has {z.shape[0]} entries, projector expects {proj.n_l}")
    out = proj.T_D @ z
    if proj.mean is not None:
        out = out + (proj.mean if z.ndim == 1 else proj.mean[:, None])
    return out


def reconstruct(proj, x):
    return decode(proj, encode(proj, x))


def reconstruction_error(proj: DPCAProjector, data):
    """Per-column 2-norm of h - T_D T_E h."""
    H = _as_dataset(data).H
    return np.linalg.norm(H - reconstruct(proj, H), axis=0)
