"""Acceptance checks shared by ``repro`` and the test suite.

Each check returns a :class:`CriterionResult`; none of them raise on a
failed assertion, so a run can report every verdict.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import dpca, ilc, io, mlp, policies
from .config import ExperimentConfig
from .plant import ControllerConfig, PlantConfig, build_loops
from .setpoint import build_class


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    limit: float | None = None

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        budget = "" if self.limit is None else f" (budget {self.limit:.0f} s)"
        within = "" if self.limit is None or self.seconds < self.limit else " OVER BUDGET"
        return f"[{verdict}] criterion {self.number} {self.name}: {self.detail} [{self.seconds:.1f} s{budget}{within}]"

    @property
    def ok(self):
        return self.passed and (self.limit is None or self.seconds < self.limit)


def _timed(number, name, limit, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0, limit)


# ---------------------------------------------------------------------------
# 1. deadbeat oracle
# ---------------------------------------------------------------------------

def check_deadbeat(cfg: ExperimentConfig, n_traj=10, seed=0, tol=1e-9):
    def run():
        cls = build_class(cfg.grid, cfg.Ts, length=cfg.length())
        loops = build_loops(cfg.plant, cfg.controller, cls.n_samples)
        L = ilc.design_L(loops.J_N, 0.0)
        filt = ilc.ILCFilters(L, np.eye(loops.N), 0.0, None, 1.0)
        rng = np.random.default_rng(seed)
        picks = rng.choice(cls.n_t, size=min(n_traj, cls.n_t), replace=False)
        worst = 0.0
        for p in picks:
            r = loops.shift_reference(cls.members[p].r)
            st = ilc.initial_state(r, loops.S_N, loops.J_N)
            st1 = ilc.ilc_trial(st, r, loops.S_N, loops.J_N, filt)
            worst = max(worst, st1.linf[-1] / st.linf[0])
        return worst < tol, f"worst |e1|/|e0| = {worst:.2e} over {len(picks)} trajectories (< {tol:g})"
    return _timed(1, "deadbeat oracle", 10.0, run)


# ---------------------------------------------------------------------------
# 2. fixed-point equivalence
# ---------------------------------------------------------------------------

FIXED_POINT_CASES = (
    # (modes, q_cutoff_hz, learning gain gamma); L = gamma * J^-1 gives margin |1 - gamma| |Q|
    ((), None, 0.8),
    (((150.0, 0.03, 0.05),), None, 0.5),
    (((150.0, 0.03, 0.05),), None, 0.1),
    ((), None, 1.2),
    (((150.0, 0.03, 0.05),), None, 1.9),
)


def measured_contraction(S_N, J_N, filt, r, f_inf, trials=200, floor=1e-9):
    """Geometric-mean ratio of successive distances to the fixed point."""
    st = ilc.initial_state(r, S_N, J_N)
    d = [np.linalg.norm(st.f - f_inf)]
    for _ in range(trials):
        st = ilc.ilc_trial(st, r, S_N, J_N, filt)
        d.append(np.linalg.norm(st.f - f_inf))
    d = np.array(d)
    usable = np.flatnonzero(d > floor * d[0])
    k = int(usable[-1]) if usable.size else 1
    k = max(k, 1)
    return st.f, float((d[k] / d[0]) ** (1.0 / k))


def check_fixed_point(Ts=1e-3, grid=None, rtol=1e-6, trials=200):
    grid = grid or {"displacement": [0.02], "v_max": [0.1], "a_max": [3.0], "j_max": [300.0], "s_max": [3e4]}

    def run():
        cls = build_class(grid, Ts)
        N = cls.n_samples + 50
        traj = cls.members[0].padded(N)
        worst_rel, worst_dev, margins = 0.0, 0.0, []
        for modes, cut, gamma in FIXED_POINT_CASES:
            loops = build_loops(PlantConfig(5.0, modes, Ts), ControllerConfig(), N)
            Jinv = ilc.design_L(loops.J_N, 0.0)
            filt = ilc.ILCFilters(gamma * Jinv, ilc.design_Q(N, cut, Ts), 0.0, cut, gamma)
            rho = ilc.convergence_margin(loops.J_N, filt.L, filt.Q)
            margins.append(rho)
            r = loops.shift_reference(traj.r)
            _, f_inf = ilc.limit_policies(loops.S_N, loops.J_N, filt.L, filt.Q, r)
            f_k, ratio = measured_contraction(loops.S_N, loops.J_N, filt, r, f_inf, trials)
            worst_rel = max(worst_rel, np.linalg.norm(f_k - f_inf) / np.linalg.norm(f_inf))
            worst_dev = max(worst_dev, abs(ratio - rho) / rho)
        covered = sorted({round(m, 6) for m in margins})
        ok = worst_rel < rtol and worst_dev < 0.10 and {0.2, 0.5, 0.9} <= set(covered)
        return ok, (f"margins {covered}; worst |f_200 - f_inf|/|f_inf| = {worst_rel:.1e} (< {rtol:g}); "
                    f"worst contraction deviation {100 * worst_dev:.2f}% (< 10%)")
    return _timed(2, "fixed-point equivalence", 30.0, run)


# ---------------------------------------------------------------------------
# 3. DPCA identities
# ---------------------------------------------------------------------------

def check_dpca(n_sets=20, seed=0):
    def run():
        rng = np.random.default_rng(seed)
        worst = {"orth": 0.0, "roundtrip": 0.0, "energy": 0.0}
        for i in range(n_sets):
            n_d = int(rng.integers(50, 2001))
            n_t = int(rng.integers(2, 51))
            H = rng.standard_normal((n_d, n_t)) * rng.uniform(0.1, 10.0)
            full = dpca.fit(H, n_t)
            worst["roundtrip"] = max(worst["roundtrip"], float(np.max(np.abs(dpca.reconstruct(full, H) - H))))
            n_l = int(rng.integers(1, n_t + 1))
            proj = dpca.fit(H, n_l)
            worst["orth"] = max(worst["orth"], float(np.max(np.abs(proj.T_E @ proj.T_D - np.eye(n_l)))))
            err = float(np.sum(dpca.reconstruction_error(proj, H) ** 2))
            disc = float(np.sum(proj.spectrum[n_l:] ** 2))
            # relative to the discarded energy; at full rank both sides vanish
            denom = disc if disc > 0 else float(np.sum(proj.spectrum ** 2))
            worst["energy"] = max(worst["energy"], abs(err - disc) / denom)
        ok = worst["orth"] < 1e-10 and worst["roundtrip"] < 1e-9 and worst["energy"] < 1e-8
        return ok, (f"|T_E T_D - I| {worst['orth']:.1e}, roundtrip {worst['roundtrip']:.1e}, "
                    f"energy identity {worst['energy']:.1e} over {n_sets} datasets")
    return _timed(3, "DPCA identities", 20.0, run)


# ---------------------------------------------------------------------------
# 4. gradient check
# ---------------------------------------------------------------------------

GRAD_ARCHS = ((20, (32, 32, 32), 20), (4, (6, 6, 6), 1))


def check_gradients(n_random=8, seed=0, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        archs = list(GRAD_ARCHS)
        while len(archs) < len(GRAD_ARCHS) + n_random:
            depth = int(rng.integers(1, 4))
            archs.append((int(rng.integers(1, 9)), tuple(int(rng.integers(2, 17)) for _ in range(depth)),
                          int(rng.integers(1, 6))))
        worst = 0.0
        for i, (n_in, hidden, n_out) in enumerate(archs):
            arch = mlp.MLPArchitecture.build(n_in, hidden, n_out)
            params = mlp.init_params(arch, seed=100 + i)
            X = rng.standard_normal((16, n_in))
            Y = rng.standard_normal((16, n_out))
            worst = max(worst, mlp.grad_check(params, X, Y, seed=i))
        return worst <= tol, f"max relative deviation {worst:.1e} over {len(archs)} architectures (<= {tol:g})"
    return _timed(4, "gradient check", 30.0, run)


# ---------------------------------------------------------------------------
# 5-7. checks on an evaluated desk run
# ---------------------------------------------------------------------------

def _run_data(pipe):
    cls, split = pipe.load_class()
    _, H_f = pipe.load_labels()
    pos = [p for p, i in enumerate(cls.ids) if split[i] == "train"]
    return cls, split, H_f, pos


def check_eta_bound(pipe, slack=1e-9):
    def run():
        metrics = io.read_json(pipe.root / "report/metrics.json")
        worst_gap, lines = -np.inf, []
        for name, by_split in metrics["eta_decomposition"].items():
            for sp_, t in by_split.items():
                gap = t["direct"] - (t["term_nl"] + t["term_mu"])
                worst_gap = max(worst_gap, gap)
        cls, _, H_f, pos = _run_data(pipe)
        targets = pipe.targets(cls, H_f)
        monotone = True
        for suffix, target in targets.items():
            Ht = target[:, pos]
            rank = dpca.numerical_rank(Ht)
            sweep = sorted({max(1, rank // 4), max(1, rank // 2), rank})
            curve = policies.reconstruction_curve(Ht, sweep)
            vals = [curve[k] for k in sweep]
            monotone &= all(b <= a for a, b in zip(vals, vals[1:]))
            lines.append(f"tail{suffix} term_nl{dict(zip(sweep, [f'{v:.2e}' for v in vals]))}")
        ok = worst_gap <= slack and monotone
        return ok, f"max direct - (term_nl + term_mu) = {worst_gap:.2e}; " + "; ".join(lines)
    return _timed(5, "eta upper bound", 120.0, run)


def check_desk(pipe, reduction=0.5, factor=10.0):
    def run():
        m = io.read_json(pipe.root / "report/metrics.json")["peak_window"]
        mass_test = m["mass_ff"]["test"]
        exp_train = m["expert"]["train"]
        ok, parts = True, []
        for s in ("tail+mass_ff", "nnilc+mass_ff"):
            red = 1.0 - m[s]["test"] / mass_test
            ratio = m[s]["train"] / exp_train
            ok &= red >= reduction and ratio <= factor
            parts.append(f"{s}: test reduction {100 * red:.0f}% (>= {100 * reduction:.0f}%), "
                         f"train peak {ratio:.1f}x expert (<= {factor:g}x)")
        solo = ", ".join(f"{s} test/mass {m[s]['test'] / mass_test:.2f} train/expert {m[s]['train'] / exp_train:.1f}"
                         for s in ("tail", "nnilc") if s in m)
        return ok, "; ".join(parts) + (f" [standalone, informational: {solo}]" if solo else "")
    return _timed(6, "desk experiment", 900.0, run)


def time_training(pipe, repeats=5):
    """Median wall-clock training time of both full-target students."""
    t = pipe.cfg.raw
    cls, split, H_f, pos = _run_data(pipe)
    H_r = np.column_stack([m.r for m in cls.members])
    train_cls = cls.subset(pos)

    def tail():
        policies.build_tail_policy(H_r[:, pos], H_f[:, pos], t["tail"]["n_l"] if t["tail"]["n_l"] != "auto"
                                   else pipe.manifest.stages["train_tail"]["info"]["n_l"],
                                   tuple(t["tail"]["hidden"]), pipe.cfg.tail_train,
                                   center=t["tail"].get("center", False),
                                   standardize=t["tail"].get("standardize", True))

    def nnilc():
        policies.nn_ilc_build(train_cls, H_f[:, pos], tuple(t["nnilc"]["hidden"]), pipe.cfg.nnilc_train,
                              tuple(t["nnilc"].get("features", policies.FEATURES)),
                              standardize=t["nnilc"].get("standardize", True))

    return policies.median_time(tail, repeats), policies.median_time(nnilc, repeats)


def check_timing(pipe, repeats=5):
    def run():
        summ = io.read_json(pipe.root / "report/summary.json")["students"]
        if repeats > 0:
            tt, tn = time_training(pipe, repeats)
            how = f"median of {repeats}"
        else:
            tt, tn = summ["tail"]["T_train"], summ["nnilc"]["T_train"]
            how = "single run"
        pt, pn = summ["tail"]["T_predict_full"], summ["nnilc"]["T_predict_full"]
        ok = tt < tn and pt < pn
        return ok, (f"T_train tail {tt:.2f} s < nnilc {tn:.2f} s ({how}); "
                    f"T_predict_full tail {pt * 1e3:.3f} ms < nnilc {pn * 1e3:.3f} ms")
    return _timed(7, "timing direction", None, run)


def check_determinism(run_a, run_b):
    """Compare non-volatile artifact checksums of two pipeline roots."""
    from .pipeline import Manifest

    def run():
        a = Manifest(run_a).checksums()
        b = Manifest(run_b).checksums()
        diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
        ok = not diff and len(a) > 0
        return ok, f"{len(a)} artifacts compared, {len(diff)} differ" + (f": {diff[:5]}" if diff else "")
    return _timed(8, "determinism", None, run)


def analytic_checks(cfg: ExperimentConfig):
    return [check_deadbeat(cfg), check_fixed_point(), check_dpca(), check_gradients()]


def run_checks(pipe, timing_repeats=0):
    """Verdicts available from one evaluated run (criterion 8 needs two runs)."""
    out = analytic_checks(pipe.cfg)
    out += [check_eta_bound(pipe), check_desk(pipe), check_timing(pipe, timing_repeats)]
    return out


__all__ = ["CriterionResult", "run_checks", "analytic_checks", "check_deadbeat", "check_fixed_point",
           "check_dpca", "check_gradients", "check_eta_bound", "check_desk", "check_timing",
           "check_determinism", "time_training"]
