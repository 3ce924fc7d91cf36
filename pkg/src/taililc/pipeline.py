"""Stage runner with a checksummed manifest.

Stages run in the order gen -> label -> train_tail / train_nnilc -> eval.
Each stage has a fingerprint derived from its own config section and the
fingerprints of its upstream stages, so editing the config invalidates the
edited stage and everything downstream of it. Outputs are listed in
``manifest.json`` with SHA-256 checksums; files flagged volatile (wall-clock
timings) are checked for presence only.
"""
from __future__ import annotations

import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _kernels, dpca, ilc, io, policies
from .config import ExperimentConfig
from .errors import NumericalError, StaleManifestError, TrainingError
from .plant import build_loops, mass_feedforward
from .setpoint import (
    PARAM_NAMES,
    MotionProfileParams,
    Trajectory,
    TrajectoryClass,
    build_class,
    class_manifest,
    split_class,
)

log = logging.getLogger("taililc")

STAGES = ("gen", "label", "train_tail", "train_nnilc", "eval")
UPSTREAM = {
    "gen": (),
    "label": ("gen",),
    "train_tail": ("label",),
    "train_nnilc": ("label",),
    "eval": ("train_tail", "train_nnilc"),
}
MANIFEST = "manifest.json"


def _stage_payload(cfg: ExperimentConfig, stage, sources=None):
    if stage == "gen":
        return {"trajectories": cfg.trajectories, "Ts": cfg.Ts}
    if stage == "label":
        return cfg.section("plant", "controller", "filters")
    if stage == "train_tail":
        return cfg.section("tail")
    if stage == "train_nnilc":
        return cfg.section("nnilc")
    ev = dict(cfg.eval)
    if sources is not None:
        ev["sources"] = list(sources)
    return {"eval": ev}


def stage_fingerprint(cfg: ExperimentConfig, stage, sources=None):
    up = {u: stage_fingerprint(cfg, u) for u in UPSTREAM[stage]}
    return io.sha256_json({"stage": stage, "config": _stage_payload(cfg, stage, sources), "upstream": up})


@dataclass
class StageResult:
    stage: str
    status: str  # "ran" or "up-to-date"
    info: dict = field(default_factory=dict)


class Manifest:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / MANIFEST
        self.doc = io.read_json(self.path) if self.path.exists() else {"version": 1, "stages": {}}

    @property
    def stages(self):
        return self.doc["stages"]

    def save(self):
        io.write_json(self.path, self.doc)

    def record(self, stage, fingerprint, upstream, files, info, volatile_info=None):
        entries = {}
        for rel, volatile in sorted(files.items()):
            entries[rel] = {"sha256": io.sha256_file(self.root / rel), "volatile": bool(volatile)}
        self.stages[stage] = {
            "fingerprint": fingerprint,
            "upstream": upstream,
            "files": entries,
            "info": info,
            "volatile_info": volatile_info or {},
        }

    def drop(self, stage):
        self.stages.pop(stage, None)

    def verify(self, stage):
        """Problems with a stage's recorded files, as a list of strings."""
        rec = self.stages.get(stage)
        if rec is None:
            return [f"stage {stage} has no record"]
        bad = []
        for rel, e in rec["files"].items():
            p = self.root / rel
            if not p.exists():
                bad.append(f"{rel}: missing")
            elif not e["volatile"] and io.sha256_file(p) != e["sha256"]:
                bad.append(f"{rel}: checksum mismatch")
        return bad

    def checksums(self, include_volatile=False):
        out = {}
        for rec in self.stages.values():
            for rel, e in rec["files"].items():
                if include_volatile or not e["volatile"]:
                    out[rel] = e["sha256"]
        return out


def _downstream(stage):
    out = []
    for s in STAGES:
        if stage in UPSTREAM[s]:
            out.append(s)
            out.extend(_downstream(s))
    return list(dict.fromkeys(out))


def hardware_fingerprint():
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "taililc": __version__,
        "kernel_backend": _kernels.BACKEND,
    }


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, jobs=1, force=False, out_dir=None):
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.force = bool(force)
        self.root = Path(out_dir) if out_dir is not None else cfg.output_dir()
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(self.root)
        self._loops = None

    # -- bookkeeping --------------------------------------------------------
    def _check_upstream(self, stage):
        up = {}
        for u in UPSTREAM[stage]:
            rec = self.manifest.stages.get(u)
            want = stage_fingerprint(self.cfg, u)
            if rec is None:
                raise StaleManifestError(f"stage {u!r} has not been run; run it before {stage!r}")
            if rec["fingerprint"] != want:
                raise StaleManifestError(f"stage {u!r} outputs were produced by a different config; rerun it")
            bad = self.manifest.verify(u)
            if bad:
                raise StaleManifestError(f"stage {u!r} outputs are corrupted: " + "; ".join(bad))
            up[u] = want
        return up

    def run_stage(self, stage, **kw):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        sources = kw.get("sources")
        want = stage_fingerprint(self.cfg, stage, sources)
        up = self._check_upstream(stage)
        rec = self.manifest.stages.get(stage)
        if rec is not None and not self.force:
            if rec["fingerprint"] != want:
                raise StaleManifestError(
                    f"stage {stage!r} outputs in {self.root} come from a different config; use --force to replace them"
                )
            bad = self.manifest.verify(stage)
            if bad:
                raise StaleManifestError(f"stage {stage!r} outputs are corrupted: " + "; ".join(bad))
            log.info("%s: up-to-date", stage)
            return StageResult(stage, "up-to-date", rec["info"])
        for s in [stage] + _downstream(stage):
            self.manifest.drop(s)
        self.manifest.save()
        t0 = time.perf_counter()
        files, info, vinfo = getattr(self, f"_run_{stage}")(**kw)
        vinfo = dict(vinfo or {})
        vinfo["wall_seconds"] = time.perf_counter() - t0
        self.manifest.doc["config_fingerprint"] = self.cfg.fingerprint()
        self.manifest.record(stage, want, up, files, info, vinfo)
        self.manifest.save()
        log.info("%s: done in %.2f s", stage, vinfo["wall_seconds"])
        return StageResult(stage, "ran", info)

    # -- shared loaders -----------------------------------------------------
    def loops(self):
        if self._loops is None:
            self._loops = build_loops(self.cfg.plant, self.cfg.controller, self.cfg.length())
        return self._loops

    def load_class(self):
        doc = io.read_json(self.root / "trajectories" / "class.json")
        members, ids, split = [], [], {}
        for e in doc["members"]:
            params = MotionProfileParams(*(e["params"][n] for n in PARAM_NAMES))
            members.append(Trajectory.from_csv(self.root / e["file"], params, Ts=doc["descriptor"]["Ts"]))
            ids.append(e["id"])
            split[e["id"]] = e["split"]
        return TrajectoryClass(tuple(members), tuple(ids), doc["descriptor"]), split

    def load_labels(self):
        return io.read_matrix(self.root / "data" / "H_r.tlmx"), io.read_matrix(self.root / "data" / "H_f.tlmx")

    def _train_columns(self):
        cls, split = self.load_class()
        pos = [p for p, i in enumerate(cls.ids) if split[i] == "train"]
        return cls, split, pos

    # -- stages -------------------------------------------------------------
    def _run_gen(self):
        cfg = self.cfg
        cls = build_class(cfg.grid, cfg.Ts, length=cfg.length())
        train, test = split_class(cls, cfg.test_selector(cls.n_t))
        test_ids = set(test.ids)
        files, rels, split = {}, [], []
        for mid, m in zip(cls.ids, cls.members):
            rel = f"trajectories/traj_{mid:04d}.csv"
            io.write_columns_csv(self.root / rel, {"t": m.t, "r": m.r, "v": m.v, "a": m.a, "j": m.j, "s": m.s})
            files[rel] = False
            rels.append(rel)
            split.append("test" if mid in test_ids else "train")
        io.write_json(self.root / "trajectories" / "class.json", class_manifest(cls, rels, split))
        files["trajectories/class.json"] = False
        io.write_matrix(self.root / "data" / "H_r.tlmx", cls.references())
        files["data/H_r.tlmx"] = False
        info = {"n_trajectories": cls.n_t, "n_train": train.n_t, "n_test": test.n_t, "n_samples": cls.n_samples}
        log.info("gen: %d trajectories (%d train / %d test), %d samples each",
                 cls.n_t, train.n_t, test.n_t, cls.n_samples)
        return files, info, None

    def _run_label(self):
        cfg = self.cfg
        cls, _ = self.load_class()
        loops = self.loops()
        fcfg = cfg.filters
        filt = ilc.design_filters(loops.J_N, fcfg["lambda_reg"], fcfg["q_cutoff_hz"], cfg.Ts, fcfg["learning_gain"])
        margin = ilc.convergence_margin(loops.J_N, filt.L, filt.Q)
        log.info("label: convergence margin %.6f, lambda %.3e", margin, filt.lambda_reg)
        if margin >= 1.0:
            raise NumericalError(f"ILC convergence margin {margin:.6f} is not below 1")
        expert = policies.make_expert(loops, filt, fcfg["tol"], fcfg["max_trials"], margin=margin)
        lab = policies.label_dataset(cls, expert, jobs=self.jobs)
        io.write_matrix(self.root / "data" / "H_f.tlmx", lab.H_f)
        hist = {}
        for mid, res in zip(lab.ids, lab.results):
            h = res.history
            hist[str(mid)] = {"trials": h.trials, "converged": h.converged, "l2": h.l2, "linf": h.linf,
                              "f_change": h.f_change}
        io.write_json(self.root / "data" / "ilc_histories.json", hist)
        trials = {str(m): r.history.trials for m, r in zip(lab.ids, lab.results)}
        summary = {
            "margin": margin,
            "lambda_reg": filt.lambda_reg,
            "q_cutoff_hz": filt.cutoff_hz,
            "shift": loops.shift,
            "trials": trials,
            "all_converged": all(r.history.converged for r in lab.results),
        }
        io.write_json(self.root / "data" / "label_summary.json", summary)
        log.info("label: trials per trajectory min %d max %d", min(trials.values()), max(trials.values()))
        files = {"data/H_f.tlmx": False, "data/ilc_histories.json": False, "data/label_summary.json": False}
        return files, {"margin": margin, "max_trials": max(trials.values())}, None

    def _write_curve(self, rel, curve):
        io.write_columns_csv(self.root / rel, {"epoch": np.arange(len(curve)), "loss": np.asarray(curve, dtype=float)})

    def _train_guarded(self, rel_curve, fn):
        try:
            return fn()
        except TrainingError as exc:
            if exc.curve is not None:
                self._write_curve(rel_curve, exc.curve)
            raise TrainingError(f"{exc} (loss curve: {self.root / rel_curve})", exc.trial, exc.curve) from exc

    def targets(self, cls, H_f):
        """Full expert signals and their residual over mass feedforward."""
        m = self.cfg.plant.m
        H_a = np.column_stack([mass_feedforward(t, m) for t in cls.members])
        return {"": H_f, "_res": H_f - H_a}

    def _run_train_tail(self):
        t = self.cfg.raw["tail"]
        tcfg = self.cfg.tail_train
        cls, _, pos = self._train_columns()
        H_r, H_f = self.load_labels()
        files, info, vinfo = {}, {}, {}
        for suffix, target in self.targets(cls, H_f).items():
            Hr, Ht = H_r[:, pos], target[:, pos]
            n_l = t["n_l"]
            if n_l == "auto":
                n_l, curve_nl = policies.select_latent_dim(Ht, t["candidates"], float(t["budget"]))
                io.write_json(self.root / f"models/tail{suffix}_latent.json",
                              {"selected": n_l, "term_nl": {str(k): v for k, v in curve_nl.items()}})
                files[f"models/tail{suffix}_latent.json"] = False
            t0 = time.perf_counter()
            pol, curve = self._train_guarded(
                f"curves/tail{suffix}_loss.csv",
                lambda: policies.build_tail_policy(Hr, Ht, n_l, tuple(t["hidden"]), tcfg,
                                                   center=t.get("center", False),
                                                   standardize=t.get("standardize", True)),
            )
            vinfo[f"T_train{suffix}"] = time.perf_counter() - t0
            self._write_curve(f"curves/tail{suffix}_loss.csv", curve)
            header = {"target": "residual" if suffix else "full", "train": tcfg.to_dict(),
                      "hidden": list(t["hidden"]), "final_loss": float(curve[-1])}
            policies.save_tail_policy(self.root / f"models/tail{suffix}.json", pol, header)
            files.update({f"models/tail{suffix}.json": False, f"models/tail{suffix}.bin": False,
                          f"curves/tail{suffix}_loss.csv": False})
            info[f"final_loss{suffix}"] = float(curve[-1])
            info[f"n_l{suffix}"] = int(n_l)
            log.info("train tail%s: n_l=%d, final loss %.3e, %.2f s", suffix, n_l, curve[-1], vinfo[f"T_train{suffix}"])
        return files, info, vinfo

    def _run_train_nnilc(self):
        t = self.cfg.raw["nnilc"]
        tcfg = self.cfg.nnilc_train
        cls, _, pos = self._train_columns()
        train_cls = cls.subset(pos)
        _, H_f = self.load_labels()
        feats = tuple(t.get("features", policies.FEATURES))
        files, info, vinfo = {}, {}, {}
        for suffix, target in self.targets(cls, H_f).items():
            t0 = time.perf_counter()
            pol, curve = self._train_guarded(
                f"curves/nnilc{suffix}_loss.csv",
                lambda: policies.nn_ilc_build(train_cls, target[:, pos], tuple(t["hidden"]), tcfg, feats,
                                              standardize=t.get("standardize", True)),
            )
            vinfo[f"T_train{suffix}"] = time.perf_counter() - t0
            self._write_curve(f"curves/nnilc{suffix}_loss.csv", curve)
            header = {"target": "residual" if suffix else "full", "train": tcfg.to_dict(),
                      "hidden": list(t["hidden"]), "final_loss": float(curve[-1])}
            policies.save_nnilc_policy(self.root / f"models/nnilc{suffix}.json", pol, header)
            files.update({f"models/nnilc{suffix}.json": False, f"models/nnilc{suffix}.bin": False,
                          f"curves/nnilc{suffix}_loss.csv": False})
            info[f"final_loss{suffix}"] = float(curve[-1])
            log.info("train nnilc%s: final loss %.3e, %.2f s", suffix, curve[-1], vinfo[f"T_train{suffix}"])
        return files, info, vinfo

    def load_students(self):
        out = {}
        for name in ("tail", "tail_res"):
            out[name] = policies.load_tail_policy(self.root / f"models/{name}.json")[0]
        for name in ("nnilc", "nnilc_res"):
            out[name] = policies.load_nnilc_policy(self.root / f"models/{name}.json")[0]
        return out

    def sources(self, cls, H_f, students, names):
        m = self.cfg.plant.m
        col = {mid: p for p, mid in enumerate(cls.ids)}
        table = {
            "zero": lambda tr, mid: np.zeros(tr.n_samples),
            "mass_ff": lambda tr, mid: mass_feedforward(tr, m),
            "expert": lambda tr, mid: H_f[:, col[mid]],
            "tail": lambda tr, mid: policies.tail_predict(students["tail"], tr.r),
            "nnilc": lambda tr, mid: students["nnilc"].predict(tr),
            "tail+mass_ff": lambda tr, mid: policies.tail_predict(students["tail_res"], tr.r) + mass_feedforward(tr, m),
            "nnilc+mass_ff": lambda tr, mid: students["nnilc_res"].predict(tr) + mass_feedforward(tr, m),
        }
        return {n: table[n] for n in names}

    def _run_eval(self, sources=None):
        cfg = self.cfg
        ev = cfg.eval
        names = list(sources) if sources is not None else list(ev["sources"])
        cls, split = self.load_class()
        _, H_f = self.load_labels()
        students = self.load_students()
        loops = self.loops()
        srcs = self.sources(cls, H_f, students, names)

        def one(item):
            mid, tr = item
            per = {n: (lambda fn: (lambda t: fn(t, mid)))(fn) for n, fn in srcs.items()}
            return policies.evaluate(per, [(mid, tr)], loops, split, keep_traces=True)

        items = list(zip(cls.ids, cls.members))
        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                parts = list(pool.map(one, items))
        else:
            parts = [one(it) for it in items]
        report = policies.PolicyEvalReport([r for p in parts for r in p.rows], {},
                                           {k: v for p in parts for k, v in p.traces.items()})
        if all(r.error for r in report.rows):
            raise NumericalError("every evaluation cell failed: " + report.rows[0].error)

        files = {}
        rows = report.rows
        io.write_columns_csv(self.root / "report/eval.csv", {
            "traj_id": [r.traj_id for r in rows],
            "split": [r.split for r in rows],
            "source": [r.source for r in rows],
            "peak_window": [r.peak_window for r in rows],
            "rms_window": [r.rms_window for r in rows],
            "peak_total": [r.peak_total for r in rows],
            "n_window": [r.n_window for r in rows],
            "error": [r.error.replace(",", ";") for r in rows],
        })
        files["report/eval.csv"] = False
        for mid, tr in items:
            w = tr.cruise_window()
            cols = {"t": tr.t[w] if w.any() else tr.t}
            for n in names:
                if (mid, n) in report.traces:
                    cols[n] = report.traces[(mid, n)]
            rel = f"traces/traj_{mid:04d}.csv"
            io.write_columns_csv(self.root / rel, cols)
            files[rel] = False

        metrics = self._metrics(cls, split, H_f, students, report, names)
        io.write_json(self.root / "report/metrics.json", metrics)
        files["report/metrics.json"] = False
        timings = self._timings(cls, split, students)
        summary = {"hardware": hardware_fingerprint(), "students": {}, "baselines": {}}
        for n in names:
            entry = {"e_peak_tracking": metrics["peak_window"][n]["test"],
                     "e_peak_tracking_train": metrics["peak_window"][n]["train"]}
            if n in metrics["eta"]:
                entry.update(e_train=metrics["eta"][n]["train"], e_test=metrics["eta"][n]["test"])
            if n in timings:
                entry.update(timings[n])
            (summary["students"] if n in timings else summary["baselines"])[n] = entry
        io.write_json(self.root / "report/summary.json", summary)
        files["report/summary.json"] = True
        failed = sum(1 for r in rows if r.error)
        return files, {"cells": len(rows), "failed_cells": failed, "sources": names}, {"timings": timings}

    def _pick(self, ids, n, seed):
        ids = sorted(ids)
        if len(ids) <= n:
            return ids
        rng = np.random.default_rng(seed)
        return sorted(int(i) for i in rng.choice(ids, size=n, replace=False))

    def _metrics(self, cls, split, H_f, students, report, names):
        ev = self.cfg.eval
        col = {mid: p for p, mid in enumerate(cls.ids)}
        train_ids = [i for i in cls.ids if split[i] == "train"]
        test_ids = [i for i in cls.ids if split[i] == "test"]
        out = {"peak_window": {}, "rms_window": {}, "eta": {}, "eta_decomposition": {},
               "selected": {"train": self._pick(train_ids, ev["n_random"], ev["seed"]),
                            "test": self._pick(test_ids, ev["n_random"], ev["seed"] + 1)}}
        for n in names:
            for metric in ("peak_window", "rms_window"):
                out[metric][n] = {}
                for sp_ in ("train", "test"):
                    vals = list(report.table(n, sp_, metric).values())
                    out[metric][n][sp_] = float(np.mean(vals)) if vals else None
        srcs = self.sources(cls, H_f, students, [n for n in names if n not in ("zero", "expert")])
        for n, fn in srcs.items():
            if n == "mass_ff":
                continue
            out["eta"][n] = {}
            for sp_ in ("train", "test"):
                ids = out["selected"][sp_]
                F = np.column_stack([fn(cls.members[col[i]], i) for i in ids])
                out["eta"][n][sp_] = policies.eta(H_f[:, [col[i] for i in ids]], F)
        # expert/student-space decomposition for both TAIL students
        m = self.cfg.plant.m
        for name, res in (("tail", False), ("tail_res", True)):
            pol = students[name]
            out["eta_decomposition"][name] = {}
            for sp_, ids in (("train", train_ids), ("test", test_ids)):
                p = [col[i] for i in ids]
                Ft = H_f[:, p]
                if res:
                    Ft = Ft - np.column_stack([mass_feedforward(cls.members[q], m) for q in p])
                R = np.column_stack([cls.members[q].r for q in p])
                terms = policies.eta_decomposed(Ft, dpca.reconstruct(pol.decoder, Ft), policies.tail_predict(pol, R))
                out["eta_decomposition"][name][sp_] = terms._asdict()
        return out

    def _timings(self, cls, split, students):
        reps = int(self.cfg.eval["timing_repeats"])
        tt = {s: self.manifest.stages[s]["volatile_info"] for s in ("train_tail", "train_nnilc")}
        probe = next(m for m, i in zip(cls.members, cls.ids) if split[i] == "test")
        n_d = probe.n_samples
        x0 = policies.nn_ilc_features(probe, students["nnilc"].features)[n_d // 2]
        out = {}
        for name, key, suffix in (("tail", "tail", ""), ("tail+mass_ff", "tail_res", "_res")):
            full = policies.median_time(lambda: policies.tail_predict(students[key], probe.r), reps)
            out[name] = {"T_train": tt["train_tail"].get(f"T_train{suffix}"), "T_predict_full": full,
                         "T_predict_per_sample": full / n_d}
        for name, key, suffix in (("nnilc", "nnilc", ""), ("nnilc+mass_ff", "nnilc_res", "_res")):
            pol = students[key]
            full = policies.median_time(lambda: pol.predict_streaming(probe), reps)
            per = policies.median_time(lambda: pol.predict_sample(x0), reps)
            out[name] = {"T_train": tt["train_nnilc"].get(f"T_train{suffix}"), "T_predict_full": full,
                         "T_predict_per_sample": per}
        return out

    # -- whole pipeline -----------------------------------------------------
    def repro(self, start="gen"):
        order = ["gen", "label", "train_tail", "train_nnilc", "eval"]
        if start not in order:
            raise ValueError(f"unknown stage {start!r}")
        return [self.run_stage(s) for s in order[order.index(start):]]


def load_run(root):
    """Read back an evaluated run: (manifest, metrics, summary, rows)."""
    root = Path(root)
    man = Manifest(root)
    if "eval" not in man.stages:
        raise StaleManifestError(f"{root} has no evaluated run")
    metrics = io.read_json(root / "report/metrics.json")
    summary = io.read_json(root / "report/summary.json")
    return man, metrics, summary


__all__ = ["Pipeline", "Manifest", "StageResult", "STAGES", "stage_fingerprint", "load_run", "hardware_fingerprint"]
