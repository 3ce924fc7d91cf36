import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taililc import dpca, ilc, policies
from taililc.errors import DimensionError, DivergenceError, NumericalError
from taililc.mlp import MLPParams, Regressor, Standardizer, TrainConfig
from taililc.plant import PlantConfig, build_loops, mass_feedforward
from taililc.setpoint import build_class, required_length

from conftest import FLEX_MODE

GRID = {"displacement": [0.01, 0.02, 0.03], "v_max": [0.1], "a_max": [3.0], "j_max": [300.0], "s_max": [3e4]}
OVERFIT = TrainConfig(learning_rate=3e-3, epochs=5000, batch_size=3, seed=0)


def _setup(modes):
    N = required_length(GRID, 1e-3) + 20
    cls = build_class(GRID, 1e-3, length=N)
    loops = build_loops(PlantConfig(5.0, modes, 1e-3), None, N)
    filt = ilc.design_filters(loops.J_N, None, 100.0, 1e-3)
    lab = policies.label_dataset(cls, policies.make_expert(loops, filt))
    return cls, loops, filt, lab


@pytest.fixture(scope="module")
def flex():
    return _setup((FLEX_MODE,))


@pytest.fixture(scope="module")
def rigid():
    return _setup(())


@pytest.fixture(scope="module")
def overfit(flex):
    cls, _, _, lab = flex
    pol, curve = policies.build_tail_policy(lab.H_r, lab.H_f, 3, [32], OVERFIT)
    return pol, curve


def const_regressor(n_in, n_out, y_mean):
    """Zero-weight network: the prediction is the target mean for every input."""
    p = MLPParams([np.zeros((n_in, 4)), np.zeros((4, n_out))], [np.zeros(4), np.zeros(n_out)])
    return Regressor(p, Standardizer.identity(n_in), Standardizer(np.asarray(y_mean, float), np.ones(n_out)))


# -- labelling ----------------------------------------------------------------------------------

def test_label_columns_align_with_members(flex):
    cls, loops, filt, lab = flex
    assert lab.H_r.shape == lab.H_f.shape == (cls.n_samples, 3)
    assert lab.ids == cls.ids
    single = ilc.run_expert(cls.members[1].r, loops, filt)
    np.testing.assert_array_equal(lab.H_f[:, 1], single.f_star)
    np.testing.assert_array_equal(lab.H_r[:, 1], cls.members[1].r)


def test_label_single_member_class(flex):
    cls, loops, filt, _ = flex
    one = build_class({**GRID, "displacement": [0.02]}, 1e-3, length=cls.n_samples)
    lab = policies.label_dataset(one, policies.make_expert(loops, filt))
    assert lab.H_f.shape == (cls.n_samples, 1)


def test_zero_displacement_label_is_zero(flex):
    cls, loops, filt, _ = flex
    zero = build_class({**GRID, "displacement": [0.0]}, 1e-3, length=cls.n_samples)
    lab = policies.label_dataset(zero, policies.make_expert(loops, filt))
    assert np.max(np.abs(lab.H_f)) < 1e-12


def test_label_failure_lists_ids(flex):
    cls, loops, filt, _ = flex
    honest = policies.make_expert(loops, filt)

    def flaky(r):
        if r[-1] > 0.015:
            raise NumericalError("boom")
        return honest(r)

    with pytest.raises(DivergenceError, match=r"\[1, 2\]"):
        policies.label_dataset(cls, flaky)


def test_parallel_labels_match_serial(flex):
    cls, loops, filt, lab = flex
    par = policies.label_dataset(cls, policies.make_expert(loops, filt), jobs=3)
    assert par.H_f.tobytes() == lab.H_f.tobytes()


def test_expert_tracks_mass_feedforward_on_rigid_plant(rigid):
    cls, _, _, lab = rigid
    for i, m in enumerate(cls.members):
        assert np.corrcoef(lab.H_f[:, i], mass_feedforward(m, 5.0))[0, 1] > 0.99


# -- TAIL student -------------------------------------------------------------------------------

def test_zero_weight_regressor_returns_decoded_mean(flex):
    cls, _, _, lab = flex
    enc = dpca.fit(lab.H_r, 2)
    dec = dpca.fit(lab.H_f, 2)
    y = np.array([0.3, -0.1])
    pol = policies.StudentPolicy(enc, const_regressor(2, 2, y), dec)
    np.testing.assert_allclose(policies.tail_predict(pol, cls.members[0].r), dec.T_D @ y, rtol=1e-14)


def test_student_rejects_mismatched_widths(flex):
    _, _, _, lab = flex
    enc = dpca.fit(lab.H_r, 2)
    with pytest.raises(DimensionError):
        policies.StudentPolicy(enc, const_regressor(3, 2, np.zeros(2)), enc)


def test_projectors_do_not_depend_on_column_order(flex):
    _, _, _, lab = flex
    perm = [2, 0, 1]
    a, b = dpca.fit(lab.H_f, 3), dpca.fit(lab.H_f[:, perm], 3)
    np.testing.assert_allclose(a.T_D, b.T_D, atol=1e-9)


def test_overfit_reproduces_labels(flex, overfit):
    _, _, _, lab = flex
    pol, curve = overfit
    assert curve[-1] < 1e-10
    F = policies.tail_predict(pol, lab.H_r)
    target = dpca.reconstruct(pol.decoder, lab.H_f)
    assert np.max(np.abs(F - target)) <= 1e-6 * np.max(np.abs(lab.H_f))


def test_tail_is_deterministic(flex, overfit):
    _, _, _, lab = flex
    again, _ = policies.build_tail_policy(lab.H_r, lab.H_f, 3, [32], OVERFIT)
    pol, _ = overfit
    assert policies.tail_predict(again, lab.H_r).tobytes() == policies.tail_predict(pol, lab.H_r).tobytes()


def test_tail_predict_is_encode_regress_decode(flex, overfit):
    cls, _, _, _ = flex
    pol, _ = overfit
    r = cls.members[2].r
    manual = dpca.decode(pol.decoder, pol.regressor.predict(dpca.encode(pol.encoder, r)[None, :])[0])
    assert policies.tail_predict(pol, r).tobytes() == manual.tobytes()


def test_tail_predict_length_mismatch(overfit):
    pol, _ = overfit
    with pytest.raises(DimensionError):
        policies.tail_predict(pol, np.zeros(pol.encoder.n_d + 1))


def test_build_tail_rejects_column_mismatch(flex):
    _, _, _, lab = flex
    with pytest.raises(DimensionError):
        policies.build_tail_policy(lab.H_r, lab.H_f[:, :2], 1, [4], TrainConfig(epochs=1))


# -- NN-ILC baseline ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def rigid_nn(rigid):
    cls, _, _, lab = rigid
    nn, _ = policies.nn_ilc_build(cls, lab.H_f, [6, 6, 6],
                                  TrainConfig(learning_rate=1e-2, epochs=30, batch_size=64, seed=0))
    return nn


def test_nnilc_learns_mass_feedforward_on_rigid_plant(rigid, rigid_nn):
    cls, _, _, _ = rigid
    m = cls.members[1]
    assert np.corrcoef(rigid_nn.predict(m), mass_feedforward(m, 5.0))[0, 1] > 0.99


def test_nnilc_output_length_and_dwell(rigid, rigid_nn):
    cls, _, _, _ = rigid
    m = cls.members[0]
    f = rigid_nn.predict(m)
    assert f.shape == m.r.shape
    dwell = slice(m.n_samples - 15, None)
    # features are constant in the terminal dwell, so is the output
    assert np.ptp(f[dwell]) == 0.0


def test_nnilc_streaming_matches_batch(rigid, rigid_nn):
    cls, _, _, _ = rigid
    m = cls.members[2]
    np.testing.assert_allclose(rigid_nn.predict_streaming(m), rigid_nn.predict(m), rtol=1e-12, atol=1e-15)


def test_nnilc_rejects_misaligned_labels(rigid):
    cls, _, _, lab = rigid
    with pytest.raises(DimensionError):
        policies.nn_ilc_build(cls, lab.H_f[:-1], [4], TrainConfig(epochs=1))


# -- distances -------------------------------------------------------------------------------------

def test_eta_examples():
    assert policies.eta(np.ones((4, 3)), np.ones((4, 3))) == 0.0
    A = np.zeros((2, 2))
    B = np.array([[3.0, 0.0], [4.0, 1.0]])
    assert policies.eta(A, B) == pytest.approx(3.0)
    with pytest.raises(DimensionError):
        policies.eta(np.zeros((2, 2)), np.zeros((3, 2)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_eta_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.standard_normal((30, 5)) for _ in range(3))
    assert policies.eta(A, C) <= policies.eta(A, B) + policies.eta(B, C) + 1e-12
    assert policies.eta(A, B) == pytest.approx(policies.eta(B, A))


def test_eta_terms_vanish_at_full_rank(flex):
    _, _, _, lab = flex
    proj = dpca.fit(lab.H_f, 3)
    F_rec = dpca.reconstruct(proj, lab.H_f)
    t = policies.eta_decomposed(lab.H_f, F_rec, F_rec)
    assert t.term_nl <= 1e-9 * np.max(np.abs(lab.H_f))
    assert t.term_mu == 0.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_eta_decomposition_is_an_upper_bound(seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((40, 6))
    proj = dpca.fit(F, 2)
    F_rec = dpca.reconstruct(proj, F)
    F_hat = F_rec + 0.1 * rng.standard_normal(F.shape)
    t = policies.eta_decomposed(F, F_rec, F_hat)
    assert t.direct <= t.term_nl + t.term_mu + 1e-12


def test_select_latent_dim_examples():
    H = np.zeros((10, 2))
    H[:5, 0] = 3.0 / np.sqrt(5)
    H[5:, 1] = 2.0 / np.sqrt(5)
    # zero budget forces the full rank
    n, curve = policies.select_latent_dim(H, [1, 2], 1e-9)
    assert n == 2
    # n_l = 1 drops the second column entirely: mean error (0 + 2) / 2 = 1
    assert curve[1] == pytest.approx(1.0)
    n, _ = policies.select_latent_dim(H, [2, 1], 1.5)
    assert n == 1
    with pytest.raises(ValueError):
        policies.select_latent_dim(H, [], 1.0)


def test_select_latent_dim_falls_back_to_minimum():
    H = np.random.default_rng(0).standard_normal((30, 4))
    n, curve = policies.select_latent_dim(H, [1, 2], -1.0)
    assert n == 2 and curve[2] < curve[1]


# -- evaluation -----------------------------------------------------------------------------------

def test_evaluate_zero_source_is_feedback_only(flex):
    cls, loops, _, _ = flex
    members = list(zip(cls.ids, cls.members))
    rep = policies.evaluate({"zero": lambda t: np.zeros_like(t.r)}, members, loops, {0: "train", 1: "test"})
    for tid, m in members:
        e = loops.tracking_error(m.r, np.zeros(m.n_samples))
        w = m.cruise_window()
        assert rep.table("zero")[tid] == np.max(np.abs(e[w]))
    assert set(rep.table("zero", "test")) == {1}


def test_evaluate_records_failing_cell(flex):
    cls, loops, _, _ = flex
    members = list(zip(cls.ids, cls.members))

    def broken(t):
        raise RuntimeError("no model")

    rep = policies.evaluate({"ok": lambda t: np.zeros_like(t.r), "bad": broken,
                             "short": lambda t: np.zeros(3)}, members, loops, {})
    bad = [r for r in rep.rows if r.source == "bad"]
    assert len(bad) == 3 and all("no model" in r.error for r in bad)
    assert all(r.error for r in rep.rows if r.source == "short")
    assert len(rep.table("ok")) == 3 and rep.table("bad") == {}


def test_expert_is_best_on_its_own_trajectories(flex):
    cls, loops, _, lab = flex
    members = list(zip(cls.ids, cls.members))
    col = {id(m): i for i, m in enumerate(cls.members)}
    rep = policies.evaluate({
        "zero": lambda t: np.zeros_like(t.r),
        "mass_ff": lambda t: mass_feedforward(t, 5.0),
        "expert": lambda t: lab.H_f[:, col[id(t)]],
    }, members, loops, {})
    for tid in cls.ids:
        assert rep.table("expert")[tid] < rep.table("mass_ff")[tid] < rep.table("zero")[tid]


def test_median_time_counts_calls():
    calls = []
    t = policies.median_time(lambda: calls.append(1), repeats=5)
    assert len(calls) == 5 and t >= 0.0


# -- persistence ----------------------------------------------------------------------------------

def test_tail_policy_roundtrip(tmp_path, flex, overfit):
    _, _, _, lab = flex
    pol, _ = overfit
    policies.save_tail_policy(tmp_path / "tail.json", pol, {"note": "x"})
    back, head = policies.load_tail_policy(tmp_path / "tail.json")
    assert head["note"] == "x" and head["n_l"] == 3
    assert policies.tail_predict(back, lab.H_r).tobytes() == policies.tail_predict(pol, lab.H_r).tobytes()


def test_nnilc_policy_roundtrip(tmp_path, rigid, rigid_nn):
    cls, _, _, _ = rigid
    policies.save_nnilc_policy(tmp_path / "nn.json", rigid_nn)
    back, _ = policies.load_nnilc_policy(tmp_path / "nn.json")
    assert back.predict(cls.members[0]).tobytes() == rigid_nn.predict(cls.members[0]).tobytes()
    with pytest.raises(DimensionError):
        policies.load_tail_policy(tmp_path / "nn.json")


# -- rigid surrogate with Q = I -----------------------------------------------------------------

@pytest.fixture(scope="module")
def rigid_deadbeat():
    N = required_length(GRID, 1e-3) + 20
    cls = build_class(GRID, 1e-3, length=N)
    loops = build_loops(PlantConfig(5.0, (), 1e-3), None, N)
    # Q = I with the default regularization: the fixed point is still J_N^-1 S_N r,
    # but the expert error sits above the bare roundoff floor that lambda = 0 reaches
    filt = ilc.design_filters(loops.J_N, None, None, 1e-3)
    lab = policies.label_dataset(cls, policies.make_expert(loops, filt))
    return cls, loops, lab


def test_rigid_expert_is_lifted_plant_inverse(rigid_deadbeat):
    from taililc.plant import lift

    cls, loops, lab = rigid_deadbeat
    P_N = lift(loops.P, loops.N, shift=loops.shift)
    for i, m in enumerate(cls.members):
        oracle = np.linalg.solve(P_N, loops.shift_reference(m.r))
        assert np.max(np.abs(lab.H_f[:, i] - oracle)) <= 1e-6 * np.max(np.abs(oracle))


@pytest.mark.parametrize("student", ["tail", "nnilc"])
def test_rigid_students_within_10x_of_expert(rigid_deadbeat, student):
    cls, loops, lab = rigid_deadbeat
    if student == "tail":
        pol, _ = policies.build_tail_policy(lab.H_r, lab.H_f, 3, [32], OVERFIT)
        predict = lambda m: policies.tail_predict(pol, m.r)
    else:
        nn, _ = policies.nn_ilc_build(cls, lab.H_f, [16, 16],
                                      TrainConfig(learning_rate=3e-3, epochs=300, batch_size=64, seed=0))
        predict = nn.predict
    for i, m in enumerate(cls.members):
        w = m.cruise_window()
        e_exp = np.max(np.abs(loops.tracking_error(m.r, lab.H_f[:, i])[w]))
        e_st = np.max(np.abs(loops.tracking_error(m.r, predict(m))[w]))
        assert e_st <= 10 * e_exp, f"member {i}: student {e_st:.3e} vs expert {e_exp:.3e}"
