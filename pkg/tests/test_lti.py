import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taililc.errors import AlgebraicLoopError, DimensionError, SingularFrequencyError
from taililc.lti import (
    DiscreteStateSpace,
    FrequencyResponse,
    default_grid,
    freq_response,
    linf_norm,
    process_sensitivity,
    sensitivity,
    simulate,
    simulate_feedback,
)
from taililc.plant import ControllerConfig, PlantConfig, build_controller, build_plant

GRID512 = np.linspace(1e-3, np.pi, 512)


def delay():
    return DiscreteStateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]], 1.0)


def integrator(Ts):
    return DiscreteStateSpace([[1.0]], [[Ts]], [[1.0]], [[0.0]], Ts)


def lowpass():
    return DiscreteStateSpace([[0.9]], [[1.0]], [[0.1]], [[0.0]], 1.0)


@pytest.fixture(scope="module")
def surrogate():
    cfg = PlantConfig(5.0, ((150.0, 0.03, 0.05),), 1e-3)
    return build_plant(cfg), build_controller(cfg)


# -- construction -------------------------------------------------------------

def test_rejects_nonsquare_A():
    with pytest.raises(DimensionError):
        DiscreteStateSpace(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 2)), [[0.0]], 1.0)


def test_rejects_nonconformable_B():
    with pytest.raises(DimensionError):
        DiscreteStateSpace(np.eye(2), np.zeros((3, 1)), np.zeros((1, 2)), [[0.0]], 1.0)


def test_rejects_nonpositive_Ts():
    with pytest.raises(DimensionError):
        DiscreteStateSpace.gain(1.0, 0.0)


def test_matrices_are_read_only():
    sys = integrator(0.1)
    with pytest.raises(ValueError):
        sys.A[0, 0] = 2.0


def test_json_roundtrip(surrogate):
    P, _ = surrogate
    Q = DiscreteStateSpace.from_json(P.to_json())
    for name in "ABCD":
        np.testing.assert_array_equal(getattr(P, name), getattr(Q, name))
    assert Q.Ts == P.Ts


def test_json_roundtrip_static_gain():
    G = DiscreteStateSpace.gain([[2.0, 1.0]], 0.5)
    H = DiscreteStateSpace.from_dict(G.to_dict())
    assert H.n_states == 0 and H.D.shape == (1, 2)


# -- simulate -----------------------------------------------------------------

def test_simulate_static_gain():
    np.testing.assert_array_equal(simulate(DiscreteStateSpace.gain(2.0), [1, 1, 1]), [2, 2, 2])


def test_simulate_unit_delay():
    np.testing.assert_array_equal(simulate(delay(), [1, 0, 0]), [0, 1, 0])


def test_simulate_integrator_step():
    Ts = 0.01
    y = simulate(integrator(Ts), np.ones(100))
    # independent oracle: cumulative sum shifted by one sample
    oracle = np.concatenate([[0.0], np.cumsum(Ts * np.ones(99))])
    np.testing.assert_allclose(y, oracle, rtol=0, atol=1e-14)
    assert y[99] == pytest.approx(0.99, abs=1e-12)


def test_simulate_rejects_wrong_rows():
    with pytest.raises(DimensionError):
        simulate(delay(), np.ones((2, 5)))


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(-5, 5), b=st.floats(-5, 5),
    seed=st.integers(0, 2**31 - 1), n=st.integers(1, 200),
)
def test_simulate_is_linear(a, b, seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    A *= 0.9 / max(1e-9, np.max(np.abs(np.linalg.eigvals(A))))
    sys = DiscreteStateSpace(A, rng.standard_normal((3, 1)), rng.standard_normal((1, 3)),
                             rng.standard_normal((1, 1)), 1.0)
    u1, u2 = rng.standard_normal(n), rng.standard_normal(n)
    lhs = simulate(sys, a * u1 + b * u2)
    rhs = a * simulate(sys, u1) + b * simulate(sys, u2)
    scale = max(1.0, np.max(np.abs(lhs)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_sinusoid_steady_state_matches_frequency_response():
    sys = lowpass()
    w = 0.3
    k = np.arange(4000)
    y = simulate(sys, np.sin(w * k))
    amp = np.max(np.abs(y[-500:]))
    expected = abs(freq_response(sys, [w]).siso()[0])
    # sampled peak of a sinusoid under-reads by at most 1 - cos(w/2)
    assert expected * np.cos(w / 2) - 1e-6 <= amp <= expected + 1e-6


# -- freq_response ------------------------------------------------------------

def test_freq_response_static_gain():
    fr = freq_response(DiscreteStateSpace.gain(3.0), [0.1, 1.0, 3.0])
    np.testing.assert_array_equal(fr.siso(), [3, 3, 3])


def test_freq_response_delay_at_nyquist():
    assert freq_response(delay(), [np.pi]).siso()[0] == pytest.approx(-1.0, abs=1e-15)


def test_freq_response_integrator_quarter_rate():
    Ts = 0.01
    v = freq_response(integrator(Ts), [np.pi / 2]).siso()[0]
    assert abs(v - Ts / (1j - 1)) < 1e-15


def test_freq_response_pole_on_grid_reports_omega():
    with pytest.raises(SingularFrequencyError) as exc:
        freq_response(integrator(0.1), [0.0, 0.5])
    assert exc.value.omega == 0.0


def test_frequency_response_requires_increasing_grid():
    with pytest.raises(DimensionError):
        FrequencyResponse(np.array([0.2, 0.1]), np.ones(2))


def test_default_grid_is_increasing_and_bounded():
    w = default_grid()
    assert np.all(np.diff(w) > 0) and w[0] > 0 and w[-1] == pytest.approx(np.pi)


# -- loops ----------------------------------------------------------------------

def test_sensitivity_unit_loop_is_half():
    S = sensitivity(DiscreteStateSpace.gain(1.0), DiscreteStateSpace.gain(1.0))
    assert freq_response(S, GRID512).siso() == pytest.approx(0.5)


def test_sensitivity_without_controller_is_identity(surrogate):
    P, _ = surrogate
    S = sensitivity(P, DiscreteStateSpace.gain(0.0, P.Ts))
    np.testing.assert_allclose(freq_response(S, GRID512).siso(), 1.0, atol=1e-14)


def test_sensitivity_identity_on_surrogate(surrogate):
    P, K = surrogate
    S = freq_response(sensitivity(P, K), GRID512).siso()
    Pw = freq_response(P, GRID512).siso()
    Kw = freq_response(K, GRID512).siso()
    assert np.max(np.abs(S * (1 + Pw * Kw) - 1)) < 1e-10
    # loop identity S + P K S = I
    assert np.max(np.abs(S + Pw * Kw * S - 1)) < 1e-10


def test_process_sensitivity_without_controller_is_plant(surrogate):
    P, _ = surrogate
    J = process_sensitivity(P, DiscreteStateSpace.gain(0.0, P.Ts))
    np.testing.assert_allclose(freq_response(J, GRID512).siso(), freq_response(P, GRID512).siso(), atol=1e-12)


def test_process_sensitivity_unit_loop_is_half():
    J = process_sensitivity(DiscreteStateSpace.gain(1.0), DiscreteStateSpace.gain(1.0))
    assert freq_response(J, [0.5]).siso()[0] == pytest.approx(0.5)


def test_process_sensitivity_equals_S_times_P(surrogate):
    P, K = surrogate
    J = freq_response(process_sensitivity(P, K), GRID512).siso()
    SP = freq_response(sensitivity(P, K), GRID512).siso() * freq_response(P, GRID512).siso()
    assert np.max(np.abs(J - SP)) < 1e-10


def test_ill_posed_loop_rejected():
    with pytest.raises(AlgebraicLoopError):
        sensitivity(DiscreteStateSpace.gain(1.0), DiscreteStateSpace.gain(-1.0))


def test_two_block_simulation_matches_closed_loop(surrogate, rng):
    P, K = surrogate
    r, f = rng.standard_normal(300), rng.standard_normal(300)
    e_two, _ = simulate_feedback(P, K, r, f)
    e_cl = simulate(sensitivity(P, K), r) - simulate(process_sensitivity(P, K), f)
    assert np.max(np.abs(e_two - e_cl)) < 1e-10 * max(1.0, np.max(np.abs(e_cl)))


# -- linf_norm ------------------------------------------------------------------

def test_linf_static_gain():
    assert linf_norm(freq_response(DiscreteStateSpace.gain(3.0))) == pytest.approx(3.0)


def test_linf_delay_is_allpass():
    assert linf_norm(freq_response(delay())) == pytest.approx(1.0)


def test_linf_first_order_lowpass_dc_gain():
    # peak at the lowest grid point approaches the DC gain 0.1 / (1 - 0.9)
    assert linf_norm(freq_response(lowpass())) == pytest.approx(1.0, rel=1e-4)


def test_linf_is_a_grid_underestimate():
    coarse = linf_norm(freq_response(lowpass(), [0.5, 1.0]))
    assert coarse <= 1.0


def test_linf_empty_grid_rejected():
    with pytest.raises(DimensionError):
        linf_norm(FrequencyResponse(np.array([]), np.zeros((0, 1, 1))))
