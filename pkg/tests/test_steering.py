import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import rk4
from swarmflow.lti import LtiSystem, TimeWindow, transition_and_gramian, window_operators
from swarmflow.steering import (
    Bridge,
    ExactCoefficientField,
    additivity_residual,
    bridge_action,
    bridge_state,
    control_at,
    endpoint_update,
    exact_coefficient,
    make_bridge_batch,
    make_bridge_sample,
)

FREE = LtiSystem.identity_channel(2)
DOUBLE_INT = LtiSystem.double_integrator()
ROT = LtiSystem.rotation2d(math.pi / 2)


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# exact coefficient and control law

def test_free_coefficient_is_average_velocity():
    z_t, z_r = np.array([0.3, -1.0]), np.array([1.1, 0.4])
    ops = window_operators(FREE, TimeWindow(0.2, 0.6))
    np.testing.assert_allclose(exact_coefficient(FREE, ops, z_t, z_r).c, (z_r - z_t) / 0.4, rtol=1e-13)


def test_free_drift_needs_no_control():
    ops = window_operators(ROT, TimeWindow(0.1, 0.8))
    z_t = np.array([0.5, 2.0])
    c = exact_coefficient(ROT, ops, z_t, ops.phi @ z_t).c
    assert np.linalg.norm(c) < 1e-14


def test_double_integrator_rest_to_rest():
    ops = window_operators(DOUBLE_INT, TimeWindow(0.0, 1.0))
    coeff = exact_coefficient(DOUBLE_INT, ops, [0.0, 0.0], [1.0, 0.0])
    np.testing.assert_allclose(coeff.c, [12.0, -6.0], rtol=1e-10)


@pytest.mark.parametrize("tau", [0.0, 0.2, 0.5, 0.9, 1.0])
def test_double_integrator_control_profile(tau):
    ops = window_operators(DOUBLE_INT, TimeWindow(0.0, 1.0))
    coeff = exact_coefficient(DOUBLE_INT, ops, [0.0, 0.0], [1.0, 0.0])
    np.testing.assert_allclose(control_at(DOUBLE_INT, coeff, tau), [12 * (1 - tau) - 6], atol=1e-9)


def test_double_integrator_energy_and_endpoint():
    ops = window_operators(DOUBLE_INT, TimeWindow(0.0, 1.0))
    coeff = exact_coefficient(DOUBLE_INT, ops, [0.0, 0.0], [1.0, 0.0])
    energy, _ = quad(lambda s: float(control_at(DOUBLE_INT, coeff, s)[0]) ** 2, 0.0, 1.0)
    assert energy == pytest.approx(12.0, rel=1e-9)
    assert coeff.c @ ops.gramian @ coeff.c == pytest.approx(12.0, rel=1e-9)
    f = lambda s, z: DOUBLE_INT.A @ z + DOUBLE_INT.B @ control_at(DOUBLE_INT, coeff, min(s, 1.0))
    np.testing.assert_allclose(rk4(f, [0.0, 0.0], 0.0, 1.0, 400), [1.0, 0.0], atol=1e-10)


def test_zero_coefficient_zero_control():
    ops = window_operators(ROT, TimeWindow(0.0, 0.5))
    coeff = exact_coefficient(ROT, ops, [1.0, 0.0], ops.phi @ [1.0, 0.0])
    assert np.all(np.abs(control_at(ROT, coeff, 0.3)) < 1e-14)


def test_free_control_is_constant():
    ops = window_operators(FREE, TimeWindow(0.1, 0.9))
    coeff = exact_coefficient(FREE, ops, [0.0, 0.0], [2.0, -1.0])
    for tau in (0.1, 0.4, 0.9):
        np.testing.assert_allclose(control_at(FREE, coeff, tau), coeff.c, atol=1e-15)


def test_control_outside_window_rejected():
    ops = window_operators(FREE, TimeWindow(0.2, 0.6))
    coeff = exact_coefficient(FREE, ops, [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        control_at(FREE, coeff, 0.7)


def test_minimum_energy_against_admissible_perturbation():
    """Adding an input orthogonal to the reachable directions keeps the
    endpoint and costs exactly its own energy."""
    ops = window_operators(DOUBLE_INT, TimeWindow(0.0, 1.0))
    coeff = exact_coefficient(DOUBLE_INT, ops, [0.0, 0.0], [1.0, 0.0])
    eps = 0.7

    def u(s):
        return float(control_at(DOUBLE_INT, coeff, min(s, 1.0))[0]) + eps * (6 * s * s - 6 * s + 1)

    f = lambda s, z: DOUBLE_INT.A @ z + DOUBLE_INT.B[:, 0] * u(s)
    np.testing.assert_allclose(rk4(f, [0.0, 0.0], 0.0, 1.0, 400), [1.0, 0.0], atol=1e-9)
    energy, _ = quad(lambda s: u(s) ** 2, 0.0, 1.0)
    assert energy == pytest.approx(12.0 + eps**2 / 5, rel=1e-9)
    assert energy > 12.0


# endpoint update

def test_endpoint_update_with_zero_coefficient_is_drift():
    ops = window_operators(ROT, TimeWindow(0.0, 0.3))
    z = np.array([0.4, -0.2])
    np.testing.assert_array_equal(endpoint_update(ops, z, np.zeros(2)), ops.phi @ z)


def test_free_endpoint_update_reaches_target():
    ops = window_operators(FREE, TimeWindow(0.25, 0.75))
    z0, z1 = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    np.testing.assert_allclose(endpoint_update(ops, z0, (z1 - z0) / 0.5), z1, atol=1e-14)


def _random_system(rng):
    while True:
        d = int(rng.integers(1, 5))
        m = int(rng.integers(1, d + 1))
        sys = LtiSystem(rng.standard_normal((d, d)), rng.standard_normal((d, m)))
        if sys.controllable:
            return sys


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 0.8), length=st.floats(0.05, 0.2))
def test_round_trip_property(seed, t, length):
    rng = np.random.default_rng(seed)
    sys = _random_system(rng)
    assume(np.linalg.cond(transition_and_gramian(sys, length)[1]) < 1e12)
    ops = window_operators(sys, TimeWindow(t, t + length))
    z_t, z_r = rng.standard_normal((2, sys.d))
    z = endpoint_update(ops, z_t, exact_coefficient(sys, ops, z_t, z_r).c)
    # a backward-stable solve leaves a residual of order eps * cond(W)
    bound = max(1e-12, 2e-13 * np.linalg.cond(ops.gramian))
    assert np.linalg.norm(z - z_r) <= bound * (1 + np.linalg.norm(z_r))


@pytest.mark.parametrize("sys", [FREE, DOUBLE_INT, ROT, LtiSystem.rotation3d(1.0, 0.5)],
                         ids=lambda s: s.name)
def test_round_trip_presets(sys):
    rng = np.random.default_rng(21)
    for _ in range(200):
        t = rng.uniform(0.0, 0.999)
        r = rng.uniform(t + 1e-3, 1.0)
        ops = window_operators(sys, TimeWindow(t, r))
        z_t, z_r = rng.standard_normal((2, sys.d))
        z = endpoint_update(ops, z_t, exact_coefficient(sys, ops, z_t, z_r).c)
        assert np.linalg.norm(z - z_r) <= 1e-9 * np.linalg.norm(z_r)


def test_round_trip_matches_ode_integration():
    sys = ROT
    ops = window_operators(sys, TimeWindow(0.2, 0.7))
    coeff = exact_coefficient(sys, ops, [1.0, 0.5], [-0.3, 2.0])
    f = lambda s, z: sys.A @ z + sys.B @ control_at(sys, coeff, min(max(s, 0.2), 0.7))
    np.testing.assert_allclose(rk4(f, [1.0, 0.5], 0.2, 0.7, 400), [-0.3, 2.0], atol=1e-9)


# bridges

def test_bridge_endpoints():
    rng = np.random.default_rng(2)
    for sys in (FREE, DOUBLE_INT, ROT):
        z0, z1 = rng.standard_normal((2, sys.d))
        np.testing.assert_allclose(bridge_state(sys, z0, z1, 0.0), z0, atol=1e-9)
        np.testing.assert_allclose(bridge_state(sys, z0, z1, 1.0), z1, atol=1e-9)


@pytest.mark.parametrize("tau", [0.0, 0.3, 0.5, 1.0])
def test_free_bridge_is_linear_interpolation(tau):
    z0, z1 = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    np.testing.assert_allclose(bridge_state(FREE, z0, z1, tau), (1 - tau) * z0 + tau * z1, atol=1e-14)
    np.testing.assert_allclose(bridge_action(FREE, z0, z1, tau), z1 - z0, atol=1e-14)


def test_double_integrator_bridge_midpoint():
    # rest-to-rest profile x = 3 s^2 - 2 s^3, v = 6 s - 6 s^2 under u = 6 - 12 s
    u = lambda s: np.array([6.0 - 12.0 * s])
    f = lambda s, z: DOUBLE_INT.A @ z + DOUBLE_INT.B @ u(s)
    mid = rk4(f, [0.0, 0.0], 0.0, 0.5, 200)
    np.testing.assert_allclose(bridge_state(DOUBLE_INT, [0.0, 0.0], [1.0, 0.0], 0.5), mid, atol=1e-8)
    np.testing.assert_allclose(mid, [0.5, 1.5], atol=1e-12)


def test_zero_action_bridge():
    z0 = np.array([0.3, 0.9])
    z1 = transition_and_gramian(ROT, 1.0)[0] @ z0
    for t in (0.0, 0.4, 1.0):
        assert np.linalg.norm(bridge_action(ROT, z0, z1, t)) < 1e-14


@pytest.mark.parametrize("sys", [DOUBLE_INT, ROT, LtiSystem.rotation3d(1.0, 0.7)], ids=lambda s: s.name)
def test_bridge_action_finite_difference(sys):
    rng = np.random.default_rng(9)
    z0, z1 = rng.standard_normal((2, sys.d))
    br = Bridge(sys, z0, z1)
    tau = 0.37
    errs = []
    for h in (1e-2, 5e-3):
        fd = (br.state(tau + h) - br.state(tau - h)) / (2 * h) - sys.A @ br.state(tau)
        errs.append(np.linalg.norm(fd - br.action(tau)))
    assert errs[1] < 1e-4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_make_bridge_sample_free_example():
    w = TimeWindow(0.25, 0.75)
    s = make_bridge_sample(FREE, [0.0, 0.0], [1.0, 1.0], w)
    np.testing.assert_allclose(s.z_t, [0.25, 0.25], atol=1e-15)
    np.testing.assert_allclose(s.z_r, [0.75, 0.75], atol=1e-15)
    np.testing.assert_allclose(s.bridge_action, [1.0, 1.0], atol=1e-15)


def test_make_bridge_sample_full_window():
    s = make_bridge_sample(ROT, [0.2, 0.1], [-1.0, 0.4], TimeWindow(0.0, 1.0))
    np.testing.assert_allclose(s.z_t, [0.2, 0.1], atol=1e-12)
    np.testing.assert_allclose(s.z_r, [-1.0, 0.4], atol=1e-12)


def test_rotation_bridge_against_closed_form():
    omega = math.pi / 2
    theta0 = 0.6
    z0 = np.array([math.cos(theta0), math.sin(theta0)])
    z1 = z0.copy()
    # B = I and rotations are orthogonal, so W(0, s) = s I
    lam = z1 - rotation(omega) @ z0
    for t, r in [(0.1, 0.4), (0.3, 0.95)]:
        s = make_bridge_sample(ROT, z0, z1, TimeWindow(t, r))
        ref = lambda tau: rotation(omega * tau) @ z0 + tau * rotation(omega * (1 - tau)).T @ lam
        np.testing.assert_allclose(s.z_t, ref(t), atol=1e-13)
        np.testing.assert_allclose(s.z_r, ref(r), atol=1e-13)
        np.testing.assert_allclose(s.bridge_action, rotation(omega * (1 - t)).T @ lam, atol=1e-13)


def test_batch_matches_single_samples():
    rng = np.random.default_rng(4)
    z0, z1 = rng.standard_normal((2, 6, 2))
    t = rng.uniform(0, 0.5, 6)
    r = t + rng.uniform(0.01, 0.5, 6)
    batch = make_bridge_batch(ROT, z0, z1, t, r)
    assert len(batch) == 6
    for i in range(6):
        s = make_bridge_sample(ROT, z0[i], z1[i], TimeWindow(t[i], r[i]))
        np.testing.assert_allclose(batch.z_t[i], s.z_t, atol=1e-13)
        np.testing.assert_allclose(batch.z_r[i], s.z_r, atol=1e-13)
        np.testing.assert_allclose(batch.action[i], s.bridge_action, atol=1e-13)
        np.testing.assert_allclose(batch[i].z_t, s.z_t, atol=1e-13)


# two-window additivity

def test_additivity_free_example():
    rng = np.random.default_rng(0)
    z0, z1 = rng.standard_normal((2, 2))
    br = Bridge(FREE, z0, z1)
    assert additivity_residual(FREE, br.state(0.1), br.state(0.5), br.state(0.9), 0.1, 0.5, 0.9) <= 1e-10


def test_additivity_degenerate_split_continuity():
    z0, z1 = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    br = Bridge(ROT, z0, z1)
    t, r = 0.2, 0.8
    res = [additivity_residual(ROT, br.state(t), br.state(t + e), br.state(r), t, t + e, r)
           for e in (1e-2, 1e-3, 1e-4)]
    assert max(res) <= 1e-10


def test_additivity_rotation_sweep():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        z0, z1 = rng.standard_normal((2, 2))
        t, s, r = np.sort(rng.uniform(0, 1, 3))
        if s - t < 0.01 or r - s < 0.01:
            continue
        br = Bridge(ROT, z0, z1)
        worst = max(worst, additivity_residual(ROT, br.state(t), br.state(s), br.state(r), t, s, r))
    assert worst <= 1e-8


def test_additivity_off_bridge_intermediate():
    """The decomposition holds for any intermediate state, not only bridge states."""
    rng = np.random.default_rng(8)
    z_t, z_s, z_r = rng.standard_normal((3, 2))
    assert additivity_residual(DOUBLE_INT, z_t, z_s, z_r, 0.1, 0.45, 0.9) <= 1e-8


# vanishing-window limit and the differential identity

def test_vanishing_window_converges_to_velocity():
    z0, z1, q = np.array([0.0, 1.0]), np.array([2.0, 0.0]), np.array([1.0, -1.0])
    curve = lambda s: z0 + s * (z1 - z0) + s * (1 - s) * q
    t = 0.3
    vel = z1 - z0 + (1 - 2 * t) * q
    errs = []
    for h in (1e-2, 1e-3, 1e-4):
        ops = window_operators(FREE, TimeWindow(t, t + h, min_gap=0.0))
        errs.append(np.linalg.norm(exact_coefficient(FREE, ops, curve(t), curve(t + h)).c - vel))
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(10.0, rel=0.05)


def test_free_differential_identity_closed_form():
    # c(t) = (z_r - z_t)/(r - t) gives dc/dt = (c - v)/(r - t) along the line
    z0, z1 = np.array([1.0, -1.0]), np.array([0.0, 2.0])
    v = z1 - z0
    t, r = 0.3, 0.8
    z_t, z_r = z0 + t * v, z0 + r * v
    c = (z_r - z_t) / (r - t)
    c_dot = (c - v) / (r - t)
    res = (r - t) * c_dot - c + v
    assert np.linalg.norm(res) <= 1e-10


@pytest.mark.parametrize("sys", [FREE, DOUBLE_INT, ROT], ids=lambda s: s.name)
def test_exact_field_jvp_against_finite_differences(sys):
    rng = np.random.default_rng(12)
    z0, z1 = rng.standard_normal((2, sys.d))
    field = ExactCoefficientField(sys, z0, z1)
    z, dz = rng.standard_normal((2, sys.d))
    t, r, dt, dr = 0.2, 0.75, 0.7, -0.4
    _, deriv = field.jvp(z, t, r, dz, dt, dr)
    h = 1e-6
    fd = (field.forward(z + h * dz, t + h * dt, r + h * dr)
          - field.forward(z - h * dz, t - h * dt, r - h * dr)) / (2 * h)
    np.testing.assert_allclose(deriv, fd, atol=1e-6 * (1 + np.linalg.norm(fd)))
