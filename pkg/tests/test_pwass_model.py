import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from errors import ConfigError, DimensionMismatch, IndexOutOfRange
from pwass_model import (
    PwaFunction, PwassModel, Trajectory, evaluate, load_model, model_from_dict,
    model_to_dict, propagate, region_index, region_matrices, save_model, sdofs_model,
    simulate, step_state, transition_direct,
)


def noise_free_sdofs():
    base = sdofs_model()
    return PwassModel(base.Phi, base.phi, base.F, base.B, base.C,
                      np.zeros((2, 2)), np.zeros((1, 1)), base.f)


def three_state_model():
    f = PwaFunction([-math.inf, -0.5, 0.7, math.inf], [0.2, -0.1, 0.4], [0.05, 0.0, -0.3])
    return PwassModel(
        Phi=[0.9, 0.1, 0.0],
        phi=[0.8, 0.05],
        F=[[0.0, 0.1, 0.7]],
        B=[[0.0, 1.0], [0.5, 0.0], [0.0, 0.2]],
        C=[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        Q=0.02 * np.eye(3),
        R=0.1 * np.eye(2),
        f=f,
    )


# ─────────────────────────────────────────────────────────────
# Regions
# ─────────────────────────────────────────────────────────────

def test_region_index_sdofs():
    f = sdofs_model().f
    assert region_index(f, 0.0) == 1
    assert region_index(f, -1.0) == 0     # boundary belongs to the lower region
    assert region_index(f, 1.0) == 1
    assert region_index(f, 3.0) == 2
    assert region_index(f, -1e9) == 0


def test_region_index_vectorized():
    f = sdofs_model().f
    np.testing.assert_array_equal(region_index(f, np.array([-2.0, -1.0, 0.5, 1.0, 1.5])), [0, 0, 1, 1, 2])


def test_region_matrices_sdofs():
    model = sdofs_model()
    A, b = region_matrices(model, 1)
    np.testing.assert_allclose(A, [[1.0, 0.01], [-0.05, 0.99]], atol=1e-15)
    np.testing.assert_allclose(b, [0.0, 0.0], atol=1e-15)

    A, b = region_matrices(model, 0)
    np.testing.assert_allclose(A, [[1.0, 0.01], [-0.5, 0.99]], atol=1e-15)
    np.testing.assert_allclose(b, [0.0, -0.45], atol=1e-15)

    A, b = region_matrices(model, 2)
    np.testing.assert_allclose(A, [[1.0, 0.01], [-0.5, 0.99]], atol=1e-15)
    np.testing.assert_allclose(b, [0.0, 0.45], atol=1e-15)


def test_region_matrices_out_of_range():
    with pytest.raises(IndexOutOfRange):
        region_matrices(sdofs_model(), 3)
    with pytest.raises(IndexError):
        region_matrices(sdofs_model(), -1)


def test_single_region_model():
    f = PwaFunction([-math.inf, math.inf], [0.3], [0.1])
    model = PwassModel([1.0, 0.1], [0.9], np.zeros((0, 2)), [[0.0], [1.0]], [[1.0, 0.0]],
                       np.eye(2), [[1.0]], f)
    A, b = region_matrices(model, 0)
    np.testing.assert_allclose(A, [[1.0, 0.1], [0.3, 0.9]])
    np.testing.assert_allclose(b, [0.0, 0.1])
    assert region_index(f, 1e6) == 0


def test_sdofs_spring_is_continuous():
    f = sdofs_model().f
    assert evaluate(f, 0.0) == 0.0
    for l in (-1.0, 1.0):
        left = f.slopes[region_index(f, l - 1e-12)] * l + f.intercepts[region_index(f, l - 1e-12)]
        right = f.slopes[region_index(f, l + 1e-12)] * l + f.intercepts[region_index(f, l + 1e-12)]
        assert left == pytest.approx(right, abs=1e-15)


def test_pwa_function_validation():
    with pytest.raises(ValueError):
        PwaFunction([-1.0, 0.0, math.inf], [1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        PwaFunction([-math.inf, 1.0, 0.0, math.inf], [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        PwaFunction([-math.inf, 0.0, math.inf], [1.0], [0.0])


def test_model_validation():
    base = sdofs_model()
    with pytest.raises(DimensionMismatch):
        PwassModel(base.Phi, base.phi, base.F, base.B, [[1.0, 0.0, 0.0]], base.Q, base.R, base.f)
    with pytest.raises(ValueError):
        PwassModel(base.Phi, base.phi, base.F, base.B, base.C, [[1.0, 0.5], [0.0, 1.0]], base.R, base.f)
    with pytest.raises(ValueError):
        PwassModel(base.Phi, base.phi, base.F, base.B, base.C, base.Q, [[-1.0]], base.f)


# ─────────────────────────────────────────────────────────────
# Transition
# ─────────────────────────────────────────────────────────────

def test_step_state_examples():
    model = sdofs_model()
    np.testing.assert_array_equal(step_state(model, [0.0, 0.0], [0.0], [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(step_state(model, [2.0, 0.0], [0.0], [0.0, 0.0]), [2.0, -0.55], atol=1e-15)


def test_step_state_is_additive_in_noise():
    model = sdofs_model()
    w = np.array([0.3, -0.7])
    base = step_state(model, [0.4, 1.0], [2.0], [0.0, 0.0])
    np.testing.assert_allclose(step_state(model, [0.4, 1.0], [2.0], w), base + w, atol=1e-15)


def test_step_state_dimension_check():
    with pytest.raises(DimensionMismatch):
        step_state(sdofs_model(), [0.0, 0.0, 0.0], [0.0], [0.0, 0.0])


@given(
    hnp.arrays(np.float64, 3, elements=st.floats(-3, 3)),
    hnp.arrays(np.float64, 2, elements=st.floats(-3, 3)),
    hnp.arrays(np.float64, 3, elements=st.floats(-1, 1)),
)
def test_affine_form_matches_direct_transition(x, u, w):
    model = three_state_model()
    np.testing.assert_allclose(step_state(model, x, u, w), transition_direct(model, x, u, w),
                               rtol=1e-12, atol=1e-12)


def test_propagate_matches_step_state():
    model = three_state_model()
    rng = np.random.default_rng(5)
    X = rng.normal(0.0, 1.5, (50, 3))
    W = rng.normal(0.0, 0.1, (50, 3))
    u = np.array([0.3, -0.2])
    expected = np.stack([step_state(model, x, u, w) for x, w in zip(X, W)])
    np.testing.assert_allclose(propagate(model, X, u, W), expected, rtol=1e-13, atol=1e-13)


# ─────────────────────────────────────────────────────────────
# Simulation
# ─────────────────────────────────────────────────────────────

def test_simulate_noise_free_fixed_point():
    traj = simulate(noise_free_sdofs(), [0.0, 0.0], np.zeros((20, 1)), 0)
    assert traj.T == 21
    np.testing.assert_array_equal(traj.states, np.zeros((21, 2)))
    np.testing.assert_array_equal(traj.measurements, np.zeros((21, 1)))


def test_simulate_noise_free_one_step():
    traj = simulate(noise_free_sdofs(), [2.0, 0.0], np.zeros((1, 1)), 0)
    np.testing.assert_allclose(traj.states[1], [2.0, -0.55], atol=1e-15)


def test_simulate_is_deterministic():
    model = sdofs_model()
    inputs = np.random.default_rng(1).normal(0.0, 5.0, (99, 1))
    a = simulate(model, [0.5, -0.5], inputs, 42)
    b = simulate(model, [0.5, -0.5], inputs, 42)
    c = simulate(model, [0.5, -0.5], inputs, 43)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.measurements, b.measurements)
    assert not np.array_equal(a.states, c.states)


def test_simulate_accepts_seed_sequence():
    model = sdofs_model()
    ss = np.random.SeedSequence(9, spawn_key=(3,))
    a = simulate(model, [0.0, 0.0], np.zeros((10, 1)), ss)
    b = simulate(model, [0.0, 0.0], np.zeros((10, 1)), np.random.SeedSequence(9, spawn_key=(3,)))
    np.testing.assert_array_equal(a.states, b.states)


def test_simulate_follows_step_state():
    model = three_state_model()
    traj = simulate(model, [0.1, 0.2, 0.3], np.ones((30, 2)), 7)
    # with the noise recovered from the states, every step is one step_state call
    for t in range(traj.T - 1):
        noiseless = step_state(model, traj.states[t], traj.inputs[t], np.zeros(3))
        w = traj.states[t + 1] - noiseless
        np.testing.assert_allclose(step_state(model, traj.states[t], traj.inputs[t], w),
                                   traj.states[t + 1], atol=1e-12)
    assert traj.measurements.shape == (31, 2)


def test_trajectory_length_check():
    with pytest.raises(DimensionMismatch):
        Trajectory(np.zeros((5, 2)), np.zeros((5, 1)), np.zeros((5, 1)))


# ─────────────────────────────────────────────────────────────
# Model files
# ─────────────────────────────────────────────────────────────

def test_model_file_round_trip(tmp_path):
    for model in (sdofs_model(), three_state_model()):
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(str(path))
        for name in ("Phi", "phi", "F", "B", "C", "Q", "R", "A_stack", "b_stack"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(model, name))
        np.testing.assert_array_equal(loaded.f.breakpoints, model.f.breakpoints)


def test_model_file_uses_inf_literals(tmp_path):
    path = tmp_path / "model.json"
    save_model(sdofs_model(), path)
    data = json.loads(path.read_text())
    assert data["breakpoints"][0] == "-inf"
    assert data["breakpoints"][-1] == "inf"


def test_load_builtin_by_name():
    assert load_model("sdofs").n_regions == 3


def test_load_model_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_model(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_model(str(bad))
    data = model_to_dict(sdofs_model())
    del data["Q"]
    with pytest.raises(ConfigError):
        model_from_dict(data)
    data = model_to_dict(sdofs_model())
    data["slopes"] = ["fast", 1.0, 2.0]
    with pytest.raises(ConfigError):
        model_from_dict(data)
