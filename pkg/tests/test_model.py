import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dercfr import autodiff as ad
from dercfr.autodiff import Tape
from dercfr.errors import ConfigurationError, ContractViolation, ParseError
from dercfr.losses import LossInputs, loss_regression
from dercfr.model import (ModelSpec, DeRCFRModel, build_model, contribution_profile, forward_all,
                          load_model, predict_outcomes, save_model)
from dercfr.trainer import PRESETS, Hyperparams

SMALL = Hyperparams(d_R=2, d_y=2, d_t=1, h_R=5, h_y=4, h_t=3, batch_norm=True)


def small_model(m=4, n=10, binary=True, hp=SMALL, seed=0):
    t = np.array([0, 1] * (n // 2))
    return build_model(hp, m, t, binary, seed), t


def zero_model(m, width, rep_dim, depth=1):
    spec = ModelSpec(input_dim=m, rep_depth=depth, rep_width=width, rep_dim=rep_dim, y_depth=1, y_width=2,
                     t_depth=1, t_width=2, batch_norm=False, rep_normalize=False, binary_outcome=True)
    return DeRCFRModel(spec, np.array([0, 1]), rng=None)


def test_syn_input_dim():
    from dercfr.data import SyntheticConfig, generate_synthetic
    ds = generate_synthetic(SyntheticConfig(8, 8, 8, 2, n=50, seed=1))
    model = build_model(PRESETS["syn"], ds.m, ds.t, True, 0)
    assert model.spec.input_dim == 26
    assert model.reps["I"].weights[0].shape == (26, 256)


def test_initial_weight_sums():
    model, t = small_model(n=10)
    omega = model.omega().value[:, 0]
    for k in (0, 1):
        assert omega[t == k].sum() == pytest.approx(1.0, abs=1e-9)


def test_same_seed_same_parameters():
    a, _ = small_model(seed=3)
    b, _ = small_model(seed=3)
    c, _ = small_model(seed=4)
    assert all(np.array_equal(p.value, q.value) for p, q in zip(a.parameters(), b.parameters()))
    assert not all(np.array_equal(p.value, q.value) for p, q in zip(a.parameters(), c.parameters()))


def test_empty_arm_is_configuration_error():
    with pytest.raises(ConfigurationError):
        build_model(SMALL, 3, np.zeros(6, dtype=int), True, 0)


def test_forward_shapes(rng):
    model, _ = small_model(m=4)
    X = rng.normal(size=(3, 4))
    out = forward_all(model, X)
    for key in ("I", "C", "A"):
        assert out[key].shape == (3, 5)
    for key in ("t_hat", "y_A", "y0", "y1"):
        assert out[key].shape == (3, 1)
    assert model.heads["h0"].spec.input_dim == 10
    assert np.all((out["t_hat"].value > 0) & (out["t_hat"].value < 1))
    with pytest.raises(ContractViolation):
        forward_all(model, rng.normal(size=(3, 5)))


def test_continuous_heads_are_linear(rng):
    model, _ = small_model(binary=False)
    for net in model.heads.values():
        net.biases[-1].value[...] = 7.0
        net.weights[-1].value[...] = 0.0
    out = forward_all(model, rng.normal(size=(4, 4)))
    np.testing.assert_array_equal(out["y0"].value, 7.0)
    assert np.all((out["t_hat"].value > 0) & (out["t_hat"].value < 1))


def test_rep_normalize_unit_rows(rng):
    hp = Hyperparams(d_R=2, d_y=1, d_t=1, h_R=6, h_y=4, h_t=3, rep_normalize=True)
    model, _ = small_model(hp=hp)
    out = forward_all(model, rng.normal(size=(7, 4)), training=True)
    for key in ("I", "C", "A"):
        np.testing.assert_allclose(np.linalg.norm(out[key].value, axis=1), 1.0, atol=1e-9)


def test_zero_parameters_give_one_half():
    model = zero_model(m=3, width=4, rep_dim=2)
    out = forward_all(model, np.random.default_rng(0).normal(size=(5, 3)))
    for key in ("t_hat", "y_A", "y0", "y1"):
        np.testing.assert_array_equal(out[key].value, 0.5)


def test_architecture_symmetry():
    model, _ = small_model()
    shapes = [[p.shape for p in model.reps[k].parameters()] for k in ("I", "C", "A")]
    assert shapes[0] == shapes[1] == shapes[2]


# ----------------------------------------------------------------- contributions

def test_contribution_identity_single_layer():
    model = zero_model(m=4, width=4, rep_dim=3)
    for net in model.reps.values():
        net.weights[0].value[...] = np.eye(4)
    prof = contribution_profile(model, layers=1)
    np.testing.assert_allclose(prof.w_I, np.full(4, 0.25))


def test_contribution_hand_product():
    model = zero_model(m=2, width=2, rep_dim=1)
    for net in model.reps.values():
        net.weights[0].value[...] = [[1, 0], [0, -2]]
        net.weights[1].value[...] = [[-1], [1]]
    prof = contribution_profile(model, layers=2)
    np.testing.assert_allclose(prof.w_C, [1.0, 2.0])
    assert prof.layers == 2
    assert contribution_profile(model, "all").layers == 2


def test_contribution_zero_weights():
    prof = contribution_profile(zero_model(m=3, width=4, rep_dim=2), "all")
    np.testing.assert_array_equal(prof.w_A, np.zeros(3))


def test_contribution_layer_bounds():
    model = zero_model(m=3, width=4, rep_dim=2)
    with pytest.raises(ConfigurationError):
        contribution_profile(model, 0)
    with pytest.raises(ConfigurationError):
        contribution_profile(model, 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_property_contributions_nonnegative(seed):
    model, _ = small_model(seed=seed)
    prof = contribution_profile(model, "all")
    for v in (prof.w_I, prof.w_C, prof.w_A):
        assert np.all(v >= 0) and np.all(np.isfinite(v))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-700, 700)))
def test_property_omega_positive(rho):
    model, _ = small_model(n=8)
    model.rho.value[:, 0] = rho
    assert np.all(model.omega().value >= 0)
    # softplus stays strictly positive until it underflows far below any trained value
    assert np.all(model.omega().value[rho > -700] > 0)


# ----------------------------------------------------------------- head separation

def test_head_separation(rng):
    model, t = small_model(m=4, n=10, binary=False)
    X = rng.normal(size=(10, 4))
    y = rng.normal(size=10)
    inputs = LossInputs(t, y, binary=False)
    h0, h1 = model.heads["h0"].parameters(), model.heads["h1"].parameters()
    for arm, own, other in ((0, h0, h1), (1, h1, h0)):
        tape = Tape()
        out = forward_all(model, X, tape, training=True, factual_arms=inputs.idx)
        omega = ad.as_tensor(np.where(t == arm, 1.0, 0.0))
        loss = loss_regression(out, inputs, omega)
        g_own = tape.gradients(loss, own)
        g_other = tape.gradients(loss, other)
        assert any(np.any(g != 0) for g in g_own)
        assert all(np.all(g == 0) for g in g_other)


# ----------------------------------------------------------------- serialization

def test_save_load_round_trip(tmp_path, rng):
    model, _ = small_model()
    X = rng.normal(size=(6, 4))
    forward_all(model, X, training=True)  # move running statistics off their defaults
    path = tmp_path / "model.bin"
    save_model(model, path, {"note": "x", "seed": 3})
    loaded, extra = load_model(path)
    assert extra == {"note": "x", "seed": 3}
    assert loaded.spec == model.spec
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert a.name == b.name and np.array_equal(a.value, b.value)
    for name in model.reps:
        for a, b in zip(model.reps[name].running_var, loaded.reps[name].running_var):
            assert np.array_equal(a, b)
    for a, b in zip(predict_outcomes(model, X), predict_outcomes(loaded, X)):
        assert np.array_equal(a, b)
    assert path.read_bytes()[:6] == b"DERCFR"


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a model at all")
    with pytest.raises(ParseError):
        load_model(path)
