import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import RegularGridInterpolator
from scipy.special import expit

from mmnerf.diffmath import ParameterStore, check_gradients, ops
from mmnerf.errors import ContractError, OutOfBoundsError
from mmnerf.field import (FeatureField, FieldPair, ModelConfig, SceneModel, encode_direction,
                          materialize_dense, query_heads, resolution_for_voxels, sample_field)

BOX = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def _field(res=(4, 5, 6), channels=3, mode="dense", rank=2, seed=0):
    fld = FeatureField("f", *BOX, res, channels, mode, rank)
    store = ParameterStore()
    fld.init(store, np.random.default_rng(seed), scale=1.0)
    return fld, store


def test_constant_dense_field():
    fld, store = _field()
    store.values["f.grid"][...] = 0.7
    pts = np.random.default_rng(1).uniform(-0.99, 0.99, size=(50, 3))
    np.testing.assert_allclose(sample_field(fld, store, pts).value, 0.7, rtol=1e-14)


def test_midpoint_between_adjacent_voxel_centers():
    fld, store = _field(res=(4, 4, 4), channels=1)
    grid = np.zeros((4, 4, 4, 1))
    grid[2, 1, 1] = 1.0
    store.set("f.grid", grid.reshape(-1, 1))
    cx = fld.voxel_centers(0)
    y, z = fld.voxel_centers(1)[1], fld.voxel_centers(2)[1]
    mid = [[(cx[1] + cx[2]) / 2, y, z]]
    assert sample_field(fld, store, mid).value[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_voxel_center_returns_stored_value():
    fld, store = _field()
    grid = store["f.grid"].reshape(4, 5, 6, 3)
    i, j, k = 2, 3, 1
    p = [[fld.voxel_centers(0)[i], fld.voxel_centers(1)[j], fld.voxel_centers(2)[k]]]
    np.testing.assert_allclose(sample_field(fld, store, p).value[0], grid[i, j, k], rtol=1e-13, atol=1e-15)


def test_cp_rank_one_product():
    fld, store = _field(res=(3, 3, 3), channels=2, mode="cp", rank=1)
    store.values["f.fx"][...] = 2.0
    store.values["f.fy"][...] = 3.0
    store.values["f.fz"][...] = 0.5
    out = sample_field(fld, store, [[0.1, -0.3, 0.4]]).value
    np.testing.assert_allclose(out, [[3.0, 3.0]], rtol=1e-15)


def test_cp_dense_agree_at_voxel_centers():
    cp, store = _field(res=(4, 3, 5), channels=3, mode="cp", rank=4, seed=7)
    dense_vals = materialize_dense(cp, store)
    dense = FeatureField("d", *BOX, (4, 3, 5), 3, "dense")
    store.add("d.grid", dense_vals.reshape(-1, 3))
    g = np.stack(np.meshgrid(*(cp.voxel_centers(a) for a in range(3)), indexing="ij"), -1).reshape(-1, 3)
    np.testing.assert_allclose(sample_field(cp, store, g).value, sample_field(dense, store, g).value,
                               rtol=1e-12, atol=1e-14)


def test_auto_mode_switches_to_cp_for_large_volumes():
    assert FeatureField("a", *BOX, (64, 64, 64), mode="auto").mode == "dense"
    assert FeatureField("b", *BOX, (128, 128, 128), mode="auto").mode == "cp"


def test_large_voxel_counts_map_to_cubes():
    assert resolution_for_voxels(16777248) == (256, 256, 256)
    assert resolution_for_voxels(134217984) == (512, 512, 512)


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.floats(-1.5, 1.5)] * 3))
def test_trilinear_partition_of_unity(p):
    fld, _ = _field(res=(7, 3, 5))
    idx, w = fld.trilinear_weights([p])
    assert abs(w.sum() - 1.0) < 1e-12
    assert (w >= 0).all()


def test_continuity_across_voxel_boundary():
    fld, store = _field(seed=3)
    x_edge = -1.0 + 2.0 / 4 * 2  # boundary between voxels 1 and 2 on x
    a = sample_field(fld, store, [[x_edge - 5e-8, 0.1, 0.2]]).value
    b = sample_field(fld, store, [[x_edge + 5e-8, 0.1, 0.2]]).value
    # |grad| <= max jump between neighbours / voxel size
    bound = 2 * np.abs(store["f.grid"]).max() / (2.0 / 4)
    assert np.abs(a - b).max() <= 1e-7 * bound


def test_matches_scipy_linear_interpolation_inside_center_hull():
    fld, store = _field(res=(5, 4, 6), channels=2, seed=4)
    grid = store["f.grid"].reshape(5, 4, 6, 2)
    centers = [fld.voxel_centers(a) for a in range(3)]
    rng = np.random.default_rng(5)
    pts = np.stack([rng.uniform(c[0], c[-1], 200) for c in centers], axis=1)
    ref = RegularGridInterpolator(centers, grid, method="linear")(pts)
    np.testing.assert_allclose(sample_field(fld, store, pts).value, ref, rtol=1e-12, atol=1e-13)


def test_strict_mode_rejects_outside_points():
    fld, store = _field()
    with pytest.raises(OutOfBoundsError):
        sample_field(fld, store, [[0.0, 1.5, 0.0]], strict=True)


@pytest.mark.parametrize("mode", ["dense", "cp"])
def test_sample_field_gradients(mode):
    fld, store = _field(res=(3, 4, 3), channels=2, mode=mode, rank=2, seed=8)
    pts = np.random.default_rng(9).uniform(-1, 1, size=(6, 3))
    res = check_gradients(lambda tape: ops.square(sample_field(fld, store, pts, tape)), store)
    assert res.passed, res


def test_field_pair_validation():
    a = FeatureField("c", *BOX, (8, 8, 8))
    with pytest.raises(ContractError):
        FieldPair(FeatureField("c", *BOX, (16, 16, 16)), FeatureField("f", *BOX, (8, 8, 8)))
    with pytest.raises(ContractError):
        FieldPair(a, FeatureField("f", (-2, -1, -1), (1, 1, 1), (8, 8, 8)))
    FieldPair(a, FeatureField("f", *BOX, (16, 16, 16)))


class TestEncodeDirection:
    def test_passthrough_when_no_frequencies(self):
        np.testing.assert_array_equal(encode_direction([0.0, 0.0, 1.0], 0).value, [0, 0, 1])

    def test_single_frequency_along_x(self):
        out = encode_direction([1.0, 0.0, 0.0], 1).value
        np.testing.assert_allclose(out, [1, 0, 0, 0, 0, 0, -1, 1, 1], atol=1e-15)

    def test_length_and_bounds(self):
        d = np.random.default_rng(0).normal(size=(20, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        out = encode_direction(d, 4).value
        assert out.shape == (20, 27)
        assert np.abs(out).max() <= 1.0

    def test_non_unit_rejected(self):
        with pytest.raises(ContractError):
            encode_direction([1.0, 1.0, 0.0], 2)

    def test_gradient_through_encoding(self):
        store = ParameterStore()
        d = np.random.default_rng(1).normal(size=(4, 3))
        store.add("d", d / np.linalg.norm(d, axis=1, keepdims=True))
        res = check_gradients(lambda tape: encode_direction(store.var("d", tape), 3, check_unit=False), store)
        assert res.passed


def _small_model(seed=0):
    cfg = ModelConfig(coarse_resolution=(3, 3, 3), fine_resolution=(4, 4, 4), channels=4,
                      hidden_width=5, hidden_layers=2, n_freqs=1)
    return SceneModel.create(cfg, seed)


def test_zero_parameter_heads():
    model = _small_model()
    for v in model.store.values.values():
        v[...] = 0.0
    sigma, rgb, xs = query_heads(model, [[0.1, 0.2, 0.3]], [[0.0, 0.0, -1.0]])
    assert sigma.value[0] == pytest.approx(np.log(2.0), abs=1e-15)
    np.testing.assert_array_equal(rgb.value, 0.5)
    np.testing.assert_array_equal(xs.value, 0.5)


def test_out_of_bounds_density_is_zero():
    model = _small_model()
    sigma, rgb, xs = query_heads(model, [[0.0, 0.0, 3.0], [0.0, 0.0, 0.5]], [[0, 0, -1.0]] * 2)
    assert sigma.value[0] == 0.0 and sigma.value[1] > 0
    assert np.isfinite(rgb.value).all() and np.isfinite(xs.value).all()
    with pytest.raises(OutOfBoundsError):
        query_heads(model, [[0.0, 0.0, 3.0]], [[0, 0, -1.0]], mode="strict")


def test_query_heads_matches_hand_chain():
    model = _small_model(seed=3)
    rng = np.random.default_rng(4)
    p = rng.uniform(-0.9, 0.9, size=(7, 3))
    d = rng.normal(size=(7, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    sigma, rgb, xs = query_heads(model, p, d, stage="coarse")

    s = model.store
    fld = model.pair.coarse
    centers = [fld.voxel_centers(a) for a in range(3)]
    grid = s["coarse.grid"].reshape(3, 3, 3, 4)
    interp = RegularGridInterpolator(centers, grid, bounds_error=False, fill_value=None)
    feats = interp(np.clip(p, [c[0] for c in centers], [c[-1] for c in centers]))
    dens = np.logaddexp(0, feats @ s["density.w0"] + s["density.b0"])[:, 0]
    enc = np.concatenate([d, np.sin(np.pi * d), np.cos(np.pi * d)], axis=1)

    def mlp(name, x):
        h = np.maximum(x @ s[f"{name}.w0"] + s[f"{name}.b0"], 0)
        h = np.maximum(h @ s[f"{name}.w1"] + s[f"{name}.b1"], 0)
        return expit(h @ s[f"{name}.w2"] + s[f"{name}.b2"])

    x = np.concatenate([feats, enc], axis=1)
    np.testing.assert_allclose(sigma.value, dens, rtol=1e-12)
    np.testing.assert_allclose(rgb.value, mlp("rgb", x), rtol=1e-12)
    np.testing.assert_allclose(xs.value, mlp("xspec", x), rtol=1e-12)


def test_query_heads_gradients():
    model = _small_model(seed=5)
    rng = np.random.default_rng(6)
    p = rng.uniform(-0.9, 0.9, size=(3, 3))
    d = np.tile([[0.0, 0.6, 0.8]], (3, 1))

    def fn(tape):
        sigma, rgb, xs = query_heads(model, p, d, "fine", tape)
        return rgb * xs + ops.reshape(sigma, (3, 1))

    assert check_gradients(fn, model.store,
                           names=["fine.grid", "density.w0", "rgb.w0", "rgb.b2", "xspec.w1"]).passed
