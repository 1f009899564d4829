import numpy as np
import pytest
from scipy import stats

from mmnerf.diffmath import ParameterStore, Tape, check_gradients, ops
from mmnerf.errors import ContractError, OutOfBoundsError
from mmnerf.field import ModelConfig, SceneModel
from mmnerf.render import (CameraModel, RenderSettings, composite, generate_rays, look_at, ray_box, read_depth,
                           render_image, render_rays, sample_coarse, sample_fine, write_depth, write_png)


def _cam(pose=None):
    return CameraModel(32, 24, 30.0, 30.0, 16.0, 12.0, np.eye(4) if pose is None else pose)


class TestRays:
    def test_principal_pixel_points_down_minus_z(self):
        b = generate_rays(_cam(), [[15.5, 11.5]])
        np.testing.assert_allclose(b.directions[0], [0, 0, -1], atol=1e-15)

    def test_translation_keeps_directions(self):
        pose = np.eye(4)
        pose[:3, 3] = [1.0, -2.0, 3.0]
        px = [[0, 0], [31, 23], [7, 19]]
        a, b = generate_rays(_cam(), px), generate_rays(_cam(pose), px)
        np.testing.assert_allclose(a.directions, b.directions, atol=1e-15)
        np.testing.assert_allclose(b.origins, np.tile([1.0, -2.0, 3.0], (3, 1)))

    def test_yaw_rotation(self):
        c, s = np.cos(np.pi / 2), np.sin(np.pi / 2)
        pose = np.eye(4)
        pose[:3, :3] = [[c, 0, s], [0, 1, 0], [-s, 0, c]]  # 90 degrees about +y
        d = generate_rays(_cam(pose), [[15.5, 11.5]]).directions[0]
        # R @ (0, 0, -1) = -(third column) = (-1, 0, 0)
        np.testing.assert_allclose(d, [-1.0, 0.0, 0.0], atol=1e-12)

    def test_directions_unit_length(self):
        cam = _cam(look_at([3, 1, 2], [0, 0, 0]))
        b = generate_rays(cam, cam.all_pixels())
        np.testing.assert_allclose(np.linalg.norm(b.directions, axis=1), 1.0, atol=1e-12)

    def test_pixel_out_of_bounds(self):
        with pytest.raises(OutOfBoundsError):
            generate_rays(_cam(), [[32, 0]])

    def test_bad_pose_rejected(self):
        pose = np.diag([1.0, 1.0, -1.0, 1.0])
        with pytest.raises(ContractError):
            _cam(pose)

    def test_ray_box(self):
        near, far, hit = ray_box([[0, 0, 5.0], [0, 5.0, 5.0]], [[0, 0, -1.0], [0, 0, -1.0]], [-1] * 3, [1] * 3)
        assert hit.tolist() == [True, False]
        assert near[0] == pytest.approx(4.0) and far[0] == pytest.approx(6.0)

    def test_scaled_camera(self):
        cam = _cam().scaled(2.0)
        assert (cam.width, cam.height) == (64, 48)
        # centre of pixel (0, 0) at 1x sits at (1.0, 1.0) at 2x, i.e. pixel coordinate 0.5
        a = generate_rays(_cam(), [[0, 0], [20, 7]]).directions
        b = generate_rays(cam, [[0.5, 0.5], [40.5, 14.5]]).directions
        np.testing.assert_allclose(a, b, atol=1e-14)


class TestSampling:
    def test_midpoints(self):
        np.testing.assert_allclose(sample_coarse(0.0, 2.0, 2), [[0.5, 1.5]])

    def test_jitter_stays_in_bins(self):
        rng = np.random.default_rng(0)
        t = sample_coarse(np.zeros(100), np.full(100, 3.0), 16, rng)
        edges = np.linspace(0, 3, 17)
        assert np.all(t >= edges[:-1]) and np.all(t < edges[1:])
        assert np.all(np.diff(t, axis=1) > 0)

    def test_64_increasing(self):
        t = sample_coarse(1.0, 4.0, 64)[0]
        assert len(t) == 64 and np.all(np.diff(t) > 0) and t[0] >= 1 and t[-1] <= 4

    def test_delta_pdf(self):
        w = np.zeros(16)
        w[5] = 1.0
        t = sample_fine(0.0, 16.0, w, 200, np.random.default_rng(1))
        assert np.all((t >= 5.0) & (t <= 6.0))

    def test_uniform_weights_chi_square(self):
        S, N = 32, 100_000
        t = sample_fine(np.zeros(1), np.full(1, float(S)), np.ones((1, S)), N, np.random.default_rng(2))
        counts = np.bincount(np.floor(t[0]).astype(int), minlength=S)
        assert np.all(np.abs(counts - N / S) <= 3 * np.sqrt(N / S * (1 - 1 / S)) + 1e-9)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_zero_weights_fallback(self):
        t = sample_fine(0.0, 4.0, np.zeros(4), 4)
        np.testing.assert_allclose(t, [[0.5, 1.5, 2.5, 3.5]])

    def test_negative_weights_rejected(self):
        with pytest.raises(ContractError):
            sample_fine(0.0, 1.0, [0.5, -0.1], 4)


class TestComposite:
    def test_empty_medium(self):
        r = composite([[0.1, 0.2, 0.3]], [[0.0, 0.0, 0.0]], {"rgb": np.ones((1, 3, 3))}, 1.0,
                      {"rgb": (0.2, 0.3, 0.4)})
        assert r.opacity.value[0] == 0.0
        np.testing.assert_allclose(r.rgb.value[0], [0.2, 0.3, 0.4])

    def test_opaque_surface(self):
        r = composite([[0.5]], [[np.inf]], {"rgb": [[[0.1, 0.7, 0.3]]]}, 1.0)
        assert r.opacity.value[0] == 1.0
        np.testing.assert_allclose(r.rgb.value[0], [0.1, 0.7, 0.3])

    def test_two_sample_hand_expansion(self):
        # alpha = (0.5, 1.0): sigma*delta = ln 2 then infinity
        t = [[0.0, 1.0]]
        sigma = [[np.log(2.0), np.inf]]
        c = [[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]]
        r = composite(t, sigma, {"rgb": c}, 2.0)
        np.testing.assert_allclose(r.weights.value[0], [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(r.rgb.value[0], [0.5, 0.5, 0.0], atol=1e-15)

    def test_unsorted_and_negative_rejected(self):
        with pytest.raises(ContractError):
            composite([[0.2, 0.1]], [[1.0, 1.0]], {"rgb": np.zeros((1, 2, 3))}, 1.0)
        with pytest.raises(ContractError):
            composite([[0.1, 0.2]], [[1.0, -1.0]], {"rgb": np.zeros((1, 2, 3))}, 1.0)

    def test_weight_laws_random_rays(self):
        rng = np.random.default_rng(3)
        R, S = 10_000, 24
        t = np.sort(rng.uniform(0, 4, size=(R, S)), axis=1)
        sigma = rng.exponential(2.0, size=(R, S)) * (rng.random((R, S)) < 0.6)
        r = composite(t, sigma, {"rgb": rng.random((R, S, 3))}, 4.0)
        w = r.weights.value
        delta = np.concatenate([np.diff(t, axis=1), 4.0 - t[:, -1:]], axis=1)
        alpha = 1 - np.exp(-sigma * delta)
        assert np.all((w >= 0) & (w <= 1))
        assert np.all((w.sum(1) >= 0) & (w.sum(1) <= 1 + 1e-12))
        np.testing.assert_allclose(w.sum(1), 1 - np.prod(1 - alpha, axis=1), atol=1e-9)

    def test_slab_opacity_beer_lambert(self):
        sigma_slab, d = 1.7, 0.8
        for n in (64, 128):
            t = sample_coarse(0.0, 3.0, n)
            sigma = np.where((t >= 1.0) & (t < 1.0 + d), sigma_slab, 0.0)
            r = composite(t, sigma, {"rgb": np.ones((1, n, 3))}, 3.0)
            exact = 1 - np.exp(-sigma_slab * d)
            assert abs(r.opacity.value[0] - exact) <= 0.01 * exact

    def test_gradients_sigma_and_color(self):
        rng = np.random.default_rng(4)
        store = ParameterStore()
        store.add("sigma", rng.uniform(0.1, 3.0, size=(3, 5)))
        store.add("c", rng.random((3, 5, 3)))
        t = np.sort(rng.uniform(0, 2, size=(3, 5)), axis=1)
        res = check_gradients(lambda tape: composite(t, store.var("sigma", tape), {"rgb": store.var("c", tape)},
                                                     2.5, {"rgb": (0.3, 0.2, 0.9)}).rgb, store)
        assert res.passed, res


def _model(seed=0):
    cfg = ModelConfig(coarse_resolution=(4, 4, 4), fine_resolution=(6, 6, 6), channels=4, hidden_width=8,
                      hidden_layers=2, n_freqs=1)
    return SceneModel.create(cfg, seed)


def test_zero_parameter_render_chain():
    model = _model()
    for v in model.store.values.values():
        v[...] = 0.0
    cam = _cam(look_at([0, -3.0, 0.5], [0, 0, 0]))
    bundle = generate_rays(cam, [[16, 12], [3, 4]], bbox=((-1,) * 3, (1,) * 3))
    bg = {"rgb": (0.2, 0.2, 0.2), "xspec": (1.0, 0.0, 0.0)}
    coarse, fine = render_rays(model, bundle, RenderSettings(16, 16, bg))
    for r in (coarse, fine):
        # composited intervals run from the first sample to far
        length = bundle.far - r.t[:, 0]
        op = 1 - np.exp(-np.log(2.0) * length)
        np.testing.assert_allclose(r.opacity.value, op, rtol=1e-12)
        np.testing.assert_allclose(r.rgb.value, np.repeat(0.5 * op[:, None] + 0.2 * (1 - op[:, None]), 3, 1), rtol=1e-12)
        np.testing.assert_allclose(r.xspec.value[:, 0], 0.5 * op + (1 - op), rtol=1e-12)


def test_ray_missing_box_has_zero_opacity():
    model = _model()
    cam = _cam(look_at([0, -3.0, 0.0], [0, 0, 0]))
    pose = cam.pose.copy()
    pose[:3, 3] += [0, 0, 5.0]
    bundle = generate_rays(cam.with_pose(pose), [[16, 12]], bbox=((-1,) * 3, (1,) * 3))
    assert not bundle.hit[0]
    coarse, fine = render_rays(model, bundle, RenderSettings(8, 8))
    assert coarse.opacity.value[0] == 0.0 and fine.opacity.value[0] == 0.0


def test_render_rays_backprop_reaches_both_fields():
    model = _model(1)
    cam = _cam(look_at([0, -3.0, 0.5], [0, 0, 0]))
    bundle = generate_rays(cam, [[16, 12], [10, 9]], bbox=((-1,) * 3, (1,) * 3))
    tape = Tape()
    coarse, fine = render_rays(model, bundle, RenderSettings(8, 8), tape, np.random.default_rng(0))
    from mmnerf.diffmath import backward
    loss = ops.sum(ops.square(coarse.rgb)) + ops.sum(ops.square(fine.xspec))
    backward(tape, 1.0, loss)
    assert np.abs(model.store.grads["coarse.grid"]).sum() > 0
    assert np.abs(model.store.grads["fine.grid"]).sum() > 0
    assert np.abs(model.store.grads["xspec.w0"]).sum() > 0


def test_render_image_and_files(tmp_path):
    model = _model(2)
    cam = CameraModel(8, 6, 8.0, 8.0, 4.0, 3.0, look_at([0, -3.0, 0.5], [0, 0, 0]))
    out = render_image(model, cam, RenderSettings(8, 8))
    assert out["rgb"].shape == (6, 8, 3) and out["depth"].shape == (6, 8)
    write_png(tmp_path / "a.png", out["rgb"])
    write_depth(tmp_path / "d.bin", out["depth"])
    np.testing.assert_array_equal(read_depth(tmp_path / "d.bin"), out["depth"].astype(np.float32))
    big = render_image(model, cam.scaled(2.0), RenderSettings(4, 4))
    assert big["rgb"].size == 4 * out["rgb"].size
