import numpy as np
import pytest

from moblurf import autodiff as ad
from moblurf.fields import (FieldConfig, SceneModel, encode_position,
                            load_checkpoint, save_checkpoint, CheckpointError,
                            CHECKPOINT_MAGIC)


def tiny_config(**kw):
    defaults = dict(n_frames=5, n_latent=2, trunk_depth=2, trunk_width=16,
                    rgb_depth=2, rgb_width=8, local_depth=2, local_width=8,
                    ray_samples=8)
    defaults.update(kw)
    return FieldConfig(**defaults)


def tiny_model(seed=0, **kw):
    return SceneModel(tiny_config(**kw), np.random.default_rng(seed))


class TestEncoding:
    def test_dimension_3_plus_6l(self):
        x = np.zeros((4, 3))
        assert encode_position(x, 8).shape == (4, 51)
        assert encode_position(x, 2).shape == (4, 15)

    def test_zero_input_gives_zero_sin_unit_cos(self):
        out = encode_position(np.zeros((1, 3)), 4)[0]
        assert np.all(out[:3] == 0)
        # layout: [x, sin_k0, cos_k0, sin_k1, cos_k1, ...] in blocks of 3
        for k in range(4):
            block = out[3 + 6 * k: 3 + 6 * (k + 1)]
            assert np.all(block[:3] == 0.0)   # sin terms
            assert np.all(block[3:] == 1.0)   # cos terms

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert np.array_equal(encode_position(x, 6), encode_position(x, 6))


class TestGlo:
    def test_lookup_repeatable(self):
        model = tiny_model()
        a = ad.value_of(model.glo_lookup(np.array([2, 2])))
        assert np.array_equal(a[0], a[1])

    def test_out_of_range_time(self):
        model = tiny_model()
        with pytest.raises(IndexError):
            model.glo_lookup(np.array([5]))
        with pytest.raises(IndexError):
            model.glo_lookup(np.array([-1]))

    def test_init_scale(self):
        # normal(0, 0.01) rows at dim 8: norms comfortably below 0.1
        model = tiny_model(seed=123)
        norms = np.linalg.norm(model.store.values["glo"], axis=1)
        assert norms.max() <= 0.1

    def test_gradient_reaches_codes(self):
        model = tiny_model()
        model.store.begin_step()
        out = model.glo_lookup(np.array([1, 3]))
        ad.backward(ad.sum_(ad.mul(out, 2.0)))
        g = model.store.grads["glo"]
        assert np.all(g[[1, 3]] == 2.0)
        assert np.all(g[[0, 2, 4]] == 0.0)


class TestFieldEval:
    def test_static_output_ranges(self):
        model = tiny_model()
        rng = np.random.default_rng(1)
        x = rng.uniform(-10, 10, size=(40, 3))
        d = rng.normal(size=(40, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        c, sigma, p_st = (ad.value_of(v) for v in model.static_eval(x, d))
        assert np.all((c >= 0) & (c <= 1))
        assert np.all(sigma >= 0)
        assert np.all((p_st > 0) & (p_st < 1))
        assert np.all(np.isfinite(c)) and np.all(np.isfinite(sigma))

    def test_dynamic_output_ranges_and_t_check(self):
        model = tiny_model()
        rng = np.random.default_rng(2)
        x = rng.uniform(-10, 10, size=(20, 3))
        d = rng.normal(size=(20, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t = rng.integers(0, 5, size=20)
        c, sigma = (ad.value_of(v) for v in model.dynamic_eval(x, d, t))
        assert np.all((c >= 0) & (c <= 1)) and np.all(sigma >= 0)
        with pytest.raises(IndexError):
            model.dynamic_eval(x, d, np.full(20, 7))

    def test_same_seed_reproduces_outputs(self):
        a, b = tiny_model(seed=9), tiny_model(seed=9)
        x = np.array([[0.3, -0.2, 2.0]])
        d = np.array([[0.0, 0.0, 1.0]])
        for va, vb in zip(a.static_eval(x, d), b.static_eval(x, d)):
            assert np.array_equal(ad.value_of(va), ad.value_of(vb))

    def test_staticness_starts_uniform_static(self):
        model = tiny_model()
        x = np.random.default_rng(3).uniform(-5, 5, size=(30, 3))
        d = np.tile([0.0, 0.0, 1.0], (30, 1))
        _, _, p_st = model.static_eval(x, d)
        assert np.allclose(ad.value_of(p_st), 1 / (1 + np.exp(-1.0)))


class TestRayEmbedding:
    def test_dimension(self):
        model = tiny_model(ray_samples=32)
        o = np.zeros((3, 3))
        d = np.tile([0.0, 0.0, 1.0], (3, 1))
        emb = model.ray_embedding(o, d, near=1.0, far=5.0)
        assert ad.value_of(emb).shape == (3, 32 * 15)

    def test_identical_rays_identical_embeddings(self):
        model = tiny_model()
        o = np.tile([0.1, 0.2, 0.0], (2, 1))
        d = np.tile([0.0, 0.0, 1.0], (2, 1))
        emb = ad.value_of(model.ray_embedding(o, d, 1.0, 5.0))
        assert np.array_equal(emb[0], emb[1])

    def test_direction_changes_embedding(self):
        model = tiny_model()
        o = np.zeros((2, 3))
        d = np.array([[0.0, 0.0, 1.0], [0.0, 0.1, 0.99498743710662]])
        emb = ad.value_of(model.ray_embedding(o, d, 1.0, 5.0))
        assert not np.array_equal(emb[0], emb[1])

    def test_rejects_bad_bounds(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            model.ray_embedding(np.zeros((1, 3)), np.ones((1, 3)), 5.0, 5.0)


class TestLocalScrew:
    def test_zero_at_initialization(self):
        model = tiny_model()
        o = np.random.default_rng(4).normal(size=(6, 3))
        d = np.tile([0.0, 0.0, 1.0], (6, 1))
        screw = ad.value_of(model.local_screw(o, d, np.zeros(6, dtype=int), 1.0, 5.0))
        assert np.all(screw == 0.0)

    def test_deterministic_per_ray_and_time(self):
        model = tiny_model()
        model.store.values["local.mlp.2.w"] += 0.05  # make output nonzero
        o = np.array([[0.1, 0.0, 0.0]])
        d = np.array([[0.0, 0.0, 1.0]])
        s1 = ad.value_of(model.local_screw(o, d, np.array([2]), 1.0, 5.0))
        s2 = ad.value_of(model.local_screw(o, d, np.array([2]), 1.0, 5.0))
        assert np.array_equal(s1, s2)

    def test_finite_difference_on_final_weight(self):
        # gradient to the local MLP flows once its branch is active
        model = tiny_model()
        store = model.store
        o = np.random.default_rng(5).normal(size=(4, 3)) * 0.3
        d = np.tile([0.0, 0.0, 1.0], (4, 1))
        t = np.array([0, 1, 1, 2])
        w = np.random.default_rng(6).normal(size=(4, 6))

        def loss():
            store.begin_step()
            screw = model.local_screw(o, d, t, 1.0, 5.0)
            return ad.sum_(ad.mul(screw, w))

        store.zero_grad()
        ad.backward(loss())
        name = "local.mlp.2.w"
        analytic = store.grads[name].reshape(-1)
        idx = int(np.argmax(np.abs(analytic)))
        assert analytic[idx] != 0.0
        h = 1e-6
        flat = store.values[name].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        fp = float(ad.value_of(loss()))
        flat[idx] = orig - h
        fm = float(ad.value_of(loss()))
        flat[idx] = orig
        assert analytic[idx] == pytest.approx((fp - fm) / (2 * h), rel=1e-6)


class TestScrewTables:
    def test_zero_initialized(self):
        model = tiny_model()
        assert np.all(model.store.values["screw.base"] == 0.0)
        assert np.all(model.store.values["screw.global"] == 0.0)

    def test_global_q_range(self):
        model = tiny_model()
        with pytest.raises(IndexError):
            model.global_screws(np.array([0]), q=2)

    def test_base_rows_match_table(self):
        model = tiny_model()
        model.store.values["screw.base"][:] = np.arange(30).reshape(5, 6)
        omega, v = model.base_screws(np.array([3, 0]))
        assert np.array_equal(ad.value_of(omega), [[18, 19, 20], [0, 1, 2]])
        assert np.array_equal(ad.value_of(v), [[21, 22, 23], [3, 4, 5]])


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        model = tiny_model(seed=11)
        model.store.adam_m["static.trunk.0.w"] += 0.25
        model.store.adam_t["static.trunk.0.w"] = 7
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, {"note": "roundtrip", "iteration": 42})
        loaded, meta = load_checkpoint(path)
        assert meta == {"note": "roundtrip", "iteration": 42}
        assert sorted(loaded.store.values) == sorted(model.store.values)
        for name in model.store.values:
            assert np.array_equal(loaded.store.values[name], model.store.values[name])
            assert np.array_equal(loaded.store.adam_m[name], model.store.adam_m[name])
            assert np.array_equal(loaded.store.adam_v[name], model.store.adam_v[name])
            assert loaded.store.adam_t[name] == model.store.adam_t[name]
            assert loaded.store.group_of[name] == model.store.group_of[name]
        assert loaded.config == model.config

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 64)
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_rejects_truncated_payload(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, {})
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_rejects_unknown_version(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, {})
        data = bytearray(path.read_bytes())
        # bump the version field inside the JSON header
        idx = data.find(b'"version": 1')
        data[idx:idx + len(b'"version": 1')] = b'"version": 9'
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)
