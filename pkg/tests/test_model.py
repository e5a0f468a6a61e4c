import numpy as np
import pytest

from hapticsynth.errors import (
    CorruptWeightsError,
    DataFormatError,
    InvalidArgumentError,
    UnsupportedVersionError,
)
from hapticsynth.model import (
    ActionWindow,
    TextureEmbedding,
    TextureLibrary,
    WeightSet,
    encode_texture,
    init_weights,
    load_library,
    load_weights,
    mlp_forward,
    nearest_neighbor,
    network_specs,
    predict_acceleration_dft,
    save_library,
    save_weights,
    toy_image_features,
)


def zero_weights(n_classes=4, seed=0):
    w = init_weights(n_classes=n_classes, seed=seed)
    for layers in w.networks.values():
        for wm, b in layers:
            wm[:] = 0.0
            b[:] = 0.0
    return w


@pytest.fixture(scope="module")
def small_weights():
    return init_weights(n_classes=4, seed=42)


@pytest.fixture(scope="module")
def paper_weights():
    return init_weights(n_classes=93, seed=7)


@pytest.fixture(scope="module")
def saved_weight_file(tmp_path_factory, paper_weights):
    path = tmp_path_factory.mktemp("weights") / "model.hsw"
    save_weights(paper_weights, path)
    return path


class TestMlpForward:
    def test_identity_layer(self):
        layers = [(np.eye(5, dtype=np.float32), np.zeros(5, dtype=np.float32))]
        v = np.array([1.0, -2.0, 3.0, 0.0, -0.5], dtype=np.float32)
        np.testing.assert_allclose(mlp_forward(layers, v), v)

    def test_zero_weights_final_bias(self):
        layers = [
            (np.zeros((4, 3), dtype=np.float32), np.zeros(3, dtype=np.float32)),
            (np.zeros((3, 2), dtype=np.float32), np.array([5.0, -1.0], dtype=np.float32)),
        ]
        out = mlp_forward(layers, np.array([9.0, 9.0, 9.0, 9.0]))
        np.testing.assert_allclose(out, [5.0, -1.0])

    def test_hand_computed_three_layer(self):
        # Golden value computed by explicit per-element arithmetic below.
        w1 = np.array([[1.0, 0.5], [-1.0, 2.0]], dtype=np.float32)
        b1 = np.array([0.1, -0.2], dtype=np.float32)
        w2 = np.array([[2.0, 0.0], [1.0, -1.0]], dtype=np.float32)
        b2 = np.array([0.0, 0.5], dtype=np.float32)
        w3 = np.array([[1.0], [3.0]], dtype=np.float32)
        b3 = np.array([-0.25], dtype=np.float32)
        layers = [(w1, b1), (w2, b2), (w3, b3)]
        x = [1.0, -1.0]

        # Independent evaluation with scalar arithmetic:
        h1 = [max(0.0, 1.0 * 1.0 + (-1.0) * (-1.0) + 0.1),
              max(0.0, 0.5 * 1.0 + 2.0 * (-1.0) - 0.2)]       # [2.1, 0.0]
        h2 = [max(0.0, 2.0 * h1[0] + 1.0 * h1[1] + 0.0),
              max(0.0, 0.0 * h1[0] - 1.0 * h1[1] + 0.5)]      # [4.2, 0.5]
        expected = 1.0 * h2[0] + 3.0 * h2[1] - 0.25           # 5.45

        out = mlp_forward(layers, np.array(x))
        assert out[0] == pytest.approx(expected, rel=1e-6)

    def test_shape_mismatch_rejected(self, small_weights):
        with pytest.raises(InvalidArgumentError):
            mlp_forward(small_weights.networks["force_encoder"], np.zeros(11))

    def test_nonfinite_weights_surface_as_corrupt(self):
        layers = [(np.full((2, 2), np.nan, dtype=np.float32), np.zeros(2, dtype=np.float32))]
        with pytest.raises(CorruptWeightsError):
            mlp_forward(layers, np.ones(2))


class TestPredictAccelerationDft:
    def test_zero_weights_zero_frame(self):
        w = zero_weights()
        action = ActionWindow()
        action.push(1.5, np.array([100.0, -40.0]))
        emb = TextureEmbedding(np.ones(256), id="t0")
        frame = predict_acceleration_dft(emb, action, w)
        np.testing.assert_allclose(frame.bins, 0.0)

    def test_dimension_trace(self, small_weights):
        specs = network_specs(4)
        assert specs["force_encoder"].layer_sizes == (10, 10, 10, 10)
        assert specs["speed_encoder"].layer_sizes == (20, 20, 20, 20, 10)
        assert specs["action_encoder"].layer_sizes == (20, 400, 300, 200, 100)
        assert specs["texture_encoder"].layer_sizes == (8960, 4096, 512, 256)
        assert specs["predictor"].layer_sizes == (356, 300, 300, 200, 100, 100)
        assert 256 + 100 == 356
        emb = TextureEmbedding(np.zeros(256), id="t")
        frame = predict_acceleration_dft(emb, ActionWindow(), small_weights)
        assert frame.bins.shape == (100,)
        assert np.all(frame.bins >= 0)

    def test_action_sensitivity(self, small_weights):
        emb = TextureEmbedding(
            np.random.default_rng(0).standard_normal(256).astype(np.float32), id="t"
        )
        still = predict_acceleration_dft(emb, ActionWindow(), small_weights)
        moving = ActionWindow()
        for _ in range(10):
            moving.push(2.0, np.array([150.0, 30.0]))
        active = predict_acceleration_dft(emb, moving, small_weights)
        assert not np.allclose(still.bins, active.bins)

    def test_relu_nonnegativity_preclamp(self, small_weights):
        # Non-negative final-layer parameters imply non-negative raw output.
        rng = np.random.default_rng(1)
        layers = [
            (w.copy(), b.copy()) for w, b in small_weights.networks["predictor"]
        ]
        wl, bl = layers[-1]
        layers[-1] = (np.abs(wl), np.abs(bl))
        out = mlp_forward(layers, rng.standard_normal(356).astype(np.float32))
        assert np.all(out >= 0.0)


class TestActionWindow:
    def test_starts_zeroed(self):
        win = ActionWindow()
        assert np.all(win.forces == 0) and np.all(win.velocities == 0)

    def test_push_evicts_oldest(self):
        win = ActionWindow()
        for i in range(12):
            win.push(float(i), np.array([float(i), -float(i)]))
        np.testing.assert_allclose(win.forces, np.arange(2, 12))
        np.testing.assert_allclose(win.velocities[:, 0], np.arange(2, 12))
        assert win.forces.shape == (10,)


class TestEncodeTexture:
    def test_zero_feature_zero_bias(self):
        w = zero_weights()
        emb = encode_texture(np.zeros(8960), w, texture_id="x")
        np.testing.assert_allclose(emb.vector, 0.0)

    def test_output_dim_and_determinism(self, small_weights):
        feat = np.random.default_rng(5).standard_normal(8960).astype(np.float32)
        a = encode_texture(feat, small_weights)
        b = encode_texture(feat, small_weights)
        assert a.vector.shape == (256,)
        assert np.array_equal(a.vector, b.vector)

    def test_wrong_dim_rejected(self, small_weights):
        with pytest.raises(InvalidArgumentError):
            encode_texture(np.zeros(100), small_weights)


class TestToyImageFeatures:
    def test_dimension_contract(self):
        rng = np.random.default_rng(0)
        feat = toy_image_features(rng.uniform(0, 1, (48, 80)))
        assert feat.shape == (8960,)

    def test_constant_image_translation_invariant(self):
        img = np.full((64, 64), 0.37)
        rolled = np.roll(img, 8, axis=1)
        np.testing.assert_allclose(
            toy_image_features(img), toy_image_features(rolled), atol=1e-6
        )

    def test_discriminates_textures(self):
        x = np.linspace(0, 1, 128)
        fine = 0.5 + 0.4 * np.sin(2 * np.pi * 24 * x)[None, :] * np.ones((128, 1))
        coarse = 0.5 + 0.4 * np.sin(2 * np.pi * 6 * x)[:, None] * np.ones((1, 128))
        f1, f2 = toy_image_features(fine), toy_image_features(coarse)
        cos = float(f1 @ f2 / (np.linalg.norm(f1) * np.linalg.norm(f2)))
        assert cos < 0.99

    def test_small_image_rejected(self):
        with pytest.raises(InvalidArgumentError):
            toy_image_features(np.zeros((31, 100)))


class TestNearestNeighbor:
    def make_library(self, vectors, ids=None):
        ids = ids or [f"t{i:03d}" for i in range(len(vectors))]
        return TextureLibrary(
            entries=[TextureEmbedding(v, id=i) for v, i in zip(vectors, ids)]
        )

    def test_exact_member(self):
        rng = np.random.default_rng(2)
        vecs = rng.standard_normal((5, 256)).astype(np.float32)
        lib = self.make_library(vecs)
        member, dist = nearest_neighbor(TextureEmbedding(vecs[3], id="query"), lib)
        assert member.id == "t003"
        assert dist == 0.0

    def test_arithmetic_example(self):
        lib = self.make_library([np.zeros(256), np.ones(256)])
        query = TextureEmbedding(np.full(256, 0.4), id="q")
        member, dist = nearest_neighbor(query, lib)
        assert member.id == "t000"
        assert dist == pytest.approx(0.4 * 16.0)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(3)
        vecs = rng.standard_normal((1000, 256)).astype(np.float32)
        lib = self.make_library(vecs)
        queries = rng.standard_normal((100, 256)).astype(np.float32)
        all_vecs = np.stack([e.vector for e in lib.entries]).astype(np.float64)
        for q in queries:
            member, dist = nearest_neighbor(TextureEmbedding(q, id="q"), lib)
            dists = np.linalg.norm(all_vecs - q.astype(np.float64), axis=1)
            assert member.id == lib.entries[int(np.argmin(dists))].id
            assert dist == pytest.approx(float(dists.min()))

    def test_empty_library_rejected(self):
        with pytest.raises(InvalidArgumentError):
            nearest_neighbor(TextureEmbedding(np.zeros(256), id="q"), TextureLibrary())


class TestWeightPersistence:
    def test_round_trip_bit_identical(self, paper_weights, saved_weight_file):
        loaded = load_weights(saved_weight_file)
        assert loaded.n_classes == 93
        for name in paper_weights.networks:
            for (w1, b1), (w2, b2) in zip(
                paper_weights.networks[name], loaded.networks[name]
            ):
                assert np.array_equal(w1, w2)
                assert np.array_equal(b1, b2)

    def test_accepts_exact_paper_layer_sizes(self, saved_weight_file):
        loaded = load_weights(saved_weight_file)
        specs = network_specs(93)
        for name, spec in specs.items():
            sizes = [loaded.networks[name][0][0].shape[0]]
            sizes += [w.shape[1] for w, _ in loaded.networks[name]]
            assert tuple(sizes) == spec.layer_sizes

    def test_truncated_file_rejected(self, saved_weight_file, tmp_path):
        data = saved_weight_file.read_bytes()
        bad = tmp_path / "truncated.hsw"
        bad.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptWeightsError):
            load_weights(bad)

    def test_swapped_shape_names_layer(self, saved_weight_file, tmp_path):
        data = saved_weight_file.read_bytes()
        tampered = data.replace(b"tensor force_encoder 0 W 10 10", b"tensor force_encoder 0 W 10 11", 1)
        bad = tmp_path / "tampered.hsw"
        bad.write_bytes(tampered)
        with pytest.raises(CorruptWeightsError) as err:
            load_weights(bad)
        assert "force_encoder" in str(err.value)

    def test_unsupported_version(self, tmp_path):
        bad = tmp_path / "future.hsw"
        bad.write_bytes(b"HSWEIGHTS 99\nEND\n")
        with pytest.raises(UnsupportedVersionError):
            load_weights(bad)

    def test_wrong_layer_size_rejected_at_construction(self, small_weights):
        nets = {k: [(w.copy(), b.copy()) for w, b in v] for k, v in small_weights.networks.items()}
        w0, b0 = nets["speed_encoder"][0]
        nets["speed_encoder"][0] = (np.zeros((21, 20), dtype=np.float32), b0)
        with pytest.raises(CorruptWeightsError) as err:
            WeightSet(networks=nets, n_classes=4)
        assert "speed_encoder" in str(err.value)

    def test_nonfinite_rejected_at_construction(self, small_weights):
        nets = {k: [(w.copy(), b.copy()) for w, b in v] for k, v in small_weights.networks.items()}
        nets["predictor"][2][0][0, 0] = np.inf
        with pytest.raises(CorruptWeightsError):
            WeightSet(networks=nets, n_classes=4)


class TestTextureLibraryPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        entries = [
            TextureEmbedding(rng.standard_normal(256).astype(np.float32), id=f"tex{i}",
                             name=f"sample texture {i}")
            for i in range(3)
        ]
        features = {"tex1": rng.standard_normal(8960).astype(np.float32)}
        lib = TextureLibrary(entries=entries, features=features)
        path = tmp_path / "library.hsl"
        save_library(lib, path)
        loaded = load_library(path)
        assert [e.id for e in loaded.entries] == ["tex0", "tex1", "tex2"]
        assert loaded.entries[1].name == "sample texture 1"
        for a, b in zip(lib.entries, loaded.entries):
            assert np.array_equal(a.vector, b.vector)
        assert np.array_equal(loaded.features["tex1"], features["tex1"])

    def test_duplicate_ids_rejected(self):
        entries = [
            TextureEmbedding(np.zeros(256), id="same"),
            TextureEmbedding(np.ones(256), id="same"),
        ]
        with pytest.raises(InvalidArgumentError):
            TextureLibrary(entries=entries)

    def test_malformed_embedding_rejected(self, tmp_path):
        path = tmp_path / "bad.hsl"
        path.write_text("HSLIBRARY 1\ncount 1\ntexture\tt0\tname\nembedding\t1.0 2.0\n")
        with pytest.raises(DataFormatError) as err:
            load_library(path)
        assert "line 4" in str(err.value)
