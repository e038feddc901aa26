import numpy as np
import pytest

from vtn.config import InferenceConfig
from vtn.data import Video
from vtn.inference import (Chunked, FullVideo, MultiView, PrecomputedFeatures, align_indices,
                           chunked_inference, extract_video_features, full_video_inference,
                           multi_view_inference, precomputed_feature_inference,
                           protocol_from_config, predict, read_features, view_windows,
                           write_features)
from vtn.model import VTN, softmax_np
from vtn.tensor import no_grad

from conftest import tiny_model_config


@pytest.fixture(scope="module")
def model():
    return VTN(tiny_model_config(window=4, max_position=512)).eval()


@pytest.fixture(scope="module")
def clip_video():
    frames = np.random.default_rng(8).normal(size=(37, 1, 10, 10)).astype(np.float32)
    return Video(frames, 6.25, 1, "clip")


class TestAlignment:
    def test_downsample_by_two(self):
        # endpoint-inclusive: 249 steps cover 499 frames, so exactly one step is 3
        idx = align_indices(500, 250)
        steps = np.diff(idx)
        assert idx[0] == 0 and idx[-1] == 499
        assert sorted(set(steps.tolist())) == [2, 3] and int((steps == 3).sum()) == 1
        assert idx[:125].tolist() == list(range(0, 250, 2))

    def test_identity(self):
        assert align_indices(250, 250).tolist() == list(range(250))

    def test_upsample_counts(self):
        idx = align_indices(100, 250)
        counts = np.bincount(idx, minlength=100)
        assert set(counts.tolist()) == {2, 3}
        assert np.all(np.diff(idx) >= 0)
        assert idx[0] == 0 and idx[-1] == 99

    def test_empty_video(self):
        with pytest.raises(ValueError):
            align_indices(0, 10)


class TestProtocolEquivalence:
    F = 20

    @pytest.fixture
    def reference(self, model, clip_video):
        return full_video_inference(clip_video, model, self.F)[0]

    @pytest.mark.parametrize("chunk", [1, 7, 20, 64])
    def test_chunked(self, model, clip_video, reference, chunk):
        np.testing.assert_allclose(chunked_inference(clip_video, model, chunk, self.F),
                                   reference, atol=1e-5)

    def test_chunk_at_least_f_is_full_path(self, model, clip_video, reference):
        np.testing.assert_allclose(chunked_inference(clip_video, model, 64, self.F), reference,
                                   atol=1e-6)

    def test_precomputed_bit_equal(self, model, clip_video, reference):
        feats, pos = extract_video_features(clip_video, model, self.F, chunk_size=self.F)
        out = precomputed_feature_inference(feats, pos, model)
        assert out.tobytes() == reference.tobytes()

    def test_features_round_trip_on_disk(self, model, clip_video, tmp_path):
        feats, pos = extract_video_features(clip_video, model, self.F)
        write_features(tmp_path, {"clip": (feats, pos)})
        back_feats, back_pos = read_features(tmp_path)["clip"]
        assert back_pos.tolist() == pos.tolist()
        np.testing.assert_allclose(precomputed_feature_inference(back_feats, back_pos, model),
                                   precomputed_feature_inference(feats, pos, model), atol=1e-6)

    def test_zero_length_features(self, model):
        with pytest.raises(ValueError):
            precomputed_feature_inference(np.zeros((0, 8)), [], model)

    def test_width_mismatch(self, model):
        with pytest.raises(ValueError):
            precomputed_feature_inference(np.zeros((3, 5)), [0, 1, 2], model)

    def test_bad_chunk_size(self, model, clip_video):
        with pytest.raises(ValueError):
            chunked_inference(clip_video, model, 0, self.F)

    def test_predict_dispatch(self, model, clip_video, reference):
        for proto in (FullVideo(self.F), Chunked(5, self.F), PrecomputedFeatures(None, self.F)):
            np.testing.assert_allclose(predict(clip_video, model, proto), reference, atol=1e-5)


class TestMultiView:
    def test_single_view_equals_single_forward(self, model, clip_video):
        proto = MultiView(1, 1, 6, 2.0)
        (idx,) = view_windows(clip_video.num_frames, clip_video.fps, proto)
        frames = clip_video.frames[idx][:, :, 1:9, 1:9]
        with no_grad():
            logits, _ = model(frames[None], idx[None])
        np.testing.assert_allclose(multi_view_inference(clip_video, model, proto, resize=10),
                                   softmax_np(logits.data)[0], atol=1e-6)

    def test_mean_is_distribution(self, model, clip_video):
        probs = multi_view_inference(clip_video, model, MultiView(4, 3, 6, 2.0))
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)

    def test_mean_arithmetic(self):
        views = np.array([[0.6, 0.4], [0.2, 0.8]])
        mean = views.mean(axis=0)
        np.testing.assert_allclose(mean, [0.4, 0.6])
        assert int(np.argmax(mean)) == 1

    def test_constant_video_views_agree(self, model):
        # every clip window spans the whole 6-frame video, so all 15 views coincide
        v = Video(np.full((6, 1, 10, 10), 0.3, dtype=np.float32), 6.25, 0, "c")
        single = multi_view_inference(v, model, MultiView(1, 1, 6, 2.0))
        many = multi_view_inference(v, model, MultiView(5, 3, 6, 2.0))
        np.testing.assert_allclose(many, single, atol=1e-6)

    def test_clip_centres(self):
        windows = view_windows(100, 10.0, MultiView(10, 3, 5, 1.0))
        starts = [w[0] for w in windows]
        assert starts == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90]
        assert all(len(w) == 5 for w in windows)

    def test_shuffle_only_for_full_video(self, model, clip_video):
        with pytest.raises(ValueError):
            predict(clip_video, model, MultiView(1, 1, 4, 1.0), shuffle_rng=np.random.default_rng(0))


def test_protocol_from_config():
    infer = InferenceConfig(full_video_frames=12, chunk_size=3)
    assert protocol_from_config(infer) == FullVideo(12)
    infer.protocol = "chunked"
    assert protocol_from_config(infer) == Chunked(3, 12)
    infer.protocol = "multiview"
    assert protocol_from_config(infer).num_views == 30
    infer.protocol = "bogus"
    with pytest.raises(ValueError):
        protocol_from_config(infer)
