import json

import numpy as np
import pytest

from agents.feature_extractor_agent import FeatureExtractorAgent, load_cache, normalize_image
from clients import feature_provider
from clients.feature_provider import MockFeatureProvider, make_provider
from clients.frame_source import FrameDirectorySource, write_frame
from models.features import BackboneSpec, ProviderManifest, ReceptiveFieldMode, backbone
from models.phase import PhaseLabel
from models.shot import Shot
from utils.binary_io import CACHE_MAGIC, decode_cache, encode_cache, read_cache, write_cache
from utils.errors import (
    BadMagic,
    ConfigError,
    DataError,
    DimensionMismatch,
    FrameMissing,
    TruncatedFile,
    VersionMismatch,
)

TINY = BackboneSpec("tiny", 32, 16, "out")


def random_frame(seed, h=48, w=80):
    return np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def test_mock_provider_is_deterministic():
    image = random_frame(0, 32, 32)
    tensor = normalize_image(image, ProviderManifest())
    a = MockFeatureProvider(seed=3).describe(TINY, tensor)
    b = MockFeatureProvider(seed=3).describe(TINY, tensor)
    c = MockFeatureProvider(seed=4).describe(TINY, tensor)
    assert a.shape == (16,) and a.dtype == np.float32
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert (a >= 0).all()


def test_mock_descriptor_matches_backbone_dimension():
    agent = FeatureExtractorAgent(MockFeatureProvider())
    spec = backbone("resnet101")
    out = agent.extract_descriptor(random_frame(1, 224, 224), spec)
    assert out.shape == (2048,)


def test_unknown_provider_and_backbone():
    with pytest.raises(ConfigError):
        make_provider("cloud")
    with pytest.raises(ConfigError):
        make_provider("runtime:/nowhere/model.onnx")
    with pytest.raises(ConfigError):
        backbone("lenet")


@pytest.mark.parametrize("mode", list(ReceptiveFieldMode))
def test_preprocess_gives_a_square(mode):
    agent = FeatureExtractorAgent(MockFeatureProvider())
    out = agent.preprocess(random_frame(2), mode, TINY)
    assert out.shape == (32, 32, 3)
    assert out.dtype == np.uint8


def test_center_crop_takes_the_middle():
    agent = FeatureExtractorAgent(MockFeatureProvider())
    frame = random_frame(3, 32, 64)
    out = agent.preprocess(frame, ReceptiveFieldMode.CENTER_CROP, TINY)
    assert np.array_equal(out, frame[:, 16:48])


def test_wrong_image_side_is_rejected():
    agent = FeatureExtractorAgent(MockFeatureProvider())
    with pytest.raises(DimensionMismatch):
        agent.extract_descriptor(random_frame(4, 30, 30), TINY)


def test_provider_with_wrong_dimension_is_rejected():
    class ShortProvider(MockFeatureProvider):
        def describe(self, backbone, tensor):
            return np.zeros(backbone.descriptor_dim - 1, dtype=np.float32)

    with pytest.raises(DimensionMismatch):
        FeatureExtractorAgent(ShortProvider()).extract_descriptor(random_frame(5, 32, 32), TINY)


def test_normalize_image_layout():
    image = np.full((4, 4, 3), 255, dtype=np.uint8)
    tensor = normalize_image(image, ProviderManifest(mean=(0.5, 0.5, 0.5), std=(0.5, 0.25, 0.5)))
    assert tensor.shape == (3, 4, 4)
    assert np.allclose(tensor[0], 1.0) and np.allclose(tensor[1], 2.0)


def test_cache_round_trip(tmp_path, make_sequence, rng):
    sequences = [
        make_sequence(rng.normal(size=(5, 16)), phase=p, video_id=f"video{i:02d}", start_frame=100 * i, stride=50)
        for i, p in enumerate(PhaseLabel)
    ]
    path = write_cache(sequences, tmp_path / "f.spfc")
    loaded = read_cache(path)
    assert len(loaded) == len(sequences)
    for a, b in zip(sequences, loaded):
        assert a.shot == b.shot
        assert np.array_equal(a.descriptors, b.descriptors)
        assert np.array_equal(a.elapsed_minutes, b.elapsed_minutes)
        assert np.array_equal(a.offsets, b.offsets)


def test_cache_size_follows_layout(make_sequence, rng):
    sequences = [make_sequence(rng.normal(size=(3, 7)), video_id="v1"), make_sequence(rng.normal(size=(3, 7)), video_id="v22")]
    data = encode_cache(sequences)
    # header, then per shot: id length, id, shot head, T entries of (f64 elapsed, D f32)
    entries = 3 * (8 + 4 * 7)
    assert len(data) == 20 + (2 + 2 + 17 + entries) + (2 + 3 + 17 + entries)


def test_corrupt_caches_are_rejected(make_sequence, rng):
    data = encode_cache([make_sequence(rng.normal(size=(2, 4)))])
    assert data[:4] == CACHE_MAGIC
    with pytest.raises(BadMagic):
        decode_cache(b"XXXX" + data[4:])
    with pytest.raises(VersionMismatch):
        decode_cache(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(TruncatedFile):
        decode_cache(data[:-3])
    with pytest.raises(TruncatedFile):
        decode_cache(data[:10])
    with pytest.raises(DataError):
        decode_cache(data + b"\x00\x00")


def test_mixed_dimensions_cannot_share_a_cache(make_sequence):
    with pytest.raises(DataError):
        encode_cache([make_sequence(np.zeros((2, 4))), make_sequence(np.zeros((2, 5)))])
    with pytest.raises(DataError):
        encode_cache([])


def test_load_cache_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_cache(tmp_path / "missing.spfc")


def frames_for(tmp_path, shot, stride):
    for offset in range(0, shot.num_frames, stride):
        write_frame(tmp_path, shot.video_id, shot.start_frame + offset, random_frame(offset))
    return FrameDirectorySource(tmp_path, shot.video_id)


def test_extract_sequence_reads_strided_frames(tmp_path):
    shot = Shot("v01", PhaseLabel.PREPARATION, start_frame=1500, elapsed_minutes=1.0)
    source = frames_for(tmp_path, shot, 50)
    seq = FeatureExtractorAgent(MockFeatureProvider()).extract_sequence(
        shot, source, ReceptiveFieldMode.RESIZE_SQUARE, TINY, stride=50
    )
    assert seq.descriptors.shape == (5, 16)
    assert seq.offsets.tolist() == [0, 50, 100, 150, 200]
    assert seq.elapsed_minutes[0] == pytest.approx(1.0)
    assert seq.elapsed_minutes[-1] == pytest.approx(1700 / 1500)


def test_threads_do_not_change_the_order(tmp_path):
    shot = Shot("v02", PhaseLabel.CLIPPING_CUTTING, start_frame=0)
    source = frames_for(tmp_path, shot, 25)
    args = (shot, source, ReceptiveFieldMode.SALIENT_PATCH, TINY, 25)
    serial = FeatureExtractorAgent(MockFeatureProvider(), threads=1).extract_sequence(*args)
    pooled = FeatureExtractorAgent(MockFeatureProvider(), threads=4).extract_sequence(*args)
    assert np.array_equal(serial.descriptors, pooled.descriptors)


def test_missing_frame_is_reported(tmp_path):
    shot = Shot("v03", PhaseLabel.TROCAR_PLACEMENT, start_frame=0)
    write_frame(tmp_path, "v03", 0, random_frame(0))
    with pytest.raises(FrameMissing):
        FeatureExtractorAgent(MockFeatureProvider()).extract_sequence(
            shot, FrameDirectorySource(tmp_path, "v03"), ReceptiveFieldMode.RESIZE_SQUARE, TINY, stride=125
        )
    with pytest.raises(ConfigError):
        FeatureExtractorAgent(MockFeatureProvider()).extract_sequence(
            shot, FrameDirectorySource(tmp_path, "v03"), ReceptiveFieldMode.RESIZE_SQUARE, TINY, stride=0
        )


@pytest.mark.parametrize("mode", list(ReceptiveFieldMode))
def test_square_input_of_the_input_side_is_kept_whole(mode):
    agent = FeatureExtractorAgent(MockFeatureProvider())
    frame = random_frame(6, 32, 32)
    assert np.array_equal(agent.preprocess(frame, mode, TINY), frame)


class FakeNet:
    def __init__(self, dim):
        self.dim = dim
        self.layers = []

    def setInput(self, blob):
        self.blob = blob

    def forward(self, layer):
        self.layers.append(layer)
        return np.ones((1, self.dim, 1, 1), dtype=np.float32)


def runtime_provider(tmp_path, monkeypatch, dim, sidecar=None):
    net = FakeNet(dim)
    monkeypatch.setattr(feature_provider.cv2.dnn, "readNetFromONNX", lambda path: net)
    model = tmp_path / "net.onnx"
    model.write_bytes(b"\x00")
    if sidecar is not None:
        (tmp_path / "net.onnx.json").write_text(json.dumps(sidecar))
    return make_provider(f"runtime:{model}"), net


def test_runtime_provider_reads_the_backbone_layer(tmp_path, monkeypatch):
    spec = backbone("resnet101")
    provider, net = runtime_provider(tmp_path, monkeypatch, spec.descriptor_dim)
    agent = FeatureExtractorAgent(provider)
    out = agent.extract_descriptor(random_frame(7, 224, 224), spec)
    assert net.layers == ["pool5"]
    assert out.shape == (2048,)
    assert net.blob.shape == (1, 3, 224, 224)


def test_runtime_sidecar_layer_wins(tmp_path, monkeypatch):
    provider, net = runtime_provider(tmp_path, monkeypatch, 16, sidecar={"layer_id": "features"})
    FeatureExtractorAgent(provider).extract_descriptor(random_frame(8, 32, 32), TINY)
    assert net.layers == ["features"]


class RecordingSource(FrameDirectorySource):
    closed = []

    def close(self):
        RecordingSource.closed.append(self.video_id)


def test_run_closes_every_source(tmp_path):
    RecordingSource.closed = []
    shots = [Shot(v, PhaseLabel.PREPARATION, start_frame=0) for v in ("v01", "v02")]
    for shot in shots:
        frames_for(tmp_path, shot, 125)
    agent = FeatureExtractorAgent(MockFeatureProvider())
    out = agent.run(shots, lambda vid: RecordingSource(tmp_path, vid), ReceptiveFieldMode.RESIZE_SQUARE, TINY, 125)
    assert len(out) == 2
    assert sorted(RecordingSource.closed) == ["v01", "v02"]

    RecordingSource.closed = []
    with pytest.raises(FrameMissing):
        agent.run(shots, lambda vid: RecordingSource(tmp_path, vid), ReceptiveFieldMode.RESIZE_SQUARE, TINY, 25)
    assert RecordingSource.closed == ["v01"]
