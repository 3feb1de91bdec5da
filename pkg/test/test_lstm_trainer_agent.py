import math

import numpy as np
import pytest

from agents.annotation_agent import AnnotationAgent
from agents.feature_extractor_agent import FeatureExtractorAgent
from agents.lstm_trainer_agent import LstmTrainerAgent
from agents.shot_sampler_agent import ShotSamplerAgent
from agents.synthetic_corpus_agent import ANNOTATION_DIR, FRAMES_DIR, SyntheticCorpusAgent
from clients.feature_provider import MockFeatureProvider
from clients.frame_source import open_source
from models.config import SyntheticCorpusSpec
from models.features import ReceptiveFieldMode, backbone
from models.lstm import AdamState, ClassifierHead, LstmParams, TrainConfig, from_tensors, to_tensors
from models.phase import PhaseLabel
from models.shot import Shot
from utils.errors import ConfigError, CoverageUnreachable, DimensionMismatch, EmptySequence, NonFiniteLoss


def zero_model(d, h):
    params = LstmParams(W_x=np.zeros((4 * h, d)), W_h=np.zeros((4 * h, h)), b=np.zeros(4 * h))
    return params, ClassifierHead(W_y=np.zeros((8, h)), b_y=np.zeros(8))


def random_model(rng, d, h, scale=0.5):
    params = LstmParams(
        W_x=rng.normal(0, scale, (4 * h, d)),
        W_h=rng.normal(0, scale, (4 * h, h)),
        b=rng.normal(0, scale, 4 * h),
    )
    return params, ClassifierHead(W_y=rng.normal(0, scale, (8, h)), b_y=rng.normal(0, scale, 8))


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def corpus_shots(per_phase):
    return [Shot(f"v{n % 5:02d}", p, 1000 * n) for p in PhaseLabel for n in range(per_phase)]


def test_zero_model_is_uniform_and_picks_the_first_phase():
    agent = LstmTrainerAgent()
    params, head = zero_model(3, 2)
    out = agent.lstm_forward(params, head, np.ones((4, 3)))
    assert np.allclose(out.probabilities, 1 / 8)
    assert out.hidden.shape == (4, 2)
    assert not out.hidden.any()
    assert int(np.argmax(out.probabilities)) == PhaseLabel.TROCAR_PLACEMENT.index


def test_forward_by_hand():
    agent = LstmTrainerAgent()
    wi, wf, wg, wo = 0.5, -0.3, 0.8, 1.2
    params = LstmParams(W_x=np.array([[wi], [wf], [wg], [wo]]), W_h=np.full((4, 1), 0.7), b=np.zeros(4))
    head = ClassifierHead(W_y=np.arange(8, dtype=np.float64)[:, None], b_y=np.zeros(8))
    out = agent.lstm_forward(params, head, np.array([[1.0]]))

    c = sigmoid(wi) * math.tanh(wg)
    h = sigmoid(wo) * math.tanh(c)
    logits = np.arange(8) * h
    expected = np.exp(logits) / np.exp(logits).sum()
    assert out.hidden[0, 0] == pytest.approx(h, rel=1e-12)
    assert np.allclose(out.logits, logits, rtol=1e-12)
    assert np.allclose(out.probabilities, expected, rtol=1e-12)


def test_forward_rejects_bad_input():
    agent = LstmTrainerAgent()
    params, head = zero_model(3, 2)
    with pytest.raises(EmptySequence):
        agent.lstm_forward(params, head, np.zeros((0, 3)))
    with pytest.raises(DimensionMismatch):
        agent.lstm_forward(params, head, np.zeros((2, 4)))


def numeric_gradient(agent, tensors, x, y, name, eps=1e-6):
    grad = np.zeros_like(tensors[name])
    for idx in np.ndindex(grad.shape):
        values = {k: v.copy() for k, v in tensors.items()}
        values[name][idx] += eps
        _, up = agent.lstm_backward(*from_tensors(values), x, y)
        values[name][idx] -= 2 * eps
        _, down = agent.lstm_backward(*from_tensors(values), x, y)
        grad[idx] = (up - down) / (2 * eps)
    return grad


def test_gradients_match_finite_differences():
    agent = LstmTrainerAgent()
    rng = np.random.default_rng(9)
    for _ in range(20):
        d, h, t, b = int(rng.integers(1, 9)), int(rng.integers(1, 7)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
        params, head = random_model(rng, d, h)
        x = rng.normal(size=(b, t, d))
        y = rng.integers(0, 8, size=b)
        grads, _ = agent.lstm_backward(params, head, x, y)
        tensors = to_tensors(params, head)
        for name in tensors:
            num = numeric_gradient(agent, tensors, x, y, name)
            assert np.allclose(grads[name], num, rtol=1e-5, atol=1e-7), name


def test_duplicated_batch_has_the_same_gradient():
    agent = LstmTrainerAgent()
    rng = np.random.default_rng(4)
    params, head = random_model(rng, 3, 4)
    x = rng.normal(size=(1, 5, 3))
    single, loss1 = agent.lstm_backward(params, head, x, [2])
    double, loss2 = agent.lstm_backward(params, head, np.concatenate([x, x]), [2, 2])
    assert loss1 == pytest.approx(loss2)
    for name in single:
        assert np.allclose(single[name], double[name])


def test_zero_model_gradient_touches_only_the_output_bias():
    agent = LstmTrainerAgent()
    params, head = zero_model(3, 2)
    grads, loss = agent.lstm_backward(params, head, np.ones((1, 4, 3)), [5])
    expected = np.full(8, 1 / 8)
    expected[5] -= 1.0
    assert loss == pytest.approx(math.log(8))
    assert np.allclose(grads["b_y"], expected)
    for name in ("W_x", "W_h", "b", "W_y"):
        assert not grads[name].any()


def test_adam_matches_the_update_rule():
    agent = LstmTrainerAgent()
    config = TrainConfig(learning_rate=0.01)
    rng = np.random.default_rng(10)
    tensors = {"w": rng.normal(size=5)}
    state = AdamState.zeros_like(tensors)
    w, m, v = tensors["w"].copy(), np.zeros(5), np.zeros(5)
    for step in range(1, 11):
        g = rng.normal(size=5)
        tensors, state = agent.adam_step(tensors, {"w": g}, state, config)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)
        assert np.allclose(tensors["w"], w, rtol=1e-12, atol=1e-15)
    assert state.t == 10


def test_adam_first_step_is_about_the_learning_rate():
    agent = LstmTrainerAgent()
    tensors = {"w": np.zeros(4)}
    new, _ = agent.adam_step(tensors, {"w": np.array([3.0, -0.2, 1e-3, -50.0])}, AdamState.zeros_like(tensors), TrainConfig(learning_rate=0.001))
    assert np.allclose(np.abs(new["w"]), 0.001, rtol=1e-4)
    assert (np.sign(new["w"]) == [-1, 1, -1, 1]).all()


def test_adam_with_zero_rate_changes_nothing():
    agent = LstmTrainerAgent()
    rng = np.random.default_rng(11)
    tensors = {"w": rng.normal(size=(3, 3))}
    new, state = agent.adam_step(tensors, {"w": rng.normal(size=(3, 3))}, AdamState.zeros_like(tensors), TrainConfig(learning_rate=0.0))
    assert np.array_equal(new["w"], tensors["w"])
    assert state.t == 1


def test_splits_cover_every_shot():
    agent = LstmTrainerAgent()
    shots = corpus_shots(50)
    ids = {s.shot_id for s in shots}
    for seed in range(100):
        splits = agent.make_splits(shots, seed=seed, cycles=5, train_per_class=25)
        covered = set()
        for train, test in splits:
            assert len(train) == 200 and len(test) == 200
            assert set(train) | set(test) == ids
            assert not set(train) & set(test)
            phases = [i.split(":")[1] for i in train]
            assert all(phases.count(p.code) == 25 for p in PhaseLabel)
            covered |= set(train)
        assert covered == ids


def test_splits_are_seed_deterministic():
    agent = LstmTrainerAgent()
    shots = corpus_shots(10)
    assert agent.make_splits(shots, 3, 2, 5) == agent.make_splits(shots, 3, 2, 5)
    assert agent.make_splits(shots, 3, 2, 5) != agent.make_splits(shots, 4, 2, 5)


def test_unreachable_coverage():
    agent = LstmTrainerAgent()
    with pytest.raises(CoverageUnreachable):
        agent.make_splits(corpus_shots(50), seed=0, cycles=5, train_per_class=50)
    with pytest.raises(CoverageUnreachable):
        agent.make_splits(corpus_shots(50), seed=0, cycles=1, train_per_class=25)
    with pytest.raises(ConfigError):
        agent.make_splits(corpus_shots(5), seed=0, cycles=0, train_per_class=2)


def test_sequence_matrix_appends_elapsed_time(make_sequence):
    agent = LstmTrainerAgent()
    seq = make_sequence(np.ones((3, 2)), start_frame=1500, stride=750)
    m = agent.sequence_matrix(seq, with_time=True, time_scale=2.0)
    assert m.shape == (3, 3)
    assert m[:, 2].tolist() == pytest.approx([0.5, 0.75, 1.0])
    assert agent.sequence_matrix(seq, with_time=False).shape == (3, 2)


def test_initial_loss_is_near_uniform():
    agent = LstmTrainerAgent()
    rng = np.random.default_rng(12)
    x = rng.normal(size=(200, 10, 16))
    y = rng.integers(0, 8, size=200)
    model = agent.train_cycle(x, y, TrainConfig(hidden_size=8, epochs=1, seed=1))
    assert abs(model.initial_loss - math.log(8)) < 0.1


def test_zero_rate_keeps_the_initial_loss():
    agent = LstmTrainerAgent()
    rng = np.random.default_rng(13)
    x = rng.normal(size=(20, 4, 3))
    y = rng.integers(0, 8, size=20)
    model = agent.train_cycle(x, y, TrainConfig(hidden_size=4, epochs=2, batch_size=6, learning_rate=0.0))
    assert model.loss_trace == pytest.approx([model.initial_loss] * 2)


def separable_corpus(seed=2):
    spec = SyntheticCorpusSpec(descriptor_dim=16, separation=1.0, time_dependent=False, seed=seed)
    return SyntheticCorpusAgent().make_sequences(spec, per_phase=50, steps=10, noise=0.3)


def test_lstm_learns_separable_phases():
    agent = LstmTrainerAgent()
    sequences = separable_corpus()
    config = TrainConfig(hidden_size=32, epochs=40, learning_rate=0.003, cycles=2, train_per_class=25, seed=3)
    splits = agent.make_splits([s.shot for s in sequences], seed=3, cycles=2, train_per_class=25)
    report = agent.train(sequences, splits, config, with_time=False)
    assert len(report.cycles) == 2
    for cycle in report.cycles:
        assert cycle.micro_accuracy >= 0.95
        assert cycle.model.loss_trace[-1] < cycle.model.initial_loss
    assert report.pooled_confusion.total == 400


def test_training_is_deterministic():
    agent = LstmTrainerAgent()
    sequences = separable_corpus()
    config = TrainConfig(hidden_size=6, epochs=3, cycles=1, train_per_class=40, seed=5)
    splits = agent.make_splits([s.shot for s in sequences], seed=5, cycles=2, train_per_class=40)[:1]
    a = agent.train(sequences, splits, config, with_time=True, time_scale=60.0)
    b = agent.train(sequences, splits, config, with_time=True, time_scale=60.0)
    assert a.cycles[0].model.loss_trace == b.cycles[0].model.loss_trace
    assert np.array_equal(a.cycles[0].model.params.W_x, b.cycles[0].model.params.W_x)
    assert a.cycles[0].predictions == b.cycles[0].predictions


def test_model_file_round_trips(tmp_path):
    agent = LstmTrainerAgent()
    rng = np.random.default_rng(14)
    x = rng.normal(size=(16, 3, 5))
    y = rng.integers(0, 8, size=16)
    model = agent.train_cycle(x, y, TrainConfig(hidden_size=4, epochs=2, seed=2), cycle=3, with_time=True, time_scale=42.0)
    path = agent.save_model(model, tmp_path / "m.splm", test_shot_ids=["a:P1:0", "b:P2:10"])
    loaded, test_ids = agent.load_model(path)
    assert test_ids == ["a:P1:0", "b:P2:10"]
    for name, tensor in to_tensors(model.params, model.head).items():
        assert np.array_equal(to_tensors(loaded.params, loaded.head)[name], tensor)
    assert loaded.config == model.config
    assert loaded.loss_trace == model.loss_trace
    assert (loaded.cycle, loaded.with_time, loaded.time_scale) == (3, True, 42.0)
    probs, _ = agent.predict(loaded, x[0])
    assert np.allclose(probs, agent.predict(model, x[0])[0])


def test_missing_model_file(tmp_path):
    with pytest.raises(ConfigError):
        LstmTrainerAgent().load_model(tmp_path / "none.splm")


def test_non_finite_input_is_reported():
    agent = LstmTrainerAgent()
    params, head = zero_model(2, 2)
    params.W_x[:] = 0.1
    x = np.ones((1, 3, 2))
    x[0, 1, 0] = np.nan
    with pytest.raises(NonFiniteLoss):
        agent.lstm_backward(params, head, x, [0])


def test_elapsed_time_helps_on_overlapping_phases():
    agent = LstmTrainerAgent()
    spec = SyntheticCorpusSpec(descriptor_dim=16, separation=0.02, time_dependent=True, seed=4)
    sequences = SyntheticCorpusAgent().make_sequences(spec, per_phase=30, steps=6, noise=1.0)
    time_scale = max(float(s.elapsed_minutes[-1]) for s in sequences)
    config = TrainConfig(hidden_size=16, epochs=40, learning_rate=0.003, cycles=2, train_per_class=25, seed=4)
    splits = agent.make_splits([s.shot for s in sequences], seed=4, cycles=2, train_per_class=25)[:1]
    without = agent.train(sequences, splits, config, with_time=False)
    with_time = agent.train(sequences, splits, config, with_time=True, time_scale=time_scale)
    assert with_time.cycles[0].micro_accuracy >= without.cycles[0].micro_accuracy
    assert with_time.cycles[0].micro_accuracy > 0.25


def test_rendered_corpus_trains_with_the_default_config(tmp_path):
    # 2 fps keeps a 10 s shot at 20 frames
    spec = SyntheticCorpusSpec(num_videos=15, scale=0.001, fps=2.0, width=64, height=48, min_phase_seconds=25.0, seed=1)
    SyntheticCorpusAgent().generate_synthetic_corpus(spec, tmp_path)
    timelines = AnnotationAgent().load_corpus(tmp_path / ANNOTATION_DIR, fps=2.0)
    manifest = ShotSamplerAgent().extract_shots(timelines, seed=1, per_video_per_phase=2, per_phase_target=30)
    assert not manifest.deficits

    frames = tmp_path / FRAMES_DIR
    sequences = FeatureExtractorAgent(MockFeatureProvider()).run(
        manifest.shots, lambda vid: open_source(frames, vid), ReceptiveFieldMode.RESIZE_SQUARE, backbone("googlenet"), 5
    )
    agent = LstmTrainerAgent()
    splits = agent.make_splits(manifest.shots, seed=1, cycles=2, train_per_class=25)[:1]
    report = agent.train(sequences, splits, TrainConfig(), with_time=False)
    assert report.cycles[0].micro_accuracy >= 0.95
