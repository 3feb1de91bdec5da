# agents/lstm_trainer_agent.py
from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax
from tqdm import tqdm

from agents.report_agent import ReportAgent
from models.features import ShotDescriptorSequence
from models.lstm import (
    NUM_CLASSES,
    AdamState,
    ClassifierHead,
    CycleResult,
    ForwardResult,
    LstmParams,
    TrainConfig,
    TrainedModel,
    TrainingReport,
    from_tensors,
    to_tensors,
)
from models.metrics import ConfusionMatrix, MetricRow
from models.phase import PhaseLabel
from models.shot import Shot
from utils.binary_io import atomic_write, decode_model, encode_model
from utils.errors import (
    ConfigError,
    CoverageUnreachable,
    DataError,
    DimensionMismatch,
    EmptyInput,
    EmptySequence,
    LengthMismatch,
    NonFiniteLoss,
)
from utils.log import get_logger

logger = get_logger(__name__)

MAX_SPLIT_ATTEMPTS = 10_000

Split = Tuple[List[str], List[str]]


class LstmTrainerAgent:
    """
    Single-layer LSTM over per-frame descriptor sequences, classified from the
    last hidden state. Forward, backpropagation through time and Adam are
    written out in numpy (float64) so gradients can be checked numerically.
    """

    def __init__(self, report: Optional[ReportAgent] = None):
        self.report = report or ReportAgent()

    # ----------------------
    # cell math
    # ----------------------

    def lstm_forward(self, params: LstmParams, head: ClassifierHead, sequence: np.ndarray) -> ForwardResult:
        x = np.asarray(sequence, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptySequence("LSTM input must be a non-empty (T, D) sequence")
        if x.shape[1] != params.input_size:
            raise DimensionMismatch(x.shape[1], params.input_size, what="LSTM input")
        cache = _forward_batch(params, head, x[None, :, :])
        return ForwardResult(
            hidden=cache["h"][1:, 0, :].copy(),
            logits=cache["logits"][0].copy(),
            probabilities=cache["probs"][0].copy(),
        )

    def lstm_backward(
        self,
        params: LstmParams,
        head: ClassifierHead,
        sequences: np.ndarray,
        labels: Sequence[int],
    ) -> Tuple[Dict[str, np.ndarray], float]:
        """
        `sequences` is (B, T, D); `labels` are class indices 0..7.
        Returns gradients keyed like TENSOR_ORDER and the mean batch loss.
        """
        x = np.asarray(sequences, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if x.ndim != 3 or x.shape[0] == 0 or x.shape[1] == 0:
            raise EmptySequence("LSTM batch must be a non-empty (B, T, D) array")
        if x.shape[0] != y.shape[0]:
            raise LengthMismatch(x.shape[0], y.shape[0])
        if x.shape[2] != params.input_size:
            raise DimensionMismatch(x.shape[2], params.input_size, what="LSTM input")

        cache = _forward_batch(params, head, x)
        batch, steps, _ = x.shape
        hsize = params.hidden_size
        rows = np.arange(batch)

        loss = float(-np.mean(cache["log_probs"][rows, y]))
        if not math.isfinite(loss):
            raise NonFiniteLoss(loss)

        dlogits = cache["probs"].copy()
        dlogits[rows, y] -= 1.0
        dlogits /= batch

        h_last = cache["h"][-1]
        grads = {
            "W_y": dlogits.T @ h_last,
            "b_y": dlogits.sum(axis=0),
            "W_x": np.zeros_like(params.W_x),
            "W_h": np.zeros_like(params.W_h),
            "b": np.zeros_like(params.b),
        }

        dh = dlogits @ head.W_y
        dc = np.zeros((batch, hsize))
        for t in reversed(range(steps)):
            i, f, g, o = cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t]
            c_prev, tanh_c = cache["c"][t], cache["tanh_c"][t]

            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev

            dz = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g**2), do * o * (1.0 - o)],
                axis=1,
            )
            grads["W_x"] += dz.T @ x[:, t, :]
            grads["W_h"] += dz.T @ cache["h"][t]
            grads["b"] += dz.sum(axis=0)

            dh = dz @ params.W_h
            dc = dc * f

        for grad in grads.values():
            if not np.isfinite(grad).all():
                raise NonFiniteLoss(loss)
        return grads, loss

    def adam_step(
        self,
        tensors: Dict[str, np.ndarray],
        grads: Dict[str, np.ndarray],
        state: AdamState,
        config: TrainConfig,
    ) -> Tuple[Dict[str, np.ndarray], AdamState]:
        t = state.t + 1
        b1, b2 = config.adam_beta1, config.adam_beta2
        new_tensors: Dict[str, np.ndarray] = {}
        new_m: Dict[str, np.ndarray] = {}
        new_v: Dict[str, np.ndarray] = {}
        for name in tensors:
            g = grads[name]
            m = b1 * state.m[name] + (1.0 - b1) * g
            v = b2 * state.v[name] + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            new_tensors[name] = tensors[name] - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
            new_m[name] = m
            new_v[name] = v
        return new_tensors, AdamState(m=new_m, v=new_v, t=t)

    def init_params(
        self,
        input_size: int,
        hidden_size: int,
        rng: np.random.Generator,
        forget_bias: float = 1.0,
    ) -> Tuple[LstmParams, ClassifierHead]:
        """Uniform fan-based weights; zero biases except the forget block."""

        def uniform(rows: int, cols: int) -> np.ndarray:
            limit = math.sqrt(6.0 / (rows + cols))
            return rng.uniform(-limit, limit, size=(rows, cols))

        h = hidden_size
        b = np.zeros(4 * h)
        b[h : 2 * h] = forget_bias
        params = LstmParams(W_x=uniform(4 * h, input_size), W_h=uniform(4 * h, h), b=b)
        head = ClassifierHead(W_y=uniform(NUM_CLASSES, h), b_y=np.zeros(NUM_CLASSES))
        return params, head

    # ----------------------
    # protocol
    # ----------------------

    def make_splits(self, shots: Sequence[Shot], seed: int, cycles: int, train_per_class: int) -> List[Split]:
        """
        `cycles` stratified splits with exactly `train_per_class` shots per phase in
        train; across cycles every shot lands in some train set at least once.
        """
        if cycles < 1 or train_per_class < 1:
            raise ConfigError("cycles and train_per_class must be positive")
        by_phase: Dict[PhaseLabel, List[str]] = {}
        for shot in shots:
            by_phase.setdefault(shot.phase, []).append(shot.shot_id)
        if not by_phase:
            raise EmptyInput("no shots to split")

        for phase, ids in sorted(by_phase.items()):
            if len(ids) <= train_per_class:
                raise CoverageUnreachable(
                    f"{phase.code} has {len(ids)} shots; {train_per_class} train leaves no test shot"
                )
            if cycles * train_per_class < len(ids):
                raise CoverageUnreachable(
                    f"{phase.code}: {cycles} cycles x {train_per_class} train cannot cover {len(ids)} shots"
                )

        for attempt in range(MAX_SPLIT_ATTEMPTS):
            rng = np.random.default_rng([seed, attempt])
            train_sets: List[set] = [set() for _ in range(cycles)]
            for phase in sorted(by_phase):
                ids = by_phase[phase]
                uncovered = list(ids)
                for cycle in range(cycles):
                    remaining = cycles - cycle
                    need = min(train_per_class, len(uncovered), -(-len(uncovered) // remaining))
                    picked = set(rng.choice(uncovered, size=need, replace=False).tolist()) if need else set()
                    rest = [i for i in ids if i not in picked]
                    fill = train_per_class - need
                    if fill:
                        picked |= set(rng.choice(rest, size=fill, replace=False).tolist())
                    train_sets[cycle] |= picked
                    uncovered = [i for i in uncovered if i not in picked]

            covered = set().union(*train_sets)
            if all(s.shot_id in covered for s in shots):
                if attempt:
                    logger.debug("splits covered every shot after %d attempts", attempt + 1)
                order = [s.shot_id for s in shots]
                return [
                    ([i for i in order if i in train], [i for i in order if i not in train])
                    for train in train_sets
                ]
        raise CoverageUnreachable(f"no covering splits after {MAX_SPLIT_ATTEMPTS} attempts")

    def sequence_matrix(self, sequence: ShotDescriptorSequence, with_time: bool, time_scale: float = 1.0) -> np.ndarray:
        """(T, n) descriptors, plus the per-step elapsed minutes / time_scale column when `with_time`."""
        values = np.asarray(sequence.descriptors, dtype=np.float64)
        if values.shape[0] == 0:
            raise EmptySequence(f"no descriptors for shot {sequence.shot.shot_id}")
        if not with_time:
            return values
        if time_scale <= 0:
            raise ConfigError("time_scale must be positive")
        elapsed = np.asarray(sequence.elapsed_minutes, dtype=np.float64) / time_scale
        return np.concatenate([values, elapsed[:, None]], axis=1)

    def train(
        self,
        sequences: Sequence[ShotDescriptorSequence],
        splits: Sequence[Split],
        config: TrainConfig,
        with_time: bool = True,
        time_scale: float = 1.0,
    ) -> TrainingReport:
        if not splits:
            raise ConfigError("training needs at least one split")
        _validate_train_config(config)
        by_id = {s.shot.shot_id: s for s in sequences}
        lengths = {len(s) for s in sequences}
        if len(lengths) != 1:
            raise LengthMismatch(min(lengths), max(lengths))

        logger.info(
            "🔎 Training LSTM (H=%d) on %d cycles, %d epochs, time %s",
            config.hidden_size, len(splits), config.epochs, "on" if with_time else "off",
        )
        cycles: List[CycleResult] = []
        for cycle, (train_ids, test_ids) in enumerate(
            tqdm(splits, desc="cycles", unit="cycle", disable=len(splits) < 2), start=1
        ):
            missing = [i for i in list(train_ids) + list(test_ids) if i not in by_id]
            if missing:
                raise DataError(f"{len(missing)} split shots are not in the feature cache (e.g. {missing[0]})")
            x_train, y_train = self._stack([by_id[i] for i in train_ids], with_time, time_scale)
            model = self.train_cycle(x_train, y_train, config, cycle, with_time, time_scale)

            preds = [self.predict(model, self.sequence_matrix(by_id[i], with_time, time_scale))[1] for i in test_ids]
            truths = [by_id[i].shot.phase for i in test_ids]
            result = self.report.metrics(preds, truths)
            logger.info(
                "✅ cycle %d: Acc %.3f Pre %.3f Rec %.3f F1 %.3f (micro %.3f)",
                cycle, result.macro.acc, result.macro.pre, result.macro.rec, result.macro.f1, result.micro_accuracy,
            )
            cycles.append(
                CycleResult(
                    cycle=cycle,
                    model=model,
                    metrics=result.macro,
                    micro_accuracy=result.micro_accuracy,
                    confusion=result.confusion,
                    test_shot_ids=list(test_ids),
                    predictions=[p.code for p in preds],
                )
            )

        rows = np.array([[c.metrics.acc, c.metrics.pre, c.metrics.rec, c.metrics.f1] for c in cycles])
        pooled = ConfusionMatrix()
        for c in cycles:
            pooled = pooled + c.confusion
        return TrainingReport(
            cycles=cycles,
            mean=MetricRow(*rows.mean(axis=0).tolist()),
            std=MetricRow(*rows.std(axis=0).tolist()),
            pooled_confusion=pooled,
        )

    def train_cycle(
        self,
        x_train: np.ndarray,
        y_train: np.ndarray,
        config: TrainConfig,
        cycle: int = 1,
        with_time: bool = True,
        time_scale: float = 1.0,
    ) -> TrainedModel:
        rng = np.random.default_rng([config.seed, cycle])
        params, head = self.init_params(x_train.shape[2], config.hidden_size, rng, config.forget_bias)
        tensors = to_tensors(params, head)
        state = AdamState.zeros_like(tensors)

        _, initial_loss = self.lstm_backward(params, head, x_train, y_train)
        trace: List[float] = []
        n = x_train.shape[0]
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for batch_no, start in enumerate(range(0, n, config.batch_size)):
                idx = order[start : start + config.batch_size]
                try:
                    grads, loss = self.lstm_backward(params, head, x_train[idx], y_train[idx])
                except NonFiniteLoss as e:
                    logger.error("❌ cycle %d: non-finite loss at epoch %d batch %d", cycle, epoch, batch_no)
                    raise NonFiniteLoss(e.loss, epoch=epoch, batch=batch_no) from e
                tensors, state = self.adam_step(tensors, grads, state, config)
                params, head = from_tensors(tensors)
                total += loss * len(idx)
            trace.append(total / n)
            logger.debug("cycle %d epoch %d loss %.5f", cycle, epoch, trace[-1])

        return TrainedModel(
            params=params,
            head=head,
            config=config,
            seed=config.seed,
            loss_trace=trace,
            initial_loss=initial_loss,
            cycle=cycle,
            with_time=with_time,
            time_scale=time_scale,
        )

    def predict(self, model: TrainedModel, sequence: np.ndarray) -> Tuple[np.ndarray, PhaseLabel]:
        out = self.lstm_forward(model.params, model.head, sequence)
        return out.probabilities, PhaseLabel.from_index(int(np.argmax(out.probabilities)))

    def evaluate(
        self,
        model: TrainedModel,
        sequences: Sequence[ShotDescriptorSequence],
        shot_ids: Optional[Sequence[str]] = None,
    ):
        """Metrics of `model` on the given shots (all cached shots when `shot_ids` is None)."""
        by_id = {s.shot.shot_id: s for s in sequences}
        ids = list(shot_ids) if shot_ids else list(by_id)
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"{len(missing)} shots are not in the feature cache (e.g. {missing[0]})")
        preds = [
            self.predict(model, self.sequence_matrix(by_id[i], model.with_time, model.time_scale))[1] for i in ids
        ]
        return self.report.metrics(preds, [by_id[i].shot.phase for i in ids]), ids, preds

    # ----------------------
    # model file
    # ----------------------

    def save_model(self, model: TrainedModel, path: str | Path, test_shot_ids: Sequence[str] = ()) -> Path:
        trailer = {
            "config": model.config.to_dict(),
            "seed": model.seed,
            "loss_trace": list(model.loss_trace),
            "initial_loss": model.initial_loss,
            "cycle": model.cycle,
            "with_time": model.with_time,
            "time_scale": model.time_scale,
            "test_shot_ids": list(test_shot_ids),
        }
        return atomic_write(path, encode_model(to_tensors(model.params, model.head), trailer))

    def load_model(self, path: str | Path) -> Tuple[TrainedModel, List[str]]:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"model file not found: {path}")
        tensors, trailer = decode_model(path.read_bytes(), num_classes=NUM_CLASSES)
        params, head = from_tensors(tensors)
        model = TrainedModel(
            params=params,
            head=head,
            config=TrainConfig.from_dict(trailer.get("config", {})),
            seed=int(trailer.get("seed", 0)),
            loss_trace=[float(v) for v in trailer.get("loss_trace", [])],
            initial_loss=trailer.get("initial_loss"),
            cycle=int(trailer.get("cycle", 0)),
            with_time=bool(trailer.get("with_time", True)),
            time_scale=float(trailer.get("time_scale", 1.0)),
        )
        return model, [str(i) for i in trailer.get("test_shot_ids", [])]

    # ----------------------
    # helpers
    # ----------------------

    def _stack(self, sequences: Sequence[ShotDescriptorSequence], with_time: bool,
               time_scale: float) -> Tuple[np.ndarray, np.ndarray]:
        x = np.stack([self.sequence_matrix(s, with_time, time_scale) for s in sequences])
        y = np.array([s.shot.phase.index for s in sequences], dtype=np.int64)
        return x, y


def _forward_batch(params: LstmParams, head: ClassifierHead, x: np.ndarray) -> Dict[str, np.ndarray]:
    """Runs the cell over (B, T, D); keeps every intermediate BPTT needs."""
    batch, steps, _ = x.shape
    hsize = params.hidden_size
    h = np.zeros((steps + 1, batch, hsize))
    c = np.zeros((steps + 1, batch, hsize))
    gates = {k: np.zeros((steps, batch, hsize)) for k in ("i", "f", "g", "o")}
    tanh_c = np.zeros((steps, batch, hsize))

    for t in range(steps):
        z = x[:, t, :] @ params.W_x.T + h[t] @ params.W_h.T + params.b
        i = expit(z[:, :hsize])
        f = expit(z[:, hsize : 2 * hsize])
        g = np.tanh(z[:, 2 * hsize : 3 * hsize])
        o = expit(z[:, 3 * hsize :])
        c[t + 1] = f * c[t] + i * g
        tanh_c[t] = np.tanh(c[t + 1])
        h[t + 1] = o * tanh_c[t]
        gates["i"][t], gates["f"][t], gates["g"][t], gates["o"][t] = i, f, g, o

    logits = h[-1] @ head.W_y.T + head.b_y
    # c[t] here is the cell state entering step t
    return {
        "h": h,
        "c": c[:-1],
        "tanh_c": tanh_c,
        "logits": logits,
        "probs": softmax(logits, axis=1),
        "log_probs": log_softmax(logits, axis=1),
        **gates,
    }


def _validate_train_config(config: TrainConfig) -> None:
    for name in ("hidden_size", "batch_size", "epochs", "cycles", "train_per_class"):
        if int(getattr(config, name)) < 1:
            raise ConfigError(f"train.{name} must be >= 1")
    if config.learning_rate < 0 or not (0 <= config.adam_beta1 < 1) or not (0 <= config.adam_beta2 < 1):
        raise ConfigError("invalid Adam settings")
