"""Adam, gradient-accumulated batch training, evaluation and checkpoints."""

from __future__ import annotations

import io
import json
import logging
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ctc
from .corpus import make_batches
from .dsp import AudioClip, FeatureConfig, log_mel, mix_noise, normalize_features, random_stretch, resample
from .model import NetworkConfig, NetworkParams, init_params, network_backward, network_forward
from .translit import Alphabet, decode_ids

log = logging.getLogger(__name__)

TARGET_RATE_HZ = 16000


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_steps: int = 1000
    batch_size: int = 18
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0  # 0: only at the end
    augment_noise: bool = False
    augment_stretch: bool = False
    stretch_range: tuple[float, float] = (0.9, 1.1)
    snr_range_db: tuple[float, float] = (5.0, 20.0)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        object.__setattr__(self, "stretch_range", tuple(self.stretch_range))
        object.__setattr__(self, "snr_range_db", tuple(self.snr_range_db))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stretch_range"] = list(self.stretch_range)
        d["snr_range_db"] = list(self.snr_range_db)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# --------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, beta1, beta2, eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ValueError("parameter, gradient and optimiser names differ")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# --------------------------------------------------------------------------
# per-utterance pipeline


@dataclass
class Utterance:
    key: str
    clip: AudioClip
    labels: list[int]
    text: str = ""


def featurize(clip: AudioClip, feature_config: FeatureConfig, rng: np.random.Generator | None = None,
              train_config: TrainConfig | None = None, noises: Sequence[AudioClip] = ()) -> np.ndarray:
    """Resample, optionally augment, then log-mel and normalise to the (M, T) network input."""
    clip = resample(clip, TARGET_RATE_HZ)
    if train_config is not None and rng is not None:
        if train_config.augment_noise and noises:
            noise = resample(noises[int(rng.integers(len(noises)))], TARGET_RATE_HZ)
            snr = float(rng.uniform(*train_config.snr_range_db))
            clip = mix_noise(clip, noise, snr, rng)
        if train_config.augment_stretch:
            clip = random_stretch(clip, train_config.stretch_range, rng)
    return normalize_features(log_mel(clip, feature_config))


def utterance_gradients(features: np.ndarray, labels: Sequence[int], params: NetworkParams):
    logits, cache = network_forward(features, params, "train")
    result = ctc.ctc_loss(ctc.log_softmax(logits), labels)
    return result.nll, network_backward(result.grad_logits, cache)


@dataclass
class BatchResult:
    loss: float
    grads: dict[str, np.ndarray]
    used: int
    skipped: int


def batch_gradients(features: Sequence[np.ndarray], labels: Sequence[Sequence[int]],
                    params: NetworkParams) -> BatchResult:
    """Mean loss and mean gradient over the feasible utterances of a batch."""
    total = {k: np.zeros_like(v) for k, v in params.named_tensors().items()}
    loss = 0.0
    used = skipped = 0
    for x, y in zip(features, labels):
        if x.shape[1] < max(2, ctc.min_frames(y)):
            skipped += 1
            log.warning("skipping utterance: %d frames cannot carry %d labels", x.shape[1], len(y))
            continue
        nll, grads = utterance_gradients(x, y, params)
        loss += nll
        for k, g in grads.items():
            total[k] += g
        used += 1
    if used == 0:
        raise ValueError("no feasible utterance in batch")
    for g in total.values():
        g /= used
    return BatchResult(loss / used, total, used, skipped)


@dataclass
class StepResult:
    loss: float
    skipped: int


def train_step(features, labels, params: NetworkParams, opt_state: AdamState, lr: float) -> StepResult:
    result = batch_gradients(features, labels, params)
    adam_step(params.named_tensors(), result.grads, opt_state, lr)
    return StepResult(result.loss, result.skipped)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    ler_percent: float
    accuracy_percent: float
    keys: list[str]
    references: list[str]
    hypotheses: list[str]
    distances: list[int]
    skipped: int = 0

    @property
    def total_reference_symbols(self) -> int:
        return sum(len(r) for r in self.references)

    @property
    def total_edits(self) -> int:
        return sum(self.distances)


def transcribe_features(features: np.ndarray, params: NetworkParams) -> list[int]:
    if features.shape[1] == 0:
        return []
    logits, _ = network_forward(features, params, "infer")
    return ctc.greedy_decode(ctc.log_softmax(logits))


def report_from_pairs(keys, references: Sequence[str], hypotheses: Sequence[str]) -> EvalReport:
    distances = [ctc.edit_distance(r, h) for r, h in zip(references, hypotheses)]
    ler = ctc.label_error_rate(list(zip(references, hypotheses)))
    return EvalReport(ler, max(0.0, 100.0 - ler), list(keys), list(references), list(hypotheses), distances)


def evaluate(utterances: Sequence[Utterance], params: NetworkParams, alphabet: Alphabet,
             feature_config: FeatureConfig) -> EvalReport:
    if not utterances:
        raise ValueError("empty evaluation set")
    refs, hyps = [], []
    for u in utterances:
        ids = transcribe_features(featurize(u.clip, feature_config), params)
        refs.append(decode_ids(u.labels, alphabet))
        hyps.append(decode_ids(ids, alphabet))
    return report_from_pairs([u.key for u in utterances], refs, hyps)


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"CVCTCKPT"
TRAILER = b"CVCTCEND"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    network_config: NetworkConfig
    tensors: dict[str, np.ndarray]  # parameters and batch-norm buffers
    adam: AdamState
    step: int
    rng_state: dict
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    alphabet: tuple[str, ...] = ()
    format_version: int = FORMAT_VERSION


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically: a temp file in the same directory is renamed over ``path``."""
    meta = {
        "network_config": ckpt.network_config.to_dict(),
        "feature_config": ckpt.feature_config.to_dict(),
        "alphabet": list(ckpt.alphabet),
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "adam": {"step": ckpt.adam.step, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
    }
    records = [(f"param/{k}", v) for k, v in ckpt.tensors.items()]
    records += [(f"adam_m/{k}", v) for k, v in ckpt.adam.m.items()]
    records += [(f"adam_v/{k}", v) for k, v in ckpt.adam.v.items()]
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", ckpt.format_version, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _write_tensor(buf, name, arr)
    buf.write(TRAILER)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, meta_len = r.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    (n_records,) = r.unpack("<I")
    tensors, m, v = {}, {}, {}
    for _ in range(n_records):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        kind, _, key = name.partition("/")
        {"param": tensors, "adam_m": m, "adam_v": v}.get(kind, {})[key] = arr
    if r.take(len(TRAILER)) != TRAILER or r.pos != len(r.data):
        raise CheckpointError("checkpoint trailer missing or trailing bytes present")
    a = meta["adam"]
    return Checkpoint(
        network_config=NetworkConfig.from_dict(meta["network_config"]),
        tensors=tensors,
        adam=AdamState(m, v, a["step"], a["beta1"], a["beta2"], a["eps"]),
        step=meta["step"],
        rng_state=meta["rng_state"],
        feature_config=FeatureConfig.from_dict(meta["feature_config"]),
        alphabet=tuple(meta["alphabet"]),
        format_version=version,
    )


def params_from_checkpoint(ckpt: Checkpoint) -> NetworkParams:
    params = init_params(ckpt.network_config, seed=0)
    targets = {**params.named_tensors(), **params.named_buffers()}
    if targets.keys() != ckpt.tensors.keys():
        missing = sorted(targets.keys() ^ ckpt.tensors.keys())
        raise CheckpointError(f"checkpoint tensors do not match the architecture: {missing[:5]}")
    for k, arr in ckpt.tensors.items():
        if targets[k].shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {k}: {arr.shape} vs {targets[k].shape}")
        targets[k][...] = arr
    return params


# --------------------------------------------------------------------------
# training driver


class Trainer:
    """Owns parameters, optimiser state and augmentation RNG for one run.

    Batch order is a pure function of (seed, step): the training list is
    reshuffled with seed ``seed + epoch`` at each epoch boundary.
    """

    def __init__(self, utterances: Sequence[Utterance], network_config: NetworkConfig,
                 train_config: TrainConfig, feature_config: FeatureConfig = FeatureConfig(),
                 alphabet: Alphabet | None = None, noises: Sequence[AudioClip] = ()):
        if not utterances:
            raise ValueError("no training utterances")
        self.utterances = list(utterances)
        self.network_config = network_config
        self.config = train_config
        self.feature_config = feature_config
        self.alphabet = alphabet
        self.noises = list(noises)
        self.params = init_params(network_config, seed=train_config.seed)
        self.opt = AdamState.zeros_like(self.params.named_tensors(), train_config.beta1,
                                        train_config.beta2, train_config.adam_eps)
        self.rng = np.random.default_rng(train_config.seed)
        self.step = 0
        self.skipped = 0
        self._feature_cache: dict[int, np.ndarray] = {}

    @property
    def augmenting(self) -> bool:
        return self.config.augment_stretch or (self.config.augment_noise and bool(self.noises))

    def _features(self, idx: int) -> np.ndarray:
        if self.augmenting:
            return featurize(self.utterances[idx].clip, self.feature_config, self.rng, self.config, self.noises)
        if idx not in self._feature_cache:
            self._feature_cache[idx] = featurize(self.utterances[idx].clip, self.feature_config)
        return self._feature_cache[idx]

    def batch_indices(self, step: int) -> list[int]:
        n_batches = -(-len(self.utterances) // self.config.batch_size)
        epoch, within = divmod(step, n_batches)
        batches = make_batches(range(len(self.utterances)), self.config.batch_size, self.config.seed + epoch)
        return batches[within]

    def train_step(self) -> StepResult:
        idx = self.batch_indices(self.step)
        feats = [self._features(i) for i in idx]
        labels = [self.utterances[i].labels for i in idx]
        result = train_step(feats, labels, self.params, self.opt, self.config.learning_rate)
        self.step += 1
        self.skipped += result.skipped
        return result

    def run(self, until_step: int | None = None,
            on_step: Callable[[int, StepResult], None] | None = None) -> list[float]:
        until = self.config.max_steps if until_step is None else until_step
        losses = []
        while self.step < until:
            res = self.train_step()
            losses.append(res.loss)
            if on_step is not None:
                on_step(self.step, res)
        return losses

    def checkpoint(self) -> Checkpoint:
        tensors = {k: v.copy() for k, v in {**self.params.named_tensors(), **self.params.named_buffers()}.items()}
        adam = AdamState({k: v.copy() for k, v in self.opt.m.items()}, {k: v.copy() for k, v in self.opt.v.items()},
                         self.opt.step, self.opt.beta1, self.opt.beta2, self.opt.eps)
        return Checkpoint(self.network_config, tensors, adam, self.step, self.rng.bit_generator.state,
                          self.feature_config, tuple(self.alphabet.symbols) if self.alphabet else ())

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.network_config != self.network_config:
            raise CheckpointError("checkpoint architecture differs from the configured network")
        self.params = params_from_checkpoint(ckpt)
        self.opt = AdamState({k: v.copy() for k, v in ckpt.adam.m.items()}, {k: v.copy() for k, v in ckpt.adam.v.items()},
                             ckpt.adam.step, ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps)
        self.rng.bit_generator.state = ckpt.rng_state
        self.step = ckpt.step
