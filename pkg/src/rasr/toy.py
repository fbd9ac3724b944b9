"""Toy two-stage optimization: a linear audio encoder and a tabular context-aware decoder.

The decoder scores the next symbol ``v`` at each position as::

    logits[v] = table[prev, flag, v] + (readout @ (W @ frame))[v] + flag * bag_bonus[v] * in_bag[v]

where ``W`` is the encoder, ``flag`` is the context-presence flag (forced to 0
under audio-only conditioning) and ``in_bag`` marks symbols present in the
retrieved context. It stands in for the instruction/context conditioning
structurally only; it does not emulate in-context behaviour of a language model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from rasr.errors import NonFiniteLoss

BOS, EOS = 0, 1
ENCODER, DECODER = "encoder", "decoder"
GROUPS = {ENCODER: ("W",), DECODER: ("table", "readout", "bag_bonus")}

# Learning rate of the real-scale recipe. Plain SGD on the tabular toy needs far
# larger steps: at 100x this value nothing moves within 30 epochs.
FULL_SCALE_LEARNING_RATE = 5e-5
TOY_LEARNING_RATE = 0.5


class Trainable(str, enum.Enum):
    ENCODER_ONLY = "encoder"
    DECODER_ONLY = "decoder"
    BOTH = "both"

    @property
    def groups(self) -> tuple[str, ...]:
        if self is Trainable.ENCODER_ONLY:
            return (ENCODER,)
        if self is Trainable.DECODER_ONLY:
            return (DECODER,)
        return (ENCODER, DECODER)


class Conditioning(str, enum.Enum):
    WITH_CONTEXT = "with_context"  # y_<t, instruction, Encoder(x), context
    AUDIO_ONLY = "audio_only"      # y_<t, Encoder(x)


@dataclass(frozen=True)
class Stage:
    trainable: Trainable
    conditioning: Conditioning
    epochs: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class StageSchedule:
    stages: tuple[Stage, ...]
    name: str = ""


_E2 = Conditioning.AUDIO_ONLY
_E1 = Conditioning.WITH_CONTEXT
_ENC = Trainable.ENCODER_ONLY
_DEC = Trainable.DECODER_ONLY


def named_schedule(name: str, epochs: tuple[int, int] = (10, 20)) -> StageSchedule:
    """Schedules s1..s5 of the optimization-strategy comparison.

    ``epochs`` is (first stage, second stage); s1 uses only the first entry and
    s2 trains the encoder for their sum.
    """
    a, b = epochs
    stages = {
        "s1": (Stage(_ENC, _E2, a),),
        "s2": (Stage(_ENC, _E2, a + b),),
        "s3": (Stage(_ENC, _E2, a), Stage(_DEC, _E2, b)),
        "s4": (Stage(_ENC, _E2, a), Stage(_ENC, _E1, b)),
        "s5": (Stage(_ENC, _E2, a), Stage(_DEC, _E1, b)),
    }
    try:
        return StageSchedule(stages[name.lower()], name.lower())
    except KeyError:
        raise ValueError(f"unknown schedule {name!r}") from None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = TOY_LEARNING_RATE
    batch_size: int = 128
    cosine_annealing: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ToyModel:
    params: dict[str, dict[str, np.ndarray]]

    @classmethod
    def init(cls, rng: np.random.Generator, vocab: int = 16, feat_dim: int = 8, emb_dim: int = 8,
             scale: float = 1.0) -> "ToyModel":
        return cls({
            ENCODER: {"W": rng.normal(0, scale / math.sqrt(feat_dim), (emb_dim, feat_dim))},
            DECODER: {
                "table": np.zeros((vocab, 2, vocab)),
                "readout": rng.normal(0, scale / math.sqrt(emb_dim), (vocab, emb_dim)),
                "bag_bonus": np.zeros(vocab),
            },
        })

    @classmethod
    def zeros(cls, vocab: int = 16, feat_dim: int = 8, emb_dim: int = 8) -> "ToyModel":
        return cls({
            ENCODER: {"W": np.zeros((emb_dim, feat_dim))},
            DECODER: {"table": np.zeros((vocab, 2, vocab)), "readout": np.zeros((vocab, emb_dim)),
                      "bag_bonus": np.zeros(vocab)},
        })

    @property
    def vocab(self) -> int:
        return self.params[DECODER]["table"].shape[0]

    def copy(self) -> "ToyModel":
        return ToyModel({g: {k: v.copy() for k, v in ps.items()} for g, ps in self.params.items()})

    def flat(self, group: str) -> np.ndarray:
        return np.concatenate([self.params[group][k].ravel() for k in GROUPS[group]])


@dataclass(frozen=True)
class ToyBatch:
    """Flattened next-symbol prediction positions of one or more sequences."""

    frames: np.ndarray       # (N, F) acoustic frame aligned with each target
    prev: np.ndarray         # (N,) previous symbol
    target: np.ndarray       # (N,) symbol to predict
    bag: np.ndarray          # (N, V) 1.0 where the symbol occurs in the retrieved context
    has_context: np.ndarray  # (N,) 1.0 where context was retrieved

    def __len__(self) -> int:
        return len(self.target)


@dataclass(frozen=True)
class ToySequence:
    symbols: np.ndarray  # content symbols followed by EOS
    frames: np.ndarray   # (len(symbols), F)
    bag: np.ndarray      # (V,)
    has_context: bool = True


def make_batch(seqs: list[ToySequence]) -> ToyBatch:
    if not seqs:
        raise ValueError("batch needs at least one sequence")
    prev, target, frames, bag, ctx = [], [], [], [], []
    for s in seqs:
        if len(s.symbols) == 0:
            raise ValueError("empty sequence")
        target.append(s.symbols)
        prev.append(np.concatenate([[BOS], s.symbols[:-1]]))
        frames.append(s.frames)
        bag.append(np.broadcast_to(s.bag, (len(s.symbols), len(s.bag))))
        ctx.append(np.full(len(s.symbols), 1.0 if s.has_context else 0.0))
    return ToyBatch(np.concatenate(frames), np.concatenate(prev).astype(np.int64),
                    np.concatenate(target).astype(np.int64), np.concatenate(bag), np.concatenate(ctx))


def _flags(batch: ToyBatch, conditioning: Conditioning) -> np.ndarray:
    if conditioning is Conditioning.AUDIO_ONLY:
        return np.zeros(len(batch), dtype=np.int64)
    return (batch.has_context > 0).astype(np.int64)


def _forward(model: ToyModel, batch: ToyBatch, conditioning: Conditioning):
    if len(batch) == 0:
        raise ValueError("batch has no positions")
    W = model.params[ENCODER]["W"]
    dec = model.params[DECODER]
    flag = _flags(batch, conditioning)
    hidden = batch.frames @ W.T                                       # (N, E)
    logits = (dec["table"][batch.prev, flag]
              + hidden @ dec["readout"].T
              + flag[:, None] * dec["bag_bonus"][None, :] * batch.bag)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLoss("non-finite logits")
    with np.errstate(over="ignore", invalid="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted - log_z[:, None]
    if not np.all(np.isfinite(logp)):
        raise NonFiniteLoss("non-finite log-probabilities")
    return flag, hidden, logp


def nll_loss(model: ToyModel, batch: ToyBatch, conditioning: Conditioning) -> float:
    """Mean negative log-probability of the target symbols."""
    _, _, logp = _forward(model, batch, conditioning)
    loss = float(-logp[np.arange(len(batch)), batch.target].mean())
    if not math.isfinite(loss):
        raise NonFiniteLoss("non-finite loss")
    return loss


def gradients(model: ToyModel, batch: ToyBatch, conditioning: Conditioning,
              trainable: Trainable) -> dict[str, dict[str, np.ndarray]]:
    """Analytic gradients of ``nll_loss``; only trainable groups appear as keys."""
    flag, hidden, logp = _forward(model, batch, conditioning)
    n = len(batch)
    dz = np.exp(logp)
    dz[np.arange(n), batch.target] -= 1.0
    dz /= n
    dec = model.params[DECODER]
    out: dict[str, dict[str, np.ndarray]] = {}
    if DECODER in trainable.groups:
        d_table = np.zeros_like(dec["table"])
        np.add.at(d_table, (batch.prev, flag), dz)
        d_readout = dz.T @ hidden
        d_bonus = (flag[:, None] * dz * batch.bag).sum(axis=0)
        out[DECODER] = {"table": d_table, "readout": d_readout, "bag_bonus": d_bonus}
    if ENCODER in trainable.groups:
        d_hidden = dz @ dec["readout"]
        out[ENCODER] = {"W": d_hidden.T @ batch.frames}
    return out


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    train_nll: float
    dev_nll: float

    def to_dict(self) -> dict:
        return {"stage": self.stage, "epoch": self.epoch, "train_nll": self.train_nll, "dev_nll": self.dev_nll}


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def final_dev_nll(self) -> float:
        return self.records[-1].dev_nll

    def to_dict(self) -> list[dict]:
        return [r.to_dict() for r in self.records]


def train_schedule(model: ToyModel, train: list[ToySequence], dev: list[ToySequence],
                   schedule: StageSchedule, cfg: TrainConfig = TrainConfig(),
                   on_stage_end: Callable[[int, ToyModel], None] | None = None) -> tuple[ToyModel, TrainHistory]:
    """Run each stage with plain SGD on its trainable group only.

    The step size follows a cosine from ``learning_rate`` towards 0 over each
    stage; optimizer state is reset between stages. Frozen groups are never
    written to. ``on_stage_end(stage_no, snapshot)`` receives a copy of the
    model after every stage.
    """
    if not train or not dev:
        raise ValueError("train and dev splits must be non-empty")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    dev_batch = make_batch(dev)
    train_batch = make_batch(train)
    history = TrainHistory()
    for stage_no, stage in enumerate(schedule.stages, start=1):
        steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
        total = steps_per_epoch * stage.epochs
        step = 0
        for epoch in range(1, stage.epochs + 1):
            order = rng.permutation(len(train))
            for lo in range(0, len(train), cfg.batch_size):
                batch = make_batch([train[i] for i in order[lo:lo + cfg.batch_size]])
                lr = cfg.learning_rate
                if cfg.cosine_annealing:
                    lr *= 0.5 * (1 + math.cos(math.pi * step / total))
                try:
                    grads = gradients(model, batch, stage.conditioning, stage.trainable)
                except NonFiniteLoss as exc:
                    raise NonFiniteLoss(str(exc), stage_no, epoch) from None
                for group, gs in grads.items():
                    for name, g in gs.items():
                        model.params[group][name] -= lr * g
                step += 1
            try:
                record = EpochRecord(stage_no, epoch, nll_loss(model, train_batch, stage.conditioning),
                                     nll_loss(model, dev_batch, stage.conditioning))
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(str(exc), stage_no, epoch) from None
            history.records.append(record)
        if on_stage_end is not None:
            on_stage_end(stage_no, model.copy())
    return model, history


@dataclass(frozen=True)
class DisambiguationData:
    train: list[ToySequence]
    dev: list[ToySequence]
    homophones: tuple[tuple[int, int], ...]


def make_disambiguation_data(seed: int, *, n_talks: int = 40, utts_per_talk: int = 16, dev_talks: int = 8,
                             n_pairs: int = 5, vocab: int = 16, feat_dim: int = 8, noise: float = 0.3,
                             min_len: int = 4, max_len: int = 8) -> DisambiguationData:
    """Synthetic talks in which paired symbols sound identical.

    Every talk uses one member of each homophone pair, chosen at random, and
    its context bag holds exactly those members, so only the context can tell
    the pair apart.
    """
    rng = np.random.default_rng(seed)
    content = list(range(2, vocab))
    pairs = tuple((content[2 * i], content[2 * i + 1]) for i in range(n_pairs))
    regular = content[2 * n_pairs:]
    sound_of = {EOS: 0}
    for i, (a, b) in enumerate(pairs, start=1):
        sound_of[a] = sound_of[b] = i
    for j, s in enumerate(regular, start=n_pairs + 1):
        sound_of[s] = j
    prototypes = rng.normal(0, 1, (max(sound_of.values()) + 1, feat_dim))

    talks = []
    for _ in range(n_talks):
        chosen = [p[rng.integers(2)] for p in pairs]
        active = np.array(chosen + regular)
        bag = np.zeros(vocab)
        bag[chosen] = 1.0
        seqs = []
        for _ in range(utts_per_talk):
            length = int(rng.integers(min_len, max_len + 1))
            symbols = np.append(rng.choice(active, size=length), EOS)
            frames = prototypes[[sound_of[int(s)] for s in symbols]] + rng.normal(0, noise, (len(symbols), feat_dim))
            seqs.append(ToySequence(symbols, frames, bag))
        talks.append(seqs)
    train = [s for t in talks[dev_talks:] for s in t]
    dev = [s for t in talks[:dev_talks] for s in t]
    return DisambiguationData(train, dev, pairs)
