"""Classifier heads over frozen contextual token embeddings.

Four architectures, all ending in a 3-way softmax over (NE, OT, UT):

``weighted_gru``  GRU, final state, linear; trained with class-weighted loss
``gru_cnn``       GRU whose per-position outputs feed three stacked convolutions
``cnn``           four stacked convolutions over the embeddings
``hybrid``        ``gru_cnn`` and ``cnn`` branches side by side, pooled
                  features concatenated into one linear layer
"""

from __future__ import annotations

import copy
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from . import __version__
from .corpus import SubtitlePair, tokenize
from .encoders import EncoderBundle, contextual_encode

logger = logging.getLogger(__name__)

ARCHITECTURES = ("weighted_gru", "gru_cnn", "cnn", "hybrid")


class ClassLabel(IntEnum):
    NE = 0
    OT = 1
    UT = 2


CLASS_NAMES = tuple(c.name for c in ClassLabel)


class TrainingDiverged(RuntimeError):
    pass


class NotTrainedError(RuntimeError):
    pass


class FingerprintMismatch(ValueError):
    pass


@dataclass
class HeadConfig:
    arch: str = "hybrid"
    hidden_dim: int = 128
    gru_layers: int = 1
    cnn_channels: int = 64
    kernel_sizes: list = field(default_factory=lambda: [3, 4, 5])
    dropout: float = 0.1
    # None: inverse class frequency of the training set (weighted_gru only)
    class_weights: Optional[list] = None

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown arch {self.arch!r}; valid: {', '.join(ARCHITECTURES)}")
        if min(self.hidden_dim, self.gru_layers, self.cnn_channels) <= 0 or not self.kernel_sizes:
            raise ValueError("dimensions must be positive")
        if any(k <= 0 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.class_weights is not None and (len(self.class_weights) != 3 or min(self.class_weights) <= 0):
            raise ValueError("class_weights needs three positive numbers")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    batch_size: int = 32
    max_epochs: int = 20
    # epochs without validation-accuracy gain before stopping; None disables
    patience: Optional[int] = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning rate, batch size and epochs must be positive")
        self.betas = tuple(self.betas)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _masked_max(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # x: (B, C, L), mask: (B, L)
    return x.masked_fill(~mask[:, None, :], float("-inf")).max(dim=2).values


class ConvStack(nn.Module):
    """Stacked same-padded 1-d convolutions; padding positions are zeroed after each layer."""

    def __init__(self, in_dim: int, channels: int, kernel_sizes: Sequence[int], dropout: float):
        super().__init__()
        self.convs = nn.ModuleList()
        d = in_dim
        self.pads = []
        for k in kernel_sizes:
            self.convs.append(nn.Conv1d(d, channels, k))
            # "same" length output; even kernels put the extra zero on the right
            self.pads.append(((k - 1) // 2, k - 1 - (k - 1) // 2))
            d = channels
        self.drop = nn.Dropout(dropout)
        self.out_dim = channels

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = x.transpose(1, 2)
        m = mask[:, None, :].to(h.dtype)
        for conv, pad in zip(self.convs, self.pads):
            h = self.drop(torch.relu(conv(nn.functional.pad(h, pad)))) * m
        return _masked_max(h, mask)


class GRUEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int, layers: int, dropout: float):
        super().__init__()
        self.gru = nn.GRU(in_dim, hidden, layers, batch_first=True, dropout=dropout if layers > 1 else 0.0)
        self.out_dim = hidden

    def forward(self, x: torch.Tensor, lengths: torch.Tensor):
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, h_n = self.gru(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
        return out, h_n[-1]


class WeightedGRUHead(nn.Module):
    def __init__(self, cfg: HeadConfig, input_dim: int):
        super().__init__()
        self.gru = GRUEncoder(input_dim, cfg.hidden_dim, cfg.gru_layers, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(cfg.hidden_dim, 3)
        self.feature_dim = cfg.hidden_dim

    def forward(self, x, mask):
        _, final = self.gru(x, mask.sum(1))
        return self.out(self.drop(final))


class GRUCNNBranch(nn.Module):
    def __init__(self, cfg: HeadConfig, input_dim: int):
        super().__init__()
        self.gru = GRUEncoder(input_dim, cfg.hidden_dim, cfg.gru_layers, cfg.dropout)
        self.convs = ConvStack(cfg.hidden_dim, cfg.cnn_channels, _cycle(cfg.kernel_sizes, 3), cfg.dropout)
        self.out_dim = self.convs.out_dim

    def forward(self, x, mask):
        seq, _ = self.gru(x, mask.sum(1))
        return self.convs(seq, mask)


def _cycle(ks, n):
    return [ks[i % len(ks)] for i in range(n)]


class CNNBranch(nn.Module):
    def __init__(self, cfg: HeadConfig, input_dim: int):
        super().__init__()
        self.convs = ConvStack(input_dim, cfg.cnn_channels, _cycle(cfg.kernel_sizes, 4), cfg.dropout)
        self.out_dim = self.convs.out_dim

    def forward(self, x, mask):
        return self.convs(x, mask)


class BranchHead(nn.Module):
    """One or more pooled branches, concatenated, then a shared linear layer."""

    def __init__(self, branches: Sequence[nn.Module], dropout: float):
        super().__init__()
        self.branches = nn.ModuleList(branches)
        self.feature_dim = sum(b.out_dim for b in branches)
        self.drop = nn.Dropout(dropout)
        self.out = nn.Linear(self.feature_dim, 3)

    def features(self, x, mask):
        return torch.cat([b(x, mask) for b in self.branches], dim=1)

    def forward(self, x, mask):
        return self.out(self.drop(self.features(x, mask)))


class Classifier(nn.Module):
    """A head plus its config; ``forward`` returns logits, ``predict_proba`` softmax rows."""

    def __init__(self, cfg: HeadConfig, input_dim: int):
        super().__init__()
        self.cfg = cfg
        self.input_dim = input_dim
        if cfg.arch == "weighted_gru":
            self.head = WeightedGRUHead(cfg, input_dim)
        elif cfg.arch == "gru_cnn":
            self.head = BranchHead([GRUCNNBranch(cfg, input_dim)], cfg.dropout)
        elif cfg.arch == "cnn":
            self.head = BranchHead([CNNBranch(cfg, input_dim)], cfg.dropout)
        elif cfg.arch == "hybrid":
            self.head = BranchHead([GRUCNNBranch(cfg, input_dim), CNNBranch(cfg, input_dim)], cfg.dropout)
        else:
            raise ValueError(f"unknown arch {cfg.arch!r}; valid: {', '.join(ARCHITECTURES)}")
        self.trained = False
        self.fingerprint: Optional[str] = None
        self.seed: Optional[int] = None

    @property
    def feature_dim(self) -> int:
        return self.head.feature_dim

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.head(x, mask)

    def predict_proba(self, x, mask) -> torch.Tensor:
        return torch.softmax(self.forward(x, mask), dim=-1)


def build_head(cfg: HeadConfig, input_dim: int, seed: Optional[int] = None) -> Classifier:
    """Fresh head; pass ``seed`` for reproducible initial weights."""
    if input_dim <= 0:
        raise ValueError("input_dim must be positive")
    if seed is not None:
        torch.manual_seed(seed)
    return Classifier(cfg, input_dim)


# ---------------------------------------------------------------------------
# Data plumbing
# ---------------------------------------------------------------------------

def encode_pair(pair: SubtitlePair, bundle: EncoderBundle) -> np.ndarray:
    return contextual_encode(
        tokenize(pair.source_text, pair.source_lang),
        tokenize(pair.target_text, pair.target_lang),
        bundle.contextual,
    )


def collate(mats: Sequence[np.ndarray], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero-pad a list of (L_i, d) matrices to (B, L_max, d) plus a boolean mask."""
    lengths = [m.shape[0] for m in mats]
    width = mats[0].shape[1]
    x = torch.zeros(len(mats), max(lengths), width, dtype=dtype)
    mask = torch.zeros(len(mats), max(lengths), dtype=torch.bool)
    for i, m in enumerate(mats):
        x[i, : lengths[i]] = torch.as_tensor(m, dtype=dtype)
        mask[i, : lengths[i]] = True
    return x, mask


def _labels(samples) -> np.ndarray:
    out = []
    for s in samples:
        lab = getattr(s, "label", s)
        out.append(int(ClassLabel[lab]) if isinstance(lab, str) else int(lab))
    return np.asarray(out, dtype=np.int64)


def inverse_frequency_weights(labels: np.ndarray) -> list[float]:
    counts = np.bincount(labels, minlength=3).astype(float)
    present = counts > 0
    w = np.ones(3)
    w[present] = counts[present].sum() / (present.sum() * counts[present])
    return w.tolist()


def loss_fn(logits: torch.Tensor, y: torch.Tensor, weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    return nn.functional.cross_entropy(logits, y, weight=weights)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _evaluate(model: Classifier, mats, y, batch_size, weights) -> tuple[float, float]:
    model.eval()
    total, correct = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(mats), batch_size):
            x, mask = collate(mats[start : start + batch_size])
            yb = torch.as_tensor(y[start : start + batch_size])
            logits = model(x, mask)
            total += float(loss_fn(logits, yb, weights)) * len(yb)
            correct += int((logits.argmax(1) == yb).sum())
    return total / len(mats), correct / len(mats)


def train(
    model: Classifier,
    train_set: Sequence,
    validation_set: Sequence,
    bundle: EncoderBundle,
    cfg: TrainConfig,
    encoded: Optional[tuple] = None,
) -> tuple[Classifier, TrainHistory]:
    """Adam on cross-entropy; the best validation-accuracy state is kept.

    ``train_set`` / ``validation_set`` hold ``LabeledSample``s. Pass
    ``encoded=(train_mats, val_mats)`` to reuse precomputed encodings.
    """
    if not train_set:
        raise ValueError("empty training set")
    if not validation_set:
        raise ValueError("empty validation set")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if encoded is None:
        encoded = ([encode_pair(s.pair, bundle) for s in train_set], [encode_pair(s.pair, bundle) for s in validation_set])
    tr_mats, va_mats = encoded
    y_tr, y_va = _labels(train_set), _labels(validation_set)

    weights = None
    if model.cfg.arch == "weighted_gru":
        w = model.cfg.class_weights or inverse_frequency_weights(y_tr)
        weights = torch.tensor(w, dtype=torch.float32)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    hist = TrainHistory()
    best_state, best_acc, stale = None, -1.0, 0
    for epoch in range(cfg.max_epochs):
        model.train()
        order = rng.permutation(len(tr_mats))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, mask = collate([tr_mats[i] for i in idx])
            loss = loss_fn(model(x, mask), torch.as_tensor(y_tr[idx]), weights)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        tl, ta = _evaluate(model, tr_mats, y_tr, cfg.batch_size, weights)
        vl, va = _evaluate(model, va_mats, y_va, cfg.batch_size, weights)
        if not (math.isfinite(tl) and math.isfinite(vl)):
            raise TrainingDiverged(f"non-finite loss after epoch {epoch}: train {tl}, validation {vl}")
        hist.train_loss.append(tl)
        hist.train_accuracy.append(ta)
        hist.val_loss.append(vl)
        hist.val_accuracy.append(va)
        logger.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f", epoch, tl, ta, vl, va)
        if va > best_acc:
            best_acc, stale = va, 0
            best_state = copy.deepcopy(model.state_dict())
            hist.best_epoch = epoch
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    model.trained = True
    model.fingerprint = bundle.fingerprint()
    model.seed = cfg.seed
    return model, hist


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def decide(probs) -> ClassLabel:
    """Argmax; exact ties go to the lowest class index."""
    probs = np.asarray(probs)
    return ClassLabel(int(np.flatnonzero(probs == probs.max())[0]))


def predict(model: Classifier, pair: SubtitlePair, bundle: EncoderBundle) -> tuple[ClassLabel, np.ndarray]:
    return predict_batch(model, [pair], bundle)[0]


def predict_batch(model: Classifier, pairs: Sequence[SubtitlePair], bundle: EncoderBundle, batch_size: int = 64, encoded=None):
    if not model.trained:
        raise NotTrainedError("model has not been trained or loaded")
    if model.fingerprint and model.fingerprint != bundle.fingerprint():
        raise FingerprintMismatch("model was trained with a different contextual encoder")
    mats = encoded if encoded is not None else [encode_pair(p, bundle) for p in pairs]
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(mats), batch_size):
            x, mask = collate(mats[start : start + batch_size], dtype=next(model.parameters()).dtype)
            probs = model.predict_proba(x, mask).double().numpy()
            out.extend((decide(p), p) for p in probs)
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Classifier, path: str | Path, extra: Optional[dict] = None) -> None:
    """Write an ``.npz`` holding parameter arrays plus a JSON ``__meta__`` entry."""
    meta = {
        "format": "otut-checkpoint/1",
        "tool_version": __version__,
        "head": asdict(model.cfg),
        "input_dim": model.input_dim,
        "classes": {c.name: int(c) for c in ClassLabel},
        "encoder_fingerprint": model.fingerprint,
        "seed": model.seed,
        "trained": model.trained,
        **(extra or {}),
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path, bundle: Optional[EncoderBundle] = None) -> Classifier:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        state = {k: torch.as_tensor(data[k]) for k in data.files if k != "__meta__"}
    if bundle is not None and meta["encoder_fingerprint"] != bundle.fingerprint():
        raise FingerprintMismatch(
            f"checkpoint encoder fingerprint {meta['encoder_fingerprint']} != current {bundle.fingerprint()}"
        )
    if meta["classes"] != {c.name: int(c) for c in ClassLabel}:
        raise ValueError("checkpoint class mapping differs from NE=0, OT=1, UT=2")
    model = build_head(HeadConfig(**meta["head"]), meta["input_dim"])
    model.load_state_dict(state)
    model.eval()
    model.trained = meta["trained"]
    model.fingerprint = meta["encoder_fingerprint"]
    model.seed = meta["seed"]
    return model


def checkpoint_meta(path: str | Path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["__meta__"]).decode())
