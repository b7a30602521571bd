"""Training loop: SGD with classical momentum, exponential learning-rate
decay, gradient-norm clipping, early stopping on validation WER.

Checkpoints carry every tensor that affects future arithmetic
(parameters, batch-norm running statistics, momentum buffers) plus the
generator state, so resuming from epoch k reproduces an uninterrupted
run bit for bit. Per-epoch batch composition is a pure function of
(manifest, seed, epoch) and needs no saved state.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import ctc, data, numerics
from .alphabet import Alphabet, decode as alpha_decode
from .errors import ConfigError, DataError
from .evaluate import score_pairs
from .model import ModelConfig, Network, build_model

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    gamma: float = 1.0 / 1.1  # per-epoch decay factor
    momentum: float = 0.9
    clip_norm: float = 400.0
    batch_size: int = data.BATCH_SIZE
    max_epochs: int = 30
    patience: int = 3
    seed: int = 0
    target_val_wer: float | None = None  # optional early exit once reached

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.gamma <= 1:
            raise ConfigError(f"need lr > 0 and 0 < gamma <= 1, got lr={self.lr}, gamma={self.gamma}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be at least 1")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Exponential schedule: lr * gamma^epoch (epoch 0 = first epoch)."""
    return config.lr * config.gamma**epoch


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm. Non-finite norms are left to the caller."""
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if math.isfinite(norm) and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            g = p.grad
            g *= scale
    return norm


def sgd_step(params, velocities: dict, lr: float, momentum: float) -> None:
    """Classical momentum: v <- mu*v + g; p <- p - lr*v."""
    for p in params:
        v = velocities.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
            velocities[p.name] = v
        v *= momentum
        v += p.grad
        p.data -= lr * v


def early_stop(history, patience: int) -> bool:
    """True once the best value sits `patience` or more epochs in the past.

    Only strict improvement resets the counter."""
    if not history:
        return False
    best_idx = 0
    for i, value in enumerate(history):
        if value < history[best_idx]:
            best_idx = i
    return (len(history) - 1 - best_idx) >= patience


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_wer: float


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "lr", "train_loss", "val_wer"])
        for row in history:
            writer.writerow([row.epoch, f"{row.lr:.10g}", f"{row.train_loss:.6f}", f"{row.val_wer:.4f}"])


def greedy_wer(net: Network, manifest, alphabet: Alphabet, cache_dir=None) -> float:
    pairs = []
    for rec in manifest:
        from . import features as features_mod
        from .alphabet import drop_unknown

        spec = features_mod.extract_features(rec.path, cache_dir=cache_dir)
        hyp = alpha_decode(alphabet, ctc.greedy_decode(net.predict(spec.values)))
        pairs.append((rec.path, drop_unknown(alphabet, rec.transcript, context=rec.path), hyp))
    return score_pairs(pairs).wer


def _save_checkpoint(path, net, alphabet, model_config, train_config, epoch, history, velocities, rng):
    tensors = {p.name: p.data for p in net.params()}
    tensors.update(net.named_buffers())
    for name, v in velocities.items():
        tensors[f"momentum.{name}"] = v
    meta = {
        "format": 1,
        "model": asdict(model_config),
        "train": asdict(train_config),
        "alphabet": list(alphabet.symbols),
        "alphabet_sha256": alphabet.digest(),
        "input_bins": net.input_bins,
        "epoch": epoch,
        "history": [asdict(h) for h in history],
        "precision": numerics.precision(),
        "rng_state": json.loads(json.dumps(rng.bit_generator.state)),
    }
    ckpt_mod.save_archive(path, meta, tensors)


def load_checkpoint(path):
    """Rebuild (net, alphabet, model_config, train_config, state) from disk."""
    meta, tensors = ckpt_mod.load_archive(path)
    model_config = ModelConfig(**meta["model"])
    alphabet = Alphabet(meta["alphabet"])
    if alphabet.digest() != meta["alphabet_sha256"]:
        raise DataError(f"{path}: alphabet hash mismatch; checkpoint is inconsistent")
    numerics.set_precision(meta["precision"])
    net = build_model(model_config, len(alphabet), input_bins=meta["input_bins"])
    restore_tensors(net, tensors)
    velocities = {
        name[len("momentum.") :]: tensors[name].copy()
        for name in tensors
        if name.startswith("momentum.")
    }
    train_config = TrainConfig(**meta["train"])
    history = [EpochStats(**h) for h in meta["history"]]
    return net, alphabet, model_config, train_config, {
        "epoch": meta["epoch"],
        "history": history,
        "velocities": velocities,
        "rng_state": meta["rng_state"],
    }


def restore_tensors(net: Network, tensors: dict) -> None:
    for p in net.params():
        if p.name not in tensors:
            raise DataError(f"checkpoint is missing tensor {p.name}")
        if tuple(tensors[p.name].shape) != p.data.shape:
            raise DataError(
                f"checkpoint tensor {p.name} has shape {tensors[p.name].shape}, expected {p.data.shape}"
            )
        p.data = tensors[p.name].astype(p.data.dtype, copy=True)
    buffer_names = net.named_buffers()
    missing = [name for name in buffer_names if name not in tensors]
    if missing:
        raise DataError(f"checkpoint is missing buffers: {missing}")
    net.load_named_buffers({name: tensors[name] for name in buffer_names})


def _train_one_epoch(net, manifest, alphabet, tcfg, epoch, velocities, cache_dir):
    batches = data.plan_batches(manifest, tcfg.batch_size, bucket=True, seed=tcfg.seed, epoch=epoch)
    lr = lr_at(tcfg, epoch)
    total_loss = 0.0
    n_utts = 0
    skipped = 0
    for records in batches:
        batch = data.load_batch(records, alphabet, net.output_time_len, cache_dir=cache_dir)
        if batch is None:
            continue
        net.zero_grads()
        log_probs, cache = net.forward_batch(batch.features, batch.lengths, training=True)
        d_lps = []
        batch_loss = 0.0
        for lp, target in zip(log_probs, batch.targets):
            loss, grad = ctc.ctc_loss(lp, target)
            batch_loss += loss
            d_lps.append(grad / len(log_probs))
        net.backward_batch(d_lps, cache)
        norm = clip_gradients(net.params(), tcfg.clip_norm)
        if not math.isfinite(norm):
            skipped += 1
            log.warning("epoch %d: non-finite gradient norm, batch skipped", epoch)
            continue
        sgd_step(net.params(), velocities, lr, tcfg.momentum)
        total_loss += batch_loss
        n_utts += len(log_probs)
    if n_utts == 0:
        raise DataError("no trainable utterance survived feasibility filtering")
    if skipped:
        log.warning("epoch %d: skipped %d batches with non-finite gradients", epoch, skipped)
    return total_loss / n_utts


def train(model_config: ModelConfig, train_manifest, val_manifest, alphabet: Alphabet,
          out_dir, tcfg: TrainConfig | None = None, cache_dir=None, resume=None,
          input_bins: int | None = None) -> tuple[Path, list[EpochStats]]:
    """Run the full protocol; returns (best checkpoint path, history).

    Writes per-epoch checkpoints, best.ckpt, history.csv and a training
    curve figure into out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = tcfg or TrainConfig()

    if resume is not None:
        net, ck_alphabet, ck_model, ck_tcfg, state = load_checkpoint(resume)
        if ck_alphabet != alphabet:
            raise DataError("resume checkpoint was trained with a different alphabet")
        if ck_model != model_config:
            raise DataError("resume checkpoint was trained with a different model config")
        tcfg = ck_tcfg
        history = state["history"]
        velocities = state["velocities"]
        rng = np.random.default_rng(tcfg.seed)
        rng.bit_generator.state = state["rng_state"]
        start_epoch = state["epoch"] + 1
        log.info("resuming from %s at epoch %d", resume, start_epoch)
    else:
        rng = np.random.default_rng(tcfg.seed)
        net = build_model(model_config, len(alphabet), rng,
                          input_bins=input_bins if input_bins else 81)
        history = []
        velocities = {}
        start_epoch = 0

    best_path = out_dir / "best.ckpt"
    for epoch in range(start_epoch, tcfg.max_epochs):
        train_loss = _train_one_epoch(net, train_manifest, alphabet, tcfg, epoch, velocities, cache_dir)
        val_wer = greedy_wer(net, val_manifest, alphabet, cache_dir=cache_dir)
        stats = EpochStats(epoch=epoch, lr=lr_at(tcfg, epoch), train_loss=train_loss, val_wer=val_wer)
        history.append(stats)
        log.info("epoch %d: lr=%.3e loss=%.4f val_wer=%.2f", epoch, stats.lr, train_loss, val_wer)

        epoch_path = out_dir / f"epoch_{epoch:03d}.ckpt"
        _save_checkpoint(epoch_path, net, alphabet, model_config, tcfg, epoch, history, velocities, rng)
        wers = [h.val_wer for h in history]
        if min(wers) == val_wer:
            epoch_bytes = epoch_path.read_bytes()
            best_path.write_bytes(epoch_bytes)
        write_history_csv(history, out_dir / "history.csv")

        if tcfg.target_val_wer is not None and val_wer <= tcfg.target_val_wer:
            log.info("validation WER target %.2f reached, stopping", tcfg.target_val_wer)
            break
        if early_stop(wers, tcfg.patience):
            log.info("no validation improvement for %d epochs, stopping", tcfg.patience)
            break

    from . import figures

    figures.plot_history(history, out_dir / "history.png")
    return best_path, history
