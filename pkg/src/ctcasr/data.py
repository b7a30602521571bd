"""Corpus manifests, deterministic splits, and duration-bucketed batching.

A manifest is a TSV with three columns and no header:
``path<TAB>transcript<TAB>duration_seconds``. Splitting shuffles record
indices with a seeded generator and cuts by rounded ratio counts, so
the same manifest and seed always produce the same partition. Batching
sorts by duration into consecutive buckets to keep padding small, then
shuffles the batch order with a generator seeded by (seed, epoch):
batch composition is a pure function of (manifest, seed, epoch).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import alphabet as alphabet_mod
from . import features as features_mod
from .errors import DataError, FormatError

log = logging.getLogger(__name__)

SPLIT_RATIOS = (0.68, 0.12, 0.20)
BATCH_SIZE = 20


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    transcript: str
    duration: float


@dataclass
class Manifest:
    records: list[ManifestRecord]

    def __post_init__(self):
        if not self.records:
            raise DataError("manifest holds no records")
        seen = set()
        for rec in self.records:
            if rec.path in seen:
                raise DataError(f"duplicate audio path in manifest: {rec.path}")
            seen.add(rec.path)
            if not rec.duration > 0:
                raise DataError(f"non-positive duration for {rec.path}: {rec.duration}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def total_hours(self) -> float:
        return sum(rec.duration for rec in self.records) / 3600.0

    def transcripts(self):
        return [rec.transcript for rec in self.records]


def read_manifest(path) -> Manifest:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"{path}: expected path<TAB>transcript<TAB>duration, got {len(parts)} fields",
                    line=lineno,
                )
            try:
                duration = float(parts[2])
            except ValueError:
                raise FormatError(f"{path}: non-numeric duration {parts[2]!r}", line=lineno) from None
            records.append(ManifestRecord(parts[0], parts[1], duration))
    if not records:
        raise DataError(f"{path}: manifest is empty")
    return Manifest(records)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in manifest.records:
            f.write(f"{rec.path}\t{rec.transcript}\t{rec.duration:.6f}\n")


def scan_corpus(index_path, audio_dir, id_col: int = 0, text_col: int = 2, ext: str = ".wav") -> Manifest:
    """Convert an utterance index (id and transcript columns in a TSV)
    into a manifest, reading durations from the WAV headers.

    Rows whose audio file is missing are skipped with a warning;
    malformed rows are an error.
    """
    audio_dir = Path(audio_dir)
    records = []
    missing = 0
    with open(index_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) <= max(id_col, text_col):
                raise FormatError(
                    f"{index_path}: row has {len(parts)} fields, need at least {max(id_col, text_col) + 1}",
                    line=lineno,
                )
            utt_id, transcript = parts[id_col], parts[text_col]
            wav_path = audio_dir / f"{utt_id}{ext}"
            if not wav_path.exists():
                missing += 1
                log.warning("skipping %s: no audio file %s", utt_id, wav_path)
                continue
            records.append(ManifestRecord(str(wav_path), transcript, features_mod.wav_duration(wav_path)))
    if missing:
        log.warning("skipped %d of %d index rows with missing audio", missing, missing + len(records))
    if not records:
        raise DataError(f"{index_path}: no usable rows (all audio missing?)")
    return Manifest(records)


def split(manifest: Manifest, ratios=SPLIT_RATIOS, seed: int = 0):
    """Deterministic (train, val, test) partition by shuffled indices."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(manifest)
    if n < 3:
        raise DataError(f"cannot three-way split {n} records")
    order = np.random.default_rng(seed).permutation(n)
    n_train = round(ratios[0] * n)
    n_val = round(ratios[1] * n)
    if n_train + n_val >= n:
        raise DataError(f"split ratios {ratios} leave no test records for n={n}")
    parts = (
        order[:n_train],
        order[n_train : n_train + n_val],
        order[n_train + n_val :],
    )
    return tuple(Manifest([manifest.records[i] for i in sorted(idx)]) for idx in parts)


def plan_batches(manifest: Manifest, batch_size: int = BATCH_SIZE, bucket: bool = True,
                 seed: int = 0, epoch: int = 0):
    """Group records into batches; returns a list of record lists.

    With bucketing, records are ordered by duration so each batch holds
    similar lengths. The batch order (and, without bucketing, the
    record order) is shuffled by a generator seeded with (seed, epoch).
    """
    if batch_size < 1:
        raise DataError(f"batch size must be positive, got {batch_size}")
    rng = np.random.default_rng([seed, epoch])
    records = list(manifest.records)
    if bucket:
        records.sort(key=lambda r: (r.duration, r.path))
    else:
        records = [records[i] for i in rng.permutation(len(records))]
    batches = [records[i : i + batch_size] for i in range(0, len(records), batch_size)]
    if bucket:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


@dataclass
class Batch:
    features: np.ndarray  # (B, T_max, bins), zero padded
    lengths: list[int]  # true frame counts
    targets: list[list[int]]
    records: list[ManifestRecord]


def load_batch(records, alphabet: alphabet_mod.Alphabet, out_len_fn, cache_dir=None) -> Batch | None:
    """Materialize one batch: features, padding, encoded targets.

    ``out_len_fn`` maps input frames to the model's output frames;
    utterances whose target cannot satisfy 2*U+1 <= T'' are skipped
    with a warning. Returns None if nothing in the batch is usable.
    """
    feats = []
    targets = []
    kept = []
    for rec in records:
        spec = features_mod.extract_features(rec.path, cache_dir=cache_dir)
        target = alphabet_mod.encode(alphabet, rec.transcript, context=rec.path)
        out_len = out_len_fn(spec.frames)
        if 2 * len(target) + 1 > out_len:
            log.warning(
                "skipping %s: %d-label target cannot fit %d output frames",
                rec.path, len(target), out_len,
            )
            continue
        feats.append(spec.values)
        targets.append(target)
        kept.append(rec)
    if not feats:
        return None
    t_max = max(v.shape[0] for v in feats)
    batch = np.zeros((len(feats), t_max, feats[0].shape[1]), dtype=feats[0].dtype)
    lengths = []
    for i, v in enumerate(feats):
        batch[i, : v.shape[0]] = v
        lengths.append(v.shape[0])
    return Batch(features=batch, lengths=lengths, targets=targets, records=kept)
