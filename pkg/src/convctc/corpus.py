"""CSV manifests, seeded train/eval splits and batching."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    transcript: str

    def __post_init__(self):
        if not self.audio_path:
            raise ManifestError("empty audio path")
        if not self.transcript:
            raise ManifestError(f"empty transcript for {self.audio_path}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise ValueError(f"train_fraction must be in (0, 1], got {self.train_fraction}")


def parse_manifest(text: str, source: str = "<string>") -> list[ManifestEntry]:
    entries = []
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    try:
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ManifestError(f"{source}:{reader.line_num}: expected 2 fields, got {len(row)}")
            path, transcript = row
            if not path or not transcript:
                raise ManifestError(f"{source}:{reader.line_num}: empty field")
            entries.append(ManifestEntry(path, transcript))
    except csv.Error as exc:
        raise ManifestError(f"{source}:{reader.line_num}: {exc}") from exc
    return entries


def load_manifest(path) -> list[ManifestEntry]:
    """Read a header-less two-column UTF-8 CSV (path, transcript)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ManifestError(f"{path}: not valid UTF-8 ({exc})") from exc
    return parse_manifest(text, str(path))


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for e in entries:
            writer.writerow([e.audio_path, e.transcript])


def _train_count(n: int, fraction: float) -> int:
    # round first so that e.g. 10 * 0.9 is not pushed over 9 by representation error
    return min(n, math.ceil(round(n * fraction, 9)))


def split(entries: Sequence[T], spec: SplitSpec) -> tuple[list[T], list[T]]:
    if not entries:
        raise ValueError("cannot split an empty manifest")
    order = np.random.default_rng(spec.seed).permutation(len(entries))
    shuffled = [entries[i] for i in order]
    k = _train_count(len(entries), spec.train_fraction)
    return shuffled[:k], shuffled[k:]


def merge_splits(parts: Sequence[tuple[Sequence[T], SplitSpec]]) -> tuple[list[T], list[T]]:
    """Split each manifest with its own spec and concatenate.

    e.g. ``[(msa, SplitSpec(1.0)), (sudanese, SplitSpec(0.9))]`` puts all MSA
    rows and 90% of the dialect rows into training.
    """
    train, held_out = [], []
    for entries, spec in parts:
        tr, ev = split(entries, spec)
        train += tr
        held_out += ev
    return train, held_out


def make_batches(entries: Sequence[T], batch_size: int = 18, seed: int = 0) -> list[list[T]]:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(entries))
    shuffled = [entries[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]
