"""Tone-sequence micro-corpus for smoke tests and overfitting checks.

Each roman symbol is rendered as a short sine burst at its own frequency, so a
transcript is audible (and learnable) from the audio alone.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import ManifestEntry, write_manifest
from .dsp import AudioClip, write_wav
from .translit import Alphabet, TranslitTable, default_table, roman_to_arabic


def symbol_frequency(symbol: str, alphabet: Alphabet) -> float:
    idx = alphabet.symbols.index(symbol)
    return 250.0 + 170.0 * idx


def synth_clip(roman: str, alphabet: Alphabet, sample_rate_hz: int = 16000, symbol_ms: float = 120.0,
               gap_ms: float = 40.0, pad_ms: float = 100.0, amplitude: float = 0.5,
               noise_level: float = 1e-3, rng: np.random.Generator | None = None) -> AudioClip:
    rng = rng or np.random.default_rng(0)
    n_sym = int(sample_rate_hz * symbol_ms / 1000)
    n_gap = int(sample_rate_hz * gap_ms / 1000)
    n_pad = int(sample_rate_hz * pad_ms / 1000)
    t = np.arange(n_sym) / sample_rate_hz
    envelope = np.hanning(n_sym)
    parts = [np.zeros(n_pad)]
    for i, sym in enumerate(roman):
        if i:
            parts.append(np.zeros(n_gap))
        parts.append(amplitude * envelope * np.sin(2 * np.pi * symbol_frequency(sym, alphabet) * t))
    parts.append(np.zeros(n_pad))
    samples = np.concatenate(parts)
    samples += noise_level * rng.standard_normal(samples.size)
    return AudioClip(np.clip(samples, -1.0, 1.0), sample_rate_hz)


def random_transcripts(n: int, alphabet: Alphabet, min_len: int = 3, max_len: int = 5,
                       symbols: str | None = None, seed: int = 0) -> list[str]:
    """``n`` distinct roman strings with no symbol repeated back to back."""
    rng = np.random.default_rng(seed)
    pool = list(symbols) if symbols else [s for s in alphabet.symbols[1:] if s != " "]
    out: list[str] = []
    while len(out) < n:
        length = int(rng.integers(min_len, max_len + 1))
        chars = []
        while len(chars) < length:
            c = pool[int(rng.integers(len(pool)))]
            if not chars or chars[-1] != c:
                chars.append(c)
        s = "".join(chars)
        if s not in out:
            out.append(s)
    return out


def make_micro_corpus(directory, n: int = 5, symbols: str = "bdlmnrsk", seed: int = 0,
                      table: TranslitTable | None = None) -> list[ManifestEntry]:
    """Write ``n`` synthetic WAVs plus ``manifest.csv`` (Arabic transcripts) into ``directory``."""
    table = table or default_table()
    alphabet = Alphabet.from_table(table)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i, roman in enumerate(random_transcripts(n, alphabet, symbols=symbols, seed=seed)):
        name = f"utt{i:03d}.wav"
        write_wav(directory / name, synth_clip(roman, alphabet, rng=rng))
        entries.append(ManifestEntry(name, roman_to_arabic(roman, table)))
    write_manifest(directory / "manifest.csv", entries)
    return entries
