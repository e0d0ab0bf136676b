"""Deterministic synthetic "tone word" corpus for desk-scale experiments.

Every class is a fixed recipe of two or three harmonic syllables (pitch,
glide, formant-like spectral peak, relative duration).  Each utterance of a
class re-renders the recipe with jittered pitch, timing, loudness, onset and
phases over a faint noise floor, so classes are separable but no two clips
are identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frontend import SAMPLE_RATE, AudioClip, save_wav

_RECIPE, _UTTERANCE, _NOISE = 11, 12, 13


@dataclass(frozen=True)
class Syllable:
    f0: float
    glide: float
    formant: float
    share: float


def class_recipe(seed: int, class_id: int) -> list[Syllable]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_RECIPE, class_id)))
    n = int(rng.integers(2, 4))
    shares = rng.uniform(0.6, 1.4, size=n)
    shares /= shares.sum()
    return [Syllable(f0=float(rng.uniform(110.0, 420.0)), glide=float(rng.uniform(-0.35, 0.35)),
                     formant=float(rng.uniform(400.0, 3500.0)), share=float(s)) for s in shares]


def render_word(recipe: list[Syllable], rng: np.random.Generator, duration_s: float = 1.0,
                onset_jitter_s: float = 0.1) -> AudioClip:
    n_total = int(round(duration_s * SAMPLE_RATE))
    word_len = int(rng.uniform(0.45, 0.7) * SAMPLE_RATE)
    centre = (n_total - word_len) // 2
    jitter = int(onset_jitter_s * SAMPLE_RATE)
    onset = int(np.clip(centre + rng.integers(-jitter, jitter + 1), 0, max(0, n_total - word_len)))
    pitch = 1.0 + rng.normal(0.0, 0.02)
    loud = rng.uniform(0.25, 0.6)
    out = rng.normal(0.0, 0.002, size=n_total)
    pos = onset
    shares = np.array([s.share for s in recipe]) * rng.uniform(0.9, 1.1, size=len(recipe))
    shares /= shares.sum()
    for syl, share in zip(recipe, shares):
        n = max(1, int(word_len * share))
        tt = np.arange(n) / SAMPLE_RATE
        f_inst = syl.f0 * pitch * (1.0 + syl.glide * tt / max(tt[-1], 1e-9))
        phase = 2.0 * np.pi * np.cumsum(f_inst) / SAMPLE_RATE
        seg = np.zeros(n)
        for k in range(1, 9):
            if k * syl.f0 > 7000.0:
                break
            amp = math.exp(-((k * syl.f0 - syl.formant) / 700.0) ** 2) + 0.15 / k
            seg += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        env = np.sin(np.pi * np.arange(n) / n) ** 0.5
        seg *= env / max(np.max(np.abs(seg)), 1e-9)
        end = min(pos + n, n_total)
        out[pos:end] += loud * seg[:end - pos]
        pos = end
    return AudioClip(np.clip(out, -1.0, 1.0))


def synthesize(seed: int, class_id: int, index: int, duration_s: float = 1.0) -> AudioClip:
    """Utterance ``index`` of class ``class_id``; a pure function of its arguments."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_UTTERANCE, class_id, index)))
    return render_word(class_recipe(seed, class_id), rng, duration_s)


def synth_noise(seed: int, index: int, duration_s: float = 3.0) -> AudioClip:
    """Coloured background noise: white, pink-ish or brown-ish by index."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_NOISE, index)))
    n = int(duration_s * SAMPLE_RATE)
    white = rng.normal(size=n)
    kind = index % 3
    if kind == 1:
        spec = np.fft.rfft(white)
        spec[1:] /= np.sqrt(np.arange(1, len(spec)))
        white = np.fft.irfft(spec, n)
    elif kind == 2:
        white = np.cumsum(white)
        white -= np.convolve(white, np.ones(400) / 400, mode="same")
    return AudioClip(0.3 * white / np.max(np.abs(white)))


def label_name(class_id: int) -> str:
    return f"word{class_id:02d}"


def generate_dataset(out_dir, classes: int, per_class: int, seed: int = 0, noise_files: int = 4,
                     valid_fraction: float = 0.2, eval_classes: int = 0, eval_per_class: int = 10,
                     eval_enroll: int = 3, eval_negatives: int = 40) -> Path:
    """Write WAVs, a training manifest and optionally an evaluation manifest.

    Training classes are ``0..classes-1``.  Evaluation keywords use the next
    ``eval_classes`` ids and negatives come from four further unseen classes,
    so evaluation never touches a training recipe.  Returns the path of
    ``manifest.jsonl``.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("need at least 1 clip per class")
    out = Path(out_dir)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    n_valid = int(round(per_class * valid_fraction))
    rows = []
    for c in range(classes):
        for i in range(per_class):
            rel = f"wavs/{label_name(c)}_{i:03d}.wav"
            save_wav(out / rel, synthesize(seed, c, i))
            split = "valid" if i >= per_class - n_valid else "train"
            rows.append({"audio_path": rel, "label": label_name(c), "split": split})
    manifest = out / "manifest.jsonl"
    _write_jsonl(manifest, rows)

    if noise_files > 0:
        (out / "noise").mkdir(exist_ok=True)
        for j in range(noise_files):
            save_wav(out / f"noise/noise_{j:02d}.wav", synth_noise(seed, j))

    if eval_classes > 0:
        (out / "eval").mkdir(exist_ok=True)
        rows = []
        for c in range(classes, classes + eval_classes):
            for i in range(eval_per_class):
                rel = f"eval/{label_name(c)}_{i:03d}.wav"
                save_wav(out / rel, synthesize(seed, c, i))
                rows.append({"audio_path": rel, "speaker": "synth", "keyword": label_name(c),
                             "role": "enroll" if i < eval_enroll else "query"})
        first_neg = classes + eval_classes
        for j in range(eval_negatives):
            c, i = first_neg + j % 4, j // 4
            rel = f"eval/neg_{j:03d}.wav"
            save_wav(out / rel, synthesize(seed, c, i))
            rows.append({"audio_path": rel, "speaker": f"neg{c}", "keyword": None, "role": "negative"})
        _write_jsonl(out / "eval.jsonl", rows)
    return manifest


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
