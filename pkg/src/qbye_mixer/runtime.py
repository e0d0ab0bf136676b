"""Query-by-example inference: sliding-window embeddings, enrollment profiles,
cosine matching and threshold triggering, offline and streaming.
"""

from __future__ import annotations

import base64
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .frontend import AudioClip, featurize
from .mixer import encoder_forward

STRIDE_MS = 100
PROFILE_FORMAT = "qbye-profile"
PROFILE_VERSION = 1


class FingerprintMismatchError(ValueError):
    """Profile was enrolled with a different model than the one loaded."""


class ProfileFormatError(ValueError):
    pass


@dataclass
class EmbeddingSequence:
    vectors: np.ndarray
    window_offsets_ms: list[int]

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float32))
        self.window_offsets_ms = [int(v) for v in self.window_offsets_ms]
        if len(self.vectors) == 0:
            raise ValueError("empty embedding sequence")
        if len(self.window_offsets_ms) != len(self.vectors):
            raise ValueError("one offset per embedding required")

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class EnrollmentProfile:
    keyword_id: str
    enrollments: list[EmbeddingSequence]
    fingerprint: str

    @property
    def n(self) -> int:
        return len(self.enrollments)

    @property
    def max_windows(self) -> int:
        return max(len(e) for e in self.enrollments)


@dataclass(frozen=True)
class DetectionResult:
    score: float
    triggered: bool
    best_enrollment_index: int
    best_alignment_offset: int
    query_start_ms: int = 0


def _window_samples(ckpt: Checkpoint) -> tuple[int, int]:
    fe = ckpt.frontend_config
    return fe.clip_samples, fe.clip_samples * STRIDE_MS // int(round(fe.clip_s * 1000))


def embed_windows(windows: np.ndarray, ckpt: Checkpoint) -> np.ndarray:
    """Embeddings for a stack of raw 1 s windows, shape (n, f)."""
    feats = np.stack([featurize(AudioClip(w), ckpt.frontend_config) for w in windows])
    return np.atleast_2d(encoder_forward(feats, ckpt.params, ckpt.mixer_config)).astype(np.float32)


def embed_utterance(clip: AudioClip, ckpt: Checkpoint) -> EmbeddingSequence:
    """1 s windows every 100 ms; clips under 1 s are right-padded with zeros."""
    win, hop = _window_samples(ckpt)
    x = clip.samples
    if len(x) < win:
        x = np.concatenate([x, np.zeros(win - len(x), dtype=np.float32)])
    starts = range(0, len(x) - win + 1, hop)
    windows = np.stack([x[s:s + win] for s in starts])
    offsets = [s * 1000 // clip.sample_rate for s in starts]
    return EmbeddingSequence(embed_windows(windows, ckpt), offsets)


def cosine_distance(a, b, eps: float = 1e-12) -> float:
    """1 - cos(a, b), clamped to [0, 2]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    sim = float(a @ b) / (float(np.linalg.norm(a) * np.linalg.norm(b)) + eps)
    return min(2.0, max(0.0, 1.0 - sim))


def _as_matrix(seq) -> np.ndarray:
    vectors = seq.vectors if isinstance(seq, EmbeddingSequence) else seq
    m = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if m.size == 0:
        raise ValueError("empty embedding sequence")
    return m


def match_score(enrollment, query) -> tuple[float, int]:
    """Best (distance, window offset) of an enrollment against a query.

    Both sequences are compared as concatenations of their window vectors.
    A shorter enrollment slides over every window-aligned position of the
    query; a longer one is matched once against the query left-padded with
    zero windows.
    """
    e, q = _as_matrix(enrollment), _as_matrix(query)
    if e.shape[1] != q.shape[1]:
        raise ValueError("embedding dimensions differ")
    m, n = len(e), len(q)
    if m > n:
        padded = np.concatenate([np.zeros((m - n, q.shape[1])), q])
        return cosine_distance(e, padded), 0
    dists = [cosine_distance(e, q[k:k + m]) for k in range(n - m + 1)]
    k = int(np.argmin(dists))
    return dists[k], k


def detect(profile: EnrollmentProfile, query, threshold: float,
           fingerprint: str | None = None) -> DetectionResult:
    """Minimum match distance over all enrollments; triggers when below threshold."""
    if fingerprint is not None and fingerprint != profile.fingerprint:
        raise FingerprintMismatchError(
            f"profile fingerprint {profile.fingerprint} does not match model {fingerprint}")
    best = None
    for i, enrollment in enumerate(profile.enrollments):
        dist, offset = match_score(enrollment, query)
        if best is None or dist < best[0]:
            best = (dist, i, offset)
    start = query.window_offsets_ms[0] if isinstance(query, EmbeddingSequence) else 0
    return DetectionResult(best[0], best[0] < threshold, best[1], best[2], start)


def enroll(keyword_id: str, clips: list[AudioClip], ckpt: Checkpoint) -> EnrollmentProfile:
    if not clips:
        raise ValueError("enrollment needs at least one clip")
    return EnrollmentProfile(keyword_id, [embed_utterance(c, ckpt) for c in clips], ckpt.fingerprint)


def profile_to_json(profile: EnrollmentProfile) -> str:
    enrollments = []
    for seq in profile.enrollments:
        enrollments.append({
            "n_windows": len(seq),
            "window_offsets_ms": seq.window_offsets_ms,
            "embeddings": base64.b64encode(seq.vectors.astype("<f4").tobytes()).decode("ascii"),
        })
    doc = {
        "format": PROFILE_FORMAT,
        "version": PROFILE_VERSION,
        "keyword_id": profile.keyword_id,
        "n": profile.n,
        "dim": int(profile.enrollments[0].vectors.shape[1]),
        "fingerprint": profile.fingerprint,
        "enrollments": enrollments,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def profile_from_json(text: str) -> EnrollmentProfile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileFormatError(f"profile is not JSON: {exc}") from exc
    if doc.get("format") != PROFILE_FORMAT:
        raise ProfileFormatError("not a profile file")
    if doc.get("version") != PROFILE_VERSION:
        raise ProfileFormatError(f"unsupported profile version {doc.get('version')}")
    dim = int(doc["dim"])
    seqs = []
    for item in doc["enrollments"]:
        raw = base64.b64decode(item["embeddings"])
        vectors = np.frombuffer(raw, dtype="<f4").reshape(int(item["n_windows"]), dim)
        seqs.append(EmbeddingSequence(vectors.astype(np.float32), item["window_offsets_ms"]))
    if len(seqs) != int(doc["n"]) or not seqs:
        raise ProfileFormatError("enrollment count does not match header")
    return EnrollmentProfile(doc["keyword_id"], seqs, doc["fingerprint"])


def save_profile(profile: EnrollmentProfile, path) -> None:
    Path(path).write_text(profile_to_json(profile), encoding="utf-8")


def load_profile(path) -> EnrollmentProfile:
    return profile_from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class StreamState:
    """Rolling detector state for one audio stream; not shareable across threads.

    The embedding buffer holds as many windows as the longest enrollment, so
    once it is full every query matches that length and no padding happens.
    """
    profile: EnrollmentProfile
    ckpt: Checkpoint
    threshold: float
    audio: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    consumed: int = 0
    next_start: int = 0
    embeddings: deque = field(default_factory=deque)
    offsets: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.ckpt.fingerprint != self.profile.fingerprint:
            raise FingerprintMismatchError("profile was enrolled with a different model")
        self.embeddings = deque(maxlen=self.profile.max_windows)
        self.offsets = deque(maxlen=self.profile.max_windows)

    @property
    def warm(self) -> bool:
        return len(self.embeddings) == self.profile.max_windows


def stream_push(state: StreamState, samples) -> list[DetectionResult]:
    """Feed samples; emit one detection per new 100 ms hop once warm."""
    if state is None:
        raise ValueError("stream state is not initialised")
    samples = np.asarray(samples, dtype=np.float32).ravel()
    state.audio = np.concatenate([state.audio, samples])
    win, hop = _window_samples(state.ckpt)
    sr = 16000
    results = []
    while state.next_start + win <= state.consumed + len(state.audio):
        lo = state.next_start - state.consumed
        window = state.audio[lo:lo + win]
        state.embeddings.append(embed_windows(window[None, :], state.ckpt)[0])
        state.offsets.append(state.next_start * 1000 // sr)
        state.next_start += hop
        if state.warm:
            query = EmbeddingSequence(np.stack(state.embeddings), list(state.offsets))
            results.append(detect(state.profile, query, state.threshold))
    drop = state.next_start - state.consumed
    if drop > 0:
        state.audio = state.audio[drop:]
        state.consumed += drop
    return results
