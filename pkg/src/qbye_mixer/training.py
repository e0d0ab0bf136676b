"""Word-classification pretraining: manifest ingestion, augmentation, Adam."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint
from .frontend import AudioClip, FrontendConfig, featurize, load_wav, mix_noise_at_snr, standardize_duration
from .mixer import MixerConfig, Params, encoder_forward, decoder_forward, init_params, loss_and_gradients

log = logging.getLogger(__name__)

# stream tags for SeedSequence spawn keys
_INIT, _SHUFFLE, _AUGMENT, _DROPOUT, _VALID = range(5)


class ManifestError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: Path
    label: str
    split: str
    label_index: int = -1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    snr_range_db: tuple[float, float] = (4.0, 12.0)
    noise_prob: float = 1.0
    noise_dir: str | None = None
    far_field: bool = False
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "snr_range_db", tuple(float(v) for v in self.snr_range_db))
        lo, hi = self.snr_range_db
        if lo > hi:
            raise ValueError("snr_range_db low must not exceed high")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("noise_prob must be in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_range_db"] = list(self.snr_range_db)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (stream, ...) coordinate under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def load_manifest(path) -> tuple[list[ManifestEntry], list[str]]:
    """Read a JSONL manifest; relative audio paths resolve against its folder.

    Returns the entries (with ``label_index`` filled in) and the sorted label
    table.
    """
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: expected an object")
            for key in ("audio_path", "label", "split"):
                if key not in obj:
                    raise ManifestError(f"{path}:{lineno}: missing {key!r}")
            if obj["split"] not in ("train", "valid"):
                raise ManifestError(f"{path}:{lineno}: split must be train or valid")
            rows.append((lineno, obj))
    if not rows:
        raise ManifestError(f"{path}: empty manifest")
    labels = sorted({str(obj["label"]) for _, obj in rows})
    index = {label: i for i, label in enumerate(labels)}
    entries = []
    for _, obj in rows:
        audio = Path(obj["audio_path"])
        if not audio.is_absolute():
            audio = path.parent / audio
        entries.append(ManifestEntry(audio, str(obj["label"]), obj["split"], index[str(obj["label"])]))
    return entries, labels


def load_noise_pool(noise_dir) -> list[AudioClip]:
    if noise_dir is None:
        return []
    return [load_wav(p) for p in sorted(Path(noise_dir).glob("*.wav"))]


def make_training_example(entry: ManifestEntry, noise_pool: list[AudioClip], cfg: TrainConfig,
                          rng: np.random.Generator, frontend_cfg: FrontendConfig | None = None,
                          clip: AudioClip | None = None):
    """One augmented (features, class index) pair.

    1 s standardization, then with probability ``noise_prob`` a random noise
    file mixed in at an SNR drawn uniformly from ``snr_range_db``.
    """
    if cfg.far_field:
        raise NotImplementedError("far-field simulation is not implemented")
    frontend_cfg = frontend_cfg or FrontendConfig()
    clip = clip if clip is not None else load_wav(entry.audio_path)
    clip = standardize_duration(clip, frontend_cfg.clip_s, rng)
    if noise_pool and rng.random() < cfg.noise_prob:
        snr = rng.uniform(*cfg.snr_range_db)
        noise = noise_pool[int(rng.integers(len(noise_pool)))]
        if np.any(clip.samples):
            clip = mix_noise_at_snr(clip, noise, snr, rng)
    return featurize(clip, frontend_cfg), entry.label_index


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, grads: Params, state: AdamState, lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> Params:
    """Bias-corrected Adam update, applied in place; returns ``params``."""
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient trees differ")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params


def accuracy(features: np.ndarray, labels: np.ndarray, params: Params, cfg: MixerConfig,
             batch_size: int = 64) -> float:
    if len(labels) == 0:
        return float("nan")
    hits = 0
    for i in range(0, len(labels), batch_size):
        logits = decoder_forward(encoder_forward(features[i:i + batch_size], params, cfg), params)
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[i:i + batch_size]))
    return hits / len(labels)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    final_params: Params
    metrics: list[dict]


def _clean_features(entries, clips, seed, frontend_cfg):
    feats = [featurize(standardize_duration(clips[i], frontend_cfg.clip_s, rng_for(seed, _VALID, i)),
                       frontend_cfg) for i in range(len(entries))]
    if not feats:
        return np.zeros((0, frontend_cfg.n_mfcc, frontend_cfg.n_frames), np.float32), np.zeros(0, int)
    return np.stack(feats), np.array([e.label_index for e in entries])


def train(entries: list[ManifestEntry], labels: list[str], cfg: TrainConfig, model_cfg: MixerConfig,
          frontend_cfg: FrontendConfig | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train encoder + decoder with Adam on mean cross-entropy.

    Keeps the parameters of the epoch with the best validation accuracy (the
    latest one on ties; the last epoch when there is no valid split).
    """
    frontend_cfg = frontend_cfg or FrontendConfig()
    if len(labels) < 2:
        raise ValueError("training needs at least 2 classes")
    train_entries = [e for e in entries if e.split == "train"]
    valid_entries = [e for e in entries if e.split == "valid"]
    if not train_entries:
        raise ValueError("empty train split")
    if cfg.far_field:
        raise NotImplementedError("far-field simulation is not implemented")
    model_cfg = model_cfg.with_(num_classes=len(labels))

    cache: dict[Path, AudioClip] = {}

    def clip_of(e):
        if e.audio_path not in cache:
            cache[e.audio_path] = load_wav(e.audio_path)
        return cache[e.audio_path]

    train_clips = [clip_of(e) for e in train_entries]
    valid_clips = [clip_of(e) for e in valid_entries]
    noise_pool = load_noise_pool(cfg.noise_dir)
    train_x, train_y = _clean_features(train_entries, train_clips, cfg.seed, frontend_cfg)
    valid_x, valid_y = _clean_features(valid_entries, valid_clips, cfg.seed + 1, frontend_cfg)

    params = init_params(model_cfg, rng_for(cfg.seed, _INIT))
    state = AdamState()
    metrics: list[dict] = []
    best: tuple[float, Params, int] | None = None

    def example(epoch, i):
        return make_training_example(train_entries[i], noise_pool, cfg, rng_for(cfg.seed, _AUGMENT, epoch, i),
                                     frontend_cfg, train_clips[i])

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng_for(cfg.seed, _SHUFFLE, epoch).permutation(len(train_entries))
            if pool is None:
                batch_all = [example(epoch, int(i)) for i in order]
            else:
                batch_all = list(pool.map(lambda i: example(epoch, int(i)), order))
            total = 0.0
            for start in range(0, len(batch_all), cfg.batch_size):
                batch = batch_all[start:start + cfg.batch_size]
                drop_rng = rng_for(cfg.seed, _DROPOUT, state.t) if model_cfg.dropout > 0 else None
                try:
                    loss, grads = loss_and_gradients(batch, params, model_cfg, rng=drop_rng)
                except FloatingPointError as exc:
                    raise TrainingError(f"numeric failure at step {state.t + 1}: {exc}") from exc
                total += loss * len(batch)
                adam_step(params, grads, state, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)
            row = {
                "epoch": epoch,
                "train_loss": total / len(batch_all),
                "train_acc": accuracy(train_x, train_y, params, model_cfg),
                "valid_acc": accuracy(valid_x, valid_y, params, model_cfg) if len(valid_y) else None,
            }
            metrics.append(row)
            log.info("epoch %d loss %.4f train_acc %.3f valid_acc %s", epoch, row["train_loss"],
                     row["train_acc"], row["valid_acc"])
            if on_epoch is not None:
                on_epoch(row)
            score = row["valid_acc"] if row["valid_acc"] is not None else 0.0
            if best is None or score >= best[0]:
                best = (score, {k: v.copy() for k, v in params.items()}, state.t)
    finally:
        if pool is not None:
            pool.shutdown()

    best_params = best[1] if best is not None else params
    step = best[2] if best is not None else 0
    ckpt = Checkpoint(best_params, model_cfg, frontend_cfg, list(labels), step)
    return TrainResult(ckpt, params, metrics)


def write_metrics(metrics: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in metrics:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
