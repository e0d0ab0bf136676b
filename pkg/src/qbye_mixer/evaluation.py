"""FRR at a target false-accept rate, from threshold sweeps over scored sets.

Counting conventions:

* one potential false accept per (negative utterance, profile) pair, using
  the minimum alignment distance over that utterance;
* negative hours count each utterance once per profile it is scored against.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .frontend import AudioClip, load_wav
from .runtime import EnrollmentProfile, detect, embed_utterance, enroll


@dataclass(frozen=True)
class ScoredUtterance:
    utterance_id: str
    score: float
    duration_s: float
    profile_id: str = ""


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fa_per_hour: float
    frr_percent: float


@dataclass
class EvalReport:
    roc: list[RocPoint]
    frr_at_target: float
    target_fa_per_hour: float
    negative_hours: float
    n_pos: int
    n_neg: int
    target_reachable: bool = True

    def summary(self) -> dict:
        return {
            "frr_at_target": self.frr_at_target,
            "target": self.target_fa_per_hour,
            "negative_hours": self.negative_hours,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "target_reachable": self.target_reachable,
        }


@dataclass(frozen=True)
class EvalUtterance:
    utterance_id: str
    clip: AudioClip
    profile_id: str | None = None


def score_set(profiles: dict[str, EnrollmentProfile], utterances: list[EvalUtterance], ckpt: Checkpoint,
              polarity: str, threads: int = 1) -> list[ScoredUtterance]:
    """Score positives against their own profile, negatives against every profile."""
    if polarity not in ("positive", "negative"):
        raise ValueError("polarity must be 'positive' or 'negative'")

    def run(utt: EvalUtterance) -> list[ScoredUtterance]:
        query = embed_utterance(utt.clip, ckpt)
        if polarity == "positive":
            if utt.profile_id not in profiles:
                raise KeyError(f"no profile {utt.profile_id!r} for {utt.utterance_id}")
            keys = [utt.profile_id]
        else:
            keys = sorted(profiles)
        return [ScoredUtterance(utt.utterance_id, detect(profiles[k], query, 0.0, ckpt.fingerprint).score,
                                utt.clip.duration_s, k) for k in keys]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(run, utterances))
    else:
        chunks = [run(u) for u in utterances]
    return [row for chunk in chunks for row in chunk]


def negative_hours(rows: list[ScoredUtterance]) -> float:
    return sum(r.duration_s for r in rows) / 3600.0


def threshold_grid(pos, neg) -> np.ndarray:
    """Sorted distinct observed scores plus one threshold above the maximum."""
    scores = np.unique(np.concatenate([np.asarray(pos, float), np.asarray(neg, float)]))
    return np.append(scores, scores[-1] + 1e-3)


def sweep_roc(pos, neg, neg_hours: float) -> list[RocPoint]:
    """Exact ROC over all observed thresholds.

    At threshold tau a negative is a false accept when its score < tau and a
    positive is rejected when its score >= tau.
    """
    pos = np.sort(np.asarray(pos, dtype=float))
    neg = np.sort(np.asarray(neg, dtype=float))
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need at least one positive and one negative score")
    if neg_hours <= 0:
        raise ValueError("negative hours must be positive")
    taus = threshold_grid(pos, neg)
    fa = np.searchsorted(neg, taus, side="left")
    rejected = len(pos) - np.searchsorted(pos, taus, side="left")
    return [RocPoint(float(t), float(a) / neg_hours, 100.0 * float(r) / len(pos))
            for t, a, r in zip(taus, fa, rejected)]


def frr_at_fa(roc: list[RocPoint], target_fa_per_hour: float = 0.3) -> float:
    """FRR at the largest threshold whose FA/hr stays within the target.

    When no point qualifies the result is 100% and a RuntimeWarning is issued.
    """
    if not roc:
        raise ValueError("empty ROC")
    ok = [p for p in roc if p.fa_per_hour <= target_fa_per_hour]
    if not ok:
        warnings.warn(f"no threshold reaches {target_fa_per_hour} FA/hr", RuntimeWarning, stacklevel=2)
        return 100.0
    return max(ok, key=lambda p: p.threshold).frr_percent


def build_report(pos_rows: list[ScoredUtterance], neg_rows: list[ScoredUtterance],
                 target_fa_per_hour: float = 0.3) -> EvalReport:
    hours = negative_hours(neg_rows)
    roc = sweep_roc([r.score for r in pos_rows], [r.score for r in neg_rows], hours)
    reachable = any(p.fa_per_hour <= target_fa_per_hour for p in roc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        frr = frr_at_fa(roc, target_fa_per_hour)
    return EvalReport(roc, frr, target_fa_per_hour, hours, len(pos_rows), len(neg_rows), reachable)


def write_roc_csv(roc, path) -> None:
    points = roc.roc if isinstance(roc, EvalReport) else roc
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "fa_per_hour", "frr_percent"])
        for p in points:
            writer.writerow([f"{p.threshold:.6f}", f"{p.fa_per_hour:.6f}", f"{p.frr_percent:.6f}"])


def read_roc_csv(path) -> list[RocPoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [RocPoint(float(r["threshold"]), float(r["fa_per_hour"]), float(r["frr_percent"]))
                for r in csv.DictReader(fh)]


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.summary(), sort_keys=True, indent=1) + "\n", encoding="utf-8")


@dataclass
class EvalDataset:
    enroll: dict[str, list[EvalUtterance]] = field(default_factory=dict)
    queries: list[EvalUtterance] = field(default_factory=list)
    negatives: list[EvalUtterance] = field(default_factory=list)


def load_eval_dataset(path) -> EvalDataset:
    """Parse JSONL rows {audio_path, speaker, keyword, role}.

    Profiles are keyed ``speaker/keyword``; relative paths resolve against
    the dataset file's folder.
    """
    path = Path(path)
    ds = EvalDataset()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                audio, role = Path(row["audio_path"]), row["role"]
                speaker, keyword = str(row.get("speaker", "")), row.get("keyword")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad eval row ({exc})") from exc
            if not audio.is_absolute():
                audio = path.parent / audio
            uid = str(row["audio_path"])
            if role == "negative":
                ds.negatives.append(EvalUtterance(uid, load_wav(audio)))
                continue
            if role not in ("enroll", "query") or keyword is None:
                raise ValueError(f"{path}:{lineno}: role {role!r} needs a keyword")
            key = f"{speaker}/{keyword}"
            utt = EvalUtterance(uid, load_wav(audio), key)
            if role == "enroll":
                ds.enroll.setdefault(key, []).append(utt)
            else:
                ds.queries.append(utt)
    return ds


def run_eval(ckpt: Checkpoint, ds: EvalDataset, target_fa_per_hour: float = 0.3,
             threads: int = 1) -> EvalReport:
    profiles = {key: enroll(key, [u.clip for u in utts], ckpt) for key, utts in sorted(ds.enroll.items())}
    pos = score_set(profiles, ds.queries, ckpt, "positive", threads)
    neg = score_set(profiles, ds.negatives, ckpt, "negative", threads)
    return build_report(pos, neg, target_fa_per_hour)
