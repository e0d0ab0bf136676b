"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget.

The terminal summary (see conftest.py) prints one PASS/FAIL line per test.
"""

import itertools
import time
from contextlib import nullcontext

import numpy as np
import pytest

from qbye_mixer.checkpoint import Checkpoint
from qbye_mixer.cli import main
from qbye_mixer.evaluation import build_report, frr_at_fa, load_eval_dataset, score_set, sweep_roc
from qbye_mixer.frontend import AudioClip, apply_cmvn, compute_mfcc, featurize, load_wav, noise_scale
from qbye_mixer.mixer import (
    REFERENCE_CONFIG,
    MixerConfig,
    block_params,
    count_macs,
    count_params,
    encoder_forward,
    feature_mixing_forward,
    init_params,
    time_mixing_forward,
)
from qbye_mixer.runtime import StreamState, detect, embed_utterance, enroll, match_score, stream_push
from qbye_mixer.training import accuracy, load_manifest

from oracles import brute_frr_at_fa, brute_match, brute_roc, finite_difference_check

pytestmark = pytest.mark.acceptance


def test_ac1_size_accounting():
    start = time.perf_counter()
    params, macs = count_params(REFERENCE_CONFIG), count_macs(REFERENCE_CONFIG)
    elapsed = time.perf_counter() - start
    print(f"params={params} macs={macs} ({params / 1e6:.2f}M / {macs / 1e6:.2f}M) in {elapsed:.4f}s")
    assert params == 256_200
    assert macs == 20_155_392
    assert round(params / 1e6, 2) in (0.25, 0.26) and round(macs / 1e6, 2) == 20.16
    assert elapsed < 1.0


def test_ac2_gradient_correctness():
    cfg = MixerConfig(f=8, t=8, h=4, g=4, n_blocks=2, num_classes=3)
    start = time.perf_counter()
    errors = [finite_difference_check(cfg, seed) for seed in range(5)]
    elapsed = time.perf_counter() - start
    print(f"max relative errors {['%.2e' % e for e in errors]} in {elapsed:.1f}s")
    assert max(errors) < 1e-4
    assert elapsed < 60.0


def test_ac3_residual_and_shape_invariants():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(81, 81))
    for h, g in itertools.product((1, 4, 64), repeat=2):
        cfg = REFERENCE_CONFIG.with_(h=h, g=g, n_blocks=2)
        params = init_params(cfg, rng, dtype=np.float64)
        for b in range(2):
            u = feature_mixing_forward(x, block_params(params, b, "feature"), cfg)
            assert u.shape == (81, 81)
            assert time_mixing_forward(u, block_params(params, b, "time"), cfg).shape == (81, 81)
        assert encoder_forward(x, params, cfg).shape == (81,)
        for name, value in params.items():
            if ".fc" in name:
                value[...] = 0.0
        for b in range(2):
            assert np.array_equal(feature_mixing_forward(x, block_params(params, b, "feature"), cfg), x)
            assert np.array_equal(time_mixing_forward(x, block_params(params, b, "time"), cfg), x)
        assert np.array_equal(encoder_forward(x, params, cfg), x.mean(axis=1))
    full = init_params(REFERENCE_CONFIG, rng)
    assert encoder_forward(x.astype(np.float32), full, REFERENCE_CONFIG).shape == (81,)


def test_ac4_frontend_contract():
    rng = np.random.default_rng(0)
    worst_mean, worst_var, worst_snr = 0.0, 0.0, 0.0
    for i in range(10):
        clip = AudioClip(rng.uniform(-1, 1, 16000) * rng.uniform(0.01, 1.0))
        feat = compute_mfcc(clip)
        assert feat.shape == (81, 81) and np.all(np.isfinite(feat))
        norm = apply_cmvn(feat).astype(np.float64)
        worst_mean = max(worst_mean, float(np.max(np.abs(norm.mean(axis=1)))))
        # non-degenerate: input variance large enough for var / (var + eps) to be within 1e-4 of 1
        ok = feat.astype(np.float64).var(axis=1) >= 1e4 * 1e-8
        worst_var = max(worst_var, float(np.max(np.abs(norm.var(axis=1)[ok] - 1))))
        signal, noise = rng.normal(size=16000) * 0.1, rng.uniform(-1, 1, 16000)
        for snr in (4.0, 7.5, 12.0, -3.0):
            scaled = noise_scale(signal, noise, snr) * noise
            measured = 10 * np.log10(np.mean(signal ** 2) / np.mean(scaled ** 2))
            worst_snr = max(worst_snr, abs(measured - snr))
    print(f"|mean|={worst_mean:.2e} |var-1|={worst_var:.2e} snr err={worst_snr:.2e} dB")
    assert worst_mean < 1e-5 and worst_var < 1e-4 and worst_snr < 1e-6


def test_ac5_matching_oracle_equivalence():
    rng = np.random.default_rng(5)
    worst = 0.0
    for m, n in itertools.product(range(1, 7), repeat=2):
        for _ in range(3):
            e, q = rng.normal(size=(m, 81)), rng.normal(size=(n, 81))
            dist, offset = match_score(e, q)
            ref_dist, ref_offset = brute_match(e.tolist(), q.tolist())
            assert offset == ref_offset
            worst = max(worst, abs(dist - ref_dist))
    print(f"36 length pairs x 3 draws, max |distance diff| = {worst:.2e}")
    assert worst < 1e-6


def test_ac6_evaluation_oracle_equivalence():
    start = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_pos, n_neg = int(rng.integers(1, 51)), int(rng.integers(1, 201))
        decimals = int(rng.integers(1, 4))
        pos = np.round(rng.uniform(0, 1.5, n_pos), decimals).tolist()
        neg = np.round(rng.uniform(0.2, 2.0, n_neg), decimals).tolist()
        hours = float(rng.uniform(0.01, 3.0))
        roc = sweep_roc(pos, neg, hours)
        ref = brute_roc(pos, neg, hours)
        assert [(p.threshold, p.fa_per_hour, p.frr_percent) for p in roc] == ref
        for target in (0.0, 0.3, 1.0, 10.0, 1e6):
            with pytest.warns(RuntimeWarning) if all(p[1] > target for p in ref) else nullcontext():
                assert frr_at_fa(roc, target) == brute_frr_at_fa(ref, target)
    elapsed = time.perf_counter() - start
    print(f"20 seeded fixtures identical to brute force in {elapsed:.2f}s")
    assert elapsed < 10.0


@pytest.mark.slow
def test_ac7_desk_scale_qbye(trained_model):
    start = time.perf_counter()
    ckpt = trained_model.result.checkpoint
    entries, _ = load_manifest(trained_model.root / "manifest.jsonl")
    train_entries = [e for e in entries if e.split == "train"]
    feats = np.stack([featurize(load_wav(e.audio_path)) for e in train_entries])
    train_acc = accuracy(feats, np.array([e.label_index for e in train_entries]), ckpt.params, ckpt.mixer_config)

    ds = load_eval_dataset(trained_model.eval_manifest)
    assert len(ds.enroll) == 1
    (key, enroll_utts), = ds.enroll.items()
    assert len(enroll_utts) == 3 and len(ds.queries) == 20 and len(ds.negatives) == 40
    profiles = {key: enroll(key, [u.clip for u in enroll_utts], ckpt)}
    pos = score_set(profiles, ds.queries, ckpt, "positive")
    neg = score_set(profiles, ds.negatives, ckpt, "negative")
    intra = float(np.mean([r.score for r in pos]))
    inter = float(np.mean([r.score for r in neg]))
    report = build_report(pos, neg, 0.0)
    elapsed = trained_model.elapsed_s + time.perf_counter() - start
    print(f"train_acc={train_acc:.3f} intra={intra:.3f} inter={inter:.3f} margin={inter - intra:.3f} "
          f"FRR@0FA={report.frr_at_target:.1f}% in {elapsed:.0f}s")
    assert train_acc >= 0.99
    assert inter - intra >= 0.1
    assert report.frr_at_target <= 50.0
    assert elapsed < 600.0


def test_ac8_determinism(tmp_path, capsys):
    assert main(["gen-synthetic", "--classes", "3", "--per-class", "5", "--seed", "4", "--out-dir",
                 str(tmp_path / "ds"), "--eval-classes", "1", "--eval-per-class", "5",
                 "--eval-negatives", "6", "--noise-files", "2"]) == 0
    ds = tmp_path / "ds"
    enroll_wavs = [str(ds / f"eval/word03_{i:03d}.wav") for i in range(3)]
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", "--manifest", str(ds / "manifest.jsonl"), "--out", str(out), "--epochs", "3",
                     "--seed", "7", "--n-blocks", "2", "--batch-size", "4", "--noise-dir", str(ds / "noise")]) == 0
        assert main(["enroll", *enroll_wavs, "--checkpoint", str(out / "model.qbem"), "--keyword", "word03",
                     "--out", str(out / "profile.json")]) == 0
        assert main(["eval", "--checkpoint", str(out / "model.qbem"), "--dataset", str(ds / "eval.jsonl"),
                     "--out-dir", str(out / "eval")]) == 0
    for name in ("model.qbem", "metrics.jsonl", "profile.json", "eval/roc.csv", "eval/report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_ac9_streaming_offline_equivalence():
    cfg = MixerConfig(n_blocks=2)
    ckpt = Checkpoint(init_params(cfg, np.random.default_rng(0)), cfg)
    rng = np.random.default_rng(1)
    keyword = rng.uniform(-0.4, 0.4, int(16000 * 1.3))
    audio = rng.uniform(-0.05, 0.05, 16000 * 3)
    audio[12000:12000 + len(keyword)] += keyword
    profile = enroll("kw", [AudioClip(keyword), AudioClip(rng.uniform(-0.4, 0.4, 16000))], ckpt)
    assert profile.max_windows == 4

    offline = detect(profile, embed_utterance(AudioClip(audio), ckpt), 0.5).score
    state = StreamState(profile, ckpt, 0.5)
    results = []
    for start in range(0, len(audio), 1000):
        results += stream_push(state, audio[start:start + 1000])
    assert len(results) == 21 - 4 + 1
    streamed = min(r.score for r in results)
    print(f"offline={offline:.8f} streamed={streamed:.8f}")
    assert abs(streamed - offline) < 1e-6
