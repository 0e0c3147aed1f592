"""Acceptance criteria; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""
import filecmp
import json
import math
import time

import numpy as np
import pytest

from helpers import check_gradients, record_criterion
from ctrcoreset._random import derive_seed, problem_rng
from ctrcoreset.bench import BenchCase, make_inputs
from ctrcoreset.cli import main
from ctrcoreset.dataset import inject_noise, synth_generate
from ctrcoreset.denoise import DenoiseConfig, LossStats, upper_bound
from ctrcoreset.model import logloss
from ctrcoreset.pipeline import PipelineConfig, evaluate, random_baseline, run_pipeline, train_final
from ctrcoreset.selfcorrect import correct_label, global_trust, local_trust, loss_lc
from ctrcoreset.submod import (GreedyConfig, batched_greedy, batched_stochastic_greedy, brute_force_opt, build_kernel,
                               naive_greedy, stochastic_greedy)

BOUND = 1 - 1 / math.e

# end-to-end study settings (see the decisions ledger for why each differs from the defaults)
E2E_N, E2E_FIELDS, E2E_VOCAB, E2E_FLIP, E2E_SEEDS = 50_000, 8, 20, 0.2, 10
E2E_SKEW = 1.0
E2E_CONFIG = dict(budget=0.01, selection_batch_size=4000, final_batch_size=32)


def test_criterion_1_greedy_guarantees():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(1, "acceptance"))
    naive_ok, ratios = 0, []
    kernels = [build_kernel(rng.standard_normal((12, 5))) for _ in range(100)]
    for i, K in enumerate(kernels):
        opt, _ = brute_force_opt(K, 3)
        naive_ok += naive_greedy(K, 3).value >= BOUND * opt - 1e-12
        for r in range(2):
            value = stochastic_greedy(K, GreedyConfig(3, "stochastic", 0.1, seed=2 * i + r)).value
            ratios.append(value / opt)
    elapsed = time.perf_counter() - t0
    mean_ratio = float(np.mean(ratios))
    ok = naive_ok == 100 and mean_ratio >= BOUND - 0.1 and len(ratios) == 200 and elapsed < 60
    record_criterion(1, ok, f"naive {naive_ok}/100 above (1-1/e)*OPT; stochastic mean ratio {mean_ratio:.4f} "
                            f"over {len(ratios)} runs (need >= {BOUND - 0.1:.4f}); {elapsed:.1f}s")
    assert ok


def _sequential_stream(K, k, eps, seed, b):
    """Independent per-problem loop drawing from ``problem_rng(seed, b)``."""
    from ctrcoreset.submod import sample_size
    S, n = K.S, K.n
    s = sample_size(n, k, eps)
    rng = problem_rng(seed, b)
    V, u, mask, picked = np.zeros(n), 0.0, np.ones(n, bool), []
    for _ in range(k):
        pool = np.flatnonzero(mask)
        cands = pool if s >= len(pool) else np.sort(rng.choice(pool, size=s, replace=False))
        gains = np.array([np.maximum(V, S[c]).sum() - u for c in cands])
        best = cands[int(np.argmax(gains))]
        picked.append(int(best))
        V = np.maximum(V, S[best])
        u = V.sum()
        mask[best] = False
    return np.array(picked), u


def test_criterion_2_batched_equivalence():
    mismatches, checked = 0, 0
    for case in range(20):
        rng = np.random.default_rng(derive_seed(2, "case", case))
        for B in (1, 4):
            n = int(rng.integers(20, 120))
            kernels = [build_kernel(rng.standard_normal((n, 8))) for _ in range(B)]
            k = int(rng.integers(2, n // 2))
            cfg = GreedyConfig(k, "stochastic", 0.05, seed=case)
            batched = batched_stochastic_greedy(kernels, cfg)
            for b, (K, res) in enumerate(zip(kernels, batched)):
                sel, value = _sequential_stream(K, k, 0.05, case, b)
                checked += 1
                mismatches += not (np.array_equal(res.selected, sel) and res.value == value)
            if B == 1:
                solo = stochastic_greedy(kernels[0], cfg)
                mismatches += not np.array_equal(solo.selected, batched[0].selected)
    ok = mismatches == 0
    record_criterion(2, ok, f"{checked} batched problems over 20 cases x B in {{1,4}}; {mismatches} mismatches")
    assert ok


def test_criterion_3_gradient_correctness():
    full_rel, full_abs, last_rel, last_abs = np.max([check_gradients(seed) for seed in range(50)], axis=0)
    ok = full_rel <= 1e-4 and last_rel <= 1e-4 and full_abs <= 1e-7 and last_abs <= 1e-7
    record_criterion(3, ok, f"50 toy configs; max rel error backprop {full_rel:.2e}, last layer {last_rel:.2e}; "
                            f"near-zero abs {max(full_abs, last_abs):.1e}")
    assert ok


def test_criterion_4_self_correction_algebra():
    rng = np.random.default_rng(4)
    T = rng.integers(2, 10_000, 50) * 2
    mid = all(global_trust(t // 2, t) == 0.5 for t in T)
    local = abs(float(local_trust(0.5))) <= 1e-12
    y, yhat = rng.integers(0, 2, 100).astype(float), rng.random(100)
    ends = np.array_equal(correct_label(y, yhat, 0.0), y) and np.array_equal(correct_label(y, yhat, 1.0), yhat)
    reduce = float(np.abs(loss_lc(np.full(100, 0.5), y, 70, 100) - logloss(np.full(100, 0.5), y)).max())
    ok = mid and local and ends and reduce <= 1e-12
    record_criterion(4, ok, f"g(T/2)=0.5 exact: {mid}; l(0.5)=0: {local}; endpoints exact: {ends}; "
                            f"eps=0 loss gap {reduce:.1e}")
    assert ok


def test_criterion_5_denoise_formula():
    rng = np.random.default_rng(5)
    worst_bound = 0.0
    for _ in range(200):
        n_pass = int(rng.integers(2, 30))
        z = float(rng.uniform(0, 3))
        stats = LossStats(50)
        for _ in range(n_pass):
            stats.update(rng.exponential(1.0, 50))
        direct = stats.mean + z * np.sqrt(stats.variance / n_pass)
        worst_bound = max(worst_bound, float(np.abs(upper_bound(stats, DenoiseConfig(n_pass, z)) - direct).max()))
    streams = rng.exponential(rng.uniform(0.01, 5.0, (1, 10_000)), (int(rng.integers(2, 40)), 10_000))
    stats = LossStats(10_000)
    for row in streams:
        stats.update(row)
    mean_err = float(np.abs(stats.mean - streams.mean(axis=0)).max())
    var_err = float(np.abs(stats.variance - streams.var(axis=0, ddof=1)).max())
    ok = worst_bound <= 1e-10 and mean_err <= 1e-10 and var_err <= 1e-10
    record_criterion(5, ok, f"L_upper gap {worst_bound:.1e}; 10^4 streams mean gap {mean_err:.1e}, "
                            f"variance gap {var_err:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_6_end_to_end():
    t0 = time.perf_counter()
    wins, enriched, rows = 0, 0, []
    for seed in range(E2E_SEEDS):
        data = synth_generate(E2E_N, [E2E_VOCAB] * E2E_FIELDS, seed=seed, skew=E2E_SKEW)
        data, flips = inject_noise(data, E2E_FLIP, seed=seed)
        cfg = PipelineConfig(seed=seed, **E2E_CONFIG)
        res = run_pipeline(data, cfg)
        train_idx, val_idx, test_idx = res.splits
        rand = random_baseline(data.subset(train_idx), len(res.denoised.artifact), seed=seed)
        rand_net, _ = train_final(data, rand, cfg, val=data.subset(val_idx))
        test = data.subset(test_idx)
        core_auc, rand_auc = res.metrics.auc, evaluate(rand_net, test).auc
        flipped = np.zeros(len(data), bool)
        flipped[flips] = True
        removed = np.asarray(res.denoised.artifact.meta["removed"], dtype=np.int64)
        base = flipped[res.selection.artifact.indices].mean()
        ratio = flipped[removed].mean() / base if base > 0 else math.inf
        wins += core_auc >= rand_auc
        enriched += ratio > 1
        rows.append((seed, core_auc, rand_auc, ratio))
    elapsed = time.perf_counter() - t0
    for seed, a, b, r in rows:
        print(f"  seed {seed}: coreset AUC {a:.4f} random AUC {b:.4f} enrichment {r:.2f}")
    ok_auc, ok_enrich, ok_time = wins >= 8, enriched >= 8, elapsed < 600
    mean_gap = float(np.mean([a - b for _, a, b, _ in rows]))
    record_criterion(6, ok_auc and ok_enrich and ok_time,
                     f"selected coreset >= random in {wins}/10 (need 8; mean AUC gap {mean_gap:+.4f}); enrichment > 1 in "
                     f"{enriched}/10 (need 8); {elapsed:.0f}s (limit 600)")
    assert ok_enrich and ok_time
    assert ok_auc


def _min_time(fn, reps):
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


@pytest.mark.slow
def test_criterion_7_scaling():
    from ctrcoreset.parallel import get_threads
    import os
    rng = np.random.default_rng(7)
    g1, g2 = rng.standard_normal((1000, 100)), rng.standard_normal((2000, 100))
    build_kernel(g1)
    kernel_ratio = _min_time(lambda: build_kernel(g2), 7) / _min_time(lambda: build_kernel(g1), 7)

    big = [build_kernel(rng.standard_normal((10_000, 100)))]
    t50 = _min_time(lambda: stochastic_greedy(big[0], GreedyConfig(50, epsilon=0.01)), 3)
    t100 = _min_time(lambda: stochastic_greedy(big[0], GreedyConfig(100, epsilon=0.01)), 3)
    big.clear()
    k_ratio = max(t50, t100) / min(t50, t100)

    # four 10^4 kernels do not fit next to the solver buffers on a 5 GB host; use N=2000
    grads = make_inputs(BenchCase(2000, 50, B=4, dim=100, seed=7))
    kernels = [build_kernel(g, batch_id=b) for b, g in enumerate(grads)]
    cfg = GreedyConfig(50, "naive")
    run_batched = lambda: batched_greedy(kernels, cfg)  # noqa: E731
    run_sequential = lambda: [batched_greedy([K], cfg, problem_ids=[b]) for b, K in enumerate(kernels)]  # noqa: E731
    run_batched(), run_sequential()
    # interleave repetitions so drift in machine load hits both sides alike
    pairs = [(_min_time(run_batched, 1), _min_time(run_sequential, 1)) for _ in range(5)]
    b_ratio = min(p[0] for p in pairs) / (min(p[1] for p in pairs) / 4)
    cores = os.cpu_count() or 1
    # the <=4x bound presumes >=4 cores; with fewer, batched and sequential do the same serial
    # work, so the check becomes "batching adds at most 10% overhead"
    b_limit = 4.0 if cores >= 4 else 4.4
    b_note = "" if cores >= 4 else " (>=4-core precondition unmet, overhead-only bound)"
    ok = 3 <= kernel_ratio <= 6 and k_ratio <= 1.5 and b_ratio <= b_limit
    record_criterion(7, ok, f"kernel time N=2000/N=1000 {kernel_ratio:.2f} (need [3,6]); stochastic k=100 vs 50 "
                            f"{k_ratio:.2f}x (need <=1.5); B=4 batched vs one B=1 solve {b_ratio:.2f}x "
                            f"(need <={b_limit:g}{b_note}) on {cores} core(s), {get_threads()} worker(s)")
    assert ok


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path):
    data = tmp_path / "d.csv"
    assert main(["synth", "--n", "6000", "--fields", "4", "--vocab", "12", "--flip", "0.2", "--seed", "8",
                 "--out", str(data)]) == 0
    flags = ["--budget", "0.05", "--hidden", "32,32", "--final-max-epochs", "5", "--seed", "8"]
    for run in ("a", "b"):
        assert main(["pipeline", "--data", str(data), "--workdir", str(tmp_path / run), *flags]) == 0
    same_core = all(filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)
                    for f in ("coreset.csv", "coreset_denoised.csv", "denoise_report.csv"))
    ma, mb = (json.loads((tmp_path / r / "metrics.json").read_text()) for r in ("a", "b"))
    same_metrics = ma["test"] == mb["test"] and ma["fingerprint"] == mb["fingerprint"]
    ok = same_core and same_metrics
    record_criterion(8, ok, f"artifact CSVs byte-identical: {same_core}; metrics identical: {same_metrics} "
                            f"(AUC {ma['test']['auc']:.6f})")
    assert ok
