"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
import torch
from scipy.stats import ttest_rel

from edafm.augment import KINDS, AugmentationSpec, sample_pair, stream, transform
from edafm.bench import N_TIMED, N_WARMUP, count_flops, standard_bench
from edafm.decompose import cvxeda
from edafm.encoder import REFERENCE, TINY, EfficientNet1D, count_parameters
from edafm.evaluation import check_plan, make_folds
from edafm.errors import TooFewUsers
from edafm.experiment import E2EConfig, run_synthetic_e2e
from edafm.features import EDA_NAMES, GENERIC_NAMES, eda_features, generic_features
from edafm.metrics import balanced_accuracy, f1, mcc
from edafm.probe import class_weights, penalized_loss
from edafm.segment import WINDOW, Window
from edafm.stats import friedman_nemenyi, paired_ttest_bonferroni
from edafm.synthetic import cluster_windows, synth_signal
from edafm.train import info_nce

from oracles import confusion_brute, cvxeda_reference, hook_flops, naive_eda_row


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def _t(a):
    return torch.tensor(a, dtype=torch.float64)


def test_criterion_01_info_nce(criterion, rng):
    with Timer() as t:
        two = info_nce(_t([[1, 0], [0, 1], [1, 0], [0, 1]]), tau=0.1).item()
        one = info_nce(_t([[0.3, -1.2], [2.0, 0.7]])).item()
        z = _t(rng.normal(size=(16, 8)))
        base = info_nce(z).item()
        scale = max(abs(info_nce(c * z).item() - base) / base for c in (0.1, 10.0))
    ok = (abs(two - math.log(1 + 2 * math.exp(-10))) <= 1e-9 and one == 0.0 and scale <= 1e-6
          and t.seconds < 1)
    assert criterion(1, "InfoNCE exactness", ok, f"N=2 {two:.6e}, N=1 {one}, scale rel {scale:.1e}, {t.seconds:.2f}s")


def _encoder_fd_error(seed=0):
    torch.manual_seed(seed)
    model = EfficientNet1D(replace(TINY, dropout=0.0)).double().train()
    x = torch.randn(4, 3, 240, dtype=torch.float64)
    w = torch.randn(4, 64, dtype=torch.float64)
    loss = lambda: (model(x) * w).sum()
    model.zero_grad()
    loss().backward()
    gen = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for p in model.parameters():
            flat, grad = p.view(-1), p.grad.view(-1).clone()
            picks = gen.choice(flat.numel(), min(8, flat.numel()), replace=False)
            fd = np.empty(len(picks))
            for j, i in enumerate(picks):
                w0 = flat[i].item()
                h = 1e-3 * max(abs(w0), 1e-2)
                flat[i] = w0 + h
                up = loss().item()
                flat[i] = w0 - h
                down = loss().item()
                flat[i] = w0
                fd[j] = (up - down) / (2 * h)
            g = grad[picks].numpy()
            # absolute floor: a BN bias feeding another train-mode BN has an exactly-zero gradient
            worst = max(worst, np.abs(g - fd).max() / max(np.abs(fd).max(), np.abs(g).max(), 1e-6))
    return worst


def _logreg_fd_error(rng):
    worst = 0.0
    for _ in range(20):
        X = rng.normal(size=(30, 5))
        y = (rng.random(30) < 0.4).astype(int)
        y[:2] = [0, 1]
        sw = class_weights(y)
        theta = rng.normal(size=6)
        _, g = penalized_loss(theta, X, y, sw, 0.5)
        fd = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = 1e-6
            fd[i] = (penalized_loss(theta + e, X, y, sw, 0.5)[0] - penalized_loss(theta - e, X, y, sw, 0.5)[0]) / 2e-6
        worst = max(worst, np.abs(g - fd).max() / np.abs(fd).max())
    return worst


def test_criterion_02_gradients(criterion, rng):
    with Timer() as t:
        enc = _encoder_fd_error()
        lr = _logreg_fd_error(rng)
    ok = enc < 1e-3 and lr < 1e-5 and t.seconds < 120
    assert criterion(2, "gradient correctness", ok, f"encoder {enc:.1e}, logreg {lr:.1e}, {t.seconds:.1f}s")


def test_criterion_03_cvxeda_oracle(criterion, rng):
    worst_obj, min_driver = 0.0, math.inf
    with Timer() as t:
        for _ in range(20):
            y = synth_signal(WINDOW, rng, n_pulses=int(rng.integers(1, 4)), noise_sd=0.01).values
            dec = cvxeda(y)
            ref, _ = cvxeda_reference(y)
            worst_obj = max(worst_obj, abs(dec.objective - ref) / abs(ref))
            min_driver = min(min_driver, dec.driver.min())
        ramp = cvxeda(1.5 + 0.01 * np.arange(WINDOW))
        ramp_max = np.abs(ramp.driver).max()
    ok = worst_obj <= 1e-4 and min_driver >= -1e-8 and ramp_max < 1e-4 and t.seconds < 300
    assert criterion(3, "cvxEDA oracle equivalence", ok,
                     f"obj rel {worst_obj:.1e}, min driver {min_driver:.1e}, ramp {ramp_max:.1e}, {t.seconds:.1f}s")


def test_criterion_04_features(criterion, rng):
    worst = 0.0
    with Timer() as t:
        for _ in range(100):
            x = np.stack([rng.normal(2.0, 0.3, WINDOW), np.abs(rng.normal(0, 0.1, WINDOW)),
                          rng.normal(2.0, 0.05, WINDOW)])
            got = eda_features(x).values
            want = np.concatenate([naive_eda_row(list(row)) for row in x])
            worst = max(worst, float(np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-300))))
        dims = (len(generic_features(x).values), len(eda_features(x).values), len(GENERIC_NAMES), len(EDA_NAMES))
    ok = worst <= 1e-9 and dims == (12, 45, 12, 45) and t.seconds < 30
    assert criterion(4, "feature oracle", ok, f"max rel {worst:.1e}, dims {dims[:2]}, {t.seconds:.1f}s")


def _float32_window(rng):
    x = np.stack([rng.normal(2, 0.3, WINDOW), np.abs(rng.normal(0, 0.1, WINDOW)), rng.normal(2, 0.05, WINDOW)])
    return Window(x.astype(np.float32).astype(np.float64))


def test_criterion_05_augmentations(criterion, rng):
    problems = []
    with Timer() as t:
        for i in range(50):
            w = _float32_window(rng)
            flip = AugmentationSpec("flip")
            if transform(transform(w.channels, flip), flip).tobytes() != w.channels.tobytes():
                problems.append("flip")
            dur = float(rng.choice([5.0, 7.5, 10.0, 15.0]))
            start = int(rng.integers(0, WINDOW - 4 * dur))
            y = transform(w.channels, AugmentationSpec("cutout", {"duration_s": dur, "start": start}))
            if not np.array_equal(np.flatnonzero((y == 0).all(axis=0)), np.arange(start, start + int(4 * dur))):
                problems.append("cutout")
            y = transform(w.channels, AugmentationSpec("permutation", {"n_segments": int(rng.integers(2, 6))}, seed=i))
            if not all(np.array_equal(np.sort(a), np.sort(b)) for a, b in zip(y, w.channels)):
                problems.append("permutation")
        seen = set()
        base = _float32_window(rng)
        for i in range(10_000):
            v1, v2, specs = sample_pair(base, stream(2024, i))
            seen.update(s.kind for s in specs)
            for v in (v1, v2):
                if v.channels.shape != (3, WINDOW) or not np.isfinite(v.channels).all():
                    problems.append(f"draw {i}")
    ok = not problems and seen == set(KINDS) and len(KINDS) == 18 and t.seconds < 60
    assert criterion(5, "augmentation invariants", ok,
                     f"{len(seen)}/18 kinds seen, {len(problems)} violations, {t.seconds:.1f}s")


def test_criterion_06_cv_plans(criterion):
    gen = np.random.default_rng(6)
    violations, counted, ta_plans = 0, 0, 0
    with Timer() as t:
        for trial in range(1000):
            n_users = int(gen.integers(2, 12))
            sizes = gen.integers(1, 15, n_users)
            users = np.repeat([f"p{u}" for u in range(n_users)], sizes)
            times = gen.integers(0, 10, len(users)).astype(float)  # coarse grid forces ties
            lopo = make_folds(users, times, "LOPO", seed=trial)
            tests = [set(users[f.test]) for f in lopo.folds]
            if len(lopo) != n_users or set().union(*tests) != set(users) or any(len(s) != 1 for s in tests):
                violations += 1
            try:
                check_plan(lopo, users, times)
            except AssertionError:
                violations += 1
            try:
                ta = make_folds(users, times, "TA", seed=trial)
            except TooFewUsers:
                counted += 1
                continue
            ta_plans += 1
            try:
                check_plan(ta, users, times)
            except AssertionError:
                violations += 1
            if len(ta) != 5 or sorted(sum(ta.groups, [])) != sorted(set(users) - set(ta.excluded)):
                violations += 1
    ok = violations == 0 and ta_plans > 300 and t.seconds < 60
    assert criterion(6, "CV-plan invariants", ok,
                     f"1000 instances, {ta_plans} TA plans, {violations} violations, {t.seconds:.1f}s")


def test_criterion_07_metrics_stats(criterion):
    gen = np.random.default_rng(7)
    worst = 0.0
    with Timer() as t:
        for _ in range(1000):
            n = int(gen.integers(2, 80))
            y, p = gen.integers(0, 2, n), gen.integers(0, 2, n)
            tp, fn, tn, fp = confusion_brute(y, p)
            recalls = [r for r in (tp / (tp + fn) if tp + fn else None, tn / (tn + fp) if tn + fp else None)
                       if r is not None]
            den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
            want = (sum(recalls) / len(recalls), (tp * tn - fp * fn) / math.sqrt(den) if den else 0.0,
                    2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0)
            got = (balanced_accuracy(y, p), mcc(y, p), f1(y, p))
            worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
        fr = friedman_nemenyi(np.array([[0.9] * 5, [0.8] * 5, [0.7] * 5]))
        a, b = gen.random(10), gen.random(10)
        p1, p5 = paired_ttest_bonferroni(a, b, 1), paired_ttest_bonferroni(a, b, 5)
    ok = (worst <= 1e-12 and abs(fr.chi2 - 10) <= 1e-9 and abs(fr.p - math.exp(-5)) <= 1e-9
          and p1 == pytest.approx(ttest_rel(a, b).pvalue, rel=1e-12) and p5 == min(1.0, 5 * p1)
          and t.seconds < 30)
    assert criterion(7, "metrics and stats", ok,
                     f"metric err {worst:.1e}, chi2 {fr.chi2:.12g}, p {fr.p:.6e}, {t.seconds:.1f}s")


def test_criterion_08_model_size(criterion):
    with Timer() as t:
        model = EfficientNet1D(REFERENCE).eval()
        with torch.no_grad():
            out = model(torch.zeros(2, 3, 240))
        n = count_parameters(model)
        flops, hand = count_flops(REFERENCE), hook_flops(REFERENCE)
    ok = tuple(out.shape) == (2, 64) and 800_000 <= n <= 1_300_000 and flops == hand and t.seconds < 10
    assert criterion(8, "model shape and size", ok,
                     f"out {tuple(out.shape)}, {n:,} params, {flops:,} FLOPs vs hand {hand:,}, {t.seconds:.1f}s")


@pytest.mark.slow
def test_criterion_09_synthetic_end_to_end(criterion):
    cfg = E2EConfig()
    first = run_synthetic_e2e(cfg)
    second = run_synthetic_e2e(cfg)
    r = first
    ok = (r.n_windows == 2000 and r.encoder_ba >= 0.75 and r.encoder_ba >= r.dummy_ba + 0.15
          and r.generic_ba > r.generic_dummy_ba and r.cpu_seconds <= 30 * 60
          and first.fingerprint == second.fingerprint and first.encoder_ba == second.encoder_ba)
    assert criterion(9, "synthetic end-to-end", ok,
                     f"encoder BA {r.encoder_ba:.3f} vs dummy {r.dummy_ba:.3f}, generic {r.generic_ba:.3f}, "
                     f"train {r.cpu_seconds / 60:.1f} CPU-min, {r.epochs} epochs, "
                     f"rerun {'identical' if first.fingerprint == second.fingerprint else 'DIFFERS'}")


def test_criterion_10_bench(criterion):
    x, _ = cluster_windows(40, 10)
    entries = {e.name: e for e in standard_bench(x, encoder_cfg=REFERENCE, seed=0)}
    protocol = all(e.n_warmup == N_WARMUP == 3 and e.n_samples == N_TIMED == 20 and len(e.times_ms) == 20
                   for e in entries.values())
    g, e, m = (entries[k].mean_ms for k in ("generic", "eda", "encoder"))
    ok = protocol and g < e < m
    assert criterion(10, "bench protocol", ok, f"generic {g:.3f} ms < eda {e:.3f} ms < encoder {m:.3f} ms")
