"""Acceptance gate. Each test records one PASS/FAIL line (shown in the
terminal summary) and asserts against a pinned tolerance."""

import statistics
import subprocess
import sys
import time

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from cmdkit.analysis import weights_mse
from cmdkit.clustering import ClusterConfig
from cmdkit.decomposition import decompose, fit_affine, reconstruct, reconstruct_full
from cmdkit.dmd import dmd_fit, dmd_reconstruct
from cmdkit.generators import (
    DatasetSpec,
    MlpTaskConfig,
    SyntheticModesConfig,
    ToyRegressionConfig,
    evaluate_weights,
    generate_linear_dynamics,
    generate_mlp_training,
    generate_synthetic_modes,
    generate_toy_regression,
)
from cmdkit.trajectory import SnapshotMatrix, save_trajectory, subsample_epochs

# pinned tolerances
RECOVERY_MSE = 1e-18
RECOVERY_SECONDS = 10.0
AFFINE_RTOL = 1e-9
SCALING_RATIO = 2.5
EIG_SINGLE_TOL = 1e-8
EIG_PAIR_TOL = 1e-6
ACCURACY_POINTS = 0.02
K_SPREAD = 0.5
SUBSAMPLE_FACTOR = 2.0
MONOTONE_FRACTION = 0.8

SEEDS = range(5)


def mlp_task(seed):
    return MlpTaskConfig(
        layer_widths=(2, 32, 32, 2),
        epochs=150,
        learning_rate=0.5,
        dataset=DatasetSpec(count=400, noise=0.7, seed=seed),
        seed=seed,
    )


@pytest.fixture(scope="module")
def mlp_runs():
    return {s: (mlp_task(s),) + generate_mlp_training(mlp_task(s)) for s in SEEDS}


def test_c1_exact_model_recovery(acceptance_log):
    synth = generate_synthetic_modes(SyntheticModesConfig(N=10_000, T=100, M_true=5, seed=0))
    start = time.perf_counter()
    model = decompose(synth.matrix, ClusterConfig(n_modes=5, seed=0), n_jobs=1)
    elapsed = time.perf_counter() - start
    ari = adjusted_rand_score(synth.labels, model.labels)
    mse = weights_mse(synth.matrix, reconstruct(model))
    ok = ari == 1.0 and mse <= RECOVERY_MSE and elapsed < RECOVERY_SECONDS
    acceptance_log(
        "C1 exact-model recovery",
        ok,
        f"ARI={ari:.6f} (need 1), MSE={mse:.3e} (<= {RECOVERY_MSE:g}), "
        f"time={elapsed:.2f}s (< {RECOVERY_SECONDS:g}s)",
    )
    assert ok


def brute_normal_equations(row, ref):
    """Accumulate the 2x2 normal equations term by term and solve by Cramer's rule."""
    srr = sr = sw = swr = 0.0
    for w, r in zip(row.tolist(), ref.tolist()):
        srr += r * r
        sr += r
        sw += w
        swr += w * r
    n = float(len(ref))
    det = srr * n - sr * sr
    return (swr * n - sr * sw) / det, (srr * sw - sr * swr) / det


def test_c2_affine_fit_oracle(acceptance_log):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        ref = rng.standard_normal(101)
        rows = rng.uniform(0.2, 3, (50, 1)) * ref + rng.standard_normal((50, 1)) + 0.1 * rng.standard_normal((50, 101))
        a, b = fit_affine(rows, ref)
        for i in range(50):
            ea, eb = brute_normal_equations(rows[i], ref)
            worst = max(worst, abs(a[i] - ea) / abs(ea), abs(b[i] - eb) / max(abs(eb), 1e-300))
    ok = worst <= AFFINE_RTOL
    acceptance_log("C2 affine-fit oracle", ok, f"max relative error={worst:.3e} (<= {AFFINE_RTOL:g})")
    assert ok


def test_c3_linear_complexity(acceptance_log):
    cfg = ClusterConfig(K=1000, n_modes=10, seed=0)
    medians = {}
    for n in (100_000, 200_000):
        synth = generate_synthetic_modes(SyntheticModesConfig(N=n, T=100, M_true=10, seed=1))
        times = []
        for _ in range(5):
            t = decompose(synth.matrix, cfg).timings
            times.append(t["assignment"] + t["affine_fit"])
        medians[n] = statistics.median(times)
        del synth
    ratio = medians[200_000] / medians[100_000]
    ok = ratio <= SCALING_RATIO
    acceptance_log(
        "C3 linear complexity",
        ok,
        f"assign+fit median {medians[100_000]:.0f}ms vs {medians[200_000]:.0f}ms, "
        f"ratio={ratio:.2f} (<= {SCALING_RATIO:g})",
    )
    assert ok


def cmd_mse(w, m_modes, K=1000, seed=0):
    model = decompose(w, ClusterConfig(K=K, n_modes=m_modes, seed=seed))
    return weights_mse(w, reconstruct(model))


def dmd_mse(w, r):
    return weights_mse(w, dmd_reconstruct(dmd_fit(w, r)))


def test_c4_cmd_vs_dmd(acceptance_log):
    toy = [generate_toy_regression(ToyRegressionConfig(d=4, m=8, n=32, epochs=100,
                                                       augmented=True, seed=s)) for s in SEEDS]
    pwl = [generate_synthetic_modes(SyntheticModesConfig(
        N=2000, T=100, M_true=5, profile_kinds=("piecewise-linear",) * 5, seed=s)).matrix for s in SEEDS]
    lin = [generate_linear_dynamics(500, 100, [0.97, 0.9, 0.8], seed=s) for s in SEEDS]
    toy_cmd = np.mean([cmd_mse(w, 5) for w in toy])
    toy_dmd = np.mean([dmd_mse(w, 5) for w in toy])
    pwl_cmd = np.mean([cmd_mse(w, 5) for w in pwl])
    pwl_dmd = np.mean([dmd_mse(w, 5) for w in pwl])
    lin_cmd = np.mean([cmd_mse(w, 3) for w in lin])
    lin_dmd = np.mean([dmd_mse(w, 3) for w in lin])
    ok_toy, ok_pwl, ok_lin = toy_cmd < toy_dmd, pwl_cmd < pwl_dmd, lin_dmd <= lin_cmd
    acceptance_log("C4a augmented toy regression CMD < DMD", ok_toy,
                   f"CMD(M=5)={toy_cmd:.3e}, DMD(r=5)={toy_dmd:.3e}")
    acceptance_log("C4b piecewise-linear modes CMD < DMD", ok_pwl,
                   f"CMD(M=5)={pwl_cmd:.3e}, DMD(r=5)={pwl_dmd:.3e}")
    acceptance_log("C4c rank-3 linear dynamics DMD <= CMD", ok_lin,
                   f"DMD(r=3)={lin_dmd:.3e}, CMD(M=3)={lin_cmd:.3e}")
    assert ok_toy and ok_pwl and ok_lin


def test_c5_dmd_eigenvalues(acceptance_log):
    single = dmd_fit(SnapshotMatrix([[2.0 * 0.93 ** k for k in range(30)]]), 1)
    err1 = abs(single.eigenvalues[0] - 0.93)
    rng = np.random.default_rng(5)
    P = rng.standard_normal((6, 2))
    coeff = np.array([[1.5], [-0.7]]) * np.array([0.95, 0.6])[:, None] ** np.arange(40)
    pair = dmd_fit(SnapshotMatrix(P @ coeff), 2)
    err2 = np.max(np.abs(np.sort(pair.eigenvalues.real) - [0.6, 0.95]))
    err2 = max(err2, np.max(np.abs(pair.eigenvalues.imag)))
    ok = err1 <= EIG_SINGLE_TOL and err2 <= EIG_PAIR_TOL
    acceptance_log("C5 DMD eigenvalue recovery", ok,
                   f"single err={err1:.2e} (<= {EIG_SINGLE_TOL:g}), "
                   f"two-mode err={err2:.2e} (<= {EIG_PAIR_TOL:g})")
    assert ok


def test_c6_robust_to_modes(acceptance_log, mlp_runs):
    worst = 0.0
    for s in range(3):
        task, w, log = mlp_runs[s]
        gd = log.test_accuracy[-1]
        for m_modes in (3, 5, 10, 20):
            rec = reconstruct(decompose(w, ClusterConfig(n_modes=m_modes, seed=0)))
            acc = evaluate_weights(task, rec, w.n_epochs - 1)["accuracy"]
            worst = max(worst, abs(acc - gd))
    ok = worst <= ACCURACY_POINTS
    acceptance_log("C6 accuracy robust to M", ok,
                   f"max |acc_CMD - acc_GD|={100 * worst:.2f} points (<= {100 * ACCURACY_POINTS:g})")
    assert ok


def test_c7_robust_to_sample_size(acceptance_log, mlp_runs):
    # each K is the mean over five sampling seeds
    spreads = []
    for s in range(3):
        w = mlp_runs[s][1]
        means = [np.mean([cmd_mse(w, 10, K=K, seed=k_seed) for k_seed in range(5)])
                 for K in (125, 250, 500, 1000)]
        spreads.append(max(means) / min(means) - 1)
    worst = max(spreads)
    ok = worst <= K_SPREAD
    acceptance_log("C7 MSE robust to K", ok,
                   f"per-seed max/min-1 over K={[round(float(x), 3) for x in spreads]} (<= {K_SPREAD:g})")
    assert ok


def test_c8_epoch_subsampling(acceptance_log, mlp_runs):
    ratios = []
    for s in range(3):
        w = mlp_runs[s][1]
        base = cmd_mse(w, 10)
        for factor in (2, 3, 4):
            sub, sel = subsample_epochs(w, factor)
            model = decompose(sub, ClusterConfig(n_modes=10), epoch_selection=sel)
            ratios.append(weights_mse(w, reconstruct_full(model, w)) / base)
    worst = max(ratios)
    ok = worst <= SUBSAMPLE_FACTOR
    acceptance_log("C8 epoch subsampling", ok,
                   f"max MSE ratio vs full history={worst:.2f} (<= {SUBSAMPLE_FACTOR:g})")
    assert ok


def test_c9_determinism_across_threads(acceptance_log, mlp_runs, tmp_path):
    traj = tmp_path / "w.cmdt"
    save_trajectory(mlp_runs[0][1], traj)
    blobs = []
    for threads in ("1", "2", "4"):
        out = tmp_path / f"model{threads}.json"
        cmd = [sys.executable, "-m", "cmdkit.cli", "decompose", str(traj), "--modes", "10",
               "--seed", "3", "--threads", threads, "--out", str(out)]
        subprocess.run(cmd, check=True, capture_output=True)
        blobs.append((out.read_bytes(), (tmp_path / f"model{threads}.report.json").read_bytes()))
    ok = all(b == blobs[0] for b in blobs)
    acceptance_log("C9 determinism", ok, "model and report bytes identical for --threads 1/2/4")
    assert ok


def test_c10_mse_monotone_in_modes(acceptance_log, mlp_runs):
    good = total = 0
    for s in SEEDS:
        w = mlp_runs[s][1]
        seq = [cmd_mse(w, m_modes) for m_modes in (1, 2, 5, 10, 20)]
        good += sum(b <= a for a, b in zip(seq, seq[1:]))
        total += len(seq) - 1
    frac = good / total
    ok = frac >= MONOTONE_FRACTION
    acceptance_log("C10 MSE non-increasing in M", ok,
                   f"{good}/{total} adjacent pairs ({frac:.0%}, need >= {MONOTONE_FRACTION:.0%})")
    assert ok
