"""End-to-end acceptance checks at their stated tolerances.

Each test prints one PASS/FAIL line (also collected in the terminal summary).
Simulation runs are shared between criteria through a module-level cache; the
whole file takes roughly 20 minutes on one CPU core.
"""

import time

import mpmath
import numpy as np
import pytest

from gradcheck import away_from_kinks, fd_check
from mdgan_sim.cli import main
from mdgan_sim.config import ExperimentConfig
from mdgan_sim.metrics import frechet_distance, frechet_from_moments
from mdgan_sim.nn import kaiming_init
from mdgan_sim.sim import ExperimentResult, run_experiment

COUNTS = range(0, 6)
TREND_SEEDS = range(3)
DETECTION_SEEDS = range(10)

_cache: dict[tuple, ExperimentResult] = {}


def run(protocol: str, defense: str, freeriders: int, seed: int) -> ExperimentResult:
    key = (protocol, defense, freeriders, seed)
    if key not in _cache:
        _cache[key] = run_experiment(ExperimentConfig(
            protocol=protocol, defense=defense, n_freeriders=freeriders, seed=seed))
    return _cache[key]


def mean_final_fd(protocol, defense, k, seeds=TREND_SEEDS) -> float:
    return float(np.mean([run(protocol, defense, k, s).final_fd for s in seeds]))


def test_c01_gradient_correctness(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        widths = rng.integers(1, 7, size=rng.integers(1, 4))
        hidden = rng.choice(["leaky_relu", "relu", "tanh"])
        out = rng.choice(["identity", "sigmoid"])
        in_dim, out_dim = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        net = kaiming_init((in_dim, *map(int, widths), out_dim), rng, str(hidden), str(out))
        net.biases = [rng.normal(0, 0.1, b.shape) for b in net.biases]
        x = rng.standard_normal((int(rng.integers(1, 5)), in_dim))
        if hidden != "tanh":
            x = away_from_kinks(net, x, rng)
        worst = max(worst, fd_check(net, x, rng.standard_normal((len(x), out_dim))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10
    report(1, "gradient correctness", ok, f"max relative error {worst:.2e} over 50 nets in {elapsed:.2f}s")
    assert ok


def _mp_frechet(mu1, c1, mu2, c2):
    mpmath.mp.dps = 40
    a, b = mpmath.matrix(c1.tolist()), mpmath.matrix(c2.tolist())
    root = mpmath.sqrtm(a * b)
    d = [mpmath.mpf(x) - mpmath.mpf(y) for x, y in zip(mu1, mu2)]
    val = sum(v * v for v in d) + sum(a[i, i] + b[i, i] - 2 * root[i, i] for i in range(a.rows))
    return float(mpmath.re(val))


def test_c02_frechet_oracle(report):
    x = np.random.default_rng(0).standard_normal((1000, 2))
    e_same = abs(frechet_distance(x, x))
    e_shift = abs(frechet_from_moments([0, 0], np.eye(2), [3, 0], np.eye(2)) - 9.0)
    e_scale = abs(frechet_from_moments([0, 0], 4 * np.eye(2), [0, 0], np.eye(2)) - 2.0)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        m1, m2 = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        c1, c2 = m1 @ m1.T + 0.1 * np.eye(2), m2 @ m2.T + 0.1 * np.eye(2)
        mu1, mu2 = rng.standard_normal(2), rng.standard_normal(2)
        worst = max(worst, abs(frechet_from_moments(mu1, c1, mu2, c2) - _mp_frechet(mu1, c1, mu2, c2)))
    ok = e_same < 1e-9 and e_shift < 1e-9 and e_scale < 1e-6 and worst < 1e-6
    report(2, "frechet oracle", ok,
           f"analytic errors {e_same:.1e}/{e_shift:.1e}/{e_scale:.1e}, random-pair max error {worst:.1e}")
    assert ok


def test_c03_healthy_training(report):
    ratios = []
    for s in TREND_SEEDS:
        res = run("simple", "none", 0, s)
        ratios.append(res.final_fd / res.metrics[0].frechet_distance)
    ok = all(r < 0.25 for r in ratios)
    report(3, "healthy training", ok, "final/initial fd per seed " + ", ".join(f"{r:.4f}" for r in ratios))
    assert ok


def non_decreasing_with_one_slack(values, rel=0.10) -> bool:
    drops = [(a, b) for a, b in zip(values, values[1:]) if b < a]
    if not drops:
        return True
    return len(drops) == 1 and (drops[0][0] - drops[0][1]) / drops[0][0] <= rel


def test_c04_degradation_trend(report):
    curves = {p: [mean_final_fd(p, "none", k) for k in COUNTS] for p in ("simple", "swap")}
    oks = {p: non_decreasing_with_one_slack(c) for p, c in curves.items()}
    detail = "; ".join(f"{p}: " + " ".join(f"{v:.3f}" for v in c) for p, c in curves.items())
    report(4, "degradation trend", all(oks.values()), detail)
    assert all(oks.values())


def test_c05_swap_more_fragile(report):
    pairs = {k: (mean_final_fd("swap", "none", k), mean_final_fd("simple", "none", k)) for k in (3, 4, 5)}
    ok = all(sw > si for sw, si in pairs.values())
    detail = "; ".join(f"k={k} swap {sw:.3f} vs simple {si:.3f}" for k, (sw, si) in pairs.items())
    report(5, "swap more fragile", ok, detail)
    assert ok


def test_c06_detection_accuracy(report):
    misses, total = [], 0
    for k in range(1, 6):
        for s in DETECTION_SEEDS:
            res = run("simple", "dfg", k, s)
            for m in res.metrics:
                if m.round in res.detections and m.round > res.config.probe_period:
                    total += 1
                    if m.precision != 1.0 or m.recall != 1.0:
                        misses.append((k, s, m.round))
    ok = not misses
    by_k = {k: sum(1 for mk, _, _ in misses if mk == k) for k in range(1, 6)}
    report(6, "detection accuracy", ok,
           f"{total - len(misses)}/{total} probe rounds perfect; misses per free-rider count {by_k}")
    assert ok


def test_c07_no_false_exclusion(report):
    bad = [(s, t) for s in DETECTION_SEEDS
           for t, det in run("simple", "dfg", 0, s).detections.items() if det.flagged]
    total = sum(len(run("simple", "dfg", 0, s).detections) for s in DETECTION_SEEDS)
    ok = not bad
    report(7, "no false exclusion", ok, f"{total - len(bad)}/{total} probe rounds flag nobody; offenders {bad[:5]}")
    assert ok


def test_c08_swap_protection(report):
    worst_perm = worst_prev = 0.0
    offenders = []
    for k in range(1, 6):
        for s in DETECTION_SEEDS:
            last = run("swap", "dfg_plus", k, s).metrics[-1]
            perm = last.wrong_permission_frac or 0.0
            prev = last.wrong_prevention_frac or 0.0
            worst_perm, worst_prev = max(worst_perm, perm), max(worst_prev, prev)
            if perm or prev:
                offenders.append((k, s))
    ok = not offenders
    report(8, "swap protection", ok,
           f"max wrong_permission {worst_perm:.3f}, max wrong_prevention {worst_prev:.3f}; "
           f"{len(offenders)}/50 runs with a wrong action")
    assert ok


def test_c09_defense_recovers_quality(report):
    simple = (mean_final_fd("simple", "dfg", 5), mean_final_fd("simple", "none", 5))
    swap = (mean_final_fd("swap", "dfg_plus", 5), mean_final_fd("swap", "none", 5))
    ok = simple[0] <= 0.95 * simple[1] and swap[0] <= 0.95 * swap[1]
    report(9, "defense recovers quality", ok,
           f"simple dfg {simple[0]:.3f} vs none {simple[1]:.3f}; swap dfg_plus {swap[0]:.3f} vs none {swap[1]:.3f}")
    assert ok


def test_c10_ablation_failure_mode(report):
    rounds = adj_flags = dfg_clean = 0
    for s in DETECTION_SEEDS:
        res = run("simple", "dfg", 0, s)
        for t, adj in res.adj_detections.items():
            if adj.degenerate:
                continue
            rounds += 1
            adj_flags += bool(adj.flagged)
            dfg_clean += not res.detections[t].flagged
    ok = rounds > 0 and adj_flags == rounds and dfg_clean == rounds
    report(10, "ablation failure mode", ok,
           f"adj flags a benign client in {adj_flags}/{rounds} rounds; dfg flags none in {dfg_clean}/{rounds}")
    assert ok


def test_c11_overhead(report):
    res = run("simple", "dfg", 0, 0)
    ratios = [log.defense_ms / log.train_ms for log in res.round_logs if log.round in res.detections]
    med = float(np.median(ratios))
    ok = med < 0.05
    report(11, "defense overhead", ok, f"median defense/train wall-clock on probe rounds {med:.4f}")
    assert ok


@pytest.mark.parametrize("protocol,defense,k", [("swap", "dfg_plus", 2), ("simple", "dfg", 3)])
def test_c12_determinism(report, tmp_path, protocol, defense, k):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--protocol", protocol, "--defense", defense, "--freeriders", str(k),
                     "--seed", "7", "--out", str(out), "--samples", "0"]) == 0
        outs.append(out)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("metrics.csv", "roundlog.jsonl"))
    report(12, f"determinism ({protocol}/{defense})", same, "metrics.csv and roundlog.jsonl byte-identical"
           if same else "files differ")
    assert same
