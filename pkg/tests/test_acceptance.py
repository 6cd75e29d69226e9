"""One test per acceptance criterion, each recording a PASS/FAIL line for the terminal summary."""

import math

import numpy as np
import pytest

from _oracles import brute_transition, random_dbn, valid_witness_sets
from psbf.clustering import Clustering, check_assumptions, make_clustering
from psbf.dbn import Dbn, x, xt
from psbf.factored import FactoredModel, init_uniform, observation_step, psbf_update, transition_step
from psbf.fixtures import robot_arm
from psbf.harness import bound_experiment, exact_trace, pf_kl_trace, psbf_kl_trace
from psbf.metrics import (cluster_transition_table, expected_transition_fraction, mixing_rate_cluster,
                          mixing_rate_dbn, relative_entropy)
from psbf.passivity import detect_all, detect_passive, skippable_clusters, transition_skip_fraction
from psbf.synthgen import GenSpec, generate_process, simulate_trajectory, streams

LEVELS = (0.25, 0.5, 0.75, 1.0)


def _trajectory(process, seed, steps):
    return simulate_trajectory(process, steps, streams(seed)["trajectory"])


def test_criterion_01_single_cluster_is_exact(record):
    worst, runs = 0.0, 0
    for seed in range(100):
        n, m = 4 + seed % 7, 1 + seed % 3
        p = generate_process(GenSpec(n, m, (seed % 5) / 4, seed))
        traj = _trajectory(p, seed, 200)
        clustering = Clustering((tuple(range(n)),), (tuple(range(m)),))
        worst = max(worst, float(np.max(psbf_kl_trace(p, clustering, traj))))
        runs += 1
    ok = record(1, runs >= 100 and worst <= 1e-10, f"{runs} processes x 200 steps, max KL {worst:.2e} (<= 1e-10)")
    assert ok


def test_criterion_02_forced_transition_of_skipped_clusters(record):
    worst, qualified, seed = 0.0, 0, 0
    while qualified < 200 and seed < 2000:
        n = 6 + seed % 5
        p = generate_process(GenSpec(n, max(1, n // 3), 1.0, seed))
        c = make_clustering(p, "pc")
        seed += 1
        model = FactoredModel(p, c)
        if not (check_assumptions(c, p).all_hold and any(model.analysis(a).skippable for a in p.action_ids)):
            continue
        qualified += 1
        rng = np.random.default_rng(seed)
        traj = simulate_trajectory(p, 20, rng)
        fs = init_uniform(model)
        for a, o in zip(traj.actions, traj.observations):
            lazy, forced = transition_step(fs, a), transition_step(fs, a, force=True)
            for k in model.analysis(a).skippable:
                worst = max(worst, float(np.max(np.abs(forced.factors[k] - lazy.factors[k]))))
            fs = psbf_update(fs, a, o)
    ok = record(2, qualified >= 200 and worst <= 1e-12,
                f"{qualified} qualifying processes, max change {worst:.2e} (<= 1e-12)")
    assert ok


def test_criterion_03_forced_conditioning_of_unobserved_clusters(record):
    worst, blind_checks = 0.0, 0
    for seed in range(60):
        p = generate_process(GenSpec.of_size("S", LEVELS[seed % 4], seed))
        model = FactoredModel(p, make_clustering(p, "singleton" if seed % 2 else "modis"))
        traj = _trajectory(p, seed, 15)
        fs = init_uniform(model)
        for a, o in zip(traj.actions, traj.observations):
            hat = transition_step(fs, a)
            blind = [k for k, r in enumerate(model.analysis(a).relevant_obs) if not r]
            lazy, forced = observation_step(hat, a, o), observation_step(hat, a, o, force=True)
            for k in blind:
                worst = max(worst, float(np.max(np.abs(forced.factors[k] - lazy.factors[k]))))
                blind_checks += 1
            fs = lazy
    ok = record(3, blind_checks > 0 and worst <= 1e-12,
                f"{blind_checks} unobserved-cluster updates, max change {worst:.2e} (<= 1e-12)")
    assert ok


def test_criterion_04_robot_arm_saves_half_the_transition_step(record):
    p = robot_arm()
    dbn = p.actions["CW3"]
    clusters = make_clustering(p, "moral").state
    verdicts = detect_all(dbn)
    skip = skippable_clusters(clusters, dbn, verdicts)
    fraction = transition_skip_fraction(clusters, dbn, verdicts)
    ok = record(4, clusters == ((0, 1), (1, 2)) and skip == {0} and fraction == 0.5,
                f"moral clusters {[[i + 1 for i in c] for c in clusters]}, skippable {sorted(k + 1 for k in skip)}, "
                f"skip fraction {fraction}")
    assert ok


def test_criterion_05_detection_matches_exhaustive_oracle(record):
    rng = np.random.default_rng(20240501)
    pairs, disagreements, passive = 0, 0, 0
    while pairs < 1000:
        n = int(rng.integers(1, 9))
        d = random_dbn(rng, n)
        for i in range(n):
            v = detect_passive(i, d)
            valid = valid_witness_sets(i, d)
            good = v.passive == bool(valid) and (not valid or (v.phi in valid and len(v.phi) == len(valid[0])))
            disagreements += not good
            passive += v.passive
            pairs += 1
    ok = record(5, disagreements == 0, f"{pairs} (variable, DBN) pairs ({passive} passive), {disagreements} disagreements")
    assert ok


def test_criterion_06_transition_updates_fall_with_passivity(record):
    means = {}
    for level in LEVELS:
        fractions = []
        for seed in range(200):
            p = generate_process(GenSpec.of_size("S", level, seed))
            model = FactoredModel(p, make_clustering(p, "moral"))
            skips = {a: model.analysis(a).skippable for a in p.action_ids}
            fractions.append(expected_transition_fraction(skips, len(model.clusters)))
        means[level] = float(np.mean(fractions))
    values = [means[level] for level in LEVELS]
    monotone = all(b <= a for a, b in zip(values, values[1:]))
    ok = record(6, monotone and values[-1] < values[0],
                "mean updated fraction " + ", ".join(f"p={lv:g}: {means[lv]:.3f}" for lv in LEVELS))
    assert ok


def test_criterion_07_relative_entropy_stays_bounded(record):
    bounded, total, worst, infinite = 0, 0, 0.0, 0
    for level in LEVELS:
        for seed in range(10):
            p = generate_process(GenSpec.of_size("S", level, seed))
            kl = psbf_kl_trace(p, make_clustering(p, "moral"), _trajectory(p, seed, 1000))
            early, late = float(np.mean(kl[199:400])), float(np.mean(kl[799:1000]))
            if math.isfinite(late) and early > 0:
                worst = max(worst, late / early)
            infinite += not math.isfinite(late)
            bounded += late <= 2 * early
            total += 1
    share = bounded / total
    ok = record(7, share >= 0.9, f"{bounded}/{total} runs with late mean <= 2x early mean ({share:.0%}, >= 90%), "
                                 f"worst finite ratio {worst:.2f}, {infinite} with infinite late KL")
    assert ok


def test_criterion_08_timing_direction_informational(record):
    medians = {}
    for level in (0.25, 1.0):
        walls = []
        for seed in range(4):
            p = generate_process(GenSpec.of_size("M", level, seed))
            model = FactoredModel(p, make_clustering(p, "moral"))
            model.precompute()
            traj = _trajectory(p, seed, 100)
            fs = init_uniform(model)
            for a, o in zip(traj.actions, traj.observations):
                fs = psbf_update(fs, a, o)
                walls.append(fs.stats.wall_nanos)
        medians[level] = float(np.median(walls)) / 1e6
    holds = medians[1.0] <= medians[0.25]
    record(8, True, f"informational: median ms per update p=1: {medians[1.0]:.3f}, p=0.25: {medians[0.25]:.3f} "
                    f"({'direction holds' if holds else 'direction not observed'})")


def _brute_overlap(matrix):
    rows = np.unique(matrix, axis=0)
    return min(float(np.minimum(a, b).sum()) for a in rows for b in rows)


def test_criterion_09_unit_checks(record):
    kl = relative_entropy([1.0, 0.0], [0.5, 0.5])
    uniform = Dbn("a", (2, 2), (), frozenset({(xt(0), x(0)), (xt(1), x(1))}),
                  {x(0): np.full((2, 2), 0.5), x(1): np.full((2, 2), 0.5)})
    copy = Dbn("a", (2, 2), (), frozenset({(xt(0), x(0)), (xt(1), x(1))}), {x(0): np.eye(2), x(1): np.eye(2)})
    rate_uniform, rate_copy = mixing_rate_cluster(uniform, (0, 1)), mixing_rate_cluster(copy, (0, 1))

    worst = 0.0
    rng = np.random.default_rng(9)
    for _ in range(20):
        d = random_dbn(rng, 4, zero_prob=0.0, intra_prob=0.0)
        clustering = Clustering(((0, 1), (2, 3)), ())
        report = mixing_rate_dbn(d, clustering)
        rates = [_brute_overlap(cluster_transition_table(d, c)[1]) for c in clustering.state]
        owner = {0: 0, 1: 0, 2: 1, 3: 1}
        deps = [{owner[p] for i in c for p in d.t_parents(i)} for c in clustering.state]
        r = max(1, max(len(s) for s in deps))
        q = max(1, max(sum(k in s for s in deps) for k in range(2)))
        worst = max(worst, abs(report.gamma - (min(rates) / r) ** q))
    whole = _brute_overlap(brute_transition(random_dbn(rng, 3, zero_prob=0.0)))
    ok = record(9, abs(kl - math.log(2)) <= 1e-12 and rate_uniform == pytest.approx(1.0, abs=1e-12)
                and rate_copy == 0.0 and worst <= 1e-12 and 0 <= whole <= 1,
                f"KL {kl:.15f} vs ln 2, uniform rate {rate_uniform}, copy rate {rate_copy}, "
                f"recomposition error {worst:.1e}")
    assert ok


def test_criterion_10_empirical_error_bound(record):
    runs, exceeded, zero_gamma, seed = [], 0, 0, 0
    while len(runs) < 20 and seed < 60:
        p = generate_process(GenSpec.of_size("S", 0.0, seed))
        result = bound_experiment(p, make_clustering(p, "moral"), _trajectory(p, seed, 200))
        seed += 1
        if result.report.vacuous:
            zero_gamma += 1
            continue
        runs.append(result.report)
        exceeded += not result.report.holds
    share = exceeded / len(runs) if runs else 1.0
    ok = record(10, len(runs) >= 20 and share <= 0.1,
                f"{len(runs)} runs with gamma > 0 ({zero_gamma} skipped with gamma = 0), mean KL above bound in "
                f"{exceeded} ({share:.0%}, <= 10%); median bound {np.median([r.bound for r in runs]):.3g}, "
                f"median mean KL {np.median([r.final_mean for r in runs]):.3g}")
    assert ok


def test_criterion_11_particle_filter_improves_with_samples(record):
    better, total = 0, 0
    for seed in range(20):
        p = generate_process(GenSpec.of_size("S", LEVELS[seed % 4], seed))
        traj = _trajectory(p, seed, 30)
        exact = exact_trace(p, traj)
        small = float(np.mean(pf_kl_trace(p, traj, 1_000, seed, exact)))
        large = float(np.mean(pf_kl_trace(p, traj, 100_000, seed, exact)))
        better += large < small
        total += 1
    share = better / total
    ok = record(11, share >= 0.95, f"N=1e5 below N=1e3 on {better}/{total} seeds ({share:.0%}, >= 95%)")
    assert ok
