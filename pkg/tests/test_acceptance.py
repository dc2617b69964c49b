"""Acceptance criteria, one test each.

Every test records a single ``ACCEPTANCE <n> PASS|FAIL`` line with the
measured quantities before asserting; the lines are printed together at the
end of the run.
"""

import dataclasses
import filecmp
import time
import timeit
import warnings

import numpy as np
import pytest

from helpers import dilate
from oracles import dtw_oracle, perm_ot, random_tree, tree_oracle
from scnmine import synthgen
from scnmine.cli import run
from scnmine.graph_dtw import DTWConfig, dtw, frame_distance_matrix, scenario_distance
from scnmine.labeling import NOISE, label_scenarios, mds_embed
from scnmine.slicing import InteractionType as IT, segment_stats, slice_all
from scnmine.tree_metric import MetricConfig, ot_assignment, tree_distance


RESULTS = []  # printed as a scorecard by the terminal-summary hook in conftest


def _report(n, ok, detail):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, detail


def _pdist(X):
    return np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))


def test_01_ot_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(200):
        n = 1 + k % 6
        C = rng.uniform(0.0, 10.0, (n, n))
        if k % 4 == 0:
            C = np.round(C)  # plenty of ties
        worst = max(worst, abs(ot_assignment(C).cost - perm_ot(C)))
    elapsed = time.perf_counter() - t0
    _report(1, worst <= 1e-9 and elapsed < 5.0, f"max |error| {worst:.2e}, {elapsed:.2f} s for 200 matrices")


def test_02_tree_oracle():
    rng = np.random.default_rng(102)
    cfg = MetricConfig(layer_weights=(1.0, 0.7, 1.3))
    w = cfg.weight_array()
    worst = 0.0
    for k in range(100):
        L = 1 + k % 3
        c = cfg if L == 3 else MetricConfig()
        a, b = random_tree(rng, L), random_tree(rng, L)
        ref = tree_oracle(a.root, b.root, w if L == 3 else np.ones(L + 1), L)
        worst = max(worst, abs(tree_distance(a, b, c) - ref))
    _report(2, worst <= 1e-9, f"max |error| {worst:.2e} over 100 tree pairs")


def test_03_dtw_oracle():
    rng = np.random.default_rng(103)
    worst = 0.0
    band_ok = True
    for _ in range(100):
        M, N = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        D = rng.uniform(0.0, 5.0, (M, N))
        L = dtw(D).L_min
        worst = max(worst, abs(L - dtw_oracle(D)))
        band_ok &= dtw(D, W=max(M, N)).L_min == L
    _report(3, worst == 0.0 and band_ok, f"max |error| {worst:.2e}, wide band equal: {band_ok}")


@pytest.fixture(scope="module")
def scenario_pool():
    pool = []
    makers = (synthgen.three_phase_script, synthgen.merge_script, synthgen.crossing_script,
              lambda s: synthgen.cut_in_script(s, ("normal", "low_ttc", "right_of_way")[s % 3]))
    for make in makers:
        for seed in range(3):
            ts, rm, _ = synthgen.generate(make(seed))
            pool += slice_all(ts, rm)
    return pool


def test_04_metric_axioms(scenario_pool):
    rng = np.random.default_rng(104)
    cfg, cache = DTWConfig(), {}
    pool = scenario_pool
    worst_sym, min_d, worst_self = 0.0, np.inf, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(500):
            i, j = rng.integers(len(pool), size=2)
            a, b = pool[i], pool[j]
            dab = scenario_distance(a, b, cfg, cache)
            dba = scenario_distance(b, a, cfg, cache)
            worst_sym = max(worst_sym, abs(dab - dba))
            min_d = min(min_d, dab, dba)
        for k in rng.choice(len(pool), 20, replace=False):
            a = pool[k]
            worst_self = max(worst_self, scenario_distance(a, a, cfg, cache), scenario_distance(a, dilate(a), cfg))
    ok = worst_sym <= 1e-9 and min_d >= 0.0 and worst_self == 0.0
    _report(4, ok, f"max asymmetry {worst_sym:.2e}, min distance {min_d:.3g}, "
                   f"max self/dilated distance {worst_self:.2e} ({len(pool)} atoms)")


def test_05_slicing_ground_truth():
    total = hits = 0
    structure_ok = 0
    for seed in range(20):
        ts, rm, gt = synthgen.generate(synthgen.three_phase_script(seed))
        mine = [a for a in slice_all(ts, rm, egos=gt.egos) if a.ego_id == gt.egos[0]]
        truth = [s for s in gt.segments if s.ego_id == gt.egos[0]]
        same = [a.itype.value for a in mine] == [s.itype for s in truth]
        structure_ok += same
        tb = [s.start_frame for s in truth[1:]]
        fb = [a.start_frame for a in mine[1:]]
        for t in tb:
            total += 1
            hits += bool(fb) and min(abs(f - t) for f in fb) * ts.dt <= 0.5
    frac = hits / total
    _report(5, structure_ok == 20 and frac >= 0.95,
            f"count and types right in {structure_ok}/20 seeds, boundaries within 0.5 s: {hits}/{total}")


def test_06_filtered_proportion():
    spec = synthgen.concat_specs(synthgen.filter_corpus(20, seed=6), label="filter")
    ts, rm, gt = synthgen.generate(spec)
    planted = gt.counts["non_interactive"] / gt.counts["searched"]
    st = segment_stats(slice_all(ts, rm, egos=gt.egos))
    diff = abs(st.filtered_proportion - planted)
    _report(6, diff <= 0.05, f"planted {planted:.3f}, measured {st.filtered_proportion:.3f} "
                             f"({st.filtered}/{st.searched} searched vehicles filtered)")


def test_07_extreme_scenarios():
    specs, kinds = synthgen.risk_corpus(50, 5, 5, seed=0)
    atoms, kind_of = [], {}
    for spec, kind in zip(specs, kinds):
        ts, rm, gt = synthgen.generate(spec)
        dcl = [a for a in slice_all(ts, rm, egos=["E"]) if a.itype == IT.DynamicConflictLine]
        assert len(dcl) == 1
        a = dataclasses.replace(dcl[0], scenario_id=len(atoms))
        kind_of[a.scenario_id] = kind
        atoms.append(a)
    report, _, _ = label_scenarios(atoms)
    cluster = dict(zip(report.ids, report.clusters.tolist()))
    plants = [i for i, k in kind_of.items() if k != "normal"]
    flagged = sum(cluster[i] == NOISE for i in plants)
    only = set(report.venn["members"]["graph_dtw_only"])
    row = [i for i, k in kind_of.items() if k == "right_of_way"]
    row_only = sum(i in only for i in row)
    ok = flagged >= 0.8 * len(plants) and row_only == len(row)
    _report(7, ok, f"{flagged}/{len(plants)} plants are NOISE; {row_only}/{len(row)} right-of-way plants in the "
                   f"Graph-DTW-only region; regions {report.venn['regions']}")


def test_08_mds_reconstruction():
    rng = np.random.default_rng(108)
    worst = 0.0
    for _ in range(50):
        P = rng.uniform(-50.0, 50.0, (int(rng.integers(3, 40)), 2))
        D = _pdist(P)
        E = _pdist(mds_embed(D))
        mask = D > 0
        worst = max(worst, float(np.max(np.abs(E[mask] - D[mask]) / D[mask])))
    _report(8, worst <= 1e-6, f"max relative error {worst:.2e} over 50 planar sets")


def _median_time(fn, repeats):
    # timeit switches the garbage collector off while timing
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeats)))


def test_09_runtime():
    ts, rm, _ = synthgen.generate(synthgen.stream_script(n_vehicles=30, n_frames=10000))
    slice_all(ts, rm, egos=["1"])  # compile
    t_slice = _median_time(lambda: slice_all(ts, rm), 3)

    # dense pair: 300-frame windows of two stream egos with many neighbors
    atoms = slice_all(ts, rm, egos=["5", "14"])
    cut = []
    for ego in ("5", "14"):
        a = max((x for x in atoms if x.ego_id == ego), key=lambda x: x.n_frames)
        cut.append(dataclasses.replace(a, end_frame=min(a.end_frame, a.start_frame + 299)))
    a, b = cut
    cfg = DTWConfig(window=25, metric=MetricConfig(depth=3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scenario_distance(a, b, cfg)  # compile
        t_pair = _median_time(lambda: scenario_distance(a, b, cfg), 7)
    fm = frame_distance_matrix(a, b, cfg)
    ok = t_slice < 5.0 and t_pair < 0.1
    _report(9, ok, f"slicing 10000 frames x 30 vehicles {t_slice:.2f} s; pair {fm.M}x{fm.N} frames "
                   f"{t_pair * 1000:.1f} ms (median, encoding included)")


def _pipeline(root, monkeypatch, threads):
    root.mkdir()
    monkeypatch.chdir(root)
    monkeypatch.setenv("SCN_THREADS", str(threads))
    steps = [
        ["gen", "--template", "risk", "--seed", "7", "--n-normal", "10", "--n-low-ttc", "1",
         "--n-right-of-way", "1", "--out", "gen"],
        ["slice", "--tracks", "gen/tracks.csv", "--map", "gen/map.json", "--out", "atoms.jsonl"],
        ["stats", "--atoms", "atoms.jsonl", "--out", "stats.json"],
        ["matrix", "--atoms", "atoms.jsonl", "--type", "dynamic_conflict_line", "--out", "dcl.csv"],
        ["label", "--matrix", "dcl.csv", "--out", "report.json", "--coords", "coords.csv"],
        ["export", "--report", "report.json", "--atoms", "atoms.jsonl", "--out", "plots"],
    ]
    codes = [run(s) for s in steps]
    return codes, sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_10_determinism(tmp_path, monkeypatch, capsys):
    codes1, files1 = _pipeline(tmp_path / "a", monkeypatch, 1)
    codes2, files2 = _pipeline(tmp_path / "b", monkeypatch, 2)
    capsys.readouterr()
    differ = [str(f) for f in files1 if not filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)]
    ok = codes1 == codes2 == [0] * 6 and files1 == files2 and not differ
    _report(10, ok, f"{len(files1)} output files, threads 1 vs 2, differing: {differ or 'none'}")
