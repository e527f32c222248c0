"""Acceptance suite: one test per criterion, each reporting PASS or FAIL."""

import math
import random
import time

import numpy as np
import pytest

from hsefactor.cli import main
from hsefactor.exposure import WinsorSpec, estimate_hse, ols_univariate, winsorize
from hsefactor.fmreg import FmSpec, TABLE4_SPECS, ols_multivariate, run_fm
from hsefactor.ingest import compute_delta_svi
from hsefactor.panel import ReturnPanel, formation_window
from hsefactor.pipeline import june_formations
from hsefactor.sorts import SortSpec, run_conditional_double_sort, run_univariate_sort, \
    trim_cross_section, ts_stat
from hsefactor.synth import SynthConfig, generate

from helpers import (check_bounds, check_partition, check_spread, prepare, record, same_series,
                     same_stat)
from oracles import normal_equations_ld

FM_HS = FmSpec(("hs",))


def _rel_err(b, ref):
    return float(np.max(np.abs(b - ref) / np.abs(ref)))


def test_c1_ols_oracle_equivalence():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(10, 201))
        p = int(rng.integers(1, 5))
        X = rng.normal(size=(n, p)) * rng.uniform(0.5, 2.0, p) + rng.uniform(-1, 1, p)
        coef = rng.choice([-1, 1], p + 1) * rng.uniform(0.5, 2.0, p + 1)
        y = coef[0] + X @ coef[1:] + 0.1 * rng.normal(size=n)
        ref = normal_equations_ld(np.column_stack([np.ones(n), X]), y).astype(float)
        worst = max(worst, _rel_err(ols_multivariate(X, y), ref))
        if p == 1:
            fit = ols_univariate(X[:, 0], y)
            worst = max(worst, _rel_err(np.array([fit.alpha, fit.beta]), ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 10
    record(1, ok, f"max relative error {worst:.2e} over 1000 problems, {elapsed:.1f} s")
    assert ok


def test_c2_exposure_recovery():
    t0 = time.perf_counter()
    hits = total = 0
    for seed in range(100):
        ds = generate(SynthConfig(seed=seed, n_securities=500, n_months=180, noise_sd=0.05))
        dsvi, _ = compute_delta_svi(ds.svi)
        truth = dict(zip(ds.truth.securities, ds.truth.beta))
        for f in june_formations(ds.panel):
            start, _ = formation_window(f, 72)
            if start < ds.panel.start:
                continue
            x = np.array([dsvi.series[start.shift(k)] for k in range(72)])
            se = 0.05 / math.sqrt(float(((x - x.mean()) ** 2).sum()))
            for r in estimate_hse(ds.panel, dsvi, f).records:
                total += 1
                hits += abs(r.beta_svi - truth[r.security]) <= 3 * se
    elapsed = time.perf_counter() - t0
    share = hits / total
    ok = share >= 0.99 and elapsed < 60
    record(2, ok, f"{share:.4f} of {total} estimates within 3 se, {elapsed:.1f} s")
    assert ok


def _fm_trial(seed, premium, **kw):
    ds = generate(SynthConfig(seed=seed, n_securities=100, n_months=180, premium=premium, **kw))
    return prepare(ds)[2]


def test_c3_planted_premium_recovery():
    t0 = time.perf_counter()
    covered = accepted = 0
    for trial in range(500):
        hs = run_fm(_fm_trial(trial, 2.0), FM_HS).coefs["hs"]
        covered += abs(hs.mean - 2.0) <= 2 * abs(hs.mean / hs.tstat)
        null = run_fm(_fm_trial(100_000 + trial, 0.0), FM_HS).coefs["hs"]
        accepted += abs(null.tstat) < 1.96
    elapsed = time.perf_counter() - t0
    ok = covered / 500 >= 0.93 and accepted / 500 >= 0.93 and elapsed < 300
    record(3, ok, f"coverage {covered / 500:.3f}, null |t|<1.96 {accepted / 500:.3f}, "
                  f"{elapsed:.0f} s")
    assert ok


def test_c4_subsample_contrast():
    wins = 0
    for trial in range(200):
        rows = _fm_trial(200_000 + trial, 2.0, hetero_by="size", mult_above=1.0, mult_below=0.0)
        big = run_fm(rows, FmSpec(("s", "h", "hs"), "big")).coefs["hs"].tstat
        small = run_fm(rows, FmSpec(("s", "h", "hs"), "small")).coefs["hs"].tstat
        wins += big > small
    ok = wins / 200 >= 0.90
    record(4, ok, f"big t > small t in {wins / 200:.3f} of 200 trials")
    assert ok


def _shuffled_panel(panel, seed):
    order = list(panel.securities)
    random.Random(seed).shuffle(order)
    return ReturnPanel.from_observations({s: panel.observations(s) for s in order})


def test_c5_sort_invariants():
    checked = 0
    for seed in range(3):
        ds = generate(SynthConfig(seed=300 + seed, n_securities=150, n_months=120, premium=2.0,
                                  delist_frac=0.1, window_months=48))
        recs, chars, _ = prepare(ds)
        shuffled = list(recs)
        random.Random(seed).shuffle(shuffled)
        panel2 = _shuffled_panel(ds.panel, seed)

        uni = run_univariate_sort(recs, ds.panel, ds.rf, SortSpec(), chars)
        check_partition(uni.membership)
        checked += check_bounds({p.label: p for p in uni.portfolios}, uni.membership,
                                ds.panel, ds.rf)
        check_spread(uni.portfolios[-2], uni.portfolios[0], uni.portfolios[-1])
        uni2 = run_univariate_sort(shuffled, panel2, ds.rf, SortSpec(), chars)
        for a, b in zip(uni.portfolios, uni2.portfolios):
            same_series(a, b)

        for outer in ("size", "beme"):
            spec = SortSpec("hse", 5, outer, 5)
            dbl = run_conditional_double_sort(recs, chars, ds.panel, ds.rf, spec)
            check_partition(dbl.membership)
            checked += check_bounds(dbl.grid, dbl.membership, ds.panel, ds.rf)
            for r in dbl.row_labels:
                check_spread(dbl.grid[(r, "Happy")], dbl.grid[(r, "Unhappy")],
                             dbl.grid[(r, "Happy-Unhappy")])
            dbl2 = run_conditional_double_sort(shuffled, chars, panel2, ds.rf, spec)
            for key in dbl.grid:
                same_series(dbl.grid[key], dbl2.grid[key])
                same_stat(dbl.stats[key], dbl2.stats[key])
            # poison the exposures of every security outside one outer bucket
            target = dbl.row_labels[seed % 5]
            foreign = {(m.year if m.month >= 7 else m.year - 1, s)
                       for m, (_, cells) in dbl.membership.items()
                       for key, ids in cells.items() if key[0] != target for s in ids}
            poisoned = [r._replace(beta_svi=(1e9 if int(r.security[1:]) % 2 else -1e9))
                        if (r.formation.year, r.security) in foreign else r for r in recs]
            dbl3 = run_conditional_double_sort(poisoned, chars, ds.panel, ds.rf, spec)
            for col in dbl.col_labels:
                assert dbl3.grid[(target, col)].returns == dbl.grid[(target, col)].returns
    record(5, True, f"3 runs, {checked} bucket-months bounded, all exact checks held")


def test_c6_winsorize_and_trim():
    rng = np.random.default_rng(6)
    spec = WinsorSpec()
    for _ in range(10_000):
        n = int(rng.integers(1, 120))
        v = rng.standard_t(3, n) * 10 ** rng.uniform(-3, 3)
        if rng.random() < 0.2:
            v = np.round(v, 1)
        once = winsorize(v, spec)
        assert once.shape == v.shape
        assert np.array_equal(winsorize(once, spec), once)
        order = np.argsort(v, kind="stable")
        assert np.all(np.diff(once[order]) >= 0)
    for _ in range(2_000):
        n = int(rng.integers(3, 60))
        rows = [(f"S{i:03d}", float(x)) for i, x in enumerate(rng.integers(-5, 6, n))]
        random.Random(int(rng.integers(1 << 30))).shuffle(rows)
        kept = trim_cross_section(rows)
        assert len(kept) == n - 2
        removed = [r for r in rows if r not in kept]
        lo, hi = min(r[1] for r in rows), max(r[1] for r in rows)
        assert sorted(r[1] for r in removed) == [lo, hi]
    record(6, True, "10000 winsorize sequences and 2000 trims, exact")


def test_c7_tstat_formula():
    s = ts_stat([1, 2, 3])
    flat = ts_stat([0.4, 0.4, 0.4, 0.4])
    ok = (s.mean == 2.0 and abs(s.tstat - 3.4641) <= 1e-4 and s.n_months == 3
          and flat.infinite and math.isinf(flat.tstat))
    record(7, ok, f"ts_stat([1,2,3]) = ({s.mean}, {s.tstat:.6f}, {s.n_months}); "
                  f"constant series flagged infinite={flat.infinite}")
    assert ok


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("acc")
    data = base / "data"
    assert main(["synth", "--seed", "42", "--securities", "200", "--months", "180",
                 "--premium", "2", "--out", str(data)]) == 0
    outs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        assert main(["run", "--data", str(data), "--threads", str(threads),
                     "--out", str(base / name)]) == 0
        outs.append(base / name)
    return outs


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run-manifest.json"}


def test_c8_determinism(full_run):
    a, b, c = (_files(d) for d in full_run)
    ok = a == b == c and len(a) >= 9
    record(8, ok, f"{len(a)} report files byte-identical across 2 reruns and 1 vs 4 threads")
    assert ok


def _data_lines(path):
    return [line.split(",") for line in path.read_text().splitlines() if not line.startswith("#")]


def test_c9_table_shapes(full_run):
    out = full_run[0]
    uni = _data_lines(out / "sort_hse_deciles.csv")
    header, body = uni[0], uni[1:]
    ok_uni = (len(body) == 11 and body[-1][0] == "Happy-Unhappy"
              and [b[0] for b in body[:10]] == ["Unhappy", *map(str, range(2, 10)), "Happy"]
              and header[1:5] == ["hse", "beme_plus", "size", "excess_return_pct"])
    ok_dbl = True
    for name, rows in (("sort_size_hse.csv", ["Small", "2", "3", "4", "Big"]),
                       ("sort_beme_hse.csv", ["Low", "2", "3", "4", "High"])):
        body = _data_lines(out / name)[1:]
        cells = {(r[0], r[1]) for r in body}
        cols = ["Unhappy", "2", "3", "4", "Happy", "Happy-Unhappy"]
        ok_dbl &= len(body) == 30 and cells == {(r, c) for r in rows for c in cols}
    specs = {r[0] for r in _data_lines(out / "fm-report.csv")[1:]}
    ok_fm = {s.name for s in TABLE4_SPECS} <= specs
    text = (out / "fm-report.txt").read_text()
    ok_fm &= all(s.name in text for s in TABLE4_SPECS)
    ok = ok_uni and ok_dbl and ok_fm
    record(9, ok, f"univariate 11x4 {ok_uni}, double 5x6 {ok_dbl}, FM seven specs {ok_fm}")
    assert ok
