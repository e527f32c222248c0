"""Shared fixtures-in-code: pipeline inputs and sort invariant checks."""

import math

import numpy as np

from hsefactor.exposure import estimate_hse
from hsefactor.fmreg import build_cross_section
from hsefactor.ingest import CharacteristicsTable, build_characteristics, compute_delta_svi
from hsefactor.pipeline import june_formations


def prepare(ds, window=None, wins=None):
    """Exposure records, characteristics and the FM cross-section for a synthetic dataset."""
    window = window or ds.config.window_months
    dsvi, _ = compute_delta_svi(ds.svi)
    recs = []
    for f in june_formations(ds.panel):
        kw = {"wins": wins} if wins is not None else {}
        recs.extend(estimate_hse(ds.panel, dsvi, f, window_months=window, **kw).records)
    formations = sorted({r.formation for r in recs})
    chars = CharacteristicsTable.merge(build_characteristics(ds.panel, ds.books, f)[0]
                                       for f in formations)
    return recs, chars, build_cross_section(ds.panel, ds.rf, recs, chars)


def _excess(panel, rf, sec, m):
    return panel.ret[panel.row(sec), panel.col(m)] - rf.at(m)


def check_partition(membership):
    """Every trimmed security lands in exactly one bucket each month."""
    for m, (trimmed, buckets) in membership.items():
        listed = [s for ids in buckets.values() for s in ids]
        assert len(listed) == len(set(listed)), m
        assert set(listed) == set(trimmed), m


def check_bounds(series_by_key, membership, panel, rf):
    """A bucket return lies within its members' min and max excess returns."""
    n = 0
    for m, (_, buckets) in membership.items():
        for key, ids in buckets.items():
            if not ids:
                continue
            r = [_excess(panel, rf, s, m) for s in ids]
            v = series_by_key[key].returns[m]
            assert min(r) <= v <= max(r), (m, key)
            n += 1
    return n


def check_spread(top, bottom, spread):
    assert set(spread.returns) == set(top.returns) & set(bottom.returns)
    for m, v in spread.returns.items():
        assert v == top.returns[m] - bottom.returns[m]


def same_series(a, b):
    """Exact equality of two portfolio series, NaN-aware on characteristics."""
    assert a.label == b.label
    assert a.returns == b.returns
    assert a.avg_characteristics.keys() == b.avg_characteristics.keys()
    for k, v in a.avg_characteristics.items():
        w = b.avg_characteristics[k]
        assert v == w or (math.isnan(v) and math.isnan(w)), k


def same_stat(a, b):
    assert np.array_equal(np.array(a[:2], dtype=float), np.array(b[:2], dtype=float), equal_nan=True)
    assert a[2:] == b[2:]


# criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
