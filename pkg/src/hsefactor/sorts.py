"""Portfolio sorts on exposure and firm characteristics.

Portfolios are formed each June from that date's exposures, held July
through the following June, and value weighted with the prior month-end
market cap. Every month the pooled cross-section of portfolio members is
trimmed by one highest and one lowest excess return before bucket returns
are computed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InsufficientDataError, ValidationError
from .exposure import ExposureRecord
from .ingest import CharacteristicsTable
from .panel import MonthStamp, ReturnPanel, RiskFreeSeries, holding_months

logger = logging.getLogger(__name__)

SORT_VARS = ("hse", "size", "beme")
WEIGHTINGS = ("value", "equal")
SPREAD = "Happy-Unhappy"


class TsStat(NamedTuple):
    """Time-series mean and its t-statistic.

    ``infinite`` marks a constant non-zero series, whose t-statistic is
    reported as a signed infinity.
    """

    mean: float
    tstat: float
    n_months: int
    infinite: bool = False


def ts_stat(values: Iterable[float]) -> TsStat:
    """Mean, ``mean / (sd / sqrt(n))`` with the n-1 sample sd, and n."""
    v = np.asarray(list(values), dtype=float)
    n = v.size
    if n < 2:
        raise InsufficientDataError(f"t-statistic needs at least 2 observations, got {n}")
    mean = float(v.mean())
    if np.ptp(v) == 0:
        if mean == 0:
            return TsStat(0.0, 0.0, n)
        return TsStat(mean, math.copysign(math.inf, mean), n, True)
    sd = float(v.std(ddof=1))
    return TsStat(mean, mean / (sd / math.sqrt(n)), n)


@dataclass(frozen=True)
class SortSpec:
    primary_var: str = "hse"
    n_primary: int = 10
    secondary_var: str | None = None
    n_secondary: int | None = None
    weighting: str = "value"

    def __post_init__(self):
        if self.primary_var not in SORT_VARS:
            raise ValidationError(f"primary_var must be one of {SORT_VARS}")
        if self.n_primary < 2:
            raise ValidationError("n_primary must be >= 2")
        if (self.secondary_var is None) != (self.n_secondary is None):
            raise ValidationError("secondary_var and n_secondary must be given together")
        if self.secondary_var is not None:
            if self.secondary_var not in SORT_VARS or self.secondary_var == self.primary_var:
                raise ValidationError(f"bad secondary_var {self.secondary_var!r}")
            if self.n_secondary < 2:
                raise ValidationError("n_secondary must be >= 2")
        if self.weighting not in WEIGHTINGS:
            raise ValidationError(f"weighting must be one of {WEIGHTINGS}")


@dataclass
class PortfolioSeries:
    label: str
    returns: dict[MonthStamp, float] = field(default_factory=dict)
    avg_characteristics: dict[str, float] = field(default_factory=dict)


@dataclass
class SortResult:
    """Univariate sort output: ``k`` bucket series followed by the spread."""

    spec: SortSpec
    portfolios: list[PortfolioSeries]
    stats: dict[str, TsStat]
    skipped_years: list[int]
    # month -> (trimmed cross-section ids, {label: member ids})
    membership: dict[MonthStamp, tuple[tuple[str, ...], dict[str, tuple[str, ...]]]]

    @property
    def labels(self) -> list[str]:
        return [p.label for p in self.portfolios]


@dataclass
class DoubleSortResult:
    """Conditional double sort: outer rows by a characteristic, inner exposure columns."""

    spec: SortSpec
    row_labels: list[str]
    col_labels: list[str]
    grid: dict[tuple[str, str], PortfolioSeries]
    stats: dict[tuple[str, str], TsStat]
    skipped: list[tuple[int, str]]
    membership: dict[MonthStamp, tuple[tuple[str, ...], dict[tuple[str, str], tuple[str, ...]]]]


# -- primitives -------------------------------------------------------------

def _trim_keep(ret: np.ndarray, order_key: np.ndarray) -> np.ndarray:
    """Boolean mask dropping the lowest and highest ``ret`` (ties by key)."""
    idx = np.lexsort((order_key, ret))
    keep = np.ones(ret.size, dtype=bool)
    keep[idx[0]] = False
    keep[idx[-1]] = False
    return keep


def trim_cross_section(month_rows: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    """Remove one maximum and one minimum return row.

    Rows are ordered by ``(return, security id)``; the first and last are
    dropped, so among tied minima the smallest id goes and among tied maxima
    the largest id goes. Input order is otherwise preserved.
    """
    rows = list(month_rows)
    if len(rows) < 3:
        raise ValidationError(f"trimming needs at least 3 rows, got {len(rows)}")
    order = sorted(range(len(rows)), key=lambda i: (rows[i][1], rows[i][0]))
    drop = {order[0], order[-1]}
    return [r for i, r in enumerate(rows) if i not in drop]


def quantile_breakpoints(values, k: int, method: str = "linear") -> np.ndarray:
    """The ``k - 1`` interior quantiles ``100 * j / k`` of ``values``."""
    v = np.asarray(values, dtype=float)
    if k < 2:
        raise ValidationError("k must be >= 2")
    if v.size < k:
        raise InsufficientDataError(f"need at least {k} values for {k} buckets, got {v.size}")
    return np.percentile(v, [100.0 * j / k for j in range(1, k)], method=method)


def assign_bucket(value, breakpoints) -> int | np.ndarray:
    """1-based bucket: ``j`` iff ``bp[j-1] < value <= bp[j]`` with open ends at ±inf."""
    b = np.searchsorted(np.asarray(breakpoints, dtype=float), value, side="left") + 1
    return int(b) if np.ndim(b) == 0 else b


def _weighted_mean(r: np.ndarray, w: np.ndarray) -> float:
    # offset by the minimum so identical returns come back exactly, then clamp
    lo, hi = r.min(), r.max()
    val = lo + float(w @ (r - lo)) / float(w.sum())
    return float(min(max(val, lo), hi))


def value_weighted_return(members: Sequence[tuple[float, float]]) -> float:
    """``sum(w * r) / sum(w)``; NaN for an empty portfolio."""
    if len(members) == 0:
        return math.nan
    arr = np.asarray(members, dtype=float)
    if np.any(arr[:, 1] <= 0):
        raise ValidationError("portfolio weights must be > 0")
    return _weighted_mean(arr[:, 0], arr[:, 1])


# -- sort driver --------------------------------------------------------------

def bucket_labels(var: str, k: int) -> list[str]:
    ends = {"hse": ("Unhappy", "Happy"), "size": ("Small", "Big"), "beme": ("Low", "High")}[var]
    return [ends[0]] + [str(j) for j in range(2, k)] + [ends[1]]


def spread_label(var: str) -> str:
    lo, hi = bucket_labels(var, 2)
    return f"{hi}-{lo}"


class _Formation(NamedTuple):
    formation: MonthStamp
    secs: np.ndarray       # panel row indices of the June-trimmed universe
    hse: np.ndarray
    size: np.ndarray       # June market cap
    beme: np.ndarray       # raw ratio, NaN when book data missing
    be_pos: np.ndarray     # book equity positive


def _formation_universe(formation, recs, panel, rf, characteristics, needed):
    """Eligible securities at a formation date after the June trim."""
    t = panel.col(formation)
    if t is None:
        return None
    rows, hse, size, beme, be_pos = [], [], [], [], []
    for rec in recs:
        if rec.security not in panel:
            continue
        i = panel.row(rec.security)
        cap = panel.mktcap[i, t]
        if math.isnan(cap):
            continue
        ch = characteristics.get(rec.security, formation) if characteristics is not None else None
        b = ch.beme if ch is not None else math.nan
        pos = ch is not None and ch.be_dummy == 0
        if "beme" in needed and not pos:
            continue
        rows.append(i)
        hse.append(rec.beta_svi)
        size.append(cap)
        beme.append(b)
        be_pos.append(pos)
    if len(rows) < 3:
        return None
    rows = np.array(rows)
    excess = panel.ret[rows, t] - rf.at(formation)
    keep = _trim_keep(excess, rows)
    return _Formation(formation, rows[keep], np.array(hse)[keep], np.array(size)[keep],
                      np.array(beme)[keep], np.array(be_pos)[keep])


def _var(u: _Formation, name: str) -> np.ndarray:
    return {"hse": u.hse, "size": u.size, "beme": u.beme}[name]


def _group_records(exposures: Iterable[ExposureRecord]) -> dict[MonthStamp, list[ExposureRecord]]:
    by_f: dict[MonthStamp, list[ExposureRecord]] = {}
    for r in exposures:
        by_f.setdefault(r.formation, []).append(r)
    for recs in by_f.values():
        recs.sort(key=lambda r: r.security)
    return dict(sorted(by_f.items()))


def _holding_returns(panel, rf, formation, secs, labels, weighting):
    """Monthly bucket returns for fixed memberships ``labels`` (one per sec)."""
    out = []
    for m in holding_months(formation):
        t = panel.col(m)
        if t is None:
            continue
        r = panel.ret[secs, t]
        if weighting == "value":
            if t == 0:
                continue
            w = panel.mktcap[secs, t - 1]
        else:
            w = np.ones(secs.size)
        ok = ~np.isnan(r) & ~np.isnan(w)
        if ok.sum() < 3:
            continue
        ex = r[ok] - rf.at(m)
        s_ok, w_ok, lab_ok = secs[ok], w[ok], labels[ok]
        keep = _trim_keep(ex, s_ok)
        ex, s_ok, w_ok, lab_ok = ex[keep], s_ok[keep], w_ok[keep], lab_ok[keep]
        out.append((m, ex, s_ok, w_ok, lab_ok))
    return out


def _avg(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def run_univariate_sort(exposures: Iterable[ExposureRecord], panel: ReturnPanel,
                        rf: RiskFreeSeries, spec: SortSpec = SortSpec(),
                        characteristics: CharacteristicsTable | None = None) -> SortResult:
    """Sort into ``spec.n_primary`` buckets on ``spec.primary_var`` every June."""
    if spec.secondary_var is not None:
        raise ValidationError("univariate sort takes no secondary variable")
    if spec.primary_var == "beme" and characteristics is None:
        raise ValidationError("a BE/ME sort needs characteristics")
    k = spec.n_primary
    labels = bucket_labels(spec.primary_var, k)
    spread = spread_label(spec.primary_var)
    series = {lab: {} for lab in labels + [spread]}
    chars = {lab: {"hse": [], "beme": [], "size": []} for lab in labels}
    membership = {}
    skipped = []
    for formation, recs in _group_records(exposures).items():
        u = _formation_universe(formation, recs, panel, rf, characteristics, {spec.primary_var})
        if u is None or u.secs.size < k:
            logger.warning("formation %s: fewer securities than %d buckets, skipped", formation, k)
            skipped.append(formation.year)
            continue
        bp = quantile_breakpoints(_var(u, spec.primary_var), k)
        bucket = assign_bucket(_var(u, spec.primary_var), bp) - 1
        for j, lab in enumerate(labels):
            sel = bucket == j
            if not sel.any():
                continue
            chars[lab]["hse"].append(float(u.hse[sel].mean()))
            pos = sel & u.be_pos
            chars[lab]["beme"].append(float(u.beme[pos].mean()) if pos.any() else math.nan)
            chars[lab]["size"].append(float(u.size[sel].mean()))
        for m, ex, s_ok, w_ok, b_ok in _holding_returns(panel, rf, formation, u.secs, bucket,
                                                         spec.weighting):
            members = {}
            for j, lab in enumerate(labels):
                sel = b_ok == j
                members[lab] = tuple(panel.securities[i] for i in s_ok[sel])
                if sel.any():
                    series[lab][m] = _weighted_mean(ex[sel], w_ok[sel])
            if m in series[labels[0]] and m in series[labels[-1]]:
                series[spread][m] = series[labels[-1]][m] - series[labels[0]][m]
            membership[m] = (tuple(panel.securities[i] for i in s_ok), members)

    portfolios = []
    for lab in labels:
        avg = {name: _avg(vals) for name, vals in chars[lab].items()}
        portfolios.append(PortfolioSeries(lab, series[lab], avg))
    top, bottom = portfolios[-1].avg_characteristics, portfolios[0].avg_characteristics
    portfolios.append(PortfolioSeries(spread, series[spread],
                                      {n: top[n] - bottom[n] for n in top}))
    stats = {p.label: _safe_stat(p) for p in portfolios}
    return SortResult(spec, portfolios, stats, skipped, membership)


def _safe_stat(p: PortfolioSeries) -> TsStat:
    vals = [p.returns[m] for m in sorted(p.returns)]
    if len(vals) < 2:
        return TsStat(math.nan, math.nan, len(vals))
    return ts_stat(vals)


def run_conditional_double_sort(exposures: Iterable[ExposureRecord],
                                characteristics: CharacteristicsTable, panel: ReturnPanel,
                                rf: RiskFreeSeries, spec: SortSpec) -> DoubleSortResult:
    """Outer sort on ``spec.secondary_var``, then exposure buckets within each outer bucket.

    Inner breakpoints use only the members of the outer bucket they apply to.
    """
    if spec.secondary_var is None:
        raise ValidationError("conditional double sort needs a secondary variable")
    k_in, k_out = spec.n_primary, spec.n_secondary
    rows = bucket_labels(spec.secondary_var, k_out)
    cols = bucket_labels(spec.primary_var, k_in)
    spread = spread_label(spec.primary_var)
    keys = [(r, c) for r in rows for c in cols + [spread]]
    series = {key: {} for key in keys}
    chars = {key: {"hse": [], "beme": [], "size": []} for key in keys if key[1] != spread}
    membership = {}
    skipped = []
    needed = {spec.primary_var, spec.secondary_var}
    for formation, recs in _group_records(exposures).items():
        u = _formation_universe(formation, recs, panel, rf, characteristics, needed)
        if u is None or u.secs.size < k_out:
            logger.warning("formation %s: fewer securities than %d outer buckets, skipped",
                           formation, k_out)
            skipped.append((formation.year, "*"))
            continue
        outer_var = _var(u, spec.secondary_var)
        outer = assign_bucket(outer_var, quantile_breakpoints(outer_var, k_out)) - 1
        cell = np.full(u.secs.size, -1)
        inner_var = _var(u, spec.primary_var)
        for o in range(k_out):
            sel = np.flatnonzero(outer == o)
            if sel.size < k_in:
                logger.warning("formation %s: outer bucket %s has %d members (< %d), skipped",
                               formation, rows[o], sel.size, k_in)
                skipped.append((formation.year, rows[o]))
                continue
            inner = assign_bucket(inner_var[sel], quantile_breakpoints(inner_var[sel], k_in)) - 1
            cell[sel] = o * k_in + inner
        active = cell >= 0
        secs, cell = u.secs[active], cell[active]
        for c_id in np.unique(cell):
            sel = np.flatnonzero(active)[cell == c_id]
            key = (rows[c_id // k_in], cols[c_id % k_in])
            chars[key]["hse"].append(float(u.hse[sel].mean()))
            pos = sel[u.be_pos[sel]]
            chars[key]["beme"].append(float(u.beme[pos].mean()) if pos.size else math.nan)
            chars[key]["size"].append(float(u.size[sel].mean()))
        for m, ex, s_ok, w_ok, c_ok in _holding_returns(panel, rf, formation, secs, cell,
                                                         spec.weighting):
            members = {}
            for c_id in range(k_out * k_in):
                key = (rows[c_id // k_in], cols[c_id % k_in])
                sel = c_ok == c_id
                if sel.any():
                    members[key] = tuple(panel.securities[i] for i in s_ok[sel])
                    series[key][m] = _weighted_mean(ex[sel], w_ok[sel])
            for r in rows:
                hi, lo = series[(r, cols[-1])], series[(r, cols[0])]
                if m in hi and m in lo:
                    series[(r, spread)][m] = hi[m] - lo[m]
            membership[m] = (tuple(panel.securities[i] for i in s_ok), members)

    grid = {}
    for key in keys:
        if key[1] == spread:
            top = grid[(key[0], cols[-1])].avg_characteristics
            bot = grid[(key[0], cols[0])].avg_characteristics
            avg = {n: top[n] - bot[n] for n in top}
        else:
            avg = {n: _avg(v) for n, v in chars[key].items()}
        grid[key] = PortfolioSeries(f"{key[0]}/{key[1]}", series[key], avg)
    stats = {key: _safe_stat(p) for key, p in grid.items()}
    return DoubleSortResult(spec, rows, cols + [spread], grid, stats, skipped, membership)
