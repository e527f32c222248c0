"""Monthly Fama-MacBeth cross-sectional regressions.

Each month the cross-section of excess returns (in percent) is regressed on
size, book-to-market with its negative-book dummy, and exposure; slopes are
then averaged over months and tested with the plain time-series t-statistic.
Regressors are measured at the June formation date (book-to-market from the
preceding December) and held fixed for the July-June holding year.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
import pandas as pd
from scipy.linalg import qr, solve_triangular

from .errors import DataError, InsufficientDataError, SingularDesignError, ValidationError
from .exposure import ExposureRecord
from .ingest import CharacteristicsTable
from .panel import MonthStamp, ReturnPanel, RiskFreeSeries, holding_months
from .sorts import TsStat, _trim_keep, ts_stat

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-10  # smallest |R_kk| / |R_00| of the column-scaled pivoted QR
COEF_NAMES = ("a", "s", "h", "h_dummy", "hs")
REGRESSOR_GROUPS = {"s": ("log_me",), "h": ("log_beme_plus", "be_dummy"), "hs": ("hse",)}
COEF_OF_COLUMN = {"log_me": "s", "log_beme_plus": "h", "be_dummy": "h_dummy", "hse": "hs"}
SUBSAMPLES = {"none": None, "big": ("size", "big"), "small": ("size", "small"),
              "value": ("beme", "value"), "growth": ("beme", "growth")}


class CrossSectionRow(NamedTuple):
    security: str
    month: MonthStamp
    excess_ret: float
    log_me: float
    log_beme_plus: float
    be_dummy: int
    hse: float
    beme: float
    formation: MonthStamp


FRAME_COLUMNS = CrossSectionRow._fields


@dataclass(frozen=True)
class FmSpec:
    """Regressor groups (``s``, ``h`` with its dummy, ``hs``) and a subsample."""

    included: tuple[str, ...]
    subsample: str = "none"

    def __post_init__(self):
        inc = tuple(g for g in REGRESSOR_GROUPS if g in self.included)
        if not inc or len(inc) != len(set(self.included)):
            raise ValidationError(f"regressor groups must be a non-empty subset of "
                                  f"{tuple(REGRESSOR_GROUPS)}, got {self.included}")
        if self.subsample not in SUBSAMPLES:
            raise ValidationError(f"subsample must be one of {tuple(SUBSAMPLES)}")
        object.__setattr__(self, "included", inc)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(c for g in self.included for c in REGRESSOR_GROUPS[g])

    @property
    def coefficients(self) -> tuple[str, ...]:
        return ("a",) + tuple(COEF_OF_COLUMN[c] for c in self.columns)

    @property
    def name(self) -> str:
        base = "_".join(self.included)
        return base if self.subsample == "none" else f"{base}@{self.subsample}"

    @classmethod
    def parse(cls, text: str) -> "FmSpec":
        base, _, sub = text.partition("@")
        return cls(tuple(base.split("_")), sub or "none")


# the seven specifications, in table order
TABLE4_SPECS = tuple(FmSpec(g) for g in (
    ("s",), ("h",), ("hs",), ("s", "h"), ("s", "hs"), ("h", "hs"), ("s", "h", "hs")))
SUBSAMPLE_SPECS = tuple(FmSpec(("s", "h", "hs"), sub) for sub in ("big", "small", "value", "growth"))


@dataclass
class FmResult:
    """Time-series averaged coefficients in percent per month."""

    spec: FmSpec
    coefs: dict[str, TsStat]
    n_months: int
    skipped: dict[MonthStamp, str]


def ols_multivariate(X, y, names: Iterable[str] | None = None,
                     add_intercept: bool = True) -> np.ndarray:
    """Least squares coefficients via column-pivoted Householder QR.

    Columns are scaled to unit norm before factorization; the design counts
    as rank deficient when a pivot falls below ``RANK_RTOL`` times the
    largest one. With ``add_intercept`` the first coefficient is the
    intercept.
    """
    A = np.asarray(X, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    y = np.asarray(y, dtype=float)
    n = A.shape[0]
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(A.shape[1])]
    if add_intercept:
        A = np.column_stack([np.ones(n), A])
        names = ["const"] + names
    p = A.shape[1]
    if y.shape != (n,):
        raise ValidationError(f"y must have length {n}")
    if n <= p:
        raise InsufficientDataError(f"need more than {p} observations, got {n}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise DataError("design and response must be finite")
    norms = np.sqrt(np.einsum("ij,ij->j", A, A))
    if np.any(norms == 0):
        zero = [names[j] for j in np.flatnonzero(norms == 0)]
        raise SingularDesignError(f"all-zero column(s): {', '.join(zero)}", zero)
    Q, R, piv = qr(A / norms, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.count_nonzero(d > RANK_RTOL * d[0]))
    if rank < p:
        j = rank
        z = solve_triangular(R[:rank, :rank], R[:rank, j])
        involved = sorted([piv[j]] + [piv[i] for i in np.flatnonzero(np.abs(z) > 1e-8 * np.abs(z).max())]) \
            if rank else [piv[j]]
        cols = [names[i] for i in involved]
        raise SingularDesignError(f"singular design, collinear columns: {', '.join(cols)}", cols)
    b = np.empty(p)
    b[piv] = solve_triangular(R, Q.T @ y)
    return b / norms


# -- cross-section assembly ---------------------------------------------------

def build_cross_section(panel: ReturnPanel, rf: RiskFreeSeries,
                        exposures: Iterable[ExposureRecord],
                        characteristics: CharacteristicsTable) -> pd.DataFrame:
    """One row per (security, holding month) with June-dated regressors.

    Securities need an exposure and a characteristics row at the formation
    date; a month is included when the security has a return that month.
    The ``month`` and ``formation`` columns hold :attr:`MonthStamp.index`.
    """
    frames = []
    by_f: dict[MonthStamp, list[ExposureRecord]] = {}
    for r in exposures:
        by_f.setdefault(r.formation, []).append(r)
    for formation in sorted(by_f):
        recs = sorted(by_f[formation], key=lambda r: r.security)
        keep = [(r, characteristics.get(r.security, formation)) for r in recs
                if r.security in panel]
        keep = [(r, ch) for r, ch in keep if ch is not None]
        if not keep:
            continue
        idx = np.array([panel.row(r.security) for r, _ in keep])
        months = [m for m in holding_months(formation) if panel.col(m) is not None]
        if not months:
            continue
        cols = np.array([panel.col(m) for m in months])
        rfv = np.array([rf.at(m) for m in months])
        R = panel.ret[np.ix_(idx, cols)] - rfv
        ii, tt = np.nonzero(~np.isnan(R))
        sec = np.array([r.security for r, _ in keep], dtype=object)
        frames.append(pd.DataFrame({
            "security": sec[ii],
            "month": np.array([m.index for m in months])[tt],
            "excess_ret": R[ii, tt],
            "log_me": np.array([ch.log_me for _, ch in keep])[ii],
            "log_beme_plus": np.array([ch.log_beme_plus for _, ch in keep])[ii],
            "be_dummy": np.array([ch.be_dummy for _, ch in keep])[ii],
            "hse": np.array([r.beta_svi for r, _ in keep])[ii],
            "beme": np.array([ch.beme for _, ch in keep])[ii],
            "formation": np.full(ii.size, formation.index),
        }))
    if not frames:
        return pd.DataFrame({c: [] for c in FRAME_COLUMNS})
    return _canonical(pd.concat(frames, ignore_index=True))


def _canonical(df: pd.DataFrame) -> pd.DataFrame:
    return df.sort_values(["month", "security"], kind="mergesort").reset_index(drop=True)


def rows_to_frame(rows) -> pd.DataFrame:
    """Accept a frame or an iterable of :class:`CrossSectionRow`."""
    if isinstance(rows, pd.DataFrame):
        missing = [c for c in FRAME_COLUMNS if c not in rows.columns]
        if missing:
            raise ValidationError(f"cross-section frame lacks columns {missing}")
        return rows
    recs = [r._replace(month=r.month.index, formation=r.formation.index) for r in rows]
    return pd.DataFrame(recs, columns=FRAME_COLUMNS)


def split_subsample(rows, by: str, side: str) -> pd.DataFrame:
    """Keep one side of the formation-year median split.

    Size splits on ``log_me``; book-to-market splits on the raw ratio with
    negative-book firms included at their negative value. Firms strictly
    above the median are big / value, all others small / growth. Medians are
    taken over distinct securities, one value per security per formation.
    """
    sides = {"size": ("big", "small"), "beme": ("value", "growth")}
    if by not in sides or side not in sides[by]:
        raise ValidationError(f"bad split {by}/{side}")
    df = rows_to_frame(rows)
    var = "log_me" if by == "size" else "beme"
    firms = df.drop_duplicates(["formation", "security"])[["formation", "security", var]]
    med = firms.groupby("formation")[var].median()
    above = df[var].to_numpy() > df["formation"].map(med).to_numpy()
    sel = above if side == sides[by][0] else ~above
    out = df[sel]
    for f in med.index:
        n_side = out.loc[out["formation"] == f, "security"].nunique()
        if n_side == 0:
            logger.warning("%s split, formation %s: %s side is empty", by,
                           MonthStamp.from_index(f), side)
    return out.reset_index(drop=True)


def _month_regression(block, columns, min_extra):
    """Coefficients for one month, NaN for columns dropped as constant."""
    month, ret, sec, X = block
    n_coef = len(columns) + 1
    if ret.size < 3:
        return month, None, "fewer than 3 rows"
    keep = _trim_keep(ret, sec)
    ret, X = ret[keep], X[keep]
    use = np.ones(len(columns), dtype=bool)
    for j, c in enumerate(columns):
        if c == "be_dummy" and np.ptp(X[:, j]) == 0:
            use[j] = False
    p = int(use.sum()) + 1
    if ret.size <= p + min_extra:
        return month, None, f"cross-section of {ret.size} too small for {p} coefficients"
    try:
        b = ols_multivariate(X[:, use], 100.0 * ret, [c for c, u in zip(columns, use) if u])
    except SingularDesignError as exc:
        return month, None, str(exc)
    out = np.full(n_coef, np.nan)
    out[0] = b[0]
    out[1:][use] = b[1:]
    return month, out, None


def run_fm(rows, spec: FmSpec, min_extra: int = 10, min_months: int = 12,
           threads: int = 1) -> FmResult:
    """Fama-MacBeth regression of percent excess returns for one specification.

    Each month's cross-section is trimmed by one high and one low return
    before fitting. Months whose trimmed size does not exceed the number of
    coefficients plus ``min_extra`` are skipped. A book-equity dummy that is
    constant within a month is dropped for that month and its coefficient
    averaged over the remaining months.
    """
    df = rows_to_frame(rows)
    split = SUBSAMPLES[spec.subsample]
    if split is not None:
        df = split_subsample(df, *split)
    df = _canonical(df)
    columns = spec.columns
    month = df["month"].to_numpy()
    ret = df["excess_ret"].to_numpy(dtype=float)
    sec = df["security"].to_numpy()
    sec_key = np.unique(sec, return_inverse=True)[1] if sec.size else sec
    X = df[list(columns)].to_numpy(dtype=float)
    starts = np.flatnonzero(np.r_[True, month[1:] != month[:-1]]) if month.size else np.array([], int)
    ends = np.r_[starts[1:], month.size]
    blocks = [(int(month[a]), ret[a:b], sec_key[a:b], X[a:b]) for a, b in zip(starts, ends)]

    def work(block):
        return _month_regression(block, columns, min_extra)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]

    coefs, skipped = [], {}
    for m, b, reason in results:
        if b is None:
            skipped[MonthStamp.from_index(m)] = reason
        else:
            coefs.append(b)
    if skipped:
        logger.info("%s: skipped %d month(s)", spec.name, len(skipped))
    if len(coefs) < min_months:
        raise InsufficientDataError(
            f"{spec.name}: only {len(coefs)} usable months, need {min_months}")
    C = np.array(coefs)
    stats = {}
    for j, name in enumerate(spec.coefficients):
        col = C[:, j][~np.isnan(C[:, j])]
        stats[name] = ts_stat(col) if col.size >= 2 else TsStat(math.nan, math.nan, int(col.size))
    return FmResult(spec, stats, len(coefs), skipped)
