"""Happiness search exposure: rolling univariate OLS of returns on ΔSVI.

For each June formation date and each security, monthly returns inside the
trailing window are winsorized and regressed on the search-volume log
change. No market regressor enters the estimation; :func:`ols_univariate`
accepts exactly one regressor by construction.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, DegenerateRegressorError, InsufficientDataError, ValidationError
from .ingest import DeltaSviSeries
from .panel import MonthStamp, ReturnPanel, formation_window

logger = logging.getLogger(__name__)

DEGENERATE_RTOL = 1e-12
WINSOR_SCOPES = ("per-window", "pooled-cross-section")
HSE_HEADER = ("security", "formation_year", "beta_svi", "alpha", "n_obs")


@dataclass(frozen=True)
class WinsorSpec:
    """Percentile clipping bounds.

    ``method`` is any :func:`numpy.percentile` method. The default
    ``"nearest"`` clips at an order statistic of the sample, which makes
    winsorization idempotent; ``"linear"`` interpolates between the two
    closest ranks but is not idempotent.
    """

    lower_pct: float = 1.0
    upper_pct: float = 99.0
    method: str = "nearest"

    def __post_init__(self):
        if not (0 <= self.lower_pct < 50 < self.upper_pct <= 100):
            raise ValidationError(
                f"winsor bounds need 0 <= lower < 50 < upper <= 100, got "
                f"({self.lower_pct}, {self.upper_pct})")


class ExposureRecord(NamedTuple):
    security: str
    formation: MonthStamp
    beta_svi: float
    alpha: float
    n_obs: int


class UnivariateFit(NamedTuple):
    alpha: float | np.ndarray
    beta: float | np.ndarray
    n: int


class HseEstimates(NamedTuple):
    records: list[ExposureRecord]
    excluded: dict[str, str]


def winsorize(values, spec: WinsorSpec = WinsorSpec(), axis: int | None = None) -> np.ndarray:
    """Clip values at the lower/upper percentiles given by ``spec``.

    With ``axis`` given, percentiles are computed independently along it
    (one sample per slice).
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValidationError("cannot winsorize an empty sequence")
    if spec.lower_pct == 0 and spec.upper_pct == 100:
        return v.copy()
    lo, hi = np.percentile(v, [spec.lower_pct, spec.upper_pct], axis=axis,
                           method=spec.method, keepdims=axis is not None)
    return np.clip(v, lo, hi)


def _degenerate(x: np.ndarray) -> bool:
    # variance relative to the mean square; an all-zero x is degenerate too
    xc = x - x.mean()
    return bool(xc @ xc / x.size <= DEGENERATE_RTOL * np.mean(x * x))


def ols_univariate(x, y) -> UnivariateFit:
    """Least squares fit of ``y = alpha + beta * x``.

    ``y`` may be a vector or an ``(n, k)`` array of k responses sharing the
    regressor, in which case alpha and beta are length-k arrays.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ValidationError(f"x and y lengths differ: {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {n}")
    if _degenerate(x):
        raise DegenerateRegressorError("regressor has (numerically) zero variance")
    xbar = x.mean()
    xc = x - xbar
    sxx = xc @ xc
    ybar = y.mean(axis=0)
    beta = xc @ (y - ybar) / sxx
    alpha = ybar - beta * xbar
    if y.ndim == 1:
        return UnivariateFit(float(alpha), float(beta), n)
    return UnivariateFit(alpha, beta, n)


def estimate_hse(panel: ReturnPanel, dsvi: DeltaSviSeries, formation: MonthStamp,
                 window_months: int = 72, min_obs: int = 24,
                 wins: WinsorSpec = WinsorSpec(), scope: str = "per-window") -> HseEstimates:
    """Estimate every security's ΔSVI slope for one June formation date.

    Each security is regressed on the months where both its return and ΔSVI
    exist inside the window; nothing is interpolated. Securities with fewer
    than ``min_obs`` such months are excluded. If ΔSVI itself is constant
    over the window the whole formation date is unusable and
    :class:`DegenerateRegressorError` is raised.
    """
    if scope not in WINSOR_SCOPES:
        raise ValidationError(f"winsor scope must be one of {WINSOR_SCOPES}, got {scope!r}")
    if min_obs < 2:
        raise ValidationError(f"min_obs must be >= 2, got {min_obs}")
    start, end = formation_window(formation, window_months)
    cols, xs = [], []
    for idx in range(start.index, end.index + 1):
        m = MonthStamp.from_index(idx)
        t = panel.col(m)
        if t is not None and m in dsvi.series:
            cols.append(t)
            xs.append(dsvi.series[m])
    x_full = np.array(xs)
    if len(cols) >= 2 and _degenerate(x_full):
        raise DegenerateRegressorError(f"ΔSVI is constant over the window ending {formation}")

    excluded: dict[str, str] = {}
    if not cols:
        return HseEstimates([], {s: "min-obs" for s in panel.securities})
    R = panel.ret[:, cols]
    mask = ~np.isnan(R)
    counts = mask.sum(axis=1)
    eligible = np.flatnonzero(counts >= min_obs)
    for i in np.flatnonzero(counts < min_obs):
        excluded[panel.securities[i]] = "min-obs"

    pooled = None
    if scope == "pooled-cross-section" and eligible.size:
        sample = R[eligible][mask[eligible]]
        pooled = np.percentile(sample, [wins.lower_pct, wins.upper_pct], method=wins.method)

    groups: dict[bytes, list[int]] = {}
    for i in eligible:
        groups.setdefault(mask[i].tobytes(), []).append(int(i))

    records = []
    for rows in groups.values():
        pattern = mask[rows[0]]
        x = x_full[pattern]
        Y = R[np.ix_(rows, np.flatnonzero(pattern))]
        if pooled is None:
            Y = winsorize(Y, wins, axis=1)
        else:
            Y = np.clip(Y, pooled[0], pooled[1])
        try:
            fit = ols_univariate(x, Y.T)
        except DegenerateRegressorError:
            for i in rows:
                excluded[panel.securities[i]] = "degenerate ΔSVI sample"
            continue
        n = int(pattern.sum())
        for k, i in enumerate(rows):
            records.append(ExposureRecord(panel.securities[i], formation,
                                          float(fit.beta[k]), float(fit.alpha[k]), n))
    records.sort(key=lambda r: r.security)
    return HseEstimates(records, excluded)


def format_hse_csv(records: Sequence[ExposureRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HSE_HEADER)
    for r in sorted(records, key=lambda r: (r.formation, r.security)):
        w.writerow((r.security, r.formation.year, repr(r.beta_svi), repr(r.alpha), r.n_obs))
    return buf.getvalue()


def parse_hse_csv(text: str) -> list[ExposureRecord]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != HSE_HEADER:
        raise DataError(f"hse.csv header must be {','.join(HSE_HEADER)}")
    return [ExposureRecord(r["security"], MonthStamp(int(r["formation_year"]), 6),
                           float(r["beta_svi"]), float(r["alpha"]), int(r["n_obs"]))
            for r in reader]
