"""Monthly calendar arithmetic and the core panel types."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError, ValidationError


@total_ordering
@dataclass(frozen=True)
class MonthStamp:
    """A calendar month, ordered lexicographically by ``(year, month)``."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValidationError(f"month must be in 1..12, got {self.month}")

    @classmethod
    def from_index(cls, index: int) -> "MonthStamp":
        year, m0 = divmod(int(index), 12)
        return cls(year, m0 + 1)

    @classmethod
    def parse(cls, text: str) -> "MonthStamp":
        """Parse ``YYYY-MM``."""
        try:
            y, m = text.strip().split("-")
            return cls(int(y), int(m))
        except (ValueError, AttributeError) as exc:
            raise ValidationError(f"not a YYYY-MM month: {text!r}") from exc

    @property
    def index(self) -> int:
        """Months since January of year 0; consecutive months differ by one."""
        return self.year * 12 + self.month - 1

    def shift(self, months: int) -> "MonthStamp":
        return MonthStamp.from_index(self.index + months)

    def next(self) -> "MonthStamp":
        return self.shift(1)

    def prev(self) -> "MonthStamp":
        return self.shift(-1)

    def __lt__(self, other):
        if not isinstance(other, MonthStamp):
            return NotImplemented
        return (self.year, self.month) < (other.year, other.month)

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


def months_between(a: MonthStamp, b: MonthStamp) -> int:
    """Signed number of months from ``a`` to ``b``."""
    return (b.year - a.year) * 12 + (b.month - a.month)


def formation_window(formation: MonthStamp, window_months: int,
                     require_june: bool = True) -> tuple[MonthStamp, MonthStamp]:
    """Inclusive ``(start, end)`` estimation window ending at ``formation``.

    >>> formation_window(MonthStamp(2020, 6), 72)
    (MonthStamp(year=2014, month=7), MonthStamp(year=2020, month=6))
    """
    if require_june and formation.month != 6:
        raise ValidationError(f"formation month must be June, got {formation}")
    if window_months < 1:
        raise ValidationError(f"window_months must be >= 1, got {window_months}")
    return formation.shift(-(window_months - 1)), formation


def month_range(start: MonthStamp, end: MonthStamp) -> list[MonthStamp]:
    return [MonthStamp.from_index(i) for i in range(start.index, end.index + 1)]


def holding_months(formation: MonthStamp) -> list[MonthStamp]:
    """July of the formation year through June of the next year."""
    return month_range(formation.next(), formation.shift(12))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """Monthly returns and market caps for a set of securities.

    Stored densely: ``ret[i, t]`` and ``mktcap[i, t]`` for security
    ``securities[i]`` and month ``calendar[t]``, NaN where a security has no
    observation. Securities are kept sorted by id so that every downstream
    result is independent of the order in which data arrived.
    """

    securities: tuple[str, ...]
    start: MonthStamp
    ret: np.ndarray
    mktcap: np.ndarray
    _pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ret = _frozen(self.ret)
        cap = _frozen(self.mktcap)
        if ret.ndim != 2 or ret.shape != cap.shape or ret.shape[0] != len(self.securities):
            raise DataError("ret/mktcap must be (n_securities, n_months) arrays of equal shape")
        if list(self.securities) != sorted(self.securities):
            raise DataError("securities must be sorted")
        if len(set(self.securities)) != len(self.securities) or any(not s for s in self.securities):
            raise DataError("security ids must be unique non-empty strings")
        present = ~np.isnan(ret)
        if not np.array_equal(present, ~np.isnan(cap)):
            raise DataError("ret and mktcap must be observed on the same (security, month) cells")
        if not np.all(np.isfinite(ret[present])):
            raise DataError("returns must be finite")
        if not np.all(cap[present] > 0) or not np.all(np.isfinite(cap[present])):
            raise DataError("market caps must be finite and > 0")
        object.__setattr__(self, "ret", ret)
        object.__setattr__(self, "mktcap", cap)
        object.__setattr__(self, "_pos", {s: i for i, s in enumerate(self.securities)})

    @classmethod
    def from_observations(cls, obs: Mapping[str, Mapping[MonthStamp, tuple[float, float]]],
                          calendar: Iterable[MonthStamp] | None = None) -> "ReturnPanel":
        """Build from ``{security: {month: (ret, mktcap)}}``.

        The calendar spans the first to the last observed month unless given.
        """
        months = sorted({m for series in obs.values() for m in series})
        if calendar is not None:
            cal = sorted(calendar)
            if not cal:
                raise DataError("empty calendar")
            if any(m < cal[0] or m > cal[-1] for m in months):
                raise DataError("observation outside calendar")
            first, last = cal[0], cal[-1]
        elif months:
            first, last = months[0], months[-1]
        else:
            raise DataError("panel has no observations")
        secs = tuple(sorted(obs))
        n_t = months_between(first, last) + 1
        ret = np.full((len(secs), n_t), np.nan)
        cap = np.full((len(secs), n_t), np.nan)
        for i, s in enumerate(secs):
            for m, (r, c) in obs[s].items():
                t = months_between(first, m)
                ret[i, t] = r
                cap[i, t] = c
        return cls(secs, first, ret, cap)

    @property
    def n_months(self) -> int:
        return self.ret.shape[1]

    @property
    def end(self) -> MonthStamp:
        return self.start.shift(self.n_months - 1)

    @property
    def calendar(self) -> list[MonthStamp]:
        return month_range(self.start, self.end)

    def col(self, month: MonthStamp) -> int | None:
        """Column index of ``month``, or None when outside the calendar."""
        t = months_between(self.start, month)
        return t if 0 <= t < self.n_months else None

    def row(self, security: str) -> int:
        return self._pos[security]

    def __contains__(self, security) -> bool:
        return security in self._pos

    def observations(self, security: str) -> dict[MonthStamp, tuple[float, float]]:
        i = self._pos[security]
        out = {}
        for t in np.flatnonzero(~np.isnan(self.ret[i])):
            out[self.start.shift(int(t))] = (float(self.ret[i, t]), float(self.mktcap[i, t]))
        return out

    def n_observations(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.ret)))

    def __eq__(self, other):
        if not isinstance(other, ReturnPanel):
            return NotImplemented
        return (self.securities == other.securities and self.start == other.start
                and np.array_equal(self.ret, other.ret, equal_nan=True)
                and np.array_equal(self.mktcap, other.mktcap, equal_nan=True))

    __hash__ = None


@dataclass(frozen=True)
class RiskFreeSeries:
    """Monthly risk-free return (fraction) by month."""

    series: Mapping[MonthStamp, float]

    def __post_init__(self):
        for m, v in self.series.items():
            if not math.isfinite(v):
                raise DataError(f"non-finite risk-free rate at {m}")

    def at(self, month: MonthStamp) -> float:
        try:
            return self.series[month]
        except KeyError:
            raise DataError(f"risk-free rate missing for {month}") from None

    def vector(self, start: MonthStamp, n: int) -> np.ndarray:
        """Rates for ``n`` consecutive months from ``start``; NaN where missing."""
        return np.array([self.series.get(start.shift(t), np.nan) for t in range(n)])


@dataclass(frozen=True)
class BookEquityRecord:
    security: str
    fiscal_december: MonthStamp
    equity: float
    preferred: float
    dec_mktcap: float

    def __post_init__(self):
        if self.fiscal_december.month != 12:
            raise DataError(f"fiscal_december must be a December month, got {self.fiscal_december}")
        if not (math.isfinite(self.equity) and math.isfinite(self.preferred)):
            raise DataError(f"non-finite book values for {self.security}")

    @property
    def book_equity(self) -> float:
        return self.equity - self.preferred
