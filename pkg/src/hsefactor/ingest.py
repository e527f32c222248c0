"""CSV ingestion, search-volume log differences and book-to-market characteristics.

File schemas (UTF-8, comma separated, ``.`` decimal separator)::

    returns.csv   security,year,month,ret,mktcap
    svi.csv       year,month,svi
    books.csv     security,year,equity,preferred,dec_mktcap
    riskfree.csv  year,month,rf

Floats are written with ``repr`` so every value round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from .errors import DataError, ValidationError
from .panel import BookEquityRecord, MonthStamp, ReturnPanel, RiskFreeSeries

logger = logging.getLogger(__name__)

RETURNS_HEADER = ("security", "year", "month", "ret", "mktcap")
SVI_HEADER = ("year", "month", "svi")
BOOKS_HEADER = ("security", "year", "equity", "preferred", "dec_mktcap")
RISKFREE_HEADER = ("year", "month", "rf")

FILL_LOG_BEME = 0.0


@dataclass(frozen=True)
class SviSeries:
    """Monthly search-volume intensity, contiguous over its span."""

    series: Mapping[MonthStamp, float]

    def __post_init__(self):
        months = sorted(self.series)
        if months and months[-1].index - months[0].index + 1 != len(months):
            raise DataError("SVI series must cover a contiguous run of months")
        for m in months:
            v = self.series[m]
            if not math.isfinite(v) or v < 0:
                raise DataError(f"SVI at {m} must be finite and >= 0, got {v}")

    @property
    def months(self) -> list[MonthStamp]:
        return sorted(self.series)


@dataclass(frozen=True)
class DeltaSviSeries:
    """Month-over-month log change of SVI; months may be missing."""

    series: Mapping[MonthStamp, float]

    @property
    def months(self) -> list[MonthStamp]:
        return sorted(self.series)


class CharacteristicsRow(NamedTuple):
    log_me: float
    beme: float
    log_beme_plus: float
    be_dummy: int
    mktcap: float


@dataclass(frozen=True)
class CharacteristicsTable:
    """Per-(security, formation) size and value characteristics.

    ``beme`` is the raw ratio, which is <= 0 for firms with non-positive book
    equity; those firms carry ``be_dummy == 1`` and the fill value in
    ``log_beme_plus``.
    """

    rows: Mapping[tuple[str, MonthStamp], CharacteristicsRow]

    def __post_init__(self):
        for key, row in self.rows.items():
            if not math.isfinite(row.log_me):
                raise DataError(f"non-finite log_me for {key}")
            if row.be_dummy == 0 and not (row.beme > 0 and row.log_beme_plus == math.log(row.beme)):
                raise DataError(f"inconsistent BE/ME fields for {key}")
            if row.be_dummy == 1 and row.beme > 0:
                raise DataError(f"be_dummy set for positive book equity at {key}")

    def get(self, security: str, formation: MonthStamp):
        return self.rows.get((security, formation))

    def formations(self) -> list[MonthStamp]:
        return sorted({f for _, f in self.rows})

    def for_formation(self, formation: MonthStamp) -> dict[str, CharacteristicsRow]:
        return {s: r for (s, f), r in sorted(self.rows.items()) if f == formation}

    @classmethod
    def merge(cls, tables: Iterable["CharacteristicsTable"]) -> "CharacteristicsTable":
        rows = {}
        for t in tables:
            rows.update(t.rows)
        return cls(rows)


# -- parsing ---------------------------------------------------------------

def _read_rows(path, header, delimiter=","):
    """Yield ``(line_number, dict)`` for each data row after validating the header."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        got = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file, expected header {','.join(header)}") from None
    missing = [h for h in header if h not in got]
    if missing:
        raise DataError(f"{path}: header missing column(s) {', '.join(missing)}")
    extra = [h for h in got if h not in header]
    if extra:
        raise DataError(f"{path}: unexpected column(s) {', '.join(extra)}")
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(got):
            raise DataError(f"{path}:{reader.line_num}: expected {len(got)} fields, got {len(row)}")
        yield reader.line_num, dict(zip(got, (c.strip() for c in row)))


def _num(rec, key, path, line, kind=float):
    try:
        v = kind(rec[key])
    except ValueError:
        raise DataError(f"{path}:{line}: bad {key} value {rec[key]!r}") from None
    if kind is float and not math.isfinite(v):
        raise DataError(f"{path}:{line}: non-finite {key}")
    return v


def _month(rec, path, line):
    year = _num(rec, "year", path, line, int)
    month = _num(rec, "month", path, line, int)
    if not 1 <= month <= 12:
        raise DataError(f"{path}:{line}: month {month} outside 1..12")
    return MonthStamp(year, month)


def load_return_panel(path, delimiter: str = ",") -> ReturnPanel:
    obs: dict[str, dict[MonthStamp, tuple[float, float]]] = {}
    for line, rec in _read_rows(path, RETURNS_HEADER, delimiter):
        sec = rec["security"]
        if not sec:
            raise DataError(f"{path}:{line}: empty security id")
        m = _month(rec, path, line)
        r = _num(rec, "ret", path, line)
        cap = _num(rec, "mktcap", path, line)
        if cap <= 0:
            raise DataError(f"{path}:{line}: mktcap must be > 0, got {cap}")
        series = obs.setdefault(sec, {})
        if m in series:
            raise DataError(f"{path}:{line}: duplicate row for ({sec}, {m})")
        series[m] = (r, cap)
    if not obs:
        raise DataError(f"{path}: no data rows")
    return ReturnPanel.from_observations(obs)


def load_svi(path, delimiter: str = ",") -> SviSeries:
    series = {}
    for line, rec in _read_rows(path, SVI_HEADER, delimiter):
        m = _month(rec, path, line)
        if m in series:
            raise DataError(f"{path}:{line}: duplicate month {m}")
        v = _num(rec, "svi", path, line)
        if v < 0:
            raise DataError(f"{path}:{line}: svi must be >= 0")
        series[m] = v
    return SviSeries(series)


def load_riskfree(path, delimiter: str = ",") -> RiskFreeSeries:
    series = {}
    for line, rec in _read_rows(path, RISKFREE_HEADER, delimiter):
        m = _month(rec, path, line)
        if m in series:
            raise DataError(f"{path}:{line}: duplicate month {m}")
        series[m] = _num(rec, "rf", path, line)
    return RiskFreeSeries(series)


def load_books(path, delimiter: str = ",") -> list[BookEquityRecord]:
    out = []
    seen = set()
    for line, rec in _read_rows(path, BOOKS_HEADER, delimiter):
        sec = rec["security"]
        year = _num(rec, "year", path, line, int)
        if (sec, year) in seen:
            raise DataError(f"{path}:{line}: duplicate book record for ({sec}, {year})")
        seen.add((sec, year))
        cap = _num(rec, "dec_mktcap", path, line)
        if cap <= 0:
            raise DataError(f"{path}:{line}: dec_mktcap must be > 0, got {cap}")
        out.append(BookEquityRecord(sec, MonthStamp(year, 12), _num(rec, "equity", path, line),
                                    _num(rec, "preferred", path, line), cap))
    return out


# -- formatting ------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def format_returns_csv(panel: ReturnPanel) -> str:
    rows = []
    for sec in panel.securities:
        for m, (r, cap) in sorted(panel.observations(sec).items()):
            rows.append((sec, m.year, m.month, repr(r), repr(cap)))
    return _csv_text(RETURNS_HEADER, rows)


def format_svi_csv(svi: SviSeries) -> str:
    return _csv_text(SVI_HEADER, [(m.year, m.month, repr(float(svi.series[m]))) for m in svi.months])


def format_riskfree_csv(rf: RiskFreeSeries) -> str:
    return _csv_text(RISKFREE_HEADER, [(m.year, m.month, repr(float(rf.series[m])))
                                       for m in sorted(rf.series)])


def format_books_csv(books: Iterable[BookEquityRecord]) -> str:
    rows = [(b.security, b.fiscal_december.year, repr(float(b.equity)), repr(float(b.preferred)),
             repr(float(b.dec_mktcap)))
            for b in sorted(books, key=lambda b: (b.security, b.fiscal_december))]
    return _csv_text(BOOKS_HEADER, rows)


# -- derived series ---------------------------------------------------------

def compute_delta_svi(svi: SviSeries) -> tuple[DeltaSviSeries, list[MonthStamp]]:
    """Log differences ``ln(SVI_t) - ln(SVI_{t-1})``.

    Returns the series together with the months that were skipped because
    either endpoint is zero. Zeros are never imputed.
    """
    months = svi.months
    if sum(1 for m in months if svi.series[m] > 0) < 2:
        raise DataError("need at least 2 months with positive SVI")
    out = {}
    skipped = []
    for prev, cur in zip(months, months[1:]):
        a, b = svi.series[prev], svi.series[cur]
        if a > 0 and b > 0:
            out[cur] = math.log(b) - math.log(a)
        else:
            skipped.append(cur)
    if skipped:
        logger.info("skipped %d ΔSVI month(s) with zero SVI", len(skipped))
    return DeltaSviSeries(out), skipped


def compute_beme(rec: BookEquityRecord) -> float | None:
    """Book-to-market ratio, or None when book equity is not positive."""
    if not rec.dec_mktcap > 0:
        raise DataError(f"dec_mktcap must be > 0 for {rec.security} {rec.fiscal_december}")
    be = rec.book_equity
    if be > 0:
        return be / rec.dec_mktcap
    return None


def build_characteristics(panel: ReturnPanel, books: Iterable[BookEquityRecord],
                          formation: MonthStamp, fill_value: float = FILL_LOG_BEME,
                          ) -> tuple[CharacteristicsTable, dict[str, str]]:
    """June size and prior-December book-to-market for one formation date.

    Returns the table and ``{security: reason}`` for excluded securities.
    """
    if formation.month != 6:
        raise ValidationError(f"formation month must be June, got {formation}")
    dec = MonthStamp(formation.year - 1, 12)
    book_by_sec = {b.security: b for b in books if b.fiscal_december == dec}
    t = panel.col(formation)
    rows = {}
    excluded = {}
    for i, sec in enumerate(panel.securities):
        cap = panel.mktcap[i, t] if t is not None else math.nan
        if math.isnan(cap):
            excluded[sec] = "no June market cap"
            continue
        rec = book_by_sec.get(sec)
        if rec is None:
            excluded[sec] = f"no book record for {dec}"
            continue
        beme = compute_beme(rec)
        if beme is None:
            row = CharacteristicsRow(math.log(cap), rec.book_equity / rec.dec_mktcap, fill_value, 1, float(cap))
        else:
            row = CharacteristicsRow(math.log(cap), beme, math.log(beme), 0, float(cap))
        rows[(sec, formation)] = row
    for sec in sorted(set(book_by_sec) - set(panel.securities)):
        excluded[sec] = "book record without return data"
    return CharacteristicsTable(rows), excluded
