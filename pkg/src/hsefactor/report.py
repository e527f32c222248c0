"""Plain-text and CSV renderings of sort and regression tables, plus file helpers."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import tempfile
from pathlib import Path
from typing import Sequence

from .fmreg import COEF_NAMES, FmResult
from .sorts import DoubleSortResult, SortResult, TsStat

UNIVARIATE_COLUMNS = ("portfolio", "hse", "beme_plus", "size", "excess_return_pct", "tstat", "n_months")
DOUBLE_COLUMNS = ("outer", "inner", "excess_return_pct", "tstat", "n_months")
FM_COLUMNS = ("spec", "coef", "mean", "tstat", "n_months")


def write_atomic(path, text: str) -> Path:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def header_line(provenance: str, note: str = "") -> str:
    extra = f"; {note}" if note else ""
    return f"# hsefactor run-manifest sha256={provenance}{extra}\n"


def _r(x: float) -> str:
    return "" if x is None or math.isnan(x) else repr(float(x))


def _fmt(x: float, digits: int = 2) -> str:
    if x is None or math.isnan(x):
        return "."
    return f"{x:.{digits}f}"


def _tfmt(st: TsStat) -> str:
    if math.isnan(st.tstat):
        return "(.)"
    if math.isinf(st.tstat):
        return "(+inf)" if st.tstat > 0 else "(-inf)"
    return f"({st.tstat:.2f})"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def univariate_csv(res: SortResult, provenance: str) -> str:
    rows = []
    for p in res.portfolios:
        st = res.stats[p.label]
        c = p.avg_characteristics
        rows.append((p.label, _r(c["hse"]), _r(c["beme"]), _r(c["size"]),
                     _r(100 * st.mean), _r(st.tstat), st.n_months))
    return header_line(provenance, f"{res.spec.weighting}-weighted excess returns in percent per month") \
        + _csv(UNIVARIATE_COLUMNS, rows)


def univariate_text(res: SortResult, provenance: str) -> str:
    out = [header_line(provenance, f"{res.spec.weighting}-weighted excess returns in percent per month")]
    head = f"{'':<16}{'HSE':>10}{'BE/ME(+)':>10}{'Size':>16}{'Excess Return':>15}"
    out.append(head + "\n")
    out.append("-" * len(head) + "\n")
    for p in res.portfolios:
        st = res.stats[p.label]
        c = p.avg_characteristics
        out.append(f"{p.label:<16}{_fmt(c['hse']):>10}{_fmt(c['beme']):>10}"
                   f"{_fmt(c['size']):>16}{_fmt(100 * st.mean):>15}\n")
        out.append(f"{'':<52}{_tfmt(st):>15}\n")
    return "".join(out)


def double_csv(res: DoubleSortResult, provenance: str) -> str:
    rows = []
    for r in res.row_labels:
        for c in res.col_labels:
            st = res.stats[(r, c)]
            rows.append((r, c, _r(100 * st.mean), _r(st.tstat), st.n_months))
    note = (f"{res.spec.secondary_var} x {res.spec.primary_var} conditional sort; "
            f"{res.spec.weighting}-weighted excess returns in percent per month")
    return header_line(provenance, note) + _csv(DOUBLE_COLUMNS, rows)


def double_text(res: DoubleSortResult, provenance: str) -> str:
    note = (f"{res.spec.secondary_var} x {res.spec.primary_var} conditional sort; "
            f"{res.spec.weighting}-weighted excess returns in percent per month")
    out = [header_line(provenance, note)]
    head = f"{'':<8}" + "".join(f"{c:>15}" for c in res.col_labels)
    out.append(head + "\n")
    out.append("-" * len(head) + "\n")
    for r in res.row_labels:
        sts = [res.stats[(r, c)] for c in res.col_labels]
        out.append(f"{r:<8}" + "".join(f"{_fmt(100 * s.mean):>15}" for s in sts) + "\n")
        out.append(f"{'':<8}" + "".join(f"{_tfmt(s):>15}" for s in sts) + "\n")
    return "".join(out)


def fm_csv(results: Sequence[FmResult], provenance: str) -> str:
    rows = []
    for res in results:
        for coef in res.spec.coefficients:
            st = res.coefs[coef]
            rows.append((res.spec.name, coef, _r(st.mean), _r(st.tstat), st.n_months))
    return header_line(provenance, "coefficients in percent per month") + _csv(FM_COLUMNS, rows)


def fm_text(results: Sequence[FmResult], provenance: str) -> str:
    out = [header_line(provenance, "coefficients in percent per month; t-statistics in parentheses")]
    head = f"{'spec':<16}" + "".join(f"{c:>10}" for c in COEF_NAMES)
    out.append(head + "\n")
    out.append("-" * len(head) + "\n")
    for res in results:
        means, ts = [], []
        for c in COEF_NAMES:
            if c in res.coefs:
                means.append(_fmt(res.coefs[c].mean))
                ts.append(_tfmt(res.coefs[c]))
            else:
                means.append("")
                ts.append("")
        out.append(f"{res.spec.name:<16}" + "".join(f"{m:>10}" for m in means) + "\n")
        out.append(f"{'':<16}" + "".join(f"{t:>10}" for t in ts) + "\n\n")
    return "".join(out)
