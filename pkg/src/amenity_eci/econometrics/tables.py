"""Publication-style regression tables, tidy CSV output and correlations.

The text layout is ampersand-delimited, one model per column::

     & (1) & (2)
    Temperature & -65.258* & -262.608***
     & (36.775) & (41.153)
    ...
    Observations & 1,380 & 1,380
    Adjusted R2 & 0.603 & 0.635
    Residual Std. Error & 957.993 (df = 1374) & 918.952 (df = 1372)
    F Statistic & 350.454*** (df = 5; 1374) & 300.801*** (df = 7; 1372)

``parse_table`` reads it back at printed precision.
"""

from __future__ import annotations

import re

import numpy as np
import pandas as pd

from ..exceptions import InsufficientRows, ZeroVariance
from .ols import INTERCEPT, RegressionResult, star_codes

STAR_NOTE = "*p<0.1; **p<0.05; ***p<0.01"
_SE_LABEL = {"HC1": "Robust (HC1)", "HC0": "Robust (HC0)", "classical": "Classical"}
_RULE = "-" * 8


def fmt_num(x, digits: int = 3) -> str:
    if x is None or not np.isfinite(x):
        return "NA" if x is None or np.isnan(x) else ("Inf" if x > 0 else "-Inf")
    return f"{x:,.{digits}f}"


def _parse_num(s: str) -> float:
    s = s.strip()
    if s == "NA":
        return float("nan")
    return float(s.replace(",", ""))


def term_label(term: str) -> str:
    return " x ".join(term.split(":"))


def _label_term(label: str) -> str:
    return ":".join(p.strip() for p in label.split(" x "))


def _ordered_terms(results):
    # the widest model fixes the order; terms only in narrower ones follow
    seen = []
    for r in sorted(results, key=lambda r: -len(r.terms)):
        for t in r.terms:
            if t not in seen and t != INTERCEPT:
                seen.append(t)
    if any(INTERCEPT in r.terms for r in results):
        seen.append(INTERCEPT)
    return seen


def render_table(results, column_labels=None, title: str | None = None, digits: int = 3) -> str:
    """Render one or more :class:`RegressionResult` side by side."""
    results = [results] if isinstance(results, RegressionResult) else list(results)
    if not results:
        raise ValueError("nothing to render")
    labels = column_labels or [""] * len(results)
    if len(labels) != len(results):
        raise ValueError("one column label per result")
    head = [f"({j + 1})" + (f" {lab}" if lab else "") for j, lab in enumerate(labels)]
    rows: list[list[str]] = [[""] + head, [_RULE]]
    for term in _ordered_terms(results):
        coef_row, se_row = [term_label(term)], [""]
        for r in results:
            if term in r.terms:
                j = r.terms.index(term)
                coef_row.append(fmt_num(r.coef[j], digits) + star_codes(r.pvalues[j]))
                se_row.append(f"({fmt_num(r.se[j], digits)})")
            else:
                coef_row.append("")
                se_row.append("")
        rows += [coef_row, se_row]
    rows.append([_RULE])
    rows.append(["Observations"] + [f"{r.n:,d}" for r in results])
    rows.append(["Adjusted R2"] + [fmt_num(r.adj_r2, digits) for r in results])
    rows.append(["Residual Std. Error"] + [f"{fmt_num(r.sigma, digits)} (df = {r.df_resid})" for r in results])
    rows.append(
        ["F Statistic"]
        + [f"{fmt_num(r.fvalue, digits)}{star_codes(r.f_pvalue)} (df = {r.f_df1}; {r.f_df2})" for r in results]
    )
    rows.append([_RULE])
    se_types = sorted({r.se_type for r in results})
    se_note = " / ".join(_SE_LABEL[s] for s in se_types)
    rows.append([f"Note: {se_note} standard errors in parentheses; {STAR_NOTE}"])

    ncol = len(results) + 1
    widths = [max(len(r[c]) for r in rows if len(r) == ncol) for c in range(ncol)]
    out = [title] if title else []
    for r in rows:
        if len(r) == 1:
            out.append(r[0])
        else:
            out.append(" & ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(out) + "\n"


_FOOT_DF = re.compile(r"^(?P<v>\S+) \(df = (?P<df>\d+)\)$")
_F_DF = re.compile(r"^(?P<v>[^*\s]+)(?P<s>\**) \(df = (?P<d1>\d+); (?P<d2>\d+)\)$")
_COEF = re.compile(r"^(?P<v>[^*]+)(?P<s>\**)$")


def parse_table(text: str) -> list[dict]:
    """Numeric content of a rendered table, one dict per model column."""
    cols: list[dict] = []
    last_term = None
    for line in text.splitlines():
        if " & " not in line and not line.startswith(" &"):
            continue
        cells = [c.strip() for c in line.split("&")]
        label, vals = cells[0], cells[1:]
        if not cols:
            cols = [{"label": v, "terms": {}} for v in vals]
            continue
        if label == "" and last_term is not None:
            for col, v in zip(cols, vals):
                if v:
                    col["terms"][last_term]["se"] = _parse_num(v.strip("()"))
            last_term = None
        elif label == "Observations":
            for col, v in zip(cols, vals):
                col["n"] = int(v.replace(",", ""))
        elif label == "Adjusted R2":
            for col, v in zip(cols, vals):
                col["adj_r2"] = _parse_num(v)
        elif label == "Residual Std. Error":
            for col, v in zip(cols, vals):
                m = _FOOT_DF.match(v)
                col["sigma"], col["df_resid"] = _parse_num(m["v"]), int(m["df"])
        elif label == "F Statistic":
            for col, v in zip(cols, vals):
                m = _F_DF.match(v)
                col["fvalue"], col["f_stars"] = _parse_num(m["v"]), m["s"]
                col["f_df1"], col["f_df2"] = int(m["d1"]), int(m["d2"])
        else:
            last_term = _label_term(label)
            for col, v in zip(cols, vals):
                if v:
                    m = _COEF.match(v)
                    col["terms"][last_term] = {"estimate": _parse_num(m["v"]), "stars": m["s"]}
    return cols


def regression_frame(results) -> pd.DataFrame:
    """Tidy rows: model, term, estimate, se, t, p, stars."""
    results = [results] if isinstance(results, RegressionResult) else list(results)
    return pd.concat([r.to_frame() for r in results], ignore_index=True)


def write_regression_csv(path, results) -> None:
    regression_frame(results).to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


def correlation_table(panel: pd.DataFrame, columns) -> pd.DataFrame:
    """Lower-triangular Pearson correlations; the upper triangle is NaN."""
    columns = list(columns)
    if len(panel) < 2:
        raise InsufficientRows("correlations need at least 2 rows")
    X = panel[columns].to_numpy(dtype=np.float64)
    sd = X.std(axis=0)
    for c, s in zip(columns, sd):
        if not s > 0:
            raise ZeroVariance(c)
    R = np.corrcoef(X, rowvar=False)
    np.fill_diagonal(R, 1.0)
    R[np.triu_indices(len(columns), 1)] = np.nan
    return pd.DataFrame(R, index=columns, columns=columns)
