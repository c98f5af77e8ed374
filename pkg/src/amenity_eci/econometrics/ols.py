"""Pooled OLS with classical and heteroskedasticity-consistent errors.

Coefficients come from a column-pivoted QR factorisation ``X P = Q R``.
With ``Q`` in hand, the HC sandwich reduces to::

    (X'X)^-1 X' diag(e^2) X (X'X)^-1 = R^-1 (Q' diag(e^2) Q) R^-T

(in pivoted order), which avoids forming ``X'X``. HC1 scales HC0 by
``n / (n - k)`` where ``k`` counts the intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg, stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from ..exceptions import InsufficientRows, RankDeficient
from .panel import drop_missing

SE_TYPES = ("HC1", "HC0", "classical")
INTERCEPT = "Intercept"
_RANK_TOL = 1e-10


def star_codes(p) -> str:
    """Significance marks: *** below 0.01, ** below 0.05, * below 0.1."""
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


@dataclass(frozen=True)
class RegressionResult:
    terms: tuple
    coef: np.ndarray
    se: np.ndarray
    tvalues: np.ndarray
    pvalues: np.ndarray
    n: int
    df_resid: int
    r2: float
    adj_r2: float
    sigma: float
    fvalue: float
    f_df1: int
    f_df2: int
    f_pvalue: float
    se_type: str = "HC1"
    dependent: str = "Y"
    name: str = ""
    residuals: np.ndarray | None = None
    cov: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.terms)

    @property
    def params(self) -> dict:
        return dict(zip(self.terms, (float(b) for b in self.coef)))

    @property
    def intercept(self) -> float:
        return self.params.get(INTERCEPT, 0.0)

    def stars(self) -> list[str]:
        return [star_codes(p) for p in self.pvalues]

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        q = stats.t.ppf(0.5 + level / 2, self.df_resid)
        return np.column_stack([self.coef - q * self.se, self.coef + q * self.se])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "model": self.name,
                "term": list(self.terms),
                "estimate": self.coef,
                "se": self.se,
                "t": self.tvalues,
                "p": self.pvalues,
                "stars": self.stars(),
            }
        )


def design_matrix(df: pd.DataFrame, terms, intercept: bool = True) -> tuple[np.ndarray, list[str]]:
    """Columns for ``terms``; ``"a:b"`` is the elementwise product of a and b."""
    cols, names = [], []
    if intercept:
        cols.append(np.ones(len(df)))
        names.append(INTERCEPT)
    for term in terms:
        v = np.ones(len(df))
        for part in term.split(":"):
            if part not in df.columns:
                raise KeyError(f"panel has no column {part!r} (term {term!r})")
            v = v * df[part].to_numpy(dtype=np.float64)
        cols.append(v)
        names.append(term)
    X = np.column_stack(cols) if cols else np.empty((len(df), 0))
    return X, names


def _covariances(Q, R, piv, e, n, k):
    """Classical, HC0 and HC1 covariances in original column order."""
    Rinv = linalg.solve_triangular(R, np.eye(k))
    bread = Rinv @ Rinv.T
    meat = (Q * (e**2)[:, None]).T @ Q
    hc0 = Rinv @ meat @ Rinv.T
    s2 = float(e @ e) / (n - k)
    inv = np.empty(k, dtype=np.intp)
    inv[piv] = np.arange(k)
    reorder = np.ix_(inv, inv)
    hc0 = hc0[reorder]
    return {"classical": s2 * bread[reorder], "HC0": hc0, "HC1": hc0 * (n / (n - k))}


def fit_ols(X, y, terms=None, se_type: str = "HC1", name: str = "", dependent: str = "Y") -> RegressionResult:
    """Least squares of ``y`` on ``X``.

    ``terms`` names the columns of ``X``; an ``Intercept`` column makes R^2
    centred and drops it from the F test. The F statistic is the classical
    one, ``(R^2 / p) / ((1 - R^2) / (n - p - 1))`` with ``p`` slope terms.
    """
    if se_type not in SE_TYPES:
        raise ValueError(f"se_type must be one of {SE_TYPES}; got {se_type!r}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"X must be 2-D with len(y) rows; got {X.shape} and {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    n, k = X.shape
    terms = tuple(terms) if terms is not None else tuple(f"x{j}" for j in range(k))
    if len(terms) != k:
        raise ValueError("terms must name every column of X")
    if n <= k:
        raise InsufficientRows(f"need more rows than parameters: n={n}, k={k}")

    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > _RANK_TOL * diag[0] * max(n, k)).sum()) if k else 0
    if rank < k:
        raise RankDeficient([terms[j] for j in piv[rank:]])

    beta_p = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(k)
    beta[piv] = beta_p
    e = y - X @ beta
    cov = _covariances(Q, R, piv, e, n, k)[se_type]
    se = np.sqrt(np.diag(cov))
    df_resid = n - k
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = beta / se
    pvals = 2 * stats.t.sf(np.abs(tvals), df_resid)

    ssr = float(e @ e)
    has_const = INTERCEPT in terms
    centre = y.mean() if has_const else 0.0
    sst = float(((y - centre) ** 2).sum())
    r2 = 1 - ssr / sst if sst > 0 else np.nan
    p = k - int(has_const)
    adj = 1 - (1 - r2) * (n - int(has_const)) / df_resid
    if p > 0 and r2 < 1:
        fval = (r2 / p) / ((1 - r2) / df_resid)
        f_p = float(stats.f.sf(fval, p, df_resid))
    elif p > 0:
        fval, f_p = np.inf, 0.0
    else:
        fval, f_p = np.nan, np.nan
    return RegressionResult(
        terms=terms,
        coef=beta,
        se=se,
        tvalues=tvals,
        pvalues=pvals,
        n=n,
        df_resid=df_resid,
        r2=float(r2),
        adj_r2=float(adj),
        sigma=float(np.sqrt(ssr / df_resid)),
        fvalue=float(fval),
        f_df1=p,
        f_df2=df_resid,
        f_pvalue=f_p,
        se_type=se_type,
        dependent=dependent,
        name=name,
        residuals=e,
        cov=cov,
    )


def fit_spec(panel: pd.DataFrame, spec) -> RegressionResult:
    """Fit a :class:`ModelSpec` on a panel frame (listwise deletion first)."""
    needed = {spec.dependent} | {p for t in spec.terms for p in t.split(":")}
    panel = drop_missing(panel, sorted(needed))
    X, names = design_matrix(panel, spec.terms)
    y = panel[spec.dependent].to_numpy(dtype=np.float64)
    return fit_ols(X, y, names, se_type=spec.robust_se, name=spec.name, dependent=spec.dependent)


class RobustOLS(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_ols`.

    Fitted attributes follow scikit-learn: ``coef_``, ``intercept_``,
    ``bse_`` (standard errors of ``coef_``), ``pvalues_`` and ``result_``.
    """

    def __init__(self, se_type="HC1", fit_intercept=True):
        self.se_type = se_type
        self.fit_intercept = fit_intercept

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        if self.fit_intercept:
            X = np.column_stack([np.ones(len(X)), X])
            names = [INTERCEPT] + names
        res = fit_ols(X, y, names, se_type=self.se_type)
        off = int(self.fit_intercept)
        self.result_ = res
        self.intercept_ = float(res.coef[0]) if off else 0.0
        self.coef_ = res.coef[off:]
        self.bse_ = res.se[off:]
        self.pvalues_ = res.pvalues[off:]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_ + self.intercept_
