"""Cluster-by-industry matrices and the economic complexity index.

``eci_reflections`` runs the method of reflections on a binary matrix
``M`` (clusters x industries)::

    k_c,0 = sum_i M_ci               k_i,0 = sum_c M_ci
    k_c,n = (1 / k_c,0) sum_i M_ci k_i,n-1
    k_i,n = (1 / k_i,0) sum_c M_ci k_c,n-1

Each iterate is demeaned and scaled before the next step. Without this, the
ranking signal shrinks geometrically toward the constant vector. Iteration
stops once the Spearman correlation between cluster scores at ``n`` and
``n - 2`` (same parity) reaches ``1 - tol``. ``eci_eigen`` is the spectral
equivalent and serves as a cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import spearmanr
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_matrix, check_counts_matrix
from .exceptions import AllPruned, DataWarning, DegenerateVariance, NonConverged

_VAR_EPS = 1e-12


@dataclass(frozen=True)
class ClusterIndustryMatrix:
    counts: np.ndarray
    cluster_ids: tuple
    industries: tuple
    binary: np.ndarray | None = None
    binarization: str | None = None


@dataclass(frozen=True)
class ComplexityScores:
    cluster_ids: tuple
    industries: tuple
    eci_raw: np.ndarray
    industry_complexity: np.ndarray
    diversity: np.ndarray
    ubiquity: np.ndarray
    iterations_used: int
    converged: bool = True
    eci_rescaled: np.ndarray | None = None
    excluded_clusters: tuple = ()
    excluded_industries: tuple = ()
    method: str = "reflections"

    def as_dict(self, attr="eci_raw") -> dict:
        return dict(zip(self.cluster_ids, (float(v) for v in getattr(self, attr))))


# -- matrix construction ---------------------------------------------------


def build_matrix(clusters, stores, level: int = 2) -> ClusterIndustryMatrix:
    """Count member stores per (cluster, industry code at ``level``)."""
    by_id = {s.store_id: s for s in stores}
    rows = []
    kept = []
    for c in clusters:
        members = [by_id[m] for m in c.member_ids if m in by_id]
        if not members:
            warnings.warn(f"cluster {c.cluster_id} has no members; skipped", DataWarning, stacklevel=2)
            continue
        kept.append(c.cluster_id)
        rows.append([m.industry(level) for m in members])
    industries = tuple(sorted({code for r in rows for code in r}))
    col = {code: k for k, code in enumerate(industries)}
    counts = np.zeros((len(rows), len(industries)), dtype=np.int64)
    for k, r in enumerate(rows):
        for code in r:
            counts[k, col[code]] += 1
    return ClusterIndustryMatrix(counts, tuple(kept), industries)


def rca(counts) -> np.ndarray:
    """Revealed comparative advantage (share of row over share of total)."""
    X = np.asarray(counts, dtype=np.float64)
    row = X.sum(axis=1, keepdims=True)
    colsum = X.sum(axis=0, keepdims=True)
    total = X.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        R = (X / row) / (colsum / total)
    return np.nan_to_num(R, nan=0.0, posinf=0.0)


def prune(M):
    """Drop all-zero rows and columns until none remain.

    Returns ``(M_pruned, row_mask, col_mask)`` with masks over the input.
    """
    M = np.asarray(M)
    rows = np.ones(M.shape[0], dtype=bool)
    cols = np.ones(M.shape[1], dtype=bool)
    while True:
        sub = M[np.ix_(rows, cols)]
        r = sub.sum(axis=1) > 0
        c = sub.sum(axis=0) > 0
        if r.all() and c.all():
            break
        rows[np.flatnonzero(rows)[~r]] = False
        cols[np.flatnonzero(cols)[~c]] = False
    return M[np.ix_(rows, cols)], rows, cols


def binarize(matrix, mode: str = "rca", threshold: float = 1.0):
    """Binary presence matrix, with empty rows and columns pruned.

    ``matrix`` is a :class:`ClusterIndustryMatrix` (returns a new one with
    pruned labels) or a plain counts array (returns ``(M, row_mask,
    col_mask)``).
    """
    labelled = isinstance(matrix, ClusterIndustryMatrix)
    counts = check_counts_matrix(matrix.counts if labelled else matrix)
    if mode == "presence":
        B = (counts > 0).astype(np.int64)
    elif mode == "rca":
        B = ((rca(counts) >= threshold) & (counts > 0)).astype(np.int64)
    else:
        raise ValueError(f"unknown binarization mode {mode!r}")
    M, rows, cols = prune(B)
    if M.size == 0:
        raise AllPruned("binarization left no non-empty rows/columns")
    if not labelled:
        return M, rows, cols
    return ClusterIndustryMatrix(
        counts=matrix.counts[np.ix_(rows, cols)],
        cluster_ids=tuple(np.asarray(matrix.cluster_ids, dtype=object)[rows]),
        industries=tuple(np.asarray(matrix.industries, dtype=object)[cols]),
        binary=M,
        binarization=mode if mode == "presence" else f"rca({threshold:g})",
    )


def diversity(M) -> np.ndarray:
    return np.asarray(M).sum(axis=1).astype(np.int64)


def ubiquity(M) -> np.ndarray:
    return np.asarray(M).sum(axis=0).astype(np.int64)


def largest_component(M):
    """Row/column masks of the largest connected bipartite component.

    Ties go to the component containing the lowest row index.
    """
    n_c, n_i = M.shape
    A = csr_matrix(np.block([[np.zeros((n_c, n_c)), M], [M.T, np.zeros((n_i, n_i))]]))
    n_comp, lab = connected_components(A, directed=False)
    if n_comp == 1:
        return np.ones(n_c, dtype=bool), np.ones(n_i, dtype=bool)
    sizes = np.bincount(lab, minlength=n_comp)
    first_row = np.full(n_comp, n_c + n_i)
    for k in range(n_c - 1, -1, -1):
        first_row[lab[k]] = k
    best = min(range(n_comp), key=lambda c: (-sizes[c], first_row[c]))
    return lab[:n_c] == best, lab[n_c:] == best


def _standardize(v):
    v = np.asarray(v, dtype=np.float64)
    v = v - v.mean()
    sd = v.std()
    if sd <= _VAR_EPS * max(1.0, np.abs(v).max()):
        return np.zeros_like(v), False
    return v / sd, True


def _orient(v, reference):
    if np.std(reference) == 0:
        return v
    r = np.corrcoef(v, reference)[0, 1]
    return -v if r < 0 else v


def _restrict(M):
    M = check_binary_matrix(M)
    M, rows, cols = prune(M)
    if M.size == 0:
        raise AllPruned("matrix has no non-empty rows/columns")
    r2, c2 = largest_component(M)
    row_mask = np.zeros(len(rows), dtype=bool)
    row_mask[np.flatnonzero(rows)[r2]] = True
    col_mask = np.zeros(len(cols), dtype=bool)
    col_mask[np.flatnonzero(cols)[c2]] = True
    return M[np.ix_(r2, c2)], row_mask, col_mask


def _ranks(v):
    # rounding keeps float noise from reordering exact ties
    return np.round(v, 10)


def eci_reflections(M, max_iter: int = 50, tol: float = 1e-9, cluster_ids=None, industries=None) -> ComplexityScores:
    """Economic complexity by the method of reflections.

    Rows/columns outside the largest connected component are excluded and
    listed in ``excluded_clusters`` / ``excluded_industries``. Raises
    :class:`DegenerateVariance` when the cluster scores cannot be separated;
    warns with :class:`NonConverged` when ``max_iter`` is reached.
    """
    M_full = check_binary_matrix(M)
    cluster_ids = tuple(range(M_full.shape[0])) if cluster_ids is None else tuple(cluster_ids)
    industries = tuple(range(M_full.shape[1])) if industries is None else tuple(industries)
    Mc, rows, cols = _restrict(M_full)
    Mf = Mc.astype(np.float64)
    kc0 = Mf.sum(axis=1)
    ki0 = Mf.sum(axis=0)

    kc_hist = [kc0]
    kc, ki = kc0, ki0
    converged = False
    n = 0
    for n in range(1, max_iter + 1):
        kc_next = (Mf @ ki) / kc0
        ki_next = (Mf.T @ kc) / ki0
        kc, _ = _standardize(kc_next)
        ki, _ = _standardize(ki_next)
        kc_hist.append(kc)
        if n >= 2:
            a, b = _ranks(kc_hist[n]), _ranks(kc_hist[n - 2])
            if np.ptp(a) == 0 and np.ptp(b) == 0:
                converged = True
                break
            if np.ptp(a) > 0 and np.ptp(b) > 0:
                rho = spearmanr(a, b)[0] if len(a) > 2 else float(np.sign(np.corrcoef(a, b)[0, 1]))
                if rho >= 1.0 - tol:
                    converged = True
                    break

    eci, ok = _standardize(kc)
    if not ok:
        raise DegenerateVariance("all cluster scores are equal")
    eci = _orient(eci, kc0)
    pci, _ = _standardize(ki)
    pci = _orient(pci, (Mf.T @ eci) / ki0)
    if not converged:
        warnings.warn(f"method of reflections did not converge in {max_iter} iterations", NonConverged, stacklevel=2)
    return ComplexityScores(
        cluster_ids=tuple(np.asarray(cluster_ids, dtype=object)[rows]),
        industries=tuple(np.asarray(industries, dtype=object)[cols]),
        eci_raw=eci,
        industry_complexity=pci,
        diversity=kc0.astype(np.int64),
        ubiquity=ki0.astype(np.int64),
        iterations_used=n,
        converged=converged,
        excluded_clusters=tuple(np.asarray(cluster_ids, dtype=object)[~rows]),
        excluded_industries=tuple(np.asarray(industries, dtype=object)[~cols]),
    )


def eci_eigen(M, cluster_ids=None, industries=None) -> ComplexityScores:
    """ECI as the second eigenvector of ``D^-1 M U^-1 M^T``.

    Solved through the symmetric matrix ``D^-1/2 M U^-1 M^T D^-1/2``.
    """
    M_full = check_binary_matrix(M)
    cluster_ids = tuple(range(M_full.shape[0])) if cluster_ids is None else tuple(cluster_ids)
    industries = tuple(range(M_full.shape[1])) if industries is None else tuple(industries)
    Mc, rows, cols = _restrict(M_full)
    Mf = Mc.astype(np.float64)
    kc0 = Mf.sum(axis=1)
    ki0 = Mf.sum(axis=0)
    if len(kc0) < 2:
        raise DegenerateVariance("need at least two clusters")
    S = (Mf / ki0) @ Mf.T
    d = 1.0 / np.sqrt(kc0)
    B = d[:, None] * S * d[None, :]
    w, V = np.linalg.eigh(B)
    if w[-2] <= 1e-10:
        raise DegenerateVariance("similarity matrix has rank one")
    v = d * V[:, -2]
    # identical rows share a score; eigh only gets them equal to rounding
    _, grp = np.unique(Mc, axis=0, return_inverse=True)
    grp = grp.ravel()
    v = (np.bincount(grp, weights=v) / np.bincount(grp))[grp]
    eci, ok = _standardize(v)
    if not ok:
        raise DegenerateVariance("second eigenvector is constant")
    eci = _orient(eci, kc0)
    pci, _ = _standardize((Mf.T @ eci) / ki0)
    return ComplexityScores(
        cluster_ids=tuple(np.asarray(cluster_ids, dtype=object)[rows]),
        industries=tuple(np.asarray(industries, dtype=object)[cols]),
        eci_raw=eci,
        industry_complexity=pci,
        diversity=kc0.astype(np.int64),
        ubiquity=ki0.astype(np.int64),
        iterations_used=0,
        excluded_clusters=tuple(np.asarray(cluster_ids, dtype=object)[~rows]),
        excluded_industries=tuple(np.asarray(industries, dtype=object)[~cols]),
        method="eigen",
    )


def rescale(scores, lo: float = 0.0, hi: float = 100.0) -> np.ndarray:
    """Min-max map of ``scores`` onto ``[lo, hi]`` (basis = the input set)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size < 2 or s.max() == s.min():
        raise DegenerateVariance("rescaling needs at least two distinct scores")
    out = lo + (hi - lo) * (s - s.min()) / (s.max() - s.min())
    out[s == s.min()] = lo
    out[s == s.max()] = hi
    return out


def with_rescaled(scores: ComplexityScores) -> ComplexityScores:
    return replace(scores, eci_rescaled=rescale(scores.eci_raw))


COMPLEXITY_COLUMNS = ("cluster_id", "year", "eci_raw", "eci_rescaled", "diversity", "n_shops")


def score_matrix(matrix: ClusterIndustryMatrix, method="reflections", max_iter=50, tol=1e-9) -> ComplexityScores:
    if method == "reflections":
        return eci_reflections(matrix.binary, max_iter, tol, matrix.cluster_ids, matrix.industries)
    if method == "eigen":
        return eci_eigen(matrix.binary, matrix.cluster_ids, matrix.industries)
    raise ValueError(f"unknown method {method!r}")


def complexity_table(
    clusters_by_year: dict,
    stores_by_year: dict,
    binarization="rca",
    threshold=1.0,
    method="reflections",
    basis="year",
    level=2,
    max_iter=50,
    tol=1e-9,
) -> tuple[pd.DataFrame, dict]:
    """Scores for every cluster and year.

    ``basis`` is ``"year"`` (rescale within each year) or ``"pooled"``
    (one min-max map over all years). Clusters outside the scored component
    keep a row with NaN scores. Returns ``(frame, metadata)``.
    """
    if basis not in ("year", "pooled"):
        raise ValueError("basis must be 'year' or 'pooled'")
    frames, meta = [], {"binarization": None, "method": method, "basis": basis, "level": level, "years": {}}
    for year in sorted(clusters_by_year):
        clusters = clusters_by_year[year]
        raw = build_matrix(clusters, stores_by_year[year], level)
        mat = binarize(raw, binarization, threshold)
        sc = score_matrix(mat, method, max_iter, tol)
        meta["binarization"] = mat.binarization
        meta["years"][str(year)] = {
            "iterations_used": int(sc.iterations_used),
            "converged": bool(sc.converged),
            "n_scored": len(sc.cluster_ids),
            "excluded_clusters": [int(c) for c in sc.excluded_clusters],
            "excluded_industries": [str(i) for i in sc.excluded_industries],
        }
        div = dict(zip(mat.cluster_ids, diversity(mat.binary)))
        eci = dict(zip(sc.cluster_ids, sc.eci_raw))
        frames.append(
            pd.DataFrame(
                {
                    "cluster_id": [c.cluster_id for c in clusters],
                    "year": year,
                    "eci_raw": [eci.get(c.cluster_id, np.nan) for c in clusters],
                    "diversity": [int(div.get(c.cluster_id, 0)) for c in clusters],
                    "n_shops": [c.n_stores for c in clusters],
                }
            )
        )
    df = pd.concat(frames, ignore_index=True).sort_values(["year", "cluster_id"], kind="stable")
    df["eci_rescaled"] = np.nan
    groups = [df.index] if basis == "pooled" else [g.index for _, g in df.groupby("year")]
    for idx in groups:
        ok = idx[df.loc[idx, "eci_raw"].notna().to_numpy()]
        df.loc[ok, "eci_rescaled"] = rescale(df.loc[ok, "eci_raw"].to_numpy())
    return df[list(COMPLEXITY_COLUMNS)].reset_index(drop=True), meta


class EconomicComplexity(TransformerMixin, BaseEstimator):
    """Estimator interface over a clusters x industries count matrix.

    ``fit`` binarizes, restricts to the largest connected component, and
    scores clusters. Rows outside the scored set get NaN in ``eci_``.
    ``transform`` scores new count rows as the mean industry complexity of
    the industries they are active in (RCA against the fitted column
    shares), i.e. one reflection step from the fitted ``pci_``.
    """

    def __init__(self, binarization="rca", threshold=1.0, method="reflections", max_iter=50, tol=1e-9):
        self.binarization = binarization
        self.threshold = threshold
        self.method = method
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        counts = check_counts_matrix(X)
        M, rows, cols = binarize(counts, self.binarization, self.threshold)
        if self.method == "reflections":
            sc = eci_reflections(M, self.max_iter, self.tol)
        elif self.method == "eigen":
            sc = eci_eigen(M)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        row_pos = np.flatnonzero(rows)[list(sc.cluster_ids)]
        col_pos = np.flatnonzero(cols)[list(sc.industries)]
        self.eci_ = np.full(counts.shape[0], np.nan)
        self.eci_[row_pos] = sc.eci_raw
        self.pci_ = np.full(counts.shape[1], np.nan)
        self.pci_[col_pos] = sc.industry_complexity
        self.diversity_ = np.zeros(counts.shape[0], dtype=np.int64)
        self.diversity_[row_pos] = sc.diversity
        self.ubiquity_ = np.zeros(counts.shape[1], dtype=np.int64)
        self.ubiquity_[col_pos] = sc.ubiquity
        self.iterations_ = sc.iterations_used
        self.converged_ = sc.converged
        self.scores_ = sc
        self.col_share_ = counts.sum(axis=0) / counts.sum()
        self.n_features_in_ = counts.shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).eci_

    def transform(self, X):
        check_is_fitted(self, "pci_")
        counts = check_counts_matrix(X)
        if self.binarization == "presence":
            B = counts > 0
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                share = counts / counts.sum(axis=1, keepdims=True)
                B = (share / self.col_share_ >= self.threshold) & (counts > 0)
        B = B & ~np.isnan(self.pci_)[None, :]
        k = B.sum(axis=1)
        with np.errstate(invalid="ignore"):
            return np.where(k > 0, (B * np.nan_to_num(self.pci_)).sum(axis=1) / np.maximum(k, 1), np.nan)
