"""Paired comparisons with normality gating, Holm correction and ANCOVA."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

N_BOOT = 10_000


class StatsInputError(ValueError):
    pass


@dataclass
class PairedSample:
    a: np.ndarray
    b: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise StatsInputError("paired samples must be 1-D and equal length")
        keep = np.isfinite(a) & np.isfinite(b)
        labels = tuple(self.labels) or tuple(range(len(a)))
        if len(labels) != len(a):
            raise StatsInputError("one label per pair")
        self.a, self.b = a[keep], b[keep]
        self.labels = tuple(l for l, k in zip(labels, keep) if k)
        if len(self.a) < 3:
            raise StatsInputError("at least 3 complete pairs are required")

    @property
    def differences(self) -> np.ndarray:
        return self.b - self.a

    @property
    def n(self) -> int:
        return len(self.a)


@dataclass
class PairedResult:
    n: int
    delta_mu: float
    ci_low: float
    ci_high: float
    p_sw: float
    test: str
    p: float
    d_z: float


def shapiro_wilk(d) -> float:
    d = np.asarray(d, dtype=np.float64)
    if d.size < 3:
        raise StatsInputError("Shapiro-Wilk needs n >= 3")
    if np.ptp(d) == 0:
        return 1.0
    return float(stats.shapiro(d).pvalue)


def cohen_dz(d) -> float:
    d = np.asarray(d, dtype=np.float64)
    sd = d.std(ddof=1)
    return 0.0 if sd == 0 else float(d.mean() / sd)


def paired_t(d, alpha: float = 0.05) -> tuple[float, float, float]:
    """Two-sided one-sample t on differences: (p, ci_low, ci_high)."""
    d = np.asarray(d, dtype=np.float64)
    n = d.size
    m = d.mean()
    se = d.std(ddof=1) / np.sqrt(n)
    if se == 0:
        return (1.0 if m == 0 else 0.0), float(m), float(m)
    t = m / se
    p = 2 * stats.t.sf(abs(t), n - 1)
    half = stats.t.ppf(1 - alpha / 2, n - 1) * se
    return float(p), float(m - half), float(m + half)


def wilcoxon_p(d) -> float:
    """Signed-rank p; zero differences dropped, exact for n <= 25 else normal with continuity."""
    d = np.asarray(d, dtype=np.float64)
    nz = d[d != 0]
    if nz.size == 0:
        return 1.0
    method = "exact" if nz.size <= 25 else "approx"
    return float(stats.wilcoxon(nz, zero_method="wilcox", correction=True, method=method).pvalue)


def bootstrap_ci(d, n_boot: int = N_BOOT, alpha: float = 0.05, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean difference."""
    d = np.asarray(d, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d.size, size=(n_boot, d.size))
    means = d[idx].mean(axis=1)
    lo, hi = np.percentile(means, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def paired_compare(s: PairedSample, alpha: float = 0.05, seed: int = 0, n_boot: int = N_BOOT) -> PairedResult:
    """Mean paired difference (b - a) with a test chosen by Shapiro-Wilk on the differences."""
    d = s.differences
    p_sw = shapiro_wilk(d)
    dz = cohen_dz(d)
    if p_sw > alpha:
        p, lo, hi = paired_t(d, alpha)
        test = "paired_t"
    else:
        p = wilcoxon_p(d)
        lo, hi = bootstrap_ci(d, n_boot, alpha, seed)
        test = "wilcoxon"
    return PairedResult(s.n, float(d.mean()), lo, hi, p_sw, test, p, dz)


def holm_bonferroni(pvalues: Sequence[float]) -> np.ndarray:
    """Step-down Holm adjustment in the original order, monotone and capped at 1."""
    p = np.asarray(pvalues, dtype=np.float64)
    if p.ndim != 1 or np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise StatsInputError("p-values must be finite and within [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = (m - np.arange(m)) * p[order]
    adj = np.empty(m)
    adj[order] = np.minimum(np.maximum.accumulate(scaled), 1.0)
    return adj


def p_from_dz(d_z: float, n: int) -> float:
    """Two-sided paired t p-value implied by an effect size and sample count."""
    return float(2 * stats.t.sf(abs(d_z) * np.sqrt(n), n - 1))


@dataclass
class AncovaResult:
    f: float
    df_num: int
    df_den: int
    p: float
    r2: float


def _design(x: np.ndarray, groups: np.ndarray, interaction: bool) -> np.ndarray:
    levels = np.unique(groups)
    cols = [np.ones_like(x), x]
    for g in levels[1:]:
        ind = (groups == g).astype(np.float64)
        cols.append(ind)
        if interaction:
            cols.append(ind * x)
    return np.column_stack(cols)


def ancova_interaction(y, covariate, groups) -> AncovaResult:
    """F-test of the covariate x group interaction block (categorical groups).

    Full model: intercept, covariate, group dummies and covariate x dummy
    terms; reduced model drops the interaction terms.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(covariate, dtype=np.float64)
    g = np.asarray(groups)
    if not (y.shape == x.shape == g.shape) or y.ndim != 1:
        raise StatsInputError("y, covariate and groups must be 1-D and equal length")
    full = _design(x, g, True)
    red = _design(x, g, False)
    if y.size <= full.shape[1]:
        raise StatsInputError("not enough observations for the interaction model")

    def rss(X):
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ beta
        return float(r @ r)

    rss_f, rss_r = rss(full), rss(red)
    df_num = full.shape[1] - red.shape[1]
    df_den = y.size - full.shape[1]
    f = ((rss_r - rss_f) / df_num) / (rss_f / df_den) if rss_f > 0 else np.inf
    p = float(stats.f.sf(f, df_num, df_den)) if np.isfinite(f) else 0.0
    r2 = 1.0 - rss_f / float(((y - y.mean()) ** 2).sum())
    return AncovaResult(float(f), df_num, df_den, p, r2)


# ------------------------------------------------------------------ tables


def read_long_table(path_or_text) -> dict:
    """``sample_id,group,value`` CSV to {group: {sample_id: value}}."""
    if "\n" in str(path_or_text):
        text = str(path_or_text)
    else:
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    out: dict = {}
    for row in csv.DictReader(text.splitlines()):
        try:
            val = float(row["value"])
        except (KeyError, ValueError):
            raise StatsInputError(f"bad row {row}") from None
        out.setdefault(row["group"], {})[row["sample_id"]] = val
    return out


def pair_groups(table: dict, baseline: str, comparison: str) -> PairedSample:
    """Keep only samples measured in both groups."""
    for g in (baseline, comparison):
        if g not in table:
            raise StatsInputError(f"group {g!r} missing from table")
    ids = sorted(set(table[baseline]) & set(table[comparison]))
    return PairedSample([table[baseline][i] for i in ids], [table[comparison][i] for i in ids], tuple(ids))


FAMILY_COLUMNS = ("baseline", "comparison", "n", "delta_mu", "ci_low", "ci_high", "p_sw", "test", "p_raw", "p_adj", "d_z")


def compare_family(table: dict, baseline: str, comparisons: Sequence[str], seed: int = 0) -> list[dict]:
    """Paired comparisons against one baseline, Holm-adjusted within the family."""
    rows = []
    for c in comparisons:
        r = paired_compare(pair_groups(table, baseline, c), seed=seed)
        rows.append({"baseline": baseline, "comparison": c, **{k: v for k, v in asdict(r).items() if k != "p"},
                     "p_raw": r.p})
    adj = holm_bonferroni([r["p_raw"] for r in rows]) if rows else []
    for r, a in zip(rows, adj):
        r["p_adj"] = float(a)
    return rows


def family_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FAMILY_COLUMNS)
    for r in rows:
        w.writerow([
            r["baseline"], r["comparison"], r["n"], f"{r['delta_mu']:.5f}", f"{r['ci_low']:.3f}",
            f"{r['ci_high']:.3f}", f"{r['p_sw']:.3f}", r["test"], f"{r['p_raw']:.3g}", f"{r['p_adj']:.3f}",
            f"{r['d_z']:.3f}",
        ])
    return buf.getvalue()
