import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from holm_witness import FAMILIES, witness
from mlekit.statkit import (
    FAMILY_COLUMNS,
    PairedSample,
    StatsInputError,
    ancova_interaction,
    bootstrap_ci,
    cohen_dz,
    compare_family,
    family_csv,
    holm_bonferroni,
    p_from_dz,
    pair_groups,
    paired_compare,
    read_long_table,
    shapiro_wilk,
)


def _t_oracle(d):
    """Two-sided one-sample t p-value via the regularised incomplete beta function."""
    n = len(d)
    m = sum(d) / n
    var = sum((x - m) ** 2 for x in d) / (n - 1)
    t = m / (var / n) ** 0.5
    nu = n - 1
    return float(special.betainc(nu / 2, 0.5, nu / (nu + t * t))), m, t


# --- normality gate


def test_shapiro_calibration():
    rng = np.random.default_rng(0)
    ps = np.array([shapiro_wilk(rng.normal(size=50)) for _ in range(400)])
    assert 0.92 < np.mean(ps > 0.05) < 0.98
    bimodal = np.concatenate([rng.normal(-3, 0.3, 25), rng.normal(3, 0.3, 25)])
    assert shapiro_wilk(bimodal) < 0.01
    with pytest.raises(StatsInputError):
        shapiro_wilk([1.0, 2.0])


# --- paired comparison


def test_identical_samples():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    r = paired_compare(PairedSample(a, a))
    assert r.delta_mu == 0 and r.d_z == 0 and r.p == 1.0


def test_paired_t_matches_closed_form():
    rng = np.random.default_rng(42)
    a = rng.normal(10, 2, 10)
    b = a + 0.8 + rng.normal(0, 1, 10)
    r = paired_compare(PairedSample(a, b))
    assert r.test == "paired_t"
    p, m, t = _t_oracle(list(b - a))
    assert abs(r.p - p) < 1e-10
    assert abs(r.delta_mu - m) < 1e-12
    assert abs(r.d_z - t / np.sqrt(10)) < 1e-12
    assert abs(p_from_dz(r.d_z, 10) - p) < 1e-10


def test_non_normal_uses_wilcoxon_and_bootstrap():
    rng = np.random.default_rng(1)
    a = rng.normal(size=30)
    d = np.concatenate([np.full(24, 0.1), np.full(6, 4.0)]) + rng.normal(0, 0.01, 30)
    r = paired_compare(PairedSample(a, a + d), seed=3)
    assert r.p_sw <= 0.05 and r.test == "wilcoxon"
    assert (r.ci_low, r.ci_high) == bootstrap_ci(d, seed=3)
    assert r.ci_low < d.mean() < r.ci_high


def test_bootstrap_reproducible():
    d = np.random.default_rng(5).exponential(size=15)
    assert bootstrap_ci(d, seed=9) == bootstrap_ci(d, seed=9)
    assert bootstrap_ci(d, seed=9) != bootstrap_ci(d, seed=10)


@given(st.integers(0, 10_000))
def test_paired_compare_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=12), rng.normal(0.3, 1.0, 12)
    f = paired_compare(PairedSample(a, b), seed=1)
    r = paired_compare(PairedSample(b, a), seed=1)
    assert r.delta_mu == pytest.approx(-f.delta_mu, abs=1e-12)
    assert r.d_z == pytest.approx(-f.d_z, abs=1e-12)
    assert r.p == pytest.approx(f.p, abs=1e-12) and r.test == f.test


def test_incomplete_pairs_dropped():
    s = PairedSample([1.0, np.nan, 3.0, 4.0, 5.0], [1.5, 2.0, np.inf, 4.2, 5.9], labels=list("abcde"))
    assert s.n == 3 and s.labels == ("a", "d", "e")
    with pytest.raises(StatsInputError):
        PairedSample([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(StatsInputError):
        PairedSample([1.0, 2.0, 3.0], [1.0, 2.0])


def test_cohen_dz_zero_spread():
    assert cohen_dz([0.5, 0.5, 0.5]) == 0.0


# --- multiplicity


def test_holm_examples():
    assert holm_bonferroni([0.03]).tolist() == [0.03]
    assert np.allclose(holm_bonferroni([0.01, 0.04]), [0.02, 0.04])
    assert np.allclose(holm_bonferroni([0.04, 0.01]), [0.04, 0.02])
    assert np.allclose(holm_bonferroni([0.3, 0.6, 0.9]), [0.9, 1.0, 1.0])
    with pytest.raises(StatsInputError):
        holm_bonferroni([0.2, 1.2])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_holm_properties(p):
    adj = holm_bonferroni(p)
    p = np.asarray(p)
    assert np.all(adj >= p) and np.all(adj <= 1)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_holm_reproduces_printed_families(family):
    _, raw, adj = zip(*FAMILIES[family])
    w = witness(raw, adj)
    assert w is not None
    assert np.all(np.abs(w - np.asarray(raw)) < 5e-4)
    assert np.round(holm_bonferroni(w), 3).tolist() == list(adj)


def test_holm_on_printed_rounded_hue_column():
    # printed inputs are rounded; 7 x 0.001 cannot reach 0.008, the mid ranks agree exactly
    _, raw, adj = zip(*FAMILIES["wle_hue"])
    got = np.round(holm_bonferroni(raw), 3)
    assert got[5] == 0.025 and got[3] == 0.128
    assert got[2] == 0.007


# --- ANCOVA


def _sweep(slopes, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    v = np.tile(np.round(np.arange(0.4, 2.21, 0.2), 2), len(slopes))
    g = np.repeat(np.arange(len(slopes)), 10)
    y = 0.9 - np.asarray(slopes)[g] * v + 0.01 * g + noise * rng.normal(size=v.size)
    return y, v, g


def test_ancova_parallel_slopes():
    y, v, g = _sweep([0.05] * 6)
    # residual noise orthogonal to the interaction model leaves F exactly zero
    full = np.column_stack([np.ones_like(v), v] + [(g == k) * 1.0 for k in range(1, 6)]
                           + [(g == k) * v for k in range(1, 6)])
    e = np.random.default_rng(3).normal(0, 0.01, v.size)
    e -= full @ np.linalg.lstsq(full, e, rcond=None)[0]
    r = ancova_interaction(y + e, v, g)
    assert (r.df_num, r.df_den) == (5, 48)
    assert r.p > 0.5


def test_ancova_divergent_slopes():
    y, v, g = _sweep([0.02, 0.05, 0.08, 0.11, 0.14, 0.17], noise=0.005, seed=1)
    r = ancova_interaction(y, v, g)
    assert r.p < 1e-6 and r.f > 50 and r.r2 > 0.9


def test_ancova_validation():
    with pytest.raises(StatsInputError):
        ancova_interaction([1.0, 2.0], [1.0], [0, 1])
    with pytest.raises(StatsInputError):
        ancova_interaction(np.ones(4), np.arange(4.0), np.array([0, 0, 1, 1]))


# --- tables


TABLE = """sample_id,group,value
s1,wle_hue,0.10
s2,wle_hue,0.12
s3,wle_hue,0.09
s4,wle_hue,0.11
s5,wle_hue,0.13
s1,se_hue,0.25
s2,se_hue,0.28
s3,se_hue,0.22
s4,se_hue,0.27
s6,se_hue,0.30
s1,height,0.15
s2,height,0.18
s3,height,0.13
s4,height,0.16
s5,height,0.19
"""


def test_pairing_and_family_csv():
    table = read_long_table(TABLE)
    s = pair_groups(table, "wle_hue", "se_hue")
    assert s.labels == ("s1", "s2", "s3", "s4")
    rows = compare_family(table, "wle_hue", ["se_hue", "height"])
    assert [r["n"] for r in rows] == [4, 5]
    assert np.allclose([r["p_adj"] for r in rows], holm_bonferroni([r["p_raw"] for r in rows]))
    text = family_csv(rows)
    assert text.splitlines()[0] == ",".join(FAMILY_COLUMNS)
    assert len(text.splitlines()) == 3
    with pytest.raises(StatsInputError):
        pair_groups(table, "wle_hue", "missing")
    with pytest.raises(StatsInputError):
        read_long_table("sample_id,group,value\ns1,a,x\n")
