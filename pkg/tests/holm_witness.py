"""Raw p-value witnesses for Holm tables published at 3 decimals."""

import numpy as np
from scipy.optimize import linprog

HALF = 5e-4
MARGIN = 1e-6  # keep the witness strictly inside every rounding interval

# WLE Hue and WLE Saturation families: (comparison, p_raw, p_adj) as printed
FAMILIES = {
    "wle_hue": [
        ("nbi_hue", 0.516, 1.000), ("nbi_sat", 0.653, 1.000), ("se_hue", 0.001, 0.008),
        ("se_sat", 0.032, 0.128), ("height", 0.001, 0.009), ("flow", 0.005, 0.025),
        ("sto2", 0.072, 0.216),
    ],
    "wle_sat": [
        ("nbi_hue", 0.018, 0.088), ("nbi_sat", 0.247, 0.969), ("se_hue", 0.003, 0.017),
        ("se_sat", 0.242, 0.969), ("height", 0.001, 0.006), ("flow", 0.463, 0.969),
        ("sto2", 0.557, 0.969),
    ],
}


def witness(raw, adj):
    """Unrounded p-values inside the printed raw intervals whose step-down
    adjustment rounds to the printed adjusted column, or None.

    The sort order is fixed by (raw, adj). For that order the step-down map is
    a running maximum of (m - k) p_(k), so membership of every adjusted value in
    its rounding interval is a set of linear inequalities.
    """
    raw, adj = np.asarray(raw, float), np.asarray(adj, float)
    m = raw.size
    order = np.lexsort((adj, raw))
    A, b = [], []

    def row(coeffs):
        r = np.zeros(m)
        for i, c in coeffs:
            r[i] += c
        return r

    for k in range(1, m):
        A.append(row([(order[k - 1], 1.0), (order[k], -1.0)]))
        b.append(0.0)
    for k in range(m):
        a_k = adj[order[k]]
        if a_k < 1.0:
            for j in range(k + 1):
                A.append(row([(order[j], m - j)]))
                b.append(a_k + HALF - MARGIN)
        if k == 0 or a_k > adj[order[k - 1]]:
            A.append(row([(order[k], -(m - k))]))
            b.append(-(a_k - HALF + MARGIN))
    bounds = [(r - HALF + MARGIN, r + HALF - MARGIN) for r in raw]
    res = linprog(np.zeros(m), A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    return res.x if res.status == 0 else None
