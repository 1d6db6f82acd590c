"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``.

The NNLS routine here deliberately uses a different algorithm from the
compiled one (exhaustive active-set enumeration instead of Lawson-Hanson),
so the two paths cross-check each other in the test suite.
"""

from itertools import combinations

import numpy as np
from scipy.ndimage import uniform_filter


def nnls_gram(G, H, tol=1e-12):
    G = np.ascontiguousarray(G, dtype=np.float64)
    H = np.ascontiguousarray(H, dtype=np.float64)
    n = G.shape[0]
    npix = H.shape[0]
    best = np.zeros((npix, n))
    best_obj = np.zeros(npix)  # objective of x = 0
    found = np.zeros(npix, dtype=bool)
    for m in range(1, n + 1):
        for subset in combinations(range(n), m):
            idx = list(subset)
            try:
                Z = np.linalg.solve(G[np.ix_(idx, idx)], H[:, idx].T).T
            except np.linalg.LinAlgError:
                continue
            X = np.zeros((npix, n))
            X[:, idx] = Z
            obj = 0.5 * np.einsum("pi,ij,pj->p", X, G, X) - np.einsum("pi,pi->p", H, X)
            ok = (Z >= 0).all(axis=1) & (obj < best_obj)
            best[ok] = X[ok]
            best_obj[ok] = obj[ok]
            found |= ok
    return best


def local_contrast(img, window):
    img = np.asarray(img, dtype=np.float64)
    shift = img.mean()
    c = img - shift
    m1 = uniform_filter(c, size=window, mode="nearest")
    m2 = uniform_filter(c * c, size=window, mode="nearest")
    var = np.maximum(m2 - m1 * m1, 0.0)
    return m1 + shift, np.sqrt(var)


def ciede2000(lab1, lab2):
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[:, 0], lab1[:, 1], lab1[:, 2]
    L2, a2, b2 = lab2[:, 0], lab2[:, 1], lab2[:, 2]
    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    Cb7 = ((C1 + C2) / 2) ** 7
    G = 0.5 * (1 - np.sqrt(Cb7 / (Cb7 + 25.0**7)))
    a1p = (1 + G) * a1
    a2p = (1 + G) * a2
    C1p = np.hypot(a1p, b1)
    C2p = np.hypot(a2p, b2)

    def hue(b, a):
        h = np.degrees(np.arctan2(b, a))
        h = np.where(h < 0, h + 360.0, h)
        return np.where((a == 0) & (b == 0), 0.0, h)

    h1p = hue(b1, a1p)
    h2p = hue(b2, a2p)
    dLp = L2 - L1
    dCp = C2p - C1p
    diff = h2p - h1p
    # hue differences within 1e-9 deg of 180 are treated as exactly 180
    near = np.abs(np.abs(diff) - 180.0) < 1e-9
    diff = np.where(near, np.where(diff > 0, 180.0, -180.0), diff)
    zero = C1p * C2p == 0
    dhp = np.where(diff > 180, diff - 360, np.where(diff < -180, diff + 360, diff))
    dhp = np.where(zero, 0.0, dhp)
    dHp = 2 * np.sqrt(C1p * C2p) * np.sin(np.radians(dhp) / 2)
    Lbp = (L1 + L2) / 2
    Cbp = (C1p + C2p) / 2
    s = h1p + h2p
    hbp = np.where(
        np.abs(diff) <= 180, s / 2, np.where(s < 360, (s + 360) / 2, (s - 360) / 2)
    )
    hbp = np.where(zero, s, hbp)
    T = (
        1
        - 0.17 * np.cos(np.radians(hbp - 30))
        + 0.24 * np.cos(np.radians(2 * hbp))
        + 0.32 * np.cos(np.radians(3 * hbp + 6))
        - 0.20 * np.cos(np.radians(4 * hbp - 63))
    )
    dtheta = 30 * np.exp(-(((hbp - 275) / 25) ** 2))
    Cbp7 = Cbp**7
    Rc = 2 * np.sqrt(Cbp7 / (Cbp7 + 25.0**7))
    lb = (Lbp - 50) ** 2
    Sl = 1 + 0.015 * lb / np.sqrt(20 + lb)
    Sc = 1 + 0.045 * Cbp
    Sh = 1 + 0.015 * Cbp * T
    Rt = -np.sin(np.radians(2 * dtheta)) * Rc
    tl, tc, th = dLp / Sl, dCp / Sc, dHp / Sh
    return np.sqrt(tl**2 + tc**2 + th**2 + Rt * tc * th)
