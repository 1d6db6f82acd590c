# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

Each function here has a numpy twin in :mod:`mlekit._fallback` with the same
signature; :mod:`mlekit.kernels` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, atan2, sin, cos, exp, pow, M_PI

cnp.import_array()

DEF MAXN = 8


cdef int _solve_passive(double[:, ::1] G, double[::1] h, int n, int* passive,
                        double* z) noexcept nogil:
    """Solve G[P,P] z[P] = h[P] by Gaussian elimination; z is zero off P."""
    cdef double M[MAXN][MAXN + 1]
    cdef int idx[MAXN]
    cdef int m = 0, i, j, k, piv
    cdef double t, best
    for i in range(n):
        z[i] = 0.0
        if passive[i]:
            idx[m] = i
            m += 1
    if m == 0:
        return 0
    for i in range(m):
        for j in range(m):
            M[i][j] = G[idx[i], idx[j]]
        M[i][m] = h[idx[i]]
    for k in range(m):
        piv = k
        best = fabs(M[k][k])
        for i in range(k + 1, m):
            if fabs(M[i][k]) > best:
                best = fabs(M[i][k])
                piv = i
        if best < 1e-300:
            return -1
        if piv != k:
            for j in range(m + 1):
                t = M[k][j]
                M[k][j] = M[piv][j]
                M[piv][j] = t
        for i in range(k + 1, m):
            t = M[i][k] / M[k][k]
            for j in range(k, m + 1):
                M[i][j] -= t * M[k][j]
    for k in range(m - 1, -1, -1):
        t = M[k][m]
        for j in range(k + 1, m):
            t -= M[k][j] * z[idx[j]]
        z[idx[k]] = t / M[k][k]
    return 0


def nnls_gram(double[:, ::1] G, double[:, ::1] H, double tol=1e-12):
    """Lawson-Hanson NNLS for many right-hand sides sharing one Gram matrix.

    Solves ``min ||C x - b||`` s.t. ``x >= 0`` for each row of ``H = (C^T b)^T``
    given ``G = C^T C``.  Returns an array of shape ``H.shape``.
    """
    cdef Py_ssize_t npix = H.shape[0], p
    cdef int n = G.shape[0], i, j, it, jmax, max_outer = 3 * G.shape[0] + 10
    if n > MAXN:
        raise ValueError("at most %d unknowns supported" % MAXN)
    out = np.zeros((npix, n), dtype=np.float64)
    cdef double[:, ::1] X = out
    cdef double x[MAXN]
    cdef double z[MAXN]
    cdef double w[MAXN]
    cdef int passive[MAXN]
    cdef double wmax, alpha, a
    with nogil:
        for p in range(npix):
            for i in range(n):
                x[i] = 0.0
                passive[i] = 0
            for it in range(max_outer):
                # w = h - G x
                jmax = -1
                wmax = tol
                for i in range(n):
                    w[i] = H[p, i]
                    for j in range(n):
                        w[i] -= G[i, j] * x[j]
                    if not passive[i] and w[i] > wmax:
                        wmax = w[i]
                        jmax = i
                if jmax < 0:
                    break
                passive[jmax] = 1
                while True:
                    if _solve_passive(G, H[p], n, passive, z) != 0:
                        passive[jmax] = 0
                        break
                    alpha = 2.0
                    for i in range(n):
                        if passive[i] and z[i] <= 0.0:
                            a = x[i] / (x[i] - z[i])
                            if a < alpha:
                                alpha = a
                    if alpha > 1.0:
                        for i in range(n):
                            x[i] = z[i]
                        break
                    for i in range(n):
                        x[i] = x[i] + alpha * (z[i] - x[i])
                        if passive[i] and x[i] <= 1e-15:
                            passive[i] = 0
                            x[i] = 0.0
            for i in range(n):
                X[p, i] = x[i]
    return out


def local_contrast(double[:, ::1] img, int window):
    """Windowed mean and standard deviation with replicate borders."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], r, c, dr, dc, rr, cc
    cdef int half = window // 2
    cdef double s, ss, mu, v, x0, inv = 1.0 / (window * window)
    mean = np.empty((h, w), dtype=np.float64)
    std = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] M = mean
    cdef double[:, ::1] S = std
    with nogil:
        for r in range(h):
            for c in range(w):
                # deviations from the centre pixel keep constant windows exactly zero
                x0 = img[r, c]
                s = 0.0
                for dr in range(-half, half + 1):
                    rr = min(max(r + dr, 0), h - 1)
                    for dc in range(-half, half + 1):
                        cc = min(max(c + dc, 0), w - 1)
                        s += img[rr, cc] - x0
                mu = s * inv
                ss = 0.0
                for dr in range(-half, half + 1):
                    rr = min(max(r + dr, 0), h - 1)
                    for dc in range(-half, half + 1):
                        cc = min(max(c + dc, 0), w - 1)
                        v = img[rr, cc] - x0 - mu
                        ss += v * v
                M[r, c] = x0 + mu
                S[r, c] = sqrt(ss * inv)
    return mean, std


cdef inline double _deg(double x) noexcept nogil:
    return x * 180.0 / M_PI


cdef inline double _rad(double x) noexcept nogil:
    return x * M_PI / 180.0


cdef inline double _hue(double b, double a) noexcept nogil:
    if a == 0.0 and b == 0.0:
        return 0.0
    cdef double hh = _deg(atan2(b, a))
    if hh < 0.0:
        hh += 360.0
    return hh


def ciede2000(double[:, ::1] lab1, double[:, ::1] lab2):
    """CIEDE2000 colour difference for paired rows of two (n, 3) Lab arrays."""
    cdef Py_ssize_t n = lab1.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] D = out
    cdef double L1, a1, b1, L2, a2, b2, C1, C2, Cb, Cb7, G, a1p, a2p, C1p, C2p
    cdef double h1p, h2p, dLp, dCp, dhp, dHp, Lbp, Cbp, hbp, T, dtheta, Rc
    cdef double Sl, Sc, Sh, Rt, Cbp7, diff, lb50
    with nogil:
        for i in range(n):
            L1 = lab1[i, 0]; a1 = lab1[i, 1]; b1 = lab1[i, 2]
            L2 = lab2[i, 0]; a2 = lab2[i, 1]; b2 = lab2[i, 2]
            C1 = sqrt(a1 * a1 + b1 * b1)
            C2 = sqrt(a2 * a2 + b2 * b2)
            Cb = 0.5 * (C1 + C2)
            Cb7 = pow(Cb, 7.0)
            G = 0.5 * (1.0 - sqrt(Cb7 / (Cb7 + 6103515625.0)))
            a1p = (1.0 + G) * a1
            a2p = (1.0 + G) * a2
            C1p = sqrt(a1p * a1p + b1 * b1)
            C2p = sqrt(a2p * a2p + b2 * b2)
            h1p = _hue(b1, a1p)
            h2p = _hue(b2, a2p)
            dLp = L2 - L1
            dCp = C2p - C1p
            diff = h2p - h1p
            # hue differences within 1e-9 deg of 180 are treated as exactly 180
            if fabs(fabs(diff) - 180.0) < 1e-9:
                diff = 180.0 if diff > 0 else -180.0
            if C1p * C2p == 0.0:
                dhp = 0.0
            elif fabs(diff) <= 180.0:
                dhp = diff
            elif diff > 180.0:
                dhp = diff - 360.0
            else:
                dhp = diff + 360.0
            dHp = 2.0 * sqrt(C1p * C2p) * sin(_rad(dhp) / 2.0)
            Lbp = 0.5 * (L1 + L2)
            Cbp = 0.5 * (C1p + C2p)
            if C1p * C2p == 0.0:
                hbp = h1p + h2p
            elif fabs(diff) <= 180.0:
                hbp = 0.5 * (h1p + h2p)
            elif h1p + h2p < 360.0:
                hbp = 0.5 * (h1p + h2p + 360.0)
            else:
                hbp = 0.5 * (h1p + h2p - 360.0)
            T = (1.0 - 0.17 * cos(_rad(hbp - 30.0)) + 0.24 * cos(_rad(2.0 * hbp))
                 + 0.32 * cos(_rad(3.0 * hbp + 6.0)) - 0.20 * cos(_rad(4.0 * hbp - 63.0)))
            dtheta = 30.0 * exp(-((hbp - 275.0) / 25.0) * ((hbp - 275.0) / 25.0))
            Cbp7 = pow(Cbp, 7.0)
            Rc = 2.0 * sqrt(Cbp7 / (Cbp7 + 6103515625.0))
            lb50 = (Lbp - 50.0) * (Lbp - 50.0)
            Sl = 1.0 + 0.015 * lb50 / sqrt(20.0 + lb50)
            Sc = 1.0 + 0.045 * Cbp
            Sh = 1.0 + 0.015 * Cbp * T
            Rt = -sin(_rad(2.0 * dtheta)) * Rc
            D[i] = sqrt((dLp / Sl) * (dLp / Sl) + (dCp / Sc) * (dCp / Sc)
                        + (dHp / Sh) * (dHp / Sh) + Rt * (dCp / Sc) * (dHp / Sh))
    return out
