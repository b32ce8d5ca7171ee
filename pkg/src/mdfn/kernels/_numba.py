"""Loop kernels compiled with numba; same contracts as :mod:`._numpy`."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NVAR = 4
KL = KU = 2 * NVAR - 1


@njit(cache=True)
def _put(ab, r, c, v):
    ab[KU + r - c, c] += v


@njit(cache=True)
def _harm(dxi, dxj, xi, xj):
    s = dxi + dxj
    xf = s / (dxi / xi + dxj / xj)
    return xf, xf * xf * dxi / (s * xi * xi), xf * xf * dxj / (s * xj * xj)


@njit(cache=True)
def assemble(u, c_old, dx, eps, a, sig, elec, De, dDe, ke, dke, kDe, dkDe, lnc, dlnc,
             kF, cmax, cs, dcs_dJ, U, dU, scalars):
    dt, I, t_plus, F, Vt, phi_ce, c_ref, I_ref, c_min = (
        scalars[0], scalars[1], scalars[2], scalars[3], scalars[4],
        scalars[5], scalars[6], scalars[7], scalars[8])
    n = dx.size
    m = NVAR * n
    res = np.zeros(m)
    ab = np.zeros((KL + KU + 1, m))
    se = 1.0 / I_ref

    for i in range(n):
        rc = 4 * i
        re = rc + 1
        rs = rc + 2
        rj = rc + 3
        sc = dt / (dx[i] * c_ref)
        c = u[rc]
        J = u[rj]
        res[rc] += sc * (eps[i] * dx[i] * (c - c_old[i]) / dt - (1.0 - t_plus) * a[i] * J * dx[i] / F)
        _put(ab, rc, rc, sc * eps[i] * dx[i] / dt)
        _put(ab, rc, rj, -sc * (1.0 - t_plus) * a[i] * dx[i] / F)
        res[re] += -se * a[i] * J * dx[i]
        _put(ab, re, rj, -se * a[i] * dx[i])

        if elec[i]:
            res[rs] += se * a[i] * J * dx[i]
            _put(ab, rs, rj, se * a[i] * dx[i])
            ce = max(c, c_min)
            dce = 1.0 if c > c_min else 0.0
            cmx = cmax[i]
            csv = cs[i]
            csx = min(max(csv, c_min), cmx - c_min)
            dcsx = 1.0 if (csv > c_min and csv < cmx - c_min) else 0.0
            j0 = kF[i] * math.sqrt(ce * csx * (cmx - csx))
            dj0_dc = 0.5 * j0 / ce * dce
            dj0_dcs = 0.5 * j0 * (1.0 / csx - 1.0 / (cmx - csx)) * dcsx
            s = J / (2.0 * j0)
            root = math.sqrt(1.0 + s * s)
            res[rj] = u[rs] - u[re] - U[i] - 2.0 * Vt * math.asinh(s)
            ds_dJ = 1.0 / (2.0 * j0) - J / (2.0 * j0 * j0) * dj0_dcs * dcs_dJ[i]
            _put(ab, rj, rs, 1.0)
            _put(ab, rj, re, -1.0)
            _put(ab, rj, rj, -dU[i] * dcs_dJ[i] - 2.0 * Vt / root * ds_dJ)
            _put(ab, rj, rc, 2.0 * Vt / root * J / (2.0 * j0 * j0) * dj0_dc)
        else:
            res[rs] = u[rs]
            res[rj] = J
            _put(ab, rs, rs, 1.0)
            _put(ab, rj, rj, 1.0)

    # boundary at the counter electrode
    res[0] += dt / (dx[0] * c_ref) * (1.0 - t_plus) * I / F
    g0 = ke[0] / (0.5 * dx[0])
    res[1] += se * g0 * (u[1] - phi_ce)
    _put(ab, 1, 1, se * g0)
    _put(ab, 1, 0, se * dke[0] / (0.5 * dx[0]) * (u[1] - phi_ce))
    if elec[n - 1]:
        res[4 * (n - 1) + 2] += -se * I

    for i in range(n - 1):
        j = i + 1
        ci, cj = 4 * i, 4 * j
        sci = dt / (dx[i] * c_ref)
        scj = dt / (dx[j] * c_ref)
        h = 0.5 * (dx[i] + dx[j])
        dc = u[cj] - u[ci]
        Df, wi, wj = _harm(dx[i], dx[j], De[i], De[j])
        N = -Df * dc / h
        dN_i = -wi * dDe[i] * dc / h + Df / h
        dN_j = -wj * dDe[j] * dc / h - Df / h
        res[ci] += sci * N
        res[cj] -= scj * N
        _put(ab, ci, ci, sci * dN_i)
        _put(ab, ci, cj, sci * dN_j)
        _put(ab, cj, ci, -scj * dN_i)
        _put(ab, cj, cj, -scj * dN_j)

        kf, ki, kj = _harm(dx[i], dx[j], ke[i], ke[j])
        kdf, kdi, kdj = _harm(dx[i], dx[j], kDe[i], kDe[j])
        dp = u[cj + 1] - u[ci + 1]
        dl = lnc[j] - lnc[i]
        ie = -kf * dp / h + kdf * dl / h
        die_pi = kf / h
        die_pj = -kf / h
        die_ci = -ki * dke[i] * dp / h + kdi * dkDe[i] * dl / h - kdf * dlnc[i] / h
        die_cj = -kj * dke[j] * dp / h + kdj * dkDe[j] * dl / h + kdf * dlnc[j] / h
        res[ci + 1] += se * ie
        res[cj + 1] -= se * ie
        for r, sgn in ((ci + 1, se), (cj + 1, -se)):
            _put(ab, r, ci + 1, sgn * die_pi)
            _put(ab, r, cj + 1, sgn * die_pj)
            _put(ab, r, ci, sgn * die_ci)
            _put(ab, r, cj, sgn * die_cj)

        if elec[i] and elec[j]:
            sf = (dx[i] + dx[j]) / (dx[i] / sig[i] + dx[j] / sig[j])
            isf = -sf * (u[cj + 2] - u[ci + 2]) / h
            res[ci + 2] += se * isf
            res[cj + 2] -= se * isf
            _put(ab, ci + 2, ci + 2, se * sf / h)
            _put(ab, ci + 2, cj + 2, -se * sf / h)
            _put(ab, cj + 2, ci + 2, -se * sf / h)
            _put(ab, cj + 2, cj + 2, se * sf / h)
    return res, ab


@njit(cache=True)
def solve_banded(ab, rhs):
    """Gaussian elimination with partial pivoting restricted to the band."""
    m = ab.shape[1]
    width = 2 * KL + KU + 1
    # row r keeps columns r - KL .. r + KL + KU (room for pivoting fill-in)
    w = np.zeros((m, width))
    for col in range(m):
        for k in range(KL + KU + 1):
            r = col + k - KU
            if 0 <= r < m:
                w[r, col - r + KL] = ab[k, col]
    b = rhs.copy()
    for p in range(m):
        piv = p
        best = abs(w[p, KL])
        last = min(m - 1, p + KL)
        for r in range(p + 1, last + 1):
            v = abs(w[r, p - r + KL])
            if v > best:
                best = v
                piv = r
        if best == 0.0:
            raise ZeroDivisionError("singular banded matrix")
        hi = min(m - 1, p + KL + KU)
        if piv != p:
            for col in range(p, hi + 1):
                a1 = col - p + KL
                a2 = col - piv + KL
                tmp = w[p, a1]
                w[p, a1] = w[piv, a2]
                w[piv, a2] = tmp
            tmp = b[p]
            b[p] = b[piv]
            b[piv] = tmp
        d = w[p, KL]
        for r in range(p + 1, last + 1):
            f = w[r, p - r + KL] / d
            if f != 0.0:
                w[r, p - r + KL] = 0.0
                for col in range(p + 1, hi + 1):
                    w[r, col - r + KL] -= f * w[p, col - p + KL]
                b[r] -= f * b[p]
    x = np.zeros(m)
    for p in range(m - 1, -1, -1):
        acc = b[p]
        hi = min(m - 1, p + KL + KU)
        for col in range(p + 1, hi + 1):
            acc -= w[p, col - p + KL] * x[col]
        x[p] = acc / w[p, KL]
    return x
