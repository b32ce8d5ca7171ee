"""Vectorised NumPy assembly of the Newton system and the banded solve."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded as _scipy_solve_banded

NVAR = 4
KL = KU = 2 * NVAR - 1


def _harmonic(dxi, dxj, xi, xj, dxi_dc, dxj_dc):
    s = dxi + dxj
    den = dxi / xi + dxj / xj
    xf = s / den
    return xf, xf * xf * dxi / (s * xi * xi) * dxi_dc, xf * xf * dxj / (s * xj * xj) * dxj_dc


def assemble(u, c_old, dx, eps, a, sig, elec, De, dDe, ke, dke, kDe, dkDe, lnc, dlnc,
             kF, cmax, cs, dcs_dJ, U, dU, scalars):
    """Residual vector and banded Jacobian (scipy ``ab`` layout, kl = ku = 7).

    ``scalars`` = (dt, I, t_plus, F, Vt, phi_ce, c_ref, I_ref, c_min).
    """
    dt, I, t_plus, F, Vt, phi_ce, c_ref, I_ref, c_min = scalars
    n = dx.size
    m = NVAR * n
    c = u[0::4]
    pe = u[1::4]
    ps = u[2::4]
    J = u[3::4]
    res = np.zeros(m)
    rows, cols, vals = [], [], []

    def add(r, cidx, v):
        rows.append(r)
        cols.append(cidx)
        vals.append(v)

    node = np.arange(n)
    rc, re, rs, rj = 4 * node, 4 * node + 1, 4 * node + 2, 4 * node + 3
    sc = dt / (dx * c_ref)
    se = 1.0 / I_ref
    el = elec.astype(bool)

    # species storage and source
    res[rc] = sc * (eps * dx * (c - c_old) / dt - (1.0 - t_plus) * a * J * dx / F)
    add(rc, rc, sc * eps * dx / dt)
    add(rc, rj, -sc * (1.0 - t_plus) * a * dx / F)
    res[rc[0]] += sc[0] * (1.0 - t_plus) * I / F

    # electrolyte charge: source and Dirichlet half-cell at x = 0
    res[re] = -se * a * J * dx
    add(re, rj, -se * a * dx)
    g0 = ke[0] / (0.5 * dx[0])
    res[re[0]] += se * g0 * (pe[0] - phi_ce)
    add(re[:1], re[:1], np.array([se * g0]))
    add(re[:1], rc[:1], np.array([se * dke[0] / (0.5 * dx[0]) * (pe[0] - phi_ce)]))

    # interior faces
    i = node[:-1]
    j = node[1:]
    h = 0.5 * (dx[i] + dx[j])
    dc = c[j] - c[i]
    Df, dDf_i, dDf_j = _harmonic(dx[i], dx[j], De[i], De[j], dDe[i], dDe[j])
    N = -Df * dc / h
    dN_i = -dDf_i * dc / h + Df / h
    dN_j = -dDf_j * dc / h - Df / h
    res[rc[i]] += sc[i] * N
    res[rc[j]] -= sc[j] * N
    add(rc[i], rc[i], sc[i] * dN_i)
    add(rc[i], rc[j], sc[i] * dN_j)
    add(rc[j], rc[i], -sc[j] * dN_i)
    add(rc[j], rc[j], -sc[j] * dN_j)

    kf, dkf_i, dkf_j = _harmonic(dx[i], dx[j], ke[i], ke[j], dke[i], dke[j])
    kdf, dkdf_i, dkdf_j = _harmonic(dx[i], dx[j], kDe[i], kDe[j], dkDe[i], dkDe[j])
    dp = pe[j] - pe[i]
    dl = lnc[j] - lnc[i]
    ie = -kf * dp / h + kdf * dl / h
    die_pi = kf / h
    die_pj = -kf / h
    die_ci = -dkf_i * dp / h + dkdf_i * dl / h - kdf * dlnc[i] / h
    die_cj = -dkf_j * dp / h + dkdf_j * dl / h + kdf * dlnc[j] / h
    res[re[i]] += se * ie
    res[re[j]] -= se * ie
    for r, s in ((re[i], se), (re[j], -se)):
        add(r, re[i], s * die_pi)
        add(r, re[j], s * die_pj)
        add(r, rc[i], s * die_ci)
        add(r, rc[j], s * die_cj)

    # solid phase
    both = el[i] & el[j]
    fi, fj = i[both], j[both]
    sf = (dx[fi] + dx[fj]) / (dx[fi] / sig[fi] + dx[fj] / sig[fj])
    hs = h[both]
    isf = -sf * (ps[fj] - ps[fi]) / hs
    res[rs[fi]] += se * isf
    res[rs[fj]] -= se * isf
    for r, s in ((rs[fi], se), (rs[fj], -se)):
        add(r, rs[fi], s * sf / hs)
        add(r, rs[fj], -s * sf / hs)

    ei = node[el]
    res[rs[ei]] += se * a[ei] * J[ei] * dx[ei]
    add(rs[ei], rj[ei], se * a[ei] * dx[ei])
    if el[-1]:
        res[rs[-1]] += se * (-I)

    # kinetics (overpotential form) on electrode nodes
    ce = np.maximum(c[ei], c_min)
    dce = (c[ei] > c_min).astype(float)
    csx = np.clip(cs[ei], c_min, cmax[ei] - c_min)
    dcsx = ((cs[ei] > c_min) & (cs[ei] < cmax[ei] - c_min)).astype(float)
    j0 = kF[ei] * np.sqrt(ce * csx * (cmax[ei] - csx))
    dj0_dc = 0.5 * j0 / ce * dce
    dj0_dcs = 0.5 * j0 * (1.0 / csx - 1.0 / (cmax[ei] - csx)) * dcsx
    s = J[ei] / (2.0 * j0)
    root = np.sqrt(1.0 + s * s)
    res[rj[ei]] = ps[ei] - pe[ei] - U[ei] - 2.0 * Vt * np.arcsinh(s)
    ds_dJ = 1.0 / (2.0 * j0) - J[ei] / (2.0 * j0 * j0) * dj0_dcs * dcs_dJ[ei]
    add(rj[ei], rs[ei], np.ones(ei.size))
    add(rj[ei], re[ei], -np.ones(ei.size))
    add(rj[ei], rj[ei], -dU[ei] * dcs_dJ[ei] - 2.0 * Vt / root * ds_dJ)
    add(rj[ei], rc[ei], 2.0 * Vt / root * J[ei] / (2.0 * j0 * j0) * dj0_dc)

    si = node[~el]
    res[rs[si]] = ps[si]
    res[rj[si]] = J[si]
    add(rs[si], rs[si], np.ones(si.size))
    add(rj[si], rj[si], np.ones(si.size))

    r_all = np.concatenate(rows)
    c_all = np.concatenate(cols)
    v_all = np.concatenate(vals)
    ab = np.zeros((KL + KU + 1, m))
    np.add.at(ab, (KU + r_all - c_all, c_all), v_all)
    return res, ab


def solve_banded(ab, rhs):
    return _scipy_solve_banded((KL, KU), ab, rhs, overwrite_ab=False, check_finite=False)
