"""Compiled inner loops: unified reactor right-hand side and stiff stepper.

Everything here runs in nopython mode on plain arrays, in the internal
mol/cm^3 unit system.  The model payload is a NamedTuple of numerics (see
``reactor.KernelModel``); the same kernels serve the detailed, reduced and
enriched models, the latter two differing only in the linear-operator,
catchall-reaction and catchall-energy blocks being nonzero.

Status codes shared by rhs and stepper:
    0 ok, 1 concentration below the clip window, 2 temperature out of the
    fitted thermo range, 3 nonpositive heat-capacity sum, 4 step budget
    exhausted, 5 step size underflow.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .constants import CM3_PER_M3, GAS_CONSTANT, GAS_CONSTANT_KJ, P_REFERENCE

# TR-BDF2 tableau, gamma = 2 - sqrt(2).  Stiffly accurate ESDIRK; the
# embedded third-order weights serve only the error estimate.
_TR_GAMMA = 0.5857864376269049
_TR_D = 0.2928932188134524
_TR_W = 0.3535533905932738
_BH1 = 0.21548220313557592
_BH2 = 0.6868867239266057
_BH3 = 0.09763107293781842

STATUS_OK = 0
STATUS_NEGATIVE = 1
STATUS_T_RANGE = 2
STATUS_SINGULAR_ENERGY = 3
STATUS_STEP_BUDGET = 4
STATUS_STEP_UNDERFLOW = 5

_SQRT_EPS = 1.4901161193847656e-08

# step controller safety; the margin keeps the global error of smooth
# problems within a small multiple of rtol
_SAFETY = 0.85


@njit(cache=True)
def rhs(y, mdl, atol, out):
    """Time derivative of [x (mol/cm^3), T (K)].  Returns a status code.

    Concentrations in [-10*atol, 0) clip to zero for rate evaluation;
    anything more negative is rejected so the caller can shrink the step.
    """
    n = y.shape[0] - 1
    n_cat = mdl.n_cat
    n_mech = n - n_cat
    T = y[n]
    if T < mdl.t_min or T > mdl.t_max or not np.isfinite(T):
        return STATUS_T_RANGE

    x = np.empty(n)
    for i in range(n):
        v = y[i]
        if v < 0.0:
            if v < -10.0 * atol:
                return STATUS_NEGATIVE
            v = 0.0
        x[i] = v

    # NASA-7 evaluation for the mechanism species; catchall energetics
    # come from their quadratic internal-energy fits.
    u = np.empty(n)
    cv = np.empty(n)
    g_rt = np.empty(n_mech)
    for j in range(n_mech):
        if T <= mdl.t_mid[j]:
            a = mdl.coeff_low[j]
        else:
            a = mdl.coeff_high[j]
        cp_r = a[0] + T * (a[1] + T * (a[2] + T * (a[3] + T * a[4])))
        h_rt = (
            a[0]
            + T * (a[1] / 2.0 + T * (a[2] / 3.0 + T * (a[3] / 4.0 + T * a[4] / 5.0)))
            + a[5] / T
        )
        s_r = (
            a[0] * np.log(T)
            + T * (a[1] + T * (a[2] / 2.0 + T * (a[3] / 3.0 + T * a[4] / 4.0)))
            + a[6]
        )
        u[n_cat + j] = GAS_CONSTANT * T * (h_rt - 1.0)
        cv[n_cat + j] = GAS_CONSTANT * (cp_r - 1.0)
        g_rt[j] = h_rt - s_r
    for c in range(n_cat):
        a0 = mdl.cat_energy[c, 0]
        a1 = mdl.cat_energy[c, 1]
        a2 = mdl.cat_energy[c, 2]
        u[c] = a0 + T * (a1 + T * a2)
        cv[c] = a1 + 2.0 * a2 * T

    # third body counts mechanism species only; for plain models that is
    # the whole state
    m_conc = 0.0
    for j in range(n_mech):
        m_conc += x[n_cat + j]

    xdot = np.zeros(n)
    c_ref = P_REFERENCE / (GAS_CONSTANT * T) / CM3_PER_M3
    n_rxn = mdl.arrh_a.shape[0]
    for k in range(n_rxn):
        kf = mdl.arrh_a[k] * T ** mdl.arrh_b[k] * np.exp(
            -mdl.arrh_e[k] / (GAS_CONSTANT_KJ * T)
        )
        fwd = kf
        for j in range(n_mech):
            nu = mdl.nu_reac[k, j]
            if nu != 0.0:
                xi = x[n_cat + j]
                fwd *= xi
                if nu == 2.0:
                    fwd *= xi
                elif nu == 3.0:
                    fwd *= xi * xi
        net = fwd
        if mdl.reversible[k]:
            dg = 0.0
            dnu = 0.0
            for j in range(n_mech):
                dn = mdl.nu_prod[k, j] - mdl.nu_reac[k, j]
                if dn != 0.0:
                    dg += dn * g_rt[j]
                    dnu += dn
            kb = kf * np.exp(dg) * c_ref ** (-dnu)
            rev = kb
            for j in range(n_mech):
                nu = mdl.nu_prod[k, j]
                if nu != 0.0:
                    xi = x[n_cat + j]
                    rev *= xi
                    if nu == 2.0:
                        rev *= xi
                    elif nu == 3.0:
                        rev *= xi * xi
            net -= rev
        if mdl.third_body[k]:
            net *= m_conc
        for j in range(n_mech):
            dn = mdl.nu_prod[k, j] - mdl.nu_reac[k, j]
            if dn != 0.0:
                xdot[n_cat + j] += dn * net

    # linear inadequacy operator
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += mdl.transfer[i, j] * x[j]
        xdot[i] += acc

    # catchall reactions: rate is kappa times the product of the distinct
    # catchall reactant concentrations
    n_cr = mdl.cat_coeff.shape[0]
    for m in range(n_cr):
        r = mdl.cat_coeff[m]
        for j in range(n):
            e = mdl.cat_expo[m, j]
            while e > 0:
                r *= x[j]
                e -= 1
        for j in range(n):
            dn = mdl.cat_net[m, j]
            if dn != 0.0:
                xdot[j] += dn * r

    den = 0.0
    for i in range(n):
        den += cv[i] * x[i]
    if den <= 0.0 or not np.isfinite(den):
        return STATUS_SINGULAR_ENERGY
    num = 0.0
    for i in range(n):
        num += u[i] * xdot[i]

    for i in range(n):
        out[i] = xdot[i]
    out[n] = -num / den
    return STATUS_OK


@njit(cache=True)
def fd_jacobian(y, f0, mdl, atol, jac, scratch):
    """One-sided finite-difference Jacobian at y, given f0 = rhs(y)."""
    m = y.shape[0]
    n = m - 1
    for j in range(m):
        base = y[j]
        if j < n:
            delta = _SQRT_EPS * max(abs(base), 1.0e-10)
        else:
            delta = _SQRT_EPS * max(abs(base), 300.0)
        y[j] = base + delta
        status = rhs(y, mdl, atol, scratch)
        if status != STATUS_OK:
            y[j] = base - delta
            status = rhs(y, mdl, atol, scratch)
            if status != STATUS_OK:
                y[j] = base
                return status
            delta = -delta
        y[j] = base
        inv = 1.0 / delta
        for i in range(m):
            jac[i, j] = (scratch[i] - f0[i]) * inv
    return STATUS_OK


@njit(cache=True)
def _wrms(err, y_a, y_b, rtol, atol):
    m = err.shape[0]
    acc = 0.0
    for i in range(m):
        scale = max(abs(y_a[i]), abs(y_b[i]))
        wt = atol + rtol * scale
        q = err[i] / wt
        acc += q * q
    return np.sqrt(acc / m)


@njit(cache=True)
def _newton_stage(z, rhs_const, h, mdl, atol, mat, f_work, rtol):
    """Solve z - h*d*f(z) = rhs_const in place.  Returns (ok, f_evals).

    ``mat`` holds the factorizable iteration matrix I - h*d*J; the caller
    owns its refresh policy.  Convergence is measured in the same weighted
    norm as the step error test.
    """
    m = z.shape[0]
    nfev = 0
    prev_norm = -1.0
    for it in range(8):
        status = rhs(z, mdl, atol, f_work)
        nfev += 1
        if status != STATUS_OK:
            return False, nfev
        res = np.empty(m)
        for i in range(m):
            res[i] = rhs_const[i] + h * _TR_D * f_work[i] - z[i]
        dz = np.linalg.solve(mat, res)
        for i in range(m):
            z[i] += dz[i]
        norm = _wrms(dz, z, z, rtol, atol)
        if prev_norm >= 0.0 and norm > 2.0 * prev_norm and norm > 1.0:
            return False, nfev
        if norm < 1.0e-2:
            return True, nfev
        prev_norm = norm
    return False, nfev


@njit(cache=True)
def integrate(y0, t_out, rtol, atol, mdl, max_steps):
    """Adaptive TR-BDF2 from t=0 through t_out[-1], landing on each t_out.

    Returns (status, n_rows, ts, ys, t_reached, y_last, nfev, naccept,
    nreject).  Rows cover every accepted step; requested output times are
    hit exactly.  Status 5 reports step-size underflow with the last good
    state in (t_reached, y_last).
    """
    m = y0.shape[0]
    cap = max_steps + t_out.shape[0] + 2
    ts = np.empty(cap)
    ys = np.empty((cap, m))
    n_rows = 0

    t = 0.0
    y = y0.copy()
    ts[0] = t
    ys[0] = y
    n_rows = 1

    f1 = np.empty(m)
    status = rhs(y, mdl, atol, f1)
    nfev = 1
    if status != STATUS_OK:
        return status, n_rows, ts, ys, t, y, nfev, 0, 0

    t_end = t_out[t_out.shape[0] - 1]
    out_idx = 0
    while out_idx < t_out.shape[0] and t_out[out_idx] <= t:
        out_idx += 1

    jac = np.empty((m, m))
    scratch = np.empty(m)
    jac_ok = False
    jac_age = 0

    h = min(1.0e-9, t_end * 1.0e-3)
    naccept = 0
    nreject = 0
    steps = 0

    while t < t_end:
        steps += 1
        if steps > max_steps or n_rows + 1 >= cap:
            return STATUS_STEP_BUDGET, n_rows, ts, ys, t, y, nfev, naccept, nreject
        if h < 1.0e-16:
            return STATUS_STEP_UNDERFLOW, n_rows, ts, ys, t, y, nfev, naccept, nreject

        hit_output = False
        h_try = h
        if t + h_try >= t_out[out_idx] - 1.0e-14 * t_end:
            h_try = t_out[out_idx] - t
            hit_output = True

        if not jac_ok:
            status = fd_jacobian(y, f1, mdl, atol, jac, scratch)
            nfev += m
            if status != STATUS_OK:
                h *= 0.25
                continue
            jac_ok = True
            jac_age = 0

        mat = -(h_try * _TR_D) * jac
        for i in range(m):
            mat[i, i] += 1.0

        # second stage at c = gamma
        rhs_const = np.empty(m)
        for i in range(m):
            rhs_const[i] = y[i] + h_try * _TR_D * f1[i]
        z2 = np.empty(m)
        for i in range(m):
            z2[i] = y[i] + h_try * _TR_GAMMA * f1[i]
        ok2, ne = _newton_stage(z2, rhs_const, h_try, mdl, atol, mat, scratch, rtol)
        nfev += ne
        if not ok2:
            if jac_age > 0:
                jac_ok = False
            else:
                h *= 0.25
            continue
        f2 = np.empty(m)
        for i in range(m):
            f2[i] = (z2[i] - rhs_const[i]) / (h_try * _TR_D)

        # third stage at c = 1
        for i in range(m):
            rhs_const[i] = y[i] + h_try * _TR_W * (f1[i] + f2[i])
        z3 = np.empty(m)
        for i in range(m):
            z3[i] = rhs_const[i] + h_try * _TR_D * f2[i]
        ok3, ne = _newton_stage(z3, rhs_const, h_try, mdl, atol, mat, scratch, rtol)
        nfev += ne
        if not ok3:
            if jac_age > 0:
                jac_ok = False
            else:
                h *= 0.25
            continue
        f3 = np.empty(m)
        for i in range(m):
            f3[i] = (z3[i] - rhs_const[i]) / (h_try * _TR_D)

        err = np.empty(m)
        for i in range(m):
            err[i] = h_try * (
                (_BH1 - _TR_W) * f1[i]
                + (_BH2 - _TR_W) * f2[i]
                + (_BH3 - _TR_D) * f3[i]
            )
        # stiff error filter through the iteration matrix
        est = np.linalg.solve(mat, err)
        en = _wrms(est, y, z3, rtol, atol)

        if en <= 1.0:
            # Fresh derivative at the accepted point.  The algebraically
            # implied f3 can drift once concentration clipping kicks in,
            # and a direct evaluation doubles as the non-negativity gate:
            # a state beyond the clip window is rejected here.
            status = rhs(z3, mdl, atol, scratch)
            nfev += 1
            if status != STATUS_OK:
                nreject += 1
                h = h_try * 0.5
                continue
            if hit_output:
                t = t_out[out_idx]
                out_idx += 1
                while out_idx < t_out.shape[0] and t_out[out_idx] <= t:
                    out_idx += 1
            else:
                t = t + h_try
            for i in range(m):
                y[i] = z3[i]
                f1[i] = scratch[i]
            ts[n_rows] = t
            ys[n_rows] = y
            n_rows += 1
            naccept += 1
            jac_age += 1
            if jac_age > 30:
                jac_ok = False
            factor = _SAFETY * en ** (-1.0 / 3.0) if en > 0.0 else 5.0
            if factor > 5.0:
                factor = 5.0
            elif factor < 0.2:
                factor = 0.2
            h = h_try * factor
        else:
            nreject += 1
            factor = _SAFETY * en ** (-1.0 / 3.0)
            if factor < 0.2:
                factor = 0.2
            elif factor > 0.9:
                factor = 0.9
            h = h_try * factor

    return STATUS_OK, n_rows, ts, ys, t, y, nfev, naccept, nreject
