"""Compiled RK2 rollout with forward sensitivities for calibration windows.

Mirrors ``calibration._rollout_sens_numpy`` operation for operation; the test
suite checks the two against each other.
"""
from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

N_COLS = 9  # seven log-parameters, two initial states


def _rollout_kernel(P, x0, T_out, smoke, outage, q_sol, h, n_sub, want_sens, X, X2, X1, S, S2, S1):
    K, L = T_out.shape
    Fw = np.zeros(N_COLS)
    Fz = np.zeros(N_COLS)
    sw = np.zeros(N_COLS)
    sz = np.zeros(N_COLS)
    d1w = np.zeros(N_COLS)
    d1z = np.zeros(N_COLS)
    mw_s = np.zeros(N_COLS)
    mz_s = np.zeros(N_COLS)
    for k in range(K):
        Cw, Cz, Rwo, Rwz, Qi, Qm, db, sp = P[k, 0], P[k, 1], P[k, 2], P[k, 3], P[k, 4], P[k, 5], P[k, 6], P[k, 7]
        kw = 1.0 / (Rwz * Cw)
        kz = 1.0 / (Rwz * Cz)
        inv_db = 1.0 / db
        w = x0[k, 0]
        z = x0[k, 1]
        X[k, 0, 0] = w
        X[k, 0, 1] = z
        for c in range(N_COLS):
            sw[c] = 0.0
            sz[c] = 0.0
        sw[7] = 1.0
        sz[8] = 1.0
        if want_sens:
            for c in range(N_COLS):
                S[k, 0, 0, c] = sw[c]
                S[k, 0, 1, c] = sz[c]
        for j in range(L - 1):
            to = T_out[k, j]
            gw = (1.0 - smoke[k, j]) / (Rwo * Cw)
            qz = (q_sol[k, j] + Qi) / Cz
            on = (1.0 - outage[k, j]) * Qm / Cz
            j00 = -gw - kw
            for i in range(n_sub):
                # stage 1
                e1 = (z - sp) * inv_db
                f1 = min(max(e1, 0.0), 1.0)
                fw1 = gw * (to - w) + kw * (z - w)
                fz1 = kz * (w - z) + qz - on * f1
                mw = w + 0.5 * h * fw1
                mz = z + 0.5 * h * fz1
                # stage 2
                e2 = (mz - sp) * inv_db
                f2 = min(max(e2, 0.0), 1.0)
                fw2 = gw * (to - mw) + kw * (mz - mw)
                fz2 = kz * (mw - mz) + qz - on * f2
                if want_sens:
                    b1 = 1.0 if (e1 > 0.0 and e1 < 1.0) else 0.0
                    j11 = -kz - on * b1 * inv_db
                    for c in range(N_COLS):
                        Fw[c] = 0.0
                        Fz[c] = 0.0
                    Fw[0] = -fw1
                    Fw[2] = -gw * (to - w)
                    Fw[3] = -kw * (z - w)
                    Fz[1] = -fz1
                    Fz[3] = -kz * (w - z)
                    Fz[4] = Qi / Cz
                    Fz[5] = -on * f1
                    Fz[6] = on * e1 * b1
                    for c in range(N_COLS):
                        d1w[c] = j00 * sw[c] + kw * sz[c] + Fw[c]
                        d1z[c] = kz * sw[c] + j11 * sz[c] + Fz[c]
                        mw_s[c] = sw[c] + 0.5 * h * d1w[c]
                        mz_s[c] = sz[c] + 0.5 * h * d1z[c]
                    b2 = 1.0 if (e2 > 0.0 and e2 < 1.0) else 0.0
                    j11 = -kz - on * b2 * inv_db
                    for c in range(N_COLS):
                        Fw[c] = 0.0
                        Fz[c] = 0.0
                    Fw[0] = -fw2
                    Fw[2] = -gw * (to - mw)
                    Fw[3] = -kw * (mz - mw)
                    Fz[1] = -fz2
                    Fz[3] = -kz * (mw - mz)
                    Fz[4] = Qi / Cz
                    Fz[5] = -on * f2
                    Fz[6] = on * e2 * b2
                    for c in range(N_COLS):
                        sw[c] = sw[c] + h * (j00 * mw_s[c] + kw * mz_s[c] + Fw[c])
                        sz[c] = sz[c] + h * (kz * mw_s[c] + j11 * mz_s[c] + Fz[c])
                w = w + h * fw2
                z = z + h * fz2
                if i == 0:
                    X1[k, j, 0] = w
                    X1[k, j, 1] = z
                    if want_sens:
                        for c in range(N_COLS):
                            S1[k, j, 0, c] = sw[c]
                            S1[k, j, 1, c] = sz[c]
                elif i == 1:
                    X2[k, j, 0] = w
                    X2[k, j, 1] = z
                    if want_sens:
                        for c in range(N_COLS):
                            S2[k, j, 0, c] = sw[c]
                            S2[k, j, 1, c] = sz[c]
            X[k, j + 1, 0] = w
            X[k, j + 1, 1] = z
            if want_sens:
                for c in range(N_COLS):
                    S[k, j + 1, 0, c] = sw[c]
                    S[k, j + 1, 1, c] = sz[c]


if numba is not None:
    _compiled = numba.njit(cache=True, fastmath=False)(_rollout_kernel)
else:  # pragma: no cover
    _compiled = None

AVAILABLE = _compiled is not None


def rollout_sens(P, x0, T_out, smoke, outage, q_sol, dt, n_sub, want_sens):
    """Run the compiled kernel; ``P`` is ``(K, 8)`` with the setpoint last."""
    K, L = T_out.shape
    X = np.full((K, L, 2), np.nan)
    X2 = np.full((K, L, 2), np.nan)
    X1 = np.full((K, L, 2), np.nan)
    shape = (K, L, 2, N_COLS) if want_sens else (1, 1, 2, N_COLS)
    S = np.full(shape, np.nan)
    S2 = np.full(shape, np.nan)
    S1 = np.full(shape, np.nan)
    f = [np.ascontiguousarray(a, dtype=np.float64) for a in (P, x0, T_out, smoke, outage, q_sol)]
    _compiled(*f, float(dt) / n_sub, int(n_sub), bool(want_sens), X, X2, X1, S, S2, S1)
    if not want_sens:
        S = S2 = S1 = None
    return X, X2, X1, S, S2, S1
