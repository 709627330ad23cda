"""Compiled branch-and-bound over per-DT partition points (case analysis on the makespan gateway).

All tables are (N, Lmax) with column c holding partition point l = c + 1.  Entries outside a DT's
domain are flagged in ``valid``.  The reputation function is passed as a code plus parameters:
0 = affine (gpar[0] = slope), 1 = log (gpar = c1, c2), 2 = piecewise-linear table (gx, gy).
"""

import numpy as np
from numba import njit

G_AFFINE, G_LOG, G_TABLE = 0, 1, 2


@njit(cache=True)
def g_eval(gcode, gpar, gx, gy, O):
    if gcode == 0:
        return O * gpar[0]
    if gcode == 1:
        return gpar[0] * np.log1p(O / gpar[1])
    k = gx.shape[0]
    if O >= gx[k - 1]:
        return gy[k - 1] + (gy[k - 1] - gy[k - 2]) / (gx[k - 1] - gx[k - 2]) * (O - gx[k - 1])
    if O <= gx[0]:
        return gy[0]
    lo = 0
    hi = k - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if gx[mid] <= O:
            lo = mid
        else:
            hi = mid
    return gy[lo] + (gy[hi] - gy[lo]) * (O - gx[lo]) / (gx[hi] - gx[lo])


@njit(cache=True)
def _block_tau(Oap, fb, wfix, use_wfix, alpha, beta, c, gcode, gpar, gx, gy):
    s = 0.0
    for j in range(Oap.shape[0]):
        if use_wfix:
            w = wfix[j]
        else:
            w = np.exp(alpha * g_eval(gcode, gpar, gx, gy, Oap[j]) + beta)
        s += fb[j] * w
    return c / s


@njit(cache=True)
def _queue_interval(Olo, Ohi, qcoef, gcode, gpar, gx, gy):
    # g is nondecreasing, so q * g(O) over an interval is minimised at an endpoint
    s = 0.0
    for j in range(Olo.shape[0]):
        a = qcoef[j] * g_eval(gcode, gpar, gx, gy, Olo[j])
        b = qcoef[j] * g_eval(gcode, gpar, gx, gy, Ohi[j])
        s += a if a < b else b
    return s


@njit(cache=True)
def _knapsack_ohi(Ohi, Osum, jn, On, eAn, eAsum, rem_Olo, rem_eA, E_A, vA, fb, tau_lo, rtol_e,
                  ecoef, ap_order, ap_count, pos, d, omin, omax):
    # the AP energy left after mandatory minima caps the extra offload (fractional knapsack)
    for j in range(Ohi.shape[0]):
        budget = (E_A[j] * (1.0 + rtol_e) - vA[j] * tau_lo * fb[j] ** 3 - eAsum[j]
                  - rem_eA[d + 1, j])
        if j == jn:
            budget -= eAn
        base = Osum[j] + rem_Olo[d + 1, j] + (On if j == jn else 0.0)
        extra = 0.0
        for k in range(ap_count[j]):
            n = ap_order[j, k]
            if pos[n] <= d:
                continue
            span = omax[n] - omin[n]
            if span <= 0.0:
                continue
            c = ecoef[n]
            if c <= 0.0:
                extra += span
            elif budget > 0.0:
                take = budget / c
                if take >= span:
                    extra += span
                    budget -= span * c
                else:
                    extra += take
                    budget = 0.0
        cap = base + extra
        if cap < Ohi[j]:
            Ohi[j] = cap


@njit(cache=True)
def _lex_less(a, b):
    for k in range(a.shape[0]):
        if a[k] < b[k]:
            return True
        if a[k] > b[k]:
            return False
    return False


@njit(cache=True)
def bnb_partition(cases, orders, valid, T, eG, eA, O, sepq, gw, ap, E_G, E_A, fb, vA, qcoef,
                  wfix, use_wfix, alpha, beta, c, V, gcode, gpar, gx, gy, affine_queue,
                  rtol_e, tie_rtol, inc_cols, inc_obj, ecoef, ap_order, ap_count, max_nodes):
    """Return (best_cols, best_obj, nodes_expanded, complete).

    ``inc_obj = inf`` means no incumbent.  ``ecoef[n]`` is AP energy per offloaded FLOP of DT n;
    ``ap_order[j, :ap_count[j]]`` lists AP j's DTs by ascending ``ecoef``.  The search stops
    after ``max_nodes`` expansions (complete = False) and returns the incumbent.
    """
    N, Lmax = T.shape
    M = E_G.shape[0]
    J = E_A.shape[0]
    best_cols = inc_cols.copy()
    best = inc_obj
    nodes = 0

    lb_case = np.empty(cases.shape[0])
    # per-case remaining-bound tables, rebuilt for each case
    rem_sep = np.zeros(N + 1)
    rem_Tlo = np.zeros((N + 1, M))
    rem_Thi = np.zeros((N + 1, M))
    rem_eG = np.zeros((N + 1, M))
    rem_eA = np.zeros((N + 1, J))
    rem_Ohi = np.zeros((N + 1, J))
    rem_Olo = np.zeros((N + 1, J))
    sep = np.empty((N, Lmax))

    Tsum = np.zeros(M)
    eGsum = np.zeros(M)
    eAsum = np.zeros(J)
    Osum = np.zeros(J)
    Ohi = np.zeros(J)
    Olo = np.zeros(J)
    chosen = np.zeros(N, dtype=np.int64)
    cand = np.zeros((N, Lmax), dtype=np.int64)
    candlb = np.zeros((N, Lmax))
    ncand = np.zeros(N, dtype=np.int64)
    ptr = np.zeros(N, dtype=np.int64)
    cols = np.zeros(N, dtype=np.int64)
    pos = np.zeros(N, dtype=np.int64)
    omin = np.zeros(N)
    omax = np.zeros(N)
    complete = True

    # two passes: root bounds to order the cases, then the search in that order
    for pass_ in range(2):
        if pass_ == 1:
            case_order = np.argsort(lb_case, kind="mergesort")
        for cc in range(cases.shape[0]):
            ci = cc if pass_ == 0 else case_order[cc]
            if pass_ == 1 and lb_case[ci] == np.inf:
                continue
            i = cases[ci]
            order = orders[ci]
            for d in range(N):
                pos[order[d]] = d
            for n in range(N):
                for col in range(Lmax):
                    if valid[n, col]:
                        sep[n, col] = sepq[n, col] + (V * T[n, col] if gw[n] == i else 0.0)
            rem_sep[N] = 0.0
            for m in range(M):
                rem_Tlo[N, m] = 0.0
                rem_Thi[N, m] = 0.0
                rem_eG[N, m] = 0.0
            for j in range(J):
                rem_eA[N, j] = 0.0
                rem_Ohi[N, j] = 0.0
                rem_Olo[N, j] = 0.0
            for d in range(N - 1, -1, -1):
                n = order[d]
                s_min = np.inf
                t_min = np.inf
                t_max = -np.inf
                g_min = np.inf
                a_min = np.inf
                o_min = np.inf
                o_max = -np.inf
                for col in range(Lmax):
                    if not valid[n, col]:
                        continue
                    s_min = min(s_min, sep[n, col])
                    t_min = min(t_min, T[n, col])
                    t_max = max(t_max, T[n, col])
                    g_min = min(g_min, eG[n, col])
                    a_min = min(a_min, eA[n, col])
                    o_min = min(o_min, O[n, col])
                    o_max = max(o_max, O[n, col])
                omin[n] = o_min
                omax[n] = o_max
                rem_sep[d] = rem_sep[d + 1] + s_min
                for m in range(M):
                    rem_Tlo[d, m] = rem_Tlo[d + 1, m]
                    rem_Thi[d, m] = rem_Thi[d + 1, m]
                    rem_eG[d, m] = rem_eG[d + 1, m]
                for j in range(J):
                    rem_eA[d, j] = rem_eA[d + 1, j]
                    rem_Ohi[d, j] = rem_Ohi[d + 1, j]
                    rem_Olo[d, j] = rem_Olo[d + 1, j]
                rem_Tlo[d, gw[n]] += t_min
                rem_Thi[d, gw[n]] += t_max
                rem_eG[d, gw[n]] += g_min
                rem_eA[d, ap[n]] += a_min
                rem_Ohi[d, ap[n]] += o_max
                rem_Olo[d, ap[n]] += o_min

            # root feasibility and bound
            ok = True
            for m in range(M):
                if rem_Tlo[0, m] > rem_Thi[0, i]:
                    ok = False
                if rem_eG[0, m] > E_G[m] * (1.0 + rtol_e):
                    ok = False
            tau_lo = _block_tau(rem_Ohi[0], fb, wfix, use_wfix, alpha, beta, c, gcode, gpar, gx, gy)
            for j in range(J):
                if rem_eA[0, j] + vA[j] * tau_lo * fb[j] ** 3 > E_A[j] * (1.0 + rtol_e):
                    ok = False
            root_lb = rem_sep[0] + V * tau_lo
            if not affine_queue:
                root_lb += _queue_interval(rem_Olo[0], rem_Ohi[0], qcoef, gcode, gpar, gx, gy)
            if pass_ == 0:
                lb_case[ci] = root_lb if ok else np.inf
                continue
            if root_lb > best + tie_rtol * abs(best):
                continue

            # depth-first search
            for m in range(M):
                Tsum[m] = 0.0
                eGsum[m] = 0.0
            for j in range(J):
                eAsum[j] = 0.0
                Osum[j] = 0.0
            sepsum = 0.0
            d = 0
            expand = True
            while d >= 0:
                if expand:
                    expand = False
                    nodes += 1
                    if nodes > max_nodes:
                        complete = False
                        return best_cols, best, nodes, complete
                    n = order[d]
                    gn = gw[n]
                    jn = ap[n]
                    max_other = -np.inf
                    for m in range(M):
                        if m != gn:
                            v_ = Tsum[m] + rem_Tlo[d + 1, m]
                            if v_ > max_other:
                                max_other = v_
                    k = 0
                    for col in range(Lmax):
                        if not valid[n, col]:
                            continue
                        # gateway constraints
                        if eGsum[gn] + eG[n, col] + rem_eG[d + 1, gn] > E_G[gn] * (1.0 + rtol_e):
                            continue
                        tg_lo = Tsum[gn] + T[n, col] + rem_Tlo[d + 1, gn]
                        if gn == i:
                            ti_hi = Tsum[i] + T[n, col] + rem_Thi[d + 1, i]
                        else:
                            ti_hi = Tsum[i] + rem_Thi[d + 1, i]
                        if tg_lo > ti_hi or max_other > ti_hi:
                            continue
                        for j in range(J):
                            Ohi[j] = Osum[j] + rem_Ohi[d + 1, j]
                            Olo[j] = Osum[j] + rem_Olo[d + 1, j]
                        Ohi[jn] += O[n, col]
                        Olo[jn] += O[n, col]
                        tau_lo = _block_tau(Ohi, fb, wfix, use_wfix, alpha, beta, c, gcode, gpar,
                                            gx, gy)
                        _knapsack_ohi(Ohi, Osum, jn, O[n, col], eA[n, col], eAsum, rem_Olo, rem_eA,
                                      E_A, vA, fb, tau_lo, rtol_e, ecoef, ap_order, ap_count, pos,
                                      d, omin, omax)
                        tau_lo = _block_tau(Ohi, fb, wfix, use_wfix, alpha, beta, c, gcode, gpar,
                                            gx, gy)
                        feas = True
                        for j in range(J):
                            e = eAsum[j] + rem_eA[d + 1, j] + vA[j] * tau_lo * fb[j] ** 3
                            if j == jn:
                                e += eA[n, col]
                            if e > E_A[j] * (1.0 + rtol_e):
                                feas = False
                                break
                        if not feas:
                            continue
                        lb = sepsum + sep[n, col] + rem_sep[d + 1] + V * tau_lo
                        if not affine_queue:
                            lb += _queue_interval(Olo, Ohi, qcoef, gcode, gpar, gx, gy)
                        if lb > best + tie_rtol * abs(best):
                            continue
                        # insertion sort: bound ascending, larger l first on ties
                        p = k
                        while p > 0 and (candlb[d, p - 1] > lb or
                                         (candlb[d, p - 1] == lb and cand[d, p - 1] < col)):
                            cand[d, p] = cand[d, p - 1]
                            candlb[d, p] = candlb[d, p - 1]
                            p -= 1
                        cand[d, p] = col
                        candlb[d, p] = lb
                        k += 1
                    ncand[d] = k
                    ptr[d] = 0

                if ptr[d] >= ncand[d]:
                    d -= 1
                    if d >= 0:
                        n = order[d]
                        col = chosen[d]
                        Tsum[gw[n]] -= T[n, col]
                        eGsum[gw[n]] -= eG[n, col]
                        eAsum[ap[n]] -= eA[n, col]
                        Osum[ap[n]] -= O[n, col]
                        sepsum -= sep[n, col]
                    continue

                col = cand[d, ptr[d]]
                lb = candlb[d, ptr[d]]
                ptr[d] += 1
                if lb > best + tie_rtol * abs(best):
                    ptr[d] = ncand[d]
                    continue
                n = order[d]
                chosen[d] = col
                Tsum[gw[n]] += T[n, col]
                eGsum[gw[n]] += eG[n, col]
                eAsum[ap[n]] += eA[n, col]
                Osum[ap[n]] += O[n, col]
                sepsum += sep[n, col]
                if d < N - 1:
                    d += 1
                    expand = True
                    continue

                # leaf: exact objective and constraints
                tmax = Tsum[0]
                for m in range(1, M):
                    if Tsum[m] > tmax:
                        tmax = Tsum[m]
                leaf_ok = Tsum[i] >= tmax
                tau = _block_tau(Osum, fb, wfix, use_wfix, alpha, beta, c, gcode, gpar, gx, gy)
                for m in range(M):
                    if eGsum[m] > E_G[m] * (1.0 + rtol_e):
                        leaf_ok = False
                for j in range(J):
                    if eAsum[j] + vA[j] * tau * fb[j] ** 3 > E_A[j] * (1.0 + rtol_e):
                        leaf_ok = False
                if leaf_ok:
                    obj = V * (tmax + tau)
                    for j in range(J):
                        obj += qcoef[j] * g_eval(gcode, gpar, gx, gy, Osum[j])
                    for k2 in range(N):
                        cols[order[k2]] = chosen[k2]
                    tol = tie_rtol * abs(best)
                    if (best == np.inf or obj < best - tol
                            or (obj <= best + tol and _lex_less(cols, best_cols))):
                        best = obj
                        best_cols[:] = cols
                Tsum[gw[n]] -= T[n, col]
                eGsum[gw[n]] -= eG[n, col]
                eAsum[ap[n]] -= eA[n, col]
                Osum[ap[n]] -= O[n, col]
                sepsum -= sep[n, col]
    return best_cols, best, nodes, complete
