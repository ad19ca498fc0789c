# cython: language_level=3
"""Compiled sampler kernels: statement-for-statement mirror of ``_pure``.

Both backends consume the same pre-drawn randomness arrays, so chains agree
across backends up to floating-point round-off.
"""
from libc.math cimport exp, log, log1p, sqrt

import numpy as np

cimport numpy as cnp

BACKEND = "compiled"

REFRESH_EVERY = 2048

cdef double _PI = 3.141592653589793115997963468544185161590576171875
cdef long _REFRESH_EVERY = 2048


cdef inline double _softplus(double x):
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef double _refresh_minv(
    cnp.uint8_t[:, ::1] B,
    long[::1] deg,
    long[::1] labels,
    long[::1] sizes,
    double[:, ::1] Minv,
    double[:, ::1] mbuf,
    double[:, ::1] lbuf,
):
    cdef Py_ssize_t n = B.shape[0]
    cdef Py_ssize_t i, j, k, c
    cdef long li
    cdef double anchor, v, s, d, pld
    for i in range(n):
        li = labels[i]
        anchor = 1.0 / sizes[li]
        for j in range(n):
            v = anchor if labels[j] == li else 0.0
            if i == j:
                v += deg[i]
            elif B[i, j]:
                v -= 1.0
            mbuf[i, j] = v
    pld = 0.0
    for c in range(n):
        s = mbuf[c, c]
        for k in range(c):
            s -= lbuf[c, k] * lbuf[c, k]
        d = sqrt(s)
        lbuf[c, c] = d
        pld += 2.0 * log(d)
        for i in range(c + 1, n):
            s = mbuf[i, c]
            for k in range(c):
                s -= lbuf[i, k] * lbuf[c, k]
            lbuf[i, c] = s / d
    for c in range(n):
        mbuf[c, c] = 1.0 / lbuf[c, c]
        for i in range(c + 1, n):
            s = 0.0
            for k in range(c, i):
                s += lbuf[i, k] * mbuf[k, c]
            mbuf[i, c] = -s / lbuf[i, i]
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(j, n):
                s += mbuf[k, i] * mbuf[k, j]
            Minv[i, j] = s
            Minv[j, i] = s
    return pld


def refresh_minv(
    cnp.uint8_t[:, ::1] B,
    long[::1] deg,
    long[::1] labels,
    long[::1] sizes,
    double[:, ::1] Minv,
    double[:, ::1] mbuf,
    double[:, ::1] lbuf,
):
    return _refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)


cdef bint _side_of_after_removal(
    cnp.uint8_t[:, ::1] B,
    Py_ssize_t n,
    Py_ssize_t src,
    Py_ssize_t dst,
    cnp.uint8_t[::1] visited,
    long[::1] queue,
):
    cdef Py_ssize_t v, w, head, tail
    for v in range(n):
        visited[v] = 0
    visited[src] = 1
    queue[0] = src
    head = 0
    tail = 1
    while head < tail:
        v = queue[head]
        head += 1
        for w in range(n):
            if not B[v, w] or visited[w]:
                continue
            if v == src and w == dst:
                continue
            if w == dst:
                return True
            visited[w] = 1
            queue[tail] = w
            tail += 1
    return False


def flip_sweep(
    cnp.uint8_t[:, ::1] B,
    long[::1] deg,
    long[::1] labels,
    long[::1] sizes,
    double[:, ::1] Minv,
    double[::1] eps,
    double[::1] resid,
    double[:, ::1] eta,
    long[::1] pair_i,
    long[::1] pair_j,
    long[::1] ks,
    double[::1] log_us,
    double[::1] s_norms,
    double[::1] fstate,
    long[::1] meta,
    long[::1] counters,
    long[::1] queue,
    cnp.uint8_t[::1] visited,
    double[:, ::1] mbuf,
    double[:, ::1] lbuf,
    double[::1] wbuf,
):
    cdef Py_ssize_t n = B.shape[0]
    cdef Py_ssize_t n_prop = ks.shape[0]
    cdef double s2e = fstate[2]
    cdef double s2m = fstate[3]
    cdef Py_ssize_t t, i, j, v, a, b
    cdef long k, li, lj, lab, lv, nA, nB, nS, src, dst, free
    cdef bint adding, changes
    cdef double eta_ij, tr, sgn, x, dpld, de, dquad, dbern, logr, denom, coef, wa
    cdef double tau2, s, shift_b, dmu, ev, r_old, r_new, logw, logq, ssum, s_star
    for t in range(n_prop):
        k = ks[t]
        i = pair_i[k]
        j = pair_j[k]
        eta_ij = eta[i, j]
        adding = B[i, j] == 0
        if adding:
            changes = labels[i] != labels[j]
        else:
            changes = not _side_of_after_removal(B, n, i, j, visited, queue)
        if not changes:
            tr = Minv[i, i] + Minv[j, j] - 2.0 * Minv[i, j]
            sgn = 1.0 if adding else -1.0
            x = sgn * tr
            if x <= -1.0 + 1e-9:
                fstate[0] = _refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                meta[1] = 0
                tr = Minv[i, i] + Minv[j, j] - 2.0 * Minv[i, j]
                x = sgn * tr
            dpld = log1p(x)
            de = eps[i] - eps[j]
            dquad = sgn * de * de
            dbern = eta_ij if adding else -eta_ij
            logr = dbern + 0.5 * dpld - dquad / (2.0 * s2e)
            if log_us[t] < logr:
                denom = 1.0 + x
                for v in range(n):
                    wbuf[v] = Minv[v, i] - Minv[v, j]
                coef = sgn / denom
                for a in range(n):
                    wa = coef * wbuf[a]
                    for b in range(n):
                        Minv[a, b] -= wa * wbuf[b]
                if adding:
                    B[i, j] = 1
                    B[j, i] = 1
                    deg[i] += 1
                    deg[j] += 1
                else:
                    B[i, j] = 0
                    B[j, i] = 0
                    deg[i] -= 1
                    deg[j] -= 1
                fstate[0] += dpld
                fstate[1] += dquad
                counters[0] += 1
                meta[1] += 1
                if meta[1] >= _REFRESH_EVERY:
                    fstate[0] = _refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                    meta[1] = 0
        elif adding:
            li = labels[i]
            lj = labels[j]
            nA = sizes[li]
            nB = sizes[lj]
            nS = nA + nB
            tau2 = s2e * (1.0 / nA + 1.0 / nB)
            s = s_norms[t] * sqrt(tau2)
            shift_b = -s * nA / nB
            dpld = log(<double>nS) - log(<double>nA) - log(<double>nB)
            de = (eps[i] + s) - (eps[j] + shift_b)
            dquad = de * de
            dmu = 0.0
            for v in range(n):
                lv = labels[v]
                if lv == li:
                    ev = eps[v] + s
                elif lv == lj:
                    ev = eps[v] + shift_b
                else:
                    continue
                r_old = resid[v] - eps[v]
                r_new = resid[v] - ev
                dmu += r_new * r_new - r_old * r_old
            dmu /= -2.0 * s2m
            logw = 0.5 * (log(<double>nA) + log(<double>nS) - log(<double>nB))
            logq = -0.5 * log(2.0 * _PI * tau2) - s * s / (2.0 * tau2)
            logr = (
                eta_ij
                - 0.5 * log(2.0 * _PI * s2e)
                + 0.5 * dpld
                - dquad / (2.0 * s2e)
                + dmu
                + logw
                - logq
            )
            if log_us[t] < logr:
                for v in range(n):
                    lv = labels[v]
                    if lv == li:
                        eps[v] += s
                    elif lv == lj:
                        eps[v] += shift_b
                B[i, j] = 1
                B[j, i] = 1
                deg[i] += 1
                deg[j] += 1
                if nA < nB:
                    src = li
                    dst = lj
                else:
                    src = lj
                    dst = li
                for v in range(n):
                    if labels[v] == src:
                        labels[v] = dst
                sizes[dst] = nS
                sizes[src] = 0
                meta[0] -= 1
                fstate[0] += dpld
                fstate[1] += dquad
                counters[0] += 1
                counters[1] += 1
                fstate[0] = _refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                meta[1] = 0
        else:
            lab = labels[i]
            nS = sizes[lab]
            nA = 0
            ssum = 0.0
            for v in range(n):
                if visited[v]:
                    nA += 1
                    ssum += eps[v]
            nB = nS - nA
            s_star = ssum / nA
            shift_b = s_star * nA / nB
            tau2 = s2e * (1.0 / nA + 1.0 / nB)
            dpld = log(<double>nA) + log(<double>nB) - log(<double>nS)
            de = eps[i] - eps[j]
            dquad = -de * de
            dmu = 0.0
            for v in range(n):
                if visited[v]:
                    ev = eps[v] - s_star
                elif labels[v] == lab:
                    ev = eps[v] + shift_b
                else:
                    continue
                r_old = resid[v] - eps[v]
                r_new = resid[v] - ev
                dmu += r_new * r_new - r_old * r_old
            dmu /= -2.0 * s2m
            logw = 0.5 * (log(<double>nA) + log(<double>nS) - log(<double>nB))
            logq = -0.5 * log(2.0 * _PI * tau2) - s_star * s_star / (2.0 * tau2)
            logr = (
                -eta_ij
                + 0.5 * log(2.0 * _PI * s2e)
                + 0.5 * dpld
                - dquad / (2.0 * s2e)
                + dmu
                + logq
                - logw
            )
            if log_us[t] < logr:
                for v in range(n):
                    if visited[v]:
                        eps[v] -= s_star
                    elif labels[v] == lab:
                        eps[v] += shift_b
                B[i, j] = 0
                B[j, i] = 0
                deg[i] -= 1
                deg[j] -= 1
                free = 0
                while sizes[free] != 0:
                    free += 1
                for v in range(n):
                    if visited[v]:
                        labels[v] = free
                sizes[free] = nA
                sizes[lab] = nB
                meta[0] += 1
                fstate[0] += dpld
                fstate[1] += dquad
                counters[0] += 1
                counters[1] += 1
                fstate[0] = _refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                meta[1] = 0


def position_sweep(
    double[:, ::1] Z,
    double[:, ::1] d2,
    double[:, ::1] eta,
    cnp.uint8_t[:, ::1] B,
    double[:, ::1] d1,
    double[:, ::1] pmeans,
    double alpha,
    double gamma,
    double sigma2_z,
    double step,
    double[:, ::1] norms,
    double[::1] log_us,
    long[::1] counters,
    double[::1] d2row,
    double[::1] etarow,
):
    cdef Py_ssize_t n = Z.shape[0]
    cdef double omg = 1.0 - gamma
    cdef Py_ssize_t i, j
    cdef double p0, p1, m0, m1, old0, old1, new0, new1, dlt, dx, dy, dn, en, eo
    for i in range(n):
        p0 = Z[i, 0] + step * norms[i, 0]
        p1 = Z[i, 1] + step * norms[i, 1]
        if p0 * p0 + p1 * p1 > 1.0:
            continue
        m0 = pmeans[i, 0]
        m1 = pmeans[i, 1]
        old0 = Z[i, 0] - m0
        old1 = Z[i, 1] - m1
        new0 = p0 - m0
        new1 = p1 - m1
        dlt = (old0 * old0 + old1 * old1 - new0 * new0 - new1 * new1) / (2.0 * sigma2_z)
        for j in range(n):
            if j == i:
                continue
            dx = p0 - Z[j, 0]
            dy = p1 - Z[j, 1]
            dn = sqrt(dx * dx + dy * dy)
            en = alpha - gamma * d1[i, j] - omg * dn
            eo = eta[i, j]
            d2row[j] = dn
            etarow[j] = en
            if B[i, j]:
                dlt += en - eo
            dlt += _softplus(eo) - _softplus(en)
        if log_us[i] < dlt:
            Z[i, 0] = p0
            Z[i, 1] = p1
            for j in range(n):
                if j == i:
                    continue
                d2[i, j] = d2row[j]
                d2[j, i] = d2row[j]
                eta[i, j] = etarow[j]
                eta[j, i] = etarow[j]
            counters[2] += 1


def alpha_gamma_update(
    double[:, ::1] eta,
    cnp.uint8_t[:, ::1] B,
    double[:, ::1] d1,
    double[:, ::1] d2,
    double[::1] pars,
    bint update_alpha,
    bint update_gamma,
    double[::1] norms,
    double[::1] log_us,
    long[::1] counters,
):
    cdef Py_ssize_t n = B.shape[0]
    cdef Py_ssize_t i, j
    cdef double alpha, gamma, da, anew, dlt, e, en, g, omg
    if update_alpha:
        alpha = pars[0]
        da = pars[3] * norms[0]
        anew = alpha + da
        dlt = -(anew * anew - alpha * alpha) / (2.0 * pars[2])
        for i in range(n):
            for j in range(i + 1, n):
                e = eta[i, j]
                en = e + da
                if B[i, j]:
                    dlt += da
                dlt += _softplus(e) - _softplus(en)
        if log_us[0] < dlt:
            pars[0] = anew
            for i in range(n):
                for j in range(i + 1, n):
                    e = eta[i, j] + da
                    eta[i, j] = e
                    eta[j, i] = e
            counters[3] += 1
    if update_gamma:
        alpha = pars[0]
        gamma = pars[1]
        g = gamma + pars[4] * norms[1]
        while True:
            if g < 0.0:
                g = -g
            elif g > 1.0:
                g = 2.0 - g
            else:
                break
        omg = 1.0 - g
        dlt = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                e = eta[i, j]
                en = alpha - g * d1[i, j] - omg * d2[i, j]
                if B[i, j]:
                    dlt += en - e
                dlt += _softplus(e) - _softplus(en)
        if log_us[1] < dlt:
            pars[1] = g
            for i in range(n):
                for j in range(i + 1, n):
                    en = alpha - g * d1[i, j] - omg * d2[i, j]
                    eta[i, j] = en
                    eta[j, i] = en
            counters[4] += 1
