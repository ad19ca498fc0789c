"""Pure-Python sampler kernels.

These are the reference implementations of the per-sweep hot loops: edge
flips, latent-position updates, and the alpha/gamma random walks. The
compiled backend mirrors them statement for statement, and both consume
pre-drawn randomness arrays so a chain is a pure function of its inputs.

All scalar math goes through the ``math`` module (libm), matching the
compiled kernels' libc calls.
"""
from __future__ import annotations

import math

BACKEND = "pure"

# Sherman-Morrison updates drift; rebuild the anchored inverse after this many.
REFRESH_EVERY = 2048

_LOG_2PI = math.log(2.0 * math.pi)


def _softplus(x: float) -> float:
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf) -> float:
    """Rebuild the component-anchored matrix M = D - B + anchors, then set
    Minv to its inverse. Returns log det M (= pseudo log det of D - B).

    Plain Cholesky loops, no pivoting: M is strictly positive definite.
    """
    n = B.shape[0]
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
        d = math.sqrt(s)
        lbuf[c, c] = d
        pld += 2.0 * math.log(d)
        for i in range(c + 1, n):
            s = mbuf[i, c]
            for k in range(c):
                s -= lbuf[i, k] * lbuf[c, k]
            lbuf[i, c] = s / d
    # invert L into mbuf (lower triangle), then Minv = Linv^T Linv
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


def _side_of_after_removal(B, n, src, dst, visited, queue) -> bool:
    """BFS from src ignoring edge (src, dst). Returns True if dst is still
    reachable; otherwise ``visited`` marks exactly src's post-removal side."""
    for v in range(n):
        visited[v] = 0
    visited[src] = 1
    queue[0] = src
    head, tail = 0, 1
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
    B,
    deg,
    labels,
    sizes,
    Minv,
    eps,
    resid,
    eta,
    pair_i,
    pair_j,
    ks,
    log_us,
    s_norms,
    fstate,
    meta,
    counters,
    queue,
    visited,
    mbuf,
    lbuf,
    wbuf,
):
    """Metropolis single-edge flips with exact merge/split moves.

    fstate: [pseudo_logdet, quadform, sigma2_eps, sigma2_mu] (0 and 1 updated).
    meta: [n_components, sherman_morrison_count]. counters: [accepted flips,
    accepted partition changes] accumulated. eps is shifted in place by the
    dimension-matching merge/split maps.
    """
    n = B.shape[0]
    n_prop = ks.shape[0]
    s2e = fstate[2]
    s2m = fstate[3]
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
                # drift guard: rebuild and re-read (cannot occur mathematically)
                fstate[0] = refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                meta[1] = 0
                tr = Minv[i, i] + Minv[j, j] - 2.0 * Minv[i, j]
                x = sgn * tr
            dpld = math.log1p(x)
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
                if meta[1] >= REFRESH_EVERY:
                    fstate[0] = refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                    meta[1] = 0
        elif adding:
            # merge the components of i and j, extending eps along the
            # constraint-orthogonal direction with an auxiliary scalar
            li = labels[i]
            lj = labels[j]
            nA = sizes[li]
            nB = sizes[lj]
            nS = nA + nB
            tau2 = s2e * (1.0 / nA + 1.0 / nB)
            s = s_norms[t] * math.sqrt(tau2)
            shift_b = -s * nA / nB
            dpld = math.log(float(nS)) - math.log(float(nA)) - math.log(float(nB))
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
            logw = 0.5 * (math.log(float(nA)) + math.log(float(nS)) - math.log(float(nB)))
            logq = -0.5 * math.log(2.0 * math.pi * tau2) - s * s / (2.0 * tau2)
            logr = (
                eta_ij
                - 0.5 * math.log(2.0 * math.pi * s2e)
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
                    src, dst = li, lj
                else:
                    src, dst = lj, li
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
                fstate[0] = refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                meta[1] = 0
        else:
            # split: (i, j) is a bridge; visited marks i's detached side
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
            dpld = math.log(float(nA)) + math.log(float(nB)) - math.log(float(nS))
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
            logw = 0.5 * (math.log(float(nA)) + math.log(float(nS)) - math.log(float(nB)))
            logq = -0.5 * math.log(2.0 * math.pi * tau2) - s_star * s_star / (2.0 * tau2)
            logr = (
                -eta_ij
                + 0.5 * math.log(2.0 * math.pi * s2e)
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
                fstate[0] = refresh_minv(B, deg, labels, sizes, Minv, mbuf, lbuf)
                meta[1] = 0


def position_sweep(
    Z,
    d2,
    eta,
    B,
    d1,
    pmeans,
    alpha,
    gamma,
    sigma2_z,
    step,
    norms,
    log_us,
    counters,
    d2row,
    etarow,
):
    """Per-unit bivariate random-walk Metropolis on the latent positions.

    Proposals leaving the closed unit disk are rejected outright (truncated
    prior). Accepted moves rewrite the unit's row/column of d2 and eta.
    """
    n = Z.shape[0]
    omg = 1.0 - gamma
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
            dn = math.sqrt(dx * dx + dy * dy)
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
    eta,
    B,
    d1,
    d2,
    pars,
    update_alpha,
    update_gamma,
    norms,
    log_us,
    counters,
):
    """Random-walk Metropolis for alpha (Gaussian prior) and gamma (reflected
    into [0,1], flat prior). pars: [alpha, gamma, sigma2_alpha, step_alpha,
    step_gamma]; entries 0/1 and eta are updated on acceptance."""
    n = B.shape[0]
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
