"""Numba kernels for BP and peeling decoding on CSR pooling graphs.

Graph arrays (see :class:`qgtbp.graph.PoolingGraph`):

- ``cn_ptr`` (r+1,) and ``edge_item`` (E,): edges in CN-major order.
- ``vn_ptr`` (n+1,) and ``vn_edges`` (E,): edge ids grouped by item.

Messages are stored per edge as separate ``p0`` / ``p1`` float64 arrays.
All kernels are allocation-free in their inner loops; workspaces are
allocated by the callers.
"""

from __future__ import annotations

import numpy as np
from numba import njit

KERNEL_CONVOLUTION = 0
KERNEL_ENUMERATION = 1

PEEL_OK = 0
PEEL_INCONSISTENT = 1

MAX_ENUMERATION_DEGREE = 17


@njit(cache=True, inline="always")
def _normalize(a0, a1, eps, floor):
    # exact zeros are logical certainties and stay exact; positive masses are
    # kept >= floor so that products of small messages never underflow to a
    # spurious certainty
    if a0 < eps and a1 < eps:
        return 0.5, 0.5
    tot = a0 + a1
    p0 = a0 / tot
    p1 = a1 / tot
    if 0.0 < p0 < floor:
        return floor, 1.0 - floor
    if 0.0 < p1 < floor:
        return 1.0 - floor, floor
    return p0, p1


@njit(cache=True)
def vn_combine(prior0, prior1, psi0, psi1, vn_edges, lo, hi, skip, eps, floor):
    """Prior times the product of ``psi`` over ``vn_edges[lo:hi]`` except slot ``skip``."""
    a0 = prior0
    a1 = prior1
    for k in range(lo, hi):
        if k == skip:
            continue
        e = vn_edges[k]
        a0 *= psi0[e]
        a1 *= psi1[e]
    return _normalize(a0, a1, eps, floor)


@njit(cache=True)
def cn_convolution(mu0, mu1, lo, hi, s, out0, out1, pre, suf, eps, floor):
    """Exact CN update for edges ``lo:hi`` by prefix/suffix polynomial products.

    The outgoing ``psi(b)`` on slot ``t`` is the coefficient of ``z**(s - b)``
    in ``prod_{k != t} (mu0[k] + mu1[k] z)``.  Polynomials are truncated at
    degree ``s`` since higher coefficients are never read.
    """
    deg = hi - lo
    # pre[k, :] = product of factors 0..k-1, suf[k, :] = product of k..deg-1
    for a in range(s + 1):
        pre[0, a] = 0.0
        suf[deg, a] = 0.0
    pre[0, 0] = 1.0
    suf[deg, 0] = 1.0
    for k in range(deg):
        q0 = mu0[lo + k]
        q1 = mu1[lo + k]
        top = min(k + 1, s)
        pre[k + 1, 0] = pre[k, 0] * q0
        for a in range(1, top + 1):
            hi_term = pre[k, a] * q0 if a <= k else 0.0
            pre[k + 1, a] = hi_term + pre[k, a - 1] * q1
        for a in range(top + 1, s + 1):
            pre[k + 1, a] = 0.0
    for k in range(deg - 1, -1, -1):
        q0 = mu0[lo + k]
        q1 = mu1[lo + k]
        width = deg - k
        top = min(width, s)
        suf[k, 0] = suf[k + 1, 0] * q0
        for a in range(1, top + 1):
            hi_term = suf[k + 1, a] * q0 if a <= width - 1 else 0.0
            suf[k, a] = hi_term + suf[k + 1, a - 1] * q1
        for a in range(top + 1, s + 1):
            suf[k, a] = 0.0
    for t in range(deg):
        c0 = _coefficient(pre, suf, t, deg, s)
        c1 = _coefficient(pre, suf, t, deg, s - 1)
        out0[lo + t], out1[lo + t] = _normalize(c0, c1, eps, floor)


@njit(cache=True, inline="always")
def _coefficient(pre, suf, t, deg, m):
    # coefficient of z**m in pre[t] * suf[t+1]; zero outside [0, deg-1]
    if m < 0 or m > deg - 1:
        return 0.0
    acc = 0.0
    for a in range(max(0, m - (deg - 1 - t)), min(t, m) + 1):
        acc += pre[t, a] * suf[t + 1, m - a]
    return acc


@njit(cache=True)
def cn_enumeration(mu0, mu1, lo, hi, s, out0, out1, eps, floor):
    """Exact CN update by summing over all assignments of the other neighbors."""
    deg = hi - lo
    others = deg - 1
    for t in range(deg):
        c0 = 0.0
        c1 = 0.0
        for mask in range(1 << others):
            cnt = 0
            x = mask
            while x:
                cnt += x & 1
                x >>= 1
            if cnt != s and cnt != s - 1:
                continue
            prod = 1.0
            bit = 0
            for k in range(deg):
                if k == t:
                    continue
                if (mask >> bit) & 1:
                    prod *= mu1[lo + k]
                else:
                    prod *= mu0[lo + k]
                bit += 1
            if cnt == s:
                c0 += prod
            else:
                c1 += prod
        out0[lo + t], out1[lo + t] = _normalize(c0, c1, eps, floor)


@njit(cache=True)
def bp_decode(
    cn_ptr, edge_item, vn_ptr, vn_edges, s, delta, max_iter, eps, floor, kernel,
    tie_one, stop_on_syndrome, skip_cycles, mu0, mu1, psi0, psi1, app0, app1, dhat,
    pre, suf, syn,
):
    """Flooding BP for noiseless quantitative group testing.

    Fills ``app0/app1`` with the final posteriors and ``dhat`` with decisions;
    returns ``(iterations_used, syndrome_satisfied)``.

    The CN messages fully determine the next iteration.  With ``skip_cycles``,
    once they repeat bit-for-bit with period 1 or 2 the remaining iterations
    are skipped and the state iteration ``max_iter`` would reach is restored,
    so results equal those of the unabridged loop.
    """
    n = vn_ptr.shape[0] - 1
    r = cn_ptr.shape[0] - 1
    ne = psi0.shape[0]
    prior0 = 1.0 - delta
    prior1 = delta
    for e in range(ne):
        psi0[e] = 0.5
        psi1[e] = 0.5
    # CN messages of the previous two iterations
    h = np.empty((4, ne if skip_cycles else 0))
    satisfied = False
    it = 0
    while it < max_iter:
        it += 1
        if skip_cycles:
            for e in range(ne):
                h[2, e] = h[0, e]
                h[3, e] = h[1, e]
                h[0, e] = psi0[e]
                h[1, e] = psi1[e]
        for j in range(n):
            lo = vn_ptr[j]
            hi = vn_ptr[j + 1]
            for k in range(lo, hi):
                e = vn_edges[k]
                mu0[e], mu1[e] = vn_combine(prior0, prior1, psi0, psi1, vn_edges, lo, hi, k, eps, floor)
        for i in range(r):
            if kernel == KERNEL_ENUMERATION:
                cn_enumeration(mu0, mu1, cn_ptr[i], cn_ptr[i + 1], s[i], psi0, psi1, eps, floor)
            else:
                cn_convolution(
                    mu0, mu1, cn_ptr[i], cn_ptr[i + 1], s[i], psi0, psi1, pre, suf, eps, floor
                )
        satisfied = _decide(
            prior0, prior1, psi0, psi1, cn_ptr, edge_item, vn_ptr, vn_edges, s,
            eps, floor, tie_one, app0, app1, dhat, syn,
        )
        if satisfied and stop_on_syndrome:
            break
        if skip_cycles and it >= 2 and it < max_iter and _same(psi0, psi1, h, 2):
            if (max_iter - it) % 2 == 1:
                for e in range(ne):
                    psi0[e] = h[0, e]
                    psi1[e] = h[1, e]
                satisfied = _decide(
                    prior0, prior1, psi0, psi1, cn_ptr, edge_item, vn_ptr, vn_edges,
                    s, eps, floor, tie_one, app0, app1, dhat, syn,
                )
            it = max_iter
    return it, satisfied


@njit(cache=True)
def _same(psi0, psi1, h, row):
    for e in range(psi0.shape[0]):
        if psi0[e] != h[row, e] or psi1[e] != h[row + 1, e]:
            return False
    return True


@njit(cache=True)
def _decide(
    prior0, prior1, psi0, psi1, cn_ptr, edge_item, vn_ptr, vn_edges, s, eps,
    floor, tie_one, app0, app1, dhat, syn,
):
    for j in range(vn_ptr.shape[0] - 1):
        p0, p1 = vn_combine(prior0, prior1, psi0, psi1, vn_edges, vn_ptr[j], vn_ptr[j + 1], -1, eps, floor)
        app0[j] = p0
        app1[j] = p1
        if p1 > p0 or (tie_one and p1 == p0):
            dhat[j] = 1
        else:
            dhat[j] = 0
    return syndrome_matches(cn_ptr, edge_item, dhat, s, syn)


@njit(cache=True)
def syndrome_matches(cn_ptr, edge_item, d, s, syn):
    r = cn_ptr.shape[0] - 1
    ok = True
    for i in range(r):
        acc = 0
        for e in range(cn_ptr[i], cn_ptr[i + 1]):
            acc += d[edge_item[e]]
        syn[i] = acc
        if acc != s[i]:
            ok = False
    return ok


@njit(cache=True)
def peel(cn_ptr, edge_item, vn_ptr, vn_edges, edge_check, s, status, residual, unresolved):
    """Hard-decision peeling to a fixpoint.

    ``status`` receives -1 (unresolved), 0 or 1 per item.  Returns
    ``(code, firing_rounds)``; ``code`` is ``PEEL_INCONSISTENT`` if a residual
    leaves ``[0, unresolved]``, which noiseless syndromes never cause.
    """
    n = vn_ptr.shape[0] - 1
    r = cn_ptr.shape[0] - 1
    for j in range(n):
        status[j] = -1
    for i in range(r):
        residual[i] = s[i]
        unresolved[i] = cn_ptr[i + 1] - cn_ptr[i]
        if residual[i] < 0 or residual[i] > unresolved[i]:
            return PEEL_INCONSISTENT, 0
    rounds = 0
    while True:
        fired = False
        for rule in range(2):
            for i in range(r):
                if unresolved[i] == 0:
                    continue
                if rule == 0 and residual[i] != 0:
                    continue
                if rule == 1 and residual[i] != unresolved[i]:
                    continue
                fired = True
                for e in range(cn_ptr[i], cn_ptr[i + 1]):
                    j = edge_item[e]
                    if status[j] != -1:
                        continue
                    status[j] = rule
                    for k in range(vn_ptr[j], vn_ptr[j + 1]):
                        c = edge_check[vn_edges[k]]
                        unresolved[c] -= 1
                        residual[c] -= rule
                        if residual[c] < 0 or residual[c] > unresolved[c]:
                            return PEEL_INCONSISTENT, rounds + 1
        if not fired:
            break
        rounds += 1
    return PEEL_OK, rounds


@njit(cache=True)
def _count(d, dhat, out):
    for j in range(d.shape[0]):
        if d[j] == 1:
            out[0] += 1
            if dhat[j] == 0:
                out[1] += 1
        else:
            out[2] += 1
            if dhat[j] == 1:
                out[3] += 1


@njit(cache=True)
def run_batch(
    cn_ptr, edge_item, vn_ptr, vn_edges, edge_check, uniforms, deltas,
    run_bp, run_peel, max_iter, eps, floor, kernel, skip_cycles, counts,
):
    """Simulate every row of ``uniforms`` at every prevalence in ``deltas``.

    Row ``t`` thresholded at ``delta`` gives the defective vector of trial
    ``t``.  ``counts[k, dec, :]`` accumulates (defectives, misdetections,
    nondefectives, false alarms) for decoder ``dec`` (0 = BP, 1 = peeling).
    Returns 0, or 1 + the row index at which peeling found an inconsistency.
    """
    n = vn_ptr.shape[0] - 1
    r = cn_ptr.shape[0] - 1
    ne = edge_item.shape[0]
    maxdeg = 0
    for i in range(r):
        maxdeg = max(maxdeg, cn_ptr[i + 1] - cn_ptr[i])
    mu0 = np.empty(ne)
    mu1 = np.empty(ne)
    psi0 = np.empty(ne)
    psi1 = np.empty(ne)
    app0 = np.empty(n)
    app1 = np.empty(n)
    pre = np.empty((maxdeg + 1, maxdeg + 1))
    suf = np.empty((maxdeg + 1, maxdeg + 1))
    d = np.empty(n, dtype=np.int64)
    dhat = np.empty(n, dtype=np.int64)
    status = np.empty(n, dtype=np.int64)
    s = np.empty(r, dtype=np.int64)
    syn = np.empty(r, dtype=np.int64)
    residual = np.empty(r, dtype=np.int64)
    unresolved = np.empty(r, dtype=np.int64)
    for t in range(uniforms.shape[0]):
        for k in range(deltas.shape[0]):
            delta = deltas[k]
            for j in range(n):
                d[j] = 1 if uniforms[t, j] < delta else 0
            for i in range(r):
                acc = 0
                for e in range(cn_ptr[i], cn_ptr[i + 1]):
                    acc += d[edge_item[e]]
                s[i] = acc
            if run_bp:
                bp_decode(
                    cn_ptr, edge_item, vn_ptr, vn_edges, s, delta, max_iter, eps,
                    floor, kernel, False, True, skip_cycles, mu0, mu1, psi0, psi1, app0, app1, dhat,
                    pre, suf, syn,
                )
                _count(d, dhat, counts[k, 0])
            if run_peel:
                code, _ = peel(
                    cn_ptr, edge_item, vn_ptr, vn_edges, edge_check, s, status,
                    residual, unresolved,
                )
                if code != PEEL_OK:
                    return 1 + t
                for j in range(n):
                    dhat[j] = 1 if status[j] == 1 else 0
                _count(d, dhat, counts[k, 1])
    return 0
