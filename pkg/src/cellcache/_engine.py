"""Compiled serving-phase loop.

Mirrors :func:`cellcache.simulator.step_serving` operation for operation and
consumes the same pre-drawn uniforms, so both paths make identical caching
and learning decisions. The reference path is the readable one; this one is
what sweeps run on.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _gibbs(scores, beta, out):
    n = scores.shape[0]
    m = -np.inf
    for k in range(n):
        z = beta * scores[k]
        out[k] = z
        if z > m:
            m = z
    total = 0.0
    for k in range(n):
        out[k] = math.exp(out[k] - m)
        total += out[k]
    for k in range(n):
        out[k] /= total


@njit(cache=True)
def _inverse_cdf(weights, n, u):
    # index of the first cumulative weight strictly above u * total
    total = 0.0
    for k in range(n):
        total += weights[k]
    x = u * total
    acc = 0.0
    for k in range(n):
        acc += weights[k]
        if acc > x:
            return k
    return n - 1


@njit(cache=True)
def serve(
    bounds, req_user, req_content, req_is_sue,
    association, sue_sinr, mue_sinr, sizes,
    capacity_bits, bandwidth_hz, delay_cap_s,
    learn, beta, removal_numerator, e_alpha, e_gamma, e_zeta,
    action_tape, evict_tape,
):
    B = action_tape.shape[0]
    T = action_tape.shape[1]
    C = sizes.shape[0]

    cached = np.zeros((B, C), dtype=np.bool_)
    used = np.zeros(B)
    counts = np.zeros((B, C), dtype=np.int64)
    evict_cursor = np.zeros(B, dtype=np.int64)

    v = np.zeros((B, C))
    r = np.zeros((B, C))
    pi = np.full((B, C), 1.0 / C)
    clock = np.ones(B, dtype=np.int64)

    actions = np.zeros((B, T), dtype=np.int64)
    utilities = np.full((B, T), np.nan)
    max_regret = np.full((B, T), np.nan)
    inst_requests = np.zeros(T, dtype=np.int64)
    inst_hits = np.zeros(T, dtype=np.int64)
    inst_delay = np.zeros(T)

    ids = np.zeros(C, dtype=np.int64)
    w = np.zeros(C)
    target = np.zeros(C)
    rplus = np.zeros(C)
    n_bs = np.zeros(B + 1, dtype=np.int64)
    J = np.zeros(B)
    has = np.zeros(B, dtype=np.bool_)

    sue_count = 0
    hits = 0
    delay_sum = 0.0
    scbs_bits = 0.0
    mbs_bits = 0.0

    for t in range(1, T + 1):
        # caching decisions
        beta_rm = removal_numerator / t
        for b in range(B):
            u = action_tape[b, t - 1]
            if learn:
                c = _inverse_cdf(pi[b], C, u)
            else:
                c = min(int(u * C), C - 1)
            actions[b, t - 1] = c
            if cached[b, c]:
                continue
            while used[b] + sizes[c] > capacity_bits * (1 + 1e-12):
                n = 0
                for k in range(C):
                    if cached[b, k]:
                        ids[n] = k
                        n += 1
                ue = evict_tape[b, evict_cursor[b]]
                evict_cursor[b] += 1
                if learn:
                    m = np.inf
                    for j in range(n):
                        s = beta_rm * counts[b, ids[j]]
                        if s < m:
                            m = s
                    for j in range(n):
                        w[j] = math.exp(-beta_rm * counts[b, ids[j]] + m)
                    victim = ids[_inverse_cdf(w, n, ue)]
                else:
                    victim = ids[min(int(ue * n), n - 1)]
                cached[b, victim] = False
                used[b] -= sizes[victim]
            cached[b, c] = True
            used[b] += sizes[c]

        # serving
        lo = bounds[t - 1]
        hi = bounds[t]
        for k in range(B + 1):
            n_bs[k] = 0
        for i in range(lo, hi):
            if req_is_sue[i]:
                q = association[req_user[i]]
                if cached[q - 1, req_content[i]]:
                    n_bs[q] += 1
                else:
                    n_bs[0] += 1
            else:
                n_bs[0] += 1
        for b in range(B):
            J[b] = 0.0
            has[b] = False
        for i in range(lo, hi):
            c = req_content[i]
            user = req_user[i]
            if req_is_sue[i]:
                q = association[user]
                hit = cached[q - 1, c]
                bs = q if hit else 0
                sinr = sue_sinr[bs, user]
            else:
                bs = 0
                sinr = mue_sinr[user]
            rate = bandwidth_hz / n_bs[bs] * math.log2(1.0 + sinr)
            d = sizes[c] / rate if rate > 0 else delay_cap_s
            if d > delay_cap_s:
                d = delay_cap_s
            if req_is_sue[i]:
                J[q - 1] += d
                has[q - 1] = True
                counts[q - 1, c] += 1
                sue_count += 1
                delay_sum += d
                inst_requests[t - 1] += 1
                inst_delay[t - 1] += d
                if hit:
                    hits += 1
                    inst_hits[t - 1] += 1
                    scbs_bits += sizes[c]
                else:
                    mbs_bits += sizes[c]

        # learning
        if learn:
            for b in range(B):
                tb = float(clock[b])
                alpha = tb ** -e_alpha
                gamma = tb ** -e_gamma
                zeta = tb ** -e_zeta
                for k in range(C):
                    rplus[k] = r[b, k] if r[b, k] > 0.0 else 0.0
                _gibbs(rplus, beta, target)
                if has[b]:
                    vt = 1.0 / J[b]
                    utilities[b, t - 1] = vt
                    a = actions[b, t - 1]
                    for k in range(C):
                        r[b, k] = r[b, k] + gamma * (v[b, k] - vt - r[b, k])
                    v[b, a] = v[b, a] + alpha * (vt - v[b, a])
                m = -np.inf
                for k in range(C):
                    pi[b, k] = pi[b, k] + zeta * (target[k] - pi[b, k])
                    if r[b, k] > m:
                        m = r[b, k]
                max_regret[b, t - 1] = m
                clock[b] += 1

    return (sue_count, hits, delay_sum, scbs_bits, mbs_bits,
            actions, utilities, max_regret, inst_requests, inst_hits, inst_delay, pi, r, v, cached, counts)
