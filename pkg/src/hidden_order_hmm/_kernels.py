"""
Numerical Kernels

numba-compiled recursions behind the HMM and HSMM modules. Every kernel works on
float64 parameter arrays and an int64 symbol array, and releases the GIL so the
pipeline can run member fits on a thread pool.

Scaling convention: forward quantities at step t are divided by the product of
the per-step normalizers c_0..c_t, backward quantities by c_{t+1}..c_{T-1}
(HMM) or c_t..c_{T-1} (HSMM), so ln P(O) = sum(ln c_t).
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def forward_scaled(initial, transition, emission, obs):
    T = obs.shape[0]
    N = initial.shape[0]
    alpha = np.zeros((T, N))
    scale = np.zeros(T)

    total = 0.0
    for i in range(N):
        alpha[0, i] = initial[i] * emission[i, obs[0]]
        total += alpha[0, i]
    if total <= 0.0:
        return alpha, scale
    for i in range(N):
        alpha[0, i] /= total
    scale[0] = total

    for t in range(1, T):
        o = obs[t]
        total = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[t - 1, i] * transition[i, j]
            alpha[t, j] = acc * emission[j, o]
            total += alpha[t, j]
        if total <= 0.0:
            # zero-probability observation; caller sees scale[t] == 0
            return alpha, scale
        for j in range(N):
            alpha[t, j] /= total
        scale[t] = total
    return alpha, scale


@njit(cache=True, nogil=True)
def backward_scaled(transition, emission, obs, scale):
    T = obs.shape[0]
    N = transition.shape[0]
    beta = np.zeros((T, N))
    for i in range(N):
        beta[T - 1, i] = 1.0
    for t in range(T - 2, -1, -1):
        o = obs[t + 1]
        c = scale[t + 1]
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += transition[i, j] * emission[j, o] * beta[t + 1, j]
            beta[t, i] = acc / c
    return beta


@njit(cache=True, nogil=True)
def transition_counts(alpha, beta, transition, emission, obs, scale):
    """Expected transition counts summed over t (sum of xi_t)"""
    T = obs.shape[0]
    N = transition.shape[0]
    counts = np.zeros((N, N))
    for t in range(T - 1):
        o = obs[t + 1]
        c = scale[t + 1]
        for i in range(N):
            a = alpha[t, i]
            if a == 0.0:
                continue
            for j in range(N):
                counts[i, j] += a * transition[i, j] * emission[j, o] * beta[t + 1, j] / c
    return counts


@njit(cache=True, nogil=True)
def viterbi_path(log_initial, log_transition, log_emission, obs):
    T = obs.shape[0]
    N = log_initial.shape[0]
    delta = np.empty((T, N))
    back = np.zeros((T, N), dtype=np.int64)
    for i in range(N):
        delta[0, i] = log_initial[i] + log_emission[i, obs[0]]

    for t in range(1, T):
        o = obs[t]
        for j in range(N):
            best = -np.inf
            arg = 0
            # strict comparison keeps the lowest index among equal scores
            for i in range(N):
                v = delta[t - 1, i] + log_transition[i, j]
                if v > best:
                    best = v
                    arg = i
            delta[t, j] = best + log_emission[j, o]
            back[t, j] = arg

    path = np.zeros(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for i in range(N):
        if delta[T - 1, i] > best:
            best = delta[T - 1, i]
            arg = i
    path[T - 1] = arg
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


@njit(cache=True, nogil=True)
def hsmm_forward(initial, transition, emission, sojourn, survivor, obs):
    """Explicit-duration forward pass

    Returns (ends, starts, scale): ends[t, j] is the scaled probability that a
    segment of state j ends at t and is followed by a jump, starts[t, j] that a
    segment of state j begins at t. The last sojourn is right-censored through
    the survivor function.
    """
    T = obs.shape[0]
    N = initial.shape[0]
    L = sojourn.shape[1]
    ends = np.zeros((T, N))
    starts = np.zeros((T, N))
    scale = np.zeros(T)

    for t in range(T):
        if t == 0:
            for j in range(N):
                starts[0, j] = initial[j]
        else:
            for j in range(N):
                acc = 0.0
                for i in range(N):
                    acc += ends[t - 1, i] * transition[i, j]
                starts[t, j] = acc

        total = 0.0
        umax = min(L, t + 1)
        for j in range(N):
            prod = 1.0
            f = 0.0
            g = 0.0
            for u in range(1, umax + 1):
                s = t - u + 1
                b = emission[j, obs[s]]
                if s < t:
                    b /= scale[s]
                prod *= b
                if prod == 0.0:
                    break
                e = starts[s, j]
                if e == 0.0:
                    continue
                f += e * sojourn[j, u - 1] * prod
                g += e * survivor[j, u - 1] * prod
            ends[t, j] = f
            total += g
        if total <= 0.0:
            return ends, starts, scale
        for j in range(N):
            ends[t, j] /= total
        scale[t] = total
    return ends, starts, scale


@njit(cache=True, nogil=True)
def hsmm_backward(transition, emission, sojourn, survivor, obs, scale):
    """Explicit-duration backward pass

    Returns (entry, exit): entry[t, j] is the scaled probability of o_t.. given
    a segment of state j starts at t; exit[t, j] = sum_k p_jk entry[t, k] is the
    same quantity after leaving state j at t - 1.
    """
    T = obs.shape[0]
    N = transition.shape[0]
    L = sojourn.shape[1]
    entry = np.zeros((T, N))
    exit_ = np.zeros((T + 1, N))

    for t in range(T - 1, -1, -1):
        umax = min(L, T - t)
        for j in range(N):
            prod = 1.0
            acc = 0.0
            for u in range(1, umax + 1):
                s = t + u - 1
                prod *= emission[j, obs[s]] / scale[s]
                if prod == 0.0:
                    break
                if t + u < T:
                    acc += prod * sojourn[j, u - 1] * exit_[t + u, j]
                else:
                    acc += prod * survivor[j, u - 1]
            entry[t, j] = acc
        if t >= 1:
            for j in range(N):
                acc = 0.0
                for k in range(N):
                    acc += transition[j, k] * entry[t, k]
                exit_[t, j] = acc
    return entry, exit_


@njit(cache=True, nogil=True)
def hsmm_expectations(
    transition, emission, sojourn, survivor, obs, ends, starts, scale, entry, exit_
):
    """Smoothed occupancies and expected sojourn / transition counts

    Every segment (state j, start a, length u) gets its posterior weight; the
    censored final segment spreads its weight over durations v >= u in
    proportion to d_j(v).
    """
    T = obs.shape[0]
    N = transition.shape[0]
    L = sojourn.shape[1]
    diff = np.zeros((T + 1, N))
    durations = np.zeros((N, L))
    jumps = np.zeros((N, N))

    for a in range(T):
        umax = min(L, T - a)
        for j in range(N):
            e = starts[a, j]
            if e == 0.0:
                continue
            prod = 1.0
            for u in range(1, umax + 1):
                s = a + u - 1
                prod *= emission[j, obs[s]] / scale[s]
                if prod == 0.0:
                    break
                if a + u < T:
                    w = e * prod * sojourn[j, u - 1] * exit_[a + u, j]
                    durations[j, u - 1] += w
                else:
                    w = e * prod * survivor[j, u - 1]
                    tail = survivor[j, u - 1]
                    if tail > 0.0:
                        for v in range(u, L + 1):
                            durations[j, v - 1] += w * sojourn[j, v - 1] / tail
                diff[a, j] += w
                diff[a + u, j] -= w

    gamma = np.zeros((T, N))
    for j in range(N):
        running = 0.0
        for t in range(T):
            running += diff[t, j]
            gamma[t, j] = running

    for t in range(T - 1):
        for j in range(N):
            f = ends[t, j]
            if f == 0.0:
                continue
            for k in range(N):
                if k != j:
                    jumps[j, k] += f * transition[j, k] * entry[t + 1, k]
    return gamma, durations, jumps
