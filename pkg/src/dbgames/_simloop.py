"""Numba kernels for the event loops: game simulation and coalescing walkers.

All randomness comes from a splitmix64 stream seeded per replica, so replica
results are independent of execution order.  CSR arrays are passed as plain
int64/float64 buffers.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U53 = 1.1102230246251565e-16  # 2**-53

EV_DEATH_BIRTH = 0
EV_MUTATION = 1

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_FIXATED = 2


@njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _u64(state):
    state[0] = state[0] + _GOLDEN
    return _mix64(state[0])


@njit(inline="always")
def _uniform(state):
    return float((_u64(state) >> np.uint64(11))) * _U53


@njit(inline="always")
def _exponential(state):
    u = _uniform(state)
    return -np.log(1.0 - u)


@njit(inline="always")
def _pick_index(state, n):
    i = int(_uniform(state) * n)
    if i >= n:
        i = n - 1
    return i


@njit(inline="always")
def _pick_weighted(state, weights, total, offset, count):
    """Linear-scan categorical draw over weights[offset:offset+count]."""
    target = _uniform(state) * total
    acc = 0.0
    for j in range(count):
        acc += weights[offset + j]
        if target < acc:
            return j
    return count - 1


@njit(cache=True, nogil=True)
def _payoff_bracket(indptr, indices, qdata, types, payoff, y):
    """sum_z q(y, z) Pi(xi(y), xi(z))."""
    ty = types[y]
    acc = 0.0
    for e in range(indptr[y], indptr[y + 1]):
        acc += qdata[e] * payoff[ty, types[indices[e]]]
    return acc


@njit(cache=True, nogil=True)
def run_sim(indptr, indices, qdata, pi, payoff, w, mut, types, total_t, grid,
            seed, record_events, ev_time, ev_kind, ev_site, ev_old, ev_new,
            stop_on_fixation, dens_out, qv_out):
    """Exact-event simulation of the death-birth game with mutation.

    Each site dies at rate 1 and is refilled from the fitness-weighted
    neighbor law; each site mutates to sigma at rate mut[sigma].  The total
    event rate N (1 + mut_total) is state-independent, so the global clock is
    a homogeneous Poisson process thinned into event kinds.

    Writes densities at the requested grid times into dens_out (recomputed
    from the configuration, not accumulated, so there is no float drift) and
    the running quadratic variation of the density jumps into qv_out.
    Optionally logs every event, null events included.  Mutates `types` in
    place.  Returns (n_events, status, fixation_time).
    """
    n = len(pi)
    s = payoff.shape[0]
    mut_total = 0.0
    for a in range(s):
        mut_total += mut[a]
    lam = n * (1.0 + mut_total)
    p_death = 1.0 / (1.0 + mut_total)

    state = np.empty(1, dtype=np.uint64)
    state[0] = seed

    counts = np.zeros(s, dtype=np.int64)
    for x in range(n):
        counts[types[x]] += 1

    use_brackets = w > 0.0
    brackets = np.empty(n)
    if use_brackets:
        for y in range(n):
            brackets[y] = (1.0 - w) + w * _payoff_bracket(indptr, indices, qdata, types, payoff, y)

    m = len(grid)
    gi = 0
    t = 0.0
    n_events = 0
    status = STATUS_OK
    fix_time = -1.0
    qv_acc = np.zeros(s)

    fixated = False
    if stop_on_fixation and mut_total == 0.0:
        for a in range(s):
            if counts[a] == n:
                fixated = True
                fix_time = 0.0

    while not fixated:
        dt = _exponential(state) / lam
        t_next = t + dt
        while gi < m and grid[gi] < t_next:
            for x in range(n):
                dens_out[gi, types[x]] += pi[x]
            for a in range(s):
                qv_out[gi, a] = qv_acc[a]
            gi += 1
        if t_next > total_t:
            break
        t = t_next

        old = np.int8(0)
        new = np.int8(0)
        kind = np.int8(EV_DEATH_BIRTH)
        if _uniform(state) < p_death:
            x = _pick_index(state, n)
            lo = indptr[x]
            deg = indptr[x + 1] - lo
            if use_brackets:
                total = 0.0
                for j in range(deg):
                    total += qdata[lo + j] * brackets[indices[lo + j]]
                target = _uniform(state) * total
                acc = 0.0
                jj = deg - 1
                for j in range(deg):
                    acc += qdata[lo + j] * brackets[indices[lo + j]]
                    if target < acc:
                        jj = j
                        break
                y = indices[lo + jj]
            else:
                jj = _pick_weighted(state, qdata, 1.0, lo, deg)
                y = indices[lo + jj]
            old = types[x]
            new = types[y]
        else:
            kind = np.int8(EV_MUTATION)
            x = _pick_index(state, n)
            target = _uniform(state) * mut_total
            acc = 0.0
            a_new = s - 1
            for a in range(s):
                acc += mut[a]
                if target < acc:
                    a_new = a
                    break
            old = types[x]
            new = np.int8(a_new)

        if record_events:
            if n_events >= len(ev_time):
                status = STATUS_OVERFLOW
                break
            ev_time[n_events] = t
            ev_kind[n_events] = kind
            ev_site[n_events] = x
            ev_old[n_events] = old
            ev_new[n_events] = new
        n_events += 1

        if new != old:
            types[x] = new
            counts[old] -= 1
            counts[new] += 1
            jump2 = pi[x] * pi[x]
            qv_acc[old] += jump2
            qv_acc[new] += jump2
            if use_brackets:
                brackets[x] = (1.0 - w) + w * _payoff_bracket(indptr, indices, qdata, types, payoff, x)
                for e in range(indptr[x], indptr[x + 1]):
                    z = indices[e]
                    brackets[z] = (1.0 - w) + w * _payoff_bracket(indptr, indices, qdata, types, payoff, z)
            if stop_on_fixation and mut_total == 0.0 and counts[new] == n:
                fixated = True
                fix_time = t

    if status != STATUS_OVERFLOW:
        while gi < m:
            for x in range(n):
                dens_out[gi, types[x]] += pi[x]
            for a in range(s):
                qv_out[gi, a] = qv_acc[a]
            gi += 1
        if fixated:
            status = STATUS_FIXATED

    return n_events, status, fix_time


@njit(cache=True, nogil=True)
def pair_meeting_times(indptr, indices, qdata, starts, tmax, seed):
    """First meeting times of coalescing walker pairs, one per row of starts.

    Walkers jump at rate 1 each; a pair started at equal sites meets at 0.
    Times beyond tmax are reported as +inf.
    """
    n_samples = starts.shape[0]
    out = np.empty(n_samples)
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    for i in range(n_samples):
        x = starts[i, 0]
        y = starts[i, 1]
        t = 0.0
        if x == y:
            out[i] = 0.0
            continue
        met = False
        while t <= tmax:
            t += _exponential(state) / 2.0
            if t > tmax:
                break
            mover = x if _uniform(state) < 0.5 else y
            lo = indptr[mover]
            deg = indptr[mover + 1] - lo
            j = _pick_weighted(state, qdata, 1.0, lo, deg)
            pos = indices[lo + j]
            if mover == x:
                x = pos
            else:
                y = pos
            if x == y:
                out[i] = t
                met = True
                break
        if not met:
            out[i] = np.inf
    return out


@njit(cache=True, nogil=True)
def triple_meeting_times(indptr, indices, qdata, starts, tmax, seed):
    """Pairwise first meeting times for three coalescing walkers.

    Returns an (n_samples, 3) array with the meeting times of pairs
    (0,1), (0,2), (1,2); +inf when a pair has not met by tmax.  Coalesced
    walkers move together, so meeting is monotone under merging.
    """
    n_samples = starts.shape[0]
    out = np.full((n_samples, 3), np.inf)
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    pos = np.empty(3, dtype=np.int64)
    group = np.empty(3, dtype=np.int64)
    for i in range(n_samples):
        for a in range(3):
            pos[a] = starts[i, a]
            group[a] = a
        # resolve initial coincidences
        if pos[0] == pos[1]:
            group[1] = 0
            out[i, 0] = 0.0
        if pos[0] == pos[2]:
            group[2] = group[0]
            out[i, 1] = 0.0
        if pos[1] == pos[2]:
            group[2] = group[1]
            out[i, 2] = 0.0
            if group[1] == 0:
                out[i, 1] = 0.0
        if pos[0] == pos[1] and out[i, 2] == 0.0:
            out[i, 1] = 0.0
        t = 0.0
        while True:
            # active group leaders
            n_groups = 0
            for a in range(3):
                if group[a] == a:
                    n_groups += 1
            if n_groups == 1:
                break
            t += _exponential(state) / n_groups
            if t > tmax:
                break
            pick = _pick_index(state, n_groups)
            leader = -1
            cnt = 0
            for a in range(3):
                if group[a] == a:
                    if cnt == pick:
                        leader = a
                        break
                    cnt += 1
            lo = indptr[pos[leader]]
            deg = indptr[pos[leader] + 1] - lo
            j = _pick_weighted(state, qdata, 1.0, lo, deg)
            pos[leader] = indices[lo + j]
            # merge with any group now sharing the site
            for b in range(3):
                if group[b] == b and b != leader and pos[b] == pos[leader]:
                    hi = leader if leader > b else b
                    lo_g = leader if leader < b else b
                    for c in range(3):
                        if group[c] == hi:
                            group[c] = lo_g
                    # record meeting times for all newly-united pairs
                    for p in range(3):
                        for q in range(p + 1, 3):
                            idx = 0 if (p == 0 and q == 1) else (1 if (p == 0 and q == 2) else 2)
                            if out[i, idx] == np.inf and group[p] == group[q]:
                                out[i, idx] = t
    return out


@njit(cache=True, nogil=True)
def mutation_dual_samples(indptr, indices, qdata, xi0, starts, mut, t_end, seed, out_types):
    """Sample the time-reversed ancestral dual with mutation marks.

    Each start row holds up to three lineage sites (unused slots are -1).
    Lineages follow coalescing rate-1 walks in dual time.  Each group of
    coalesced lineages is hit by mutation marks at rate mut_total; the first
    mark on a lineage freezes its type with law mut / mut_total.  Lineages
    still unmarked at dual time t_end read the initial configuration at
    their walker's position.  Writes the resulting types into out_types.
    """
    n_samples = starts.shape[0]
    width = starts.shape[1]
    s = len(mut)
    mut_total = 0.0
    for a in range(s):
        mut_total += mut[a]
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    pos = np.empty(width, dtype=np.int64)
    group = np.empty(width, dtype=np.int64)
    marked = np.empty(width, dtype=np.int8)
    for i in range(n_samples):
        n_act = 0
        for a in range(width):
            if starts[i, a] >= 0:
                n_act += 1
                pos[a] = starts[i, a]
                group[a] = a
                marked[a] = 0
        # coalesce coincident starts
        for a in range(n_act):
            for b in range(a + 1, n_act):
                if pos[b] == pos[a] and group[b] == b:
                    group[b] = group[a]
        t = 0.0
        while True:
            n_groups = 0
            n_unmarked = 0
            for a in range(n_act):
                if group[a] == a:
                    n_groups += 1
                if marked[a] == 0:
                    n_unmarked += 1
            if n_unmarked == 0:
                break
            rate = n_groups * (1.0 + mut_total)
            t += _exponential(state) / rate
            if t > t_end:
                break
            pick = _pick_index(state, n_groups)
            leader = -1
            cnt = 0
            for a in range(n_act):
                if group[a] == a:
                    if cnt == pick:
                        leader = a
                        break
                    cnt += 1
            if _uniform(state) < mut_total / (1.0 + mut_total):
                # mutation mark on this group: freeze all unmarked members
                target = _uniform(state) * mut_total
                acc = 0.0
                a_new = s - 1
                for a in range(s):
                    acc += mut[a]
                    if target < acc:
                        a_new = a
                        break
                for a in range(n_act):
                    if group[a] == group[leader] and marked[a] == 0:
                        marked[a] = 1
                        out_types[i, a] = a_new
            else:
                lo = indptr[pos[leader]]
                deg = indptr[pos[leader] + 1] - lo
                j = _pick_weighted(state, qdata, 1.0, lo, deg)
                pos[leader] = indices[lo + j]
                for b in range(n_act):
                    if group[b] == b and b != leader and pos[b] == pos[leader]:
                        hi = leader if leader > b else b
                        lo_g = leader if leader < b else b
                        for c in range(n_act):
                            if group[c] == hi:
                                group[c] = lo_g
        for a in range(n_act):
            if marked[a] == 0:
                out_types[i, a] = xi0[pos[group[a]]]
    return out_types
