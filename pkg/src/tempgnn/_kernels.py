"""Compiled inner loops of the temporal sampler.

All kernels release the GIL so a thread pool over disjoint root ranges runs
them in parallel. Randomness is counter based (splitmix64 keyed per root),
so results never depend on how roots are split across threads.
"""
import numpy as np
from numba import njit, uint64

_GOLDEN = uint64(0x9E3779B97F4A7C15)
_M1 = uint64(0xBF58476D1CE4E5B9)
_M2 = uint64(0x94D049BB133111EB)


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(inline="always")
def _randbelow(state, n):
    # state: 1-element uint64 array advanced in place
    state[0] += _GOLDEN
    r = _mix(state[0])
    return np.int64((r >> uint64(11)) * (1.0 / 9007199254740992.0) * n)


@njit(cache=True, nogil=True)
def root_key(base_key, position):
    return _mix(uint64(base_key) + uint64(position + 1) * _GOLDEN)


@njit(cache=True, nogil=True)
def advance(indptr, times, ptr_row, nodes, targets):
    """Move ``ptr_row[v]`` forward to the first edge with time >= target.

    Returns (number of increments, index of the first chronology violation or -1).
    """
    moves = 0
    for i in range(nodes.shape[0]):
        v = nodes[i]
        t = targets[i]
        p = ptr_row[v]
        if p > indptr[v] and times[p - 1] >= t:
            return moves, i
        end = indptr[v + 1]
        while p < end and times[p] < t:
            p += 1
            moves += 1
        ptr_row[v] = p
    return moves, -1


@njit(inline="always")
def _scan_back(indptr_v, times, p, t):
    while p > indptr_v and times[p - 1] >= t:
        p -= 1
    return p


@njit(cache=True, nogil=True)
def locate_from_pointers(indptr, times, right_row, left_row, has_left, nodes,
                         t_right, t_left, out_start, out_end):
    # Pointers sit at the batch-wide maximum target of each node; roots with a
    # smaller timestamp walk back to their own boundary (strict no-leak rule).
    for i in range(nodes.shape[0]):
        v = nodes[i]
        lo = indptr[v]
        e = _scan_back(lo, times, right_row[v], t_right[i])
        if has_left:
            s = _scan_back(lo, times, left_row[v], t_left[i])
            if s > e:
                s = e
        else:
            s = lo
        out_start[i] = s
        out_end[i] = e


@njit(cache=True, nogil=True)
def locate_bsearch(indptr, times, nodes, t_right, t_left, has_left, out_start, out_end):
    for i in range(nodes.shape[0]):
        v = nodes[i]
        lo = indptr[v]
        hi = indptr[v + 1]
        e = lo + np.searchsorted(times[lo:hi], t_right[i], side="left")
        if has_left:
            s = lo + np.searchsorted(times[lo:e], t_left[i], side="left")
        else:
            s = lo
        out_start[i] = s
        out_end[i] = e


@njit(cache=True, nogil=True)
def select(valid, all_valid, starts, ends, k, most_recent, base_key, offset,
           out_eids, out_count):
    """Pick up to ``k`` edges from each candidate range.

    ``offset`` is the global position of row 0 so keys match regardless of
    the thread partition.
    """
    scratch = np.empty(0, dtype=np.int64)
    chosen = np.empty(k, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    for i in range(starts.shape[0]):
        s = starts[i]
        e = ends[i]
        if most_recent:
            c = 0
            p = e - 1
            while p >= s and c < k:
                if all_valid or valid[p]:
                    chosen[c] = p
                    c += 1
                p -= 1
            for j in range(c):
                out_eids[i, j] = chosen[c - 1 - j]
            out_count[i] = c
            continue

        if all_valid:
            n = e - s
        else:
            if scratch.shape[0] < e - s:
                scratch = np.empty(e - s, dtype=np.int64)
            n = 0
            for p in range(s, e):
                if valid[p]:
                    scratch[n] = p
                    n += 1
        if n <= k:
            for j in range(n):
                out_eids[i, j] = s + j if all_valid else scratch[j]
            out_count[i] = n
            continue
        # Floyd's algorithm: k distinct offsets in [0, n)
        state[0] = root_key(base_key, offset + i)
        c = 0
        for j in range(n - k, n):
            r = _randbelow(state, j + 1)
            dup = False
            for q in range(c):
                if chosen[q] == r:
                    dup = True
                    break
            chosen[c] = j if dup else r
            c += 1
        picked = np.sort(chosen[:k])
        for j in range(k):
            out_eids[i, j] = s + picked[j] if all_valid else scratch[picked[j]]
        out_count[i] = k


@njit(cache=True, nogil=True)
def dedup_pairs(nodes, time_bits, n_dst):
    """Slot assignment for (node, time) pairs, first occurrence wins.

    Entries ``[0, n_dst)`` keep their own positions as slots (duplicates among
    them resolve to the earliest). Later entries either reuse an existing
    slot or open a new one numbered from ``n_dst``. Returns
    ``(slot_of_each_entry, positions_of_new_entries)``.
    """
    n = nodes.shape[0]
    cap = 16
    while cap < 2 * n:
        cap *= 2
    mask = uint64(cap - 1)
    table = np.full(cap, -1, dtype=np.int64)
    slot_of = np.empty(n, dtype=np.int64)
    new_pos = np.empty(n, dtype=np.int64)
    n_new = 0
    for i in range(n):
        h = _mix(uint64(nodes[i]) * _GOLDEN ^ uint64(time_bits[i])) & mask
        while True:
            j = table[h]
            if j < 0:
                table[h] = i
                if i < n_dst:
                    slot_of[i] = i
                else:
                    slot_of[i] = n_dst + n_new
                    new_pos[n_new] = i
                    n_new += 1
                break
            if nodes[j] == nodes[i] and time_bits[j] == time_bits[i]:
                slot_of[i] = slot_of[j]
                break
            h = (h + uint64(1)) & mask
    return slot_of, new_pos[:n_new]


@njit(cache=True, nogil=True)
def gather_edges(eids, count, offsets, g_times, g_indices, times, neighbor_time,
                 edge_dst, edge_ids, nb_nodes, nb_times, edge_dt):
    """Flatten selected edges of roots ``[0, len(count))`` into the output rows at ``offsets``.

    Callers pass matching slices, so disjoint root ranges can be gathered
    on different threads.
    """
    for i in range(count.shape[0]):
        o = offsets[i]
        t = times[i]
        for j in range(count[i]):
            e = eids[i, j]
            et = g_times[e]
            edge_dst[o + j] = i
            edge_ids[o + j] = e
            nb_nodes[o + j] = g_indices[e]
            nb_times[o + j] = et if neighbor_time else t
            edge_dt[o + j] = t - et
