"""Compiled inner loops: counter-based bond hashing and label-setting search.

Sites of a box are addressed by their C-order flat index.  Bond weights live
in a ``(d, N)`` array where ``w[a, i]`` is the weight of the bond from site
``i`` to ``i + stride[a]``; bonds leaving the box hold ``+inf``.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K0 = np.uint64(0x5851F42D4C957F2D)
_COORD_BIAS = np.int64(1) << np.int64(40)
_TWO53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _bond_hash(seed, coords, axis):
    d = coords.shape[0]
    h = mix64(seed ^ _K0)
    h = mix64(h + np.uint64(d) * _GOLDEN)
    for k in range(d):
        c = np.uint64(coords[k] + _COORD_BIAS)
        h = mix64((h ^ c) + _GOLDEN)
    h = mix64(h ^ (np.uint64(axis) + _GOLDEN))
    return h


@njit(cache=True)
def bond_uniforms(seed, lo, shape):
    """Uniforms in [0, 1) for every bond of the box; NaN where the bond leaves it."""
    d = shape.shape[0]
    n = 1
    for k in range(d):
        n *= shape[k]
    out = np.full((d, n), np.nan)
    coords = lo.copy()
    rel = np.zeros(d, dtype=np.int64)
    useed = np.uint64(seed)
    for i in range(n):
        for a in range(d):
            if rel[a] + 1 < shape[a]:
                h = _bond_hash(useed, coords, a)
                out[a, i] = np.float64(h >> np.uint64(11)) * _TWO53
        # odometer increment, last axis fastest (C order)
        k = d - 1
        while k >= 0:
            rel[k] += 1
            coords[k] += 1
            if rel[k] < shape[k]:
                break
            rel[k] = 0
            coords[k] = lo[k]
            k -= 1
    return out


@njit(cache=True)
def single_bond_uniform(seed, coords, axis):
    h = _bond_hash(np.uint64(seed), coords, axis)
    return np.float64(h >> np.uint64(11)) * _TWO53


@njit(cache=True, inline="always")
def _less(dist, a, b):
    da = dist[a]
    db = dist[b]
    return da < db or (da == db and a < b)


@njit(cache=True, inline="always")
def _sift_up(heap, pos, dist, k):
    item = heap[k]
    while k > 0:
        p = (k - 1) >> 2
        q = heap[p]
        if _less(dist, item, q):
            heap[k] = q
            pos[q] = k
            k = p
        else:
            break
    heap[k] = item
    pos[item] = k


@njit(cache=True, inline="always")
def _sift_down(heap, pos, dist, k, size):
    item = heap[k]
    while True:
        c = 4 * k + 1
        if c >= size:
            break
        best = c
        end = c + 4
        if end > size:
            end = size
        for j in range(c + 1, end):
            if _less(dist, heap[j], heap[best]):
                best = j
        if _less(dist, heap[best], item):
            heap[k] = heap[best]
            pos[heap[k]] = k
            k = best
        else:
            break
    heap[k] = item
    pos[item] = k


@njit(cache=True, nogil=True)
def dijkstra(w, strides, sources, targets, mode):
    """Label-setting search on the box lattice.

    mode 0: settle everything reachable; 1: stop when the first target settles;
    2: stop when every target has settled.  Returns (dist, parent, done, hit)
    where ``hit`` is the first settled target (mode 1) or -1.

    Equal tentative labels keep the lexicographically smaller predecessor.
    """
    d = w.shape[0]
    n = w.shape[1]
    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.uint8)
    pos = np.full(n, -1, dtype=np.int64)
    heap = np.empty(n, dtype=np.int64)
    size = 0
    is_target = np.zeros(n if mode != 0 else 0, dtype=np.uint8)
    remaining = 0
    if mode != 0:
        for t in targets:
            if is_target[t] == 0:
                is_target[t] = 1
                remaining += 1
    for s in sources:
        if pos[s] == -1:
            dist[s] = 0.0
            parent[s] = s
            heap[size] = s
            pos[s] = size
            size += 1
            _sift_up(heap, pos, dist, size - 1)
    hit = -1
    while size > 0:
        i = heap[0]
        size -= 1
        pos[i] = -1
        if size > 0:
            heap[0] = heap[size]
            pos[heap[0]] = 0
            _sift_down(heap, pos, dist, 0, size)
        done[i] = 1
        if mode != 0 and is_target[i] == 1:
            if mode == 1:
                hit = i
                break
            remaining -= 1
            if remaining == 0:
                break
        di = dist[i]
        for a in range(d):
            s = strides[a]
            for side in range(2):
                if side == 0:
                    j = i + s
                    wt = w[a, i]
                else:
                    j = i - s
                    if j < 0:
                        continue
                    wt = w[a, j]
                if not (wt < np.inf):
                    continue
                if done[j] == 1:
                    continue
                alt = di + wt
                dj = dist[j]
                if alt < dj:
                    dist[j] = alt
                    parent[j] = i
                    if pos[j] == -1:
                        heap[size] = j
                        pos[j] = size
                        size += 1
                        _sift_up(heap, pos, dist, size - 1)
                    else:
                        _sift_up(heap, pos, dist, pos[j])
                elif alt == dj and i < parent[j] and parent[j] != j:
                    parent[j] = i
    return dist, parent, done, hit


@njit(cache=True)
def trace_to_root(parent, v):
    """Flat indices from ``v`` following parent links up to (and including) its root."""
    n = 0
    u = v
    while True:
        n += 1
        p = parent[u]
        if p == u:
            break
        u = p
    out = np.empty(n, dtype=np.int64)
    u = v
    for k in range(n):
        out[k] = u
        u = parent[u]
    return out


@njit(cache=True, nogil=True)
def walk_entries(parent, u1, shell, starts, level):
    """For each start, follow the tree toward its root.

    Returns (entry, touched, root): the first site with ``u1 >= level``
    (or -1), whether any site on the whole root path lies in the boundary
    shell, and the root reached.
    """
    m = starts.shape[0]
    entry = np.full(m, -1, dtype=np.int64)
    touched = np.zeros(m, dtype=np.uint8)
    root = np.full(m, -1, dtype=np.int64)
    for k in range(m):
        v = starts[k]
        if parent[v] < 0:
            touched[k] = 1
            continue
        u = v
        while True:
            if shell[u]:
                touched[k] = 1
            if entry[k] < 0 and u1[u] >= level:
                entry[k] = u
            p = parent[u]
            if p == u:
                break
            u = p
        root[k] = u
    return entry, touched, root


@njit(cache=True, nogil=True)
def scan_sources(parent, u1, shell, starts, level):
    """Per start, walking toward the root: the last site with ``u1 <= 0`` (V),
    the first site at or after V with ``u1 >= level`` (W, or -1), whether the
    root path touches the shell, and the root."""
    m = starts.shape[0]
    last_low = np.full(m, -1, dtype=np.int64)
    entry = np.full(m, -1, dtype=np.int64)
    touched = np.zeros(m, dtype=np.uint8)
    root = np.full(m, -1, dtype=np.int64)
    for k in range(m):
        v = starts[k]
        if parent[v] < 0:
            touched[k] = 1
            continue
        u = v
        while True:
            if shell[u]:
                touched[k] = 1
            if u1[u] <= 0.0:
                last_low[k] = u
                entry[k] = -1
            elif entry[k] < 0 and u1[u] >= level:
                entry[k] = u
            p = parent[u]
            if p == u:
                break
            u = p
        root[k] = u
    return last_low, entry, touched, root


@njit(cache=True)
def first_common(parent, a, b):
    """First site on a's root path that also lies on b's root path (-1 if none)."""
    # b's root path, sorted for binary-search membership tests
    pb = trace_to_root(parent, b)
    sb = np.sort(pb)
    u = a
    while True:
        k = np.searchsorted(sb, u)
        if k < sb.shape[0] and sb[k] == u:
            return u
        p = parent[u]
        if p == u:
            return -1
        u = p
