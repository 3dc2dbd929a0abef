"""Monte Carlo simulation of the lazy walk on the infinite ambient graph.

Chains are simulated without any window.  On translation-invariant simple
lattices the walk is advanced in exact blocks: if the current l1 distance
to K is D, the next D-1 steps cannot hit K, so the displacement after
D-1 steps is drawn in one shot from the exact multinomial step-count
distribution.  This changes nothing in distribution and removes the
quadratic cost of long censored chains.

Each chain re-seeds the generator from (seed, chain index), so results are
independent of the thread schedule and chain counts can grow without
reshuffling earlier chains.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

JUMP_MIN = 12  # below this distance the walk steps singly

# keep in sync with generators.py
K_NONE = 0
K_SUBLATTICE = 1
K_LOWER_HALFSPACE = 2
K_SPARSE_DYADIC = 3
K_CYLINDER = 4
K_PARABOLA = 5
K_CONE_COMPLEMENT = 6
K_WALL = 7


@njit(cache=True)
def _mix_seed(seed, chain):
    # splitmix64 of (seed + golden * chain), folded to 32 bits
    z = np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15) * (np.uint64(chain) + np.uint64(1))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return np.uint32(z & np.uint64(0xFFFFFFFF))


@njit(cache=True)
def _round_half_up(v):
    return np.floor(v + 0.5)


@njit(cache=True)
def _in_k(pos, m, kcode, kp):
    """Exact membership of the removed set."""
    if kcode == K_NONE:
        return False
    if kcode == K_SUBLATTICE:
        k = int(kp[0])
        for i in range(k, m):
            if pos[i] != 0:
                return False
        return True
    if kcode == K_LOWER_HALFSPACE:
        return pos[m - 1] <= 0
    if kcode == K_WALL:
        return pos[m - 1] == 0
    if kcode == K_SPARSE_DYADIC:
        for i in range(1, m):
            if pos[i] != 0:
                return False
        x = pos[0]
        return x > 0 and (x & (x - 1)) == 0
    if kcode == K_CYLINDER:
        s = 0
        for i in range(m - 1):
            s += abs(pos[i])
        return s <= int(kp[0])
    if kcode == K_PARABOLA:
        if pos[2] != 0 or pos[3] != 0 or pos[0] < 0:
            return False
        w = _round_half_up(float(pos[0]) ** kp[0])
        return abs(pos[1]) <= w
    if kcode == K_CONE_COMPLEMENT:
        if pos[0] == 0 and pos[1] == 0:
            return True
        theta = np.arctan2(float(pos[1]), float(pos[0]))
        if theta < 0:
            theta += 2 * np.pi
        return not (0.0 < theta < kp[0])
    return False


@njit(cache=True)
def _dist_lb(pos, m, kcode, kp):
    """Lower bound (exact where cheap) on the l1 distance to K."""
    if kcode == K_NONE:
        return np.int64(1 << 60)
    if kcode == K_SUBLATTICE:
        k = int(kp[0])
        s = np.int64(0)
        for i in range(k, m):
            s += abs(pos[i])
        return s
    if kcode == K_LOWER_HALFSPACE:
        return np.int64(pos[m - 1])
    if kcode == K_WALL:
        return np.int64(abs(pos[m - 1]))
    if kcode == K_SPARSE_DYADIC:
        rest = np.int64(abs(pos[1]) + abs(pos[2]))
        best = np.int64(1 << 60)
        p = np.int64(1)
        for _ in range(62):
            d = abs(pos[0] - p)
            if d < best:
                best = d
            if p > pos[0] and d > best:
                break
            p <<= 1
        return best + rest
    if kcode == K_CYLINDER:
        s = np.int64(0)
        for i in range(m - 1):
            s += abs(pos[i])
        d = s - np.int64(kp[0])
        return d if d > 0 else np.int64(0)
    if kcode == K_PARABOLA:
        tail = np.int64(abs(pos[2]) + abs(pos[3]))
        x1 = pos[0] if pos[0] > 0 else np.int64(0)
        w = np.int64(_round_half_up(float(x1) ** kp[0]))
        gap = abs(pos[1]) - w
        if gap < 0:
            gap = np.int64(0)
        extra = np.int64(0)
        if pos[0] < 0:
            extra = -pos[0] if abs(pos[1]) <= 0 else np.int64(0)
        return tail + gap + extra
    # cone and anything else: no jumping
    return np.int64(1)


@njit(cache=True)
def _jump_simple(pos, j, m):
    """Advance the lazy SRW on Z^m by exactly j steps (multinomial draw)."""
    hold = np.random.binomial(j, 0.5)
    rem = j - hold
    cells = 2 * m
    for c in range(cells):
        if rem <= 0:
            break
        if c == cells - 1:
            k = rem
        else:
            k = np.random.binomial(rem, 1.0 / (cells - c))
        dim = c // 2
        if c % 2 == 0:
            pos[dim] += k
        else:
            pos[dim] -= k
        rem -= k


@njit(cache=True)
def _step_simple(pos, m):
    if np.random.random() < 0.5:
        return
    r = int(np.random.random() * 2 * m)
    if r >= 2 * m:
        r = 2 * m - 1
    dim = r // 2
    if r % 2 == 0:
        pos[dim] += 1
    else:
        pos[dim] -= 1


@njit(cache=True)
def _step_weighted_halfspace(pos, m, alpha):
    """One Metropolis step on {x_m >= 0} with pi = (1+x_m)^alpha."""
    u = np.random.random()
    base = 1.0 / (4.0 * m)
    acc = 0.0
    pim = (1.0 + pos[m - 1]) ** alpha
    for dim in range(m):
        for s in range(2):
            delta = 1 if s == 0 else -1
            if dim == m - 1:
                nxt = pos[m - 1] + delta
                if nxt < 0:
                    continue
                ratio = ((1.0 + nxt) ** alpha) / pim
                p = base * (ratio if ratio < 1.0 else 1.0)
            else:
                p = base
            acc += p
            if u < acc:
                pos[dim] += delta
                return


@njit(parallel=True, cache=True)
def run_chains(seed, chains, max_steps, x0, family, fparams, kcode, kparams):
    """Simulate chains; returns (hits, censored) counts."""
    m = int(fparams[0])
    hits = 0
    censored = 0
    for c in prange(chains):
        np.random.seed(_mix_seed(seed, c))
        pos = x0.copy()
        steps = np.int64(0)
        hit = False
        while steps < max_steps:
            if family == 0:
                d = _dist_lb(pos, m, kcode, kparams)
                if d >= JUMP_MIN:
                    j = d - 1
                    if j > max_steps - steps:
                        j = max_steps - steps
                    _jump_simple(pos, j, m)
                    steps += j
                    continue
                _step_simple(pos, m)
            else:
                _step_weighted_halfspace(pos, m, fparams[1])
            steps += 1
            if _in_k(pos, m, kcode, kparams):
                hit = True
                break
        if hit:
            hits += 1
        else:
            censored += 1
    return hits, censored
