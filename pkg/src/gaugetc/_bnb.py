"""Compiled depth-first search behind :func:`gaugetc.separation.exact_branch_and_bound`.

The search minimizes ``S(theta) = sum_t c_t * prod_k theta[k][x_tk]`` and
reports gaps ``cpsi - lam * S``.  Only modes ``0..p-2`` are branched on; for
a fixed assignment of those, the best last-mode signs are
``-sign(w_j)`` where ``w_j`` collects the resolved terms with last
coordinate ``j``.  At a node the bound

    S >= -sum_j (|w_j| + unresolved_mass_j)

is valid (each unresolved product is +-1) and exact once every branched
mode is assigned.
"""
import numpy as np
from numba import njit

STATUS_EXHAUSTED = 0
STATUS_TARGET = 1
STATUS_BUDGET = 2


@njit(cache=True, nogil=True)
def _leaf_gap(coords, c, offsets, theta, lam, cpsi):
    T, p = coords.shape
    s = 0.0
    for t in range(T):
        prod = 1
        for k in range(p):
            prod *= theta[offsets[k] + coords[t, k]]
        s += c[t] * prod
    return cpsi - lam * s


@njit(cache=True, nogil=True)
def _bound_sum(w, um):
    b = 0.0
    for j in range(w.shape[0]):
        b += abs(w[j]) + um[j]
    return b


@njit(cache=True, nogil=True)
def _apply(var, sign, var_ptr, var_terms, coords, c, a, cnt, w, um, last):
    for q in range(var_ptr[var], var_ptr[var + 1]):
        t = var_terms[q]
        a[t] *= sign
        cnt[t] -= 1
        if cnt[t] == 0:
            j = coords[t, last]
            w[j] += c[t] * a[t]
            um[j] -= abs(c[t])


@njit(cache=True, nogil=True)
def _undo(var, sign, var_ptr, var_terms, coords, c, a, cnt, w, um, last):
    for q in range(var_ptr[var + 1] - 1, var_ptr[var] - 1, -1):
        t = var_terms[q]
        if cnt[t] == 0:
            j = coords[t, last]
            w[j] -= c[t] * a[t]
            um[j] += abs(c[t])
        cnt[t] += 1
        a[t] *= sign


@njit(cache=True, nogil=True)
def search(coords, c, dims, offsets, lam, cpsi, var_flat, var_ptr, var_terms,
           init_cnt, init_theta, target, floor, node_budget, margin):
    """Run the search.

    Returns ``(best_theta, best_gap, dual_bound, status, nodes)``.  With
    ``floor = -inf`` an exhausted search proves ``best_gap`` optimal (up to
    ``margin``); otherwise subtrees whose bound is at most ``floor`` are
    discarded and ``dual_bound`` covers them.
    """
    T, p = coords.shape
    last = p - 1
    r_last = dims[last]
    V = var_flat.shape[0]

    a = np.ones(T)
    cnt = init_cnt.copy()
    w = np.zeros(r_last)
    um = np.zeros(r_last)
    for t in range(T):
        j = coords[t, last]
        if cnt[t] == 0:
            w[j] += c[t]
        else:
            um[j] += abs(c[t])

    theta = np.ones(offsets[p], dtype=np.int8)
    best_theta = init_theta.copy()
    best = _leaf_gap(coords, c, offsets, best_theta, lam, cpsi)
    dual = -np.inf
    status = STATUS_EXHAUSTED
    if best >= target:
        return best_theta, best, dual, STATUS_TARGET, 0

    choice = np.zeros(V + 1, dtype=np.int8)
    depth = 0
    nodes = 0
    while depth >= 0:
        ch = choice[depth]
        if ch == 0:
            nodes += 1
            if nodes > node_budget:
                status = STATUS_BUDGET
                break
            ub = cpsi + lam * _bound_sum(w, um) + margin
            if ub <= best:
                depth -= 1
                continue
            if ub <= floor:
                if ub > dual:
                    dual = ub
                depth -= 1
                continue
            if depth == V:
                for j in range(r_last):
                    theta[offsets[last] + j] = -1 if w[j] > 0 else 1
                val = _leaf_gap(coords, c, offsets, theta, lam, cpsi)
                if val > best:
                    best = val
                    best_theta[:] = theta
                    if best >= target:
                        status = STATUS_TARGET
                        break
                depth -= 1
                continue
            var = var_flat[depth]
            theta[var] = 1
            _apply(depth, 1, var_ptr, var_terms, coords, c, a, cnt, w, um, last)
            choice[depth] = 1
            depth += 1
            choice[depth] = 0
        elif ch == 1:
            var = var_flat[depth]
            _undo(depth, 1, var_ptr, var_terms, coords, c, a, cnt, w, um, last)
            theta[var] = -1
            _apply(depth, -1, var_ptr, var_terms, coords, c, a, cnt, w, um, last)
            choice[depth] = 2
            depth += 1
            choice[depth] = 0
        else:
            var = var_flat[depth]
            _undo(depth, -1, var_ptr, var_terms, coords, c, a, cnt, w, um, last)
            theta[var] = 1
            choice[depth] = 0
            depth -= 1

    if status == STATUS_EXHAUSTED and best > dual:
        dual = best
    return best_theta, best, dual, status, nodes
