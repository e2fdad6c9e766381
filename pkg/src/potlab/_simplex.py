"""Network simplex kernel for the dense transportation problem.

Graph layout: nodes ``0..n-1`` are sources, ``n..n+m-1`` are sinks and
node ``n+m`` is an artificial root.  Real arc ``e = i*m + j`` runs source
``i`` -> sink ``j``; artificial arc ``n*m + k`` joins node ``k`` and the
root.  The starting basis is the star of artificial arcs, which is a
strongly feasible tree; Cunningham's leaving-arc rule keeps it so.

Potentials follow ``pi[src] - pi[tgt] = cost`` on tree arcs and
``rc = cost - pi[src] + pi[tgt] >= 0`` at optimality.

After ``N`` consecutive degenerate pivots the kernel switches to Bland's
rule (smallest eligible index for entering and leaving) until the
objective strictly improves.
"""

import numpy as np
from numba import njit

OPTIMAL = 0
MAX_ITER = 1
INFEASIBLE = 2


@njit(cache=True, inline="always")
def _arc_ends(e, n, m, nm, root, art_up, C, art_cost):
    if e < nm:
        i = e // m
        j = e - i * m
        return i, n + j, C[i, j]
    k = e - nm
    if art_up[k]:
        return k, root, art_cost
    return root, k, art_cost


@njit(cache=True, inline="always")
def _unlink(x, p, first_child, next_sib, prev_sib):
    if prev_sib[x] >= 0:
        next_sib[prev_sib[x]] = next_sib[x]
    else:
        first_child[p] = next_sib[x]
    if next_sib[x] >= 0:
        prev_sib[next_sib[x]] = prev_sib[x]
    next_sib[x] = -1
    prev_sib[x] = -1


@njit(cache=True, inline="always")
def _link(x, p, first_child, next_sib, prev_sib):
    h = first_child[p]
    next_sib[x] = h
    prev_sib[x] = -1
    if h >= 0:
        prev_sib[h] = x
    first_child[p] = x


@njit(cache=True)
def network_simplex(a, b, C, max_iter):
    """Solve ``min <C, gamma>`` s.t. ``gamma 1 = a``, ``gamma^T 1 = b``.

    Returns ``(status, gamma, u, v, basic, pivots)`` where ``basic`` is a
    boolean ``n x m`` mask of real tree arcs.
    """
    n, m = C.shape
    N = n + m
    root = N
    nm = n * m
    n_arcs = nm + N

    flow = np.zeros(n_arcs)
    in_tree = np.zeros(n_arcs, dtype=np.bool_)
    art_up = np.zeros(N, dtype=np.bool_)

    parent = np.full(N + 1, -1, dtype=np.int64)
    parent_arc = np.full(N + 1, -1, dtype=np.int64)
    up = np.zeros(N + 1, dtype=np.bool_)
    depth = np.zeros(N + 1, dtype=np.int64)
    pi = np.zeros(N + 1)
    first_child = np.full(N + 1, -1, dtype=np.int64)
    next_sib = np.full(N + 1, -1, dtype=np.int64)
    prev_sib = np.full(N + 1, -1, dtype=np.int64)
    stack = np.empty(N + 1, dtype=np.int64)
    s_path = np.empty(N + 1, dtype=np.int64)
    t_path = np.empty(N + 1, dtype=np.int64)

    cmax = 0.0
    for i in range(n):
        for j in range(m):
            if abs(C[i, j]) > cmax:
                cmax = abs(C[i, j])
    art_cost = (cmax + 1.0) * N
    tol = 1e-12 * max(1.0, cmax)

    for k in range(N):
        e = nm + k
        w = a[k] if k < n else b[k - n]
        if k < n and w > 0.0:
            art_up[k] = True
            pi[k] = art_cost
        else:
            pi[k] = -art_cost
        flow[e] = w
        in_tree[e] = True
        parent[k] = root
        parent_arc[k] = e
        up[k] = art_up[k]
        depth[k] = 1
        _link(k, root, first_child, next_sib, prev_sib)

    block = max(1, int(np.sqrt(n_arcs)))
    next_arc = 0
    degenerate_run = 0
    bland = False
    pivots = 0
    status = OPTIMAL

    while True:
        # ---- pricing ---------------------------------------------------
        enter = -1
        if bland:
            for e in range(n_arcs):
                if in_tree[e]:
                    continue
                s, t, c = _arc_ends(e, n, m, nm, root, art_up, C, art_cost)
                if c - pi[s] + pi[t] < -tol:
                    enter = e
                    break
        else:
            best = -tol
            scanned = 0
            e = next_arc
            while scanned < n_arcs:
                if not in_tree[e]:
                    s, t, c = _arc_ends(e, n, m, nm, root, art_up, C, art_cost)
                    rc = c - pi[s] + pi[t]
                    if rc < best:
                        best = rc
                        enter = e
                scanned += 1
                e += 1
                if e == n_arcs:
                    e = 0
                if enter >= 0 and scanned % block == 0:
                    break
            next_arc = e
        if enter < 0:
            break
        if pivots >= max_iter:
            status = MAX_ITER
            break
        pivots += 1

        s, t, c_enter = _arc_ends(enter, n, m, nm, root, art_up, C, art_cost)
        rc_enter = c_enter - pi[s] + pi[t]

        # ---- cycle: apex -> s (down), enter s->t, t -> apex (up) --------
        ns = 0
        nt = 0
        x = s
        y = t
        while x != y:
            if depth[x] >= depth[y]:
                s_path[ns] = x
                ns += 1
                x = parent[x]
            else:
                t_path[nt] = y
                nt += 1
                y = parent[y]

        theta = np.inf
        for q in range(ns):
            x = s_path[q]
            if up[x] and flow[parent_arc[x]] < theta:
                theta = flow[parent_arc[x]]
        for q in range(nt):
            y = t_path[q]
            if not up[y] and flow[parent_arc[y]] < theta:
                theta = flow[parent_arc[y]]

        leave_node = -1
        on_s_side = False
        if bland:
            best_idx = n_arcs
            for q in range(ns):
                x = s_path[q]
                if up[x] and flow[parent_arc[x]] == theta and parent_arc[x] < best_idx:
                    best_idx = parent_arc[x]
                    leave_node = x
                    on_s_side = True
            for q in range(nt):
                y = t_path[q]
                if not up[y] and flow[parent_arc[y]] == theta and parent_arc[y] < best_idx:
                    best_idx = parent_arc[y]
                    leave_node = y
                    on_s_side = False
        else:
            # last blocking arc in cycle orientation starting at the apex
            for q in range(nt):
                y = t_path[q]
                if not up[y] and flow[parent_arc[y]] == theta:
                    leave_node = y
            if leave_node < 0:
                on_s_side = True
                for q in range(ns):
                    x = s_path[q]
                    if up[x] and flow[parent_arc[x]] == theta:
                        leave_node = x
                        break

        # ---- flow update -----------------------------------------------
        if theta > 0.0:
            for q in range(ns):
                x = s_path[q]
                if up[x]:
                    flow[parent_arc[x]] -= theta
                else:
                    flow[parent_arc[x]] += theta
            for q in range(nt):
                y = t_path[q]
                if up[y]:
                    flow[parent_arc[y]] += theta
                else:
                    flow[parent_arc[y]] -= theta
        leave_arc = parent_arc[leave_node]
        flow[leave_arc] = 0.0
        flow[enter] = theta
        in_tree[leave_arc] = False
        in_tree[enter] = True

        if theta * (-rc_enter) > 0.0:
            degenerate_run = 0
            bland = False
        else:
            degenerate_run += 1
            if degenerate_run > N:
                bland = True

        # ---- tree update: re-root the cut subtree at u_in ----------------
        if on_s_side:
            u_in = s
            u_out = t
        else:
            u_in = t
            u_out = s
        _unlink(leave_node, parent[leave_node], first_child, next_sib, prev_sib)
        prev = u_out
        prev_arc = enter
        x = u_in
        while True:
            nxt = parent[x]
            nxt_arc = parent_arc[x]
            if x != leave_node:
                _unlink(x, nxt, first_child, next_sib, prev_sib)
            src, tgt, c = _arc_ends(prev_arc, n, m, nm, root, art_up, C, art_cost)
            parent[x] = prev
            parent_arc[x] = prev_arc
            up[x] = src == x
            _link(x, prev, first_child, next_sib, prev_sib)
            if x == leave_node:
                break
            prev = x
            prev_arc = nxt_arc
            x = nxt

        # ---- potentials and depths over the moved subtree ----------------
        top = 0
        stack[top] = u_in
        top += 1
        while top > 0:
            top -= 1
            x = stack[top]
            p = parent[x]
            src, tgt, c = _arc_ends(parent_arc[x], n, m, nm, root, art_up, C, art_cost)
            if up[x]:
                pi[x] = pi[p] + c
            else:
                pi[x] = pi[p] - c
            depth[x] = depth[p] + 1
            ch = first_child[x]
            while ch >= 0:
                stack[top] = ch
                top += 1
                ch = next_sib[ch]

    art_flow = 0.0
    for k in range(N):
        art_flow += flow[nm + k]
    if status == OPTIMAL and art_flow > 1e-9:
        status = INFEASIBLE

    gamma = flow[:nm].copy().reshape(n, m)
    basic = in_tree[:nm].copy().reshape(n, m)
    u = pi[:n].copy()
    v = -pi[n:N].copy()
    shift = u[0]
    u -= shift
    v += shift
    return status, gamma, u, v, basic, pivots
