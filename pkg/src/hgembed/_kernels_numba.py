"""numba kernels for the compiled message-passing plan.

Loop nests are written so that every reduction runs in a fixed sequential
order and the vectorizable axis is always an independent output index; no
fastmath, so results do not depend on SIMD width.
"""
import numpy as np
from numba import njit

# cells columns
STATE, RECV, SEND, LAYER, TARGET = 0, 1, 2, 3, 4


@njit(cache=True)
def _project(MT, x, out):
    # out = M @ x with MT = M.T contiguous
    n_in, n_out = MT.shape
    for i in range(n_out):
        out[i] = 0.0
    for j in range(n_in):
        xj = x[j]
        if xj != 0.0:
            for i in range(n_out):
                out[i] += MT[j, i] * xj


@njit(cache=True)
def _project_t(M, g, out):
    # out += M.T @ g
    n_out, n_in = M.shape
    for a in range(n_out):
        ga = g[a]
        if ga != 0.0:
            for j in range(n_in):
                out[j] += M[a, j] * ga


@njit(cache=True)
def _outer_acc(dst, col0, g, x):
    # dst[:, col0:col0+len(x)] += outer(g, x)
    n = x.shape[0]
    for a in range(g.shape[0]):
        ga = g[a]
        if ga != 0.0:
            for j in range(n):
                dst[a, col0 + j] += ga * x[j]


@njit(cache=True)
def forward(W, U, b, R, n_init, E, cells, stage_ptr, loss_pairs, outs, losses):
    dh = W.shape[0]
    dv = dh
    de = E.shape[1]
    n_rows = R.shape[0]
    WT = np.ascontiguousarray(W.T)
    UiT = np.ascontiguousarray(U[:, :dv].T)
    UeT = np.ascontiguousarray(U[:, dv:dv + de].T)
    UjT = np.ascontiguousarray(U[:, dv + de:].T)

    PW = np.empty((n_rows, dh))
    PI = np.empty((n_rows, dh))
    PJ = np.empty((n_rows, dh))
    have_w = np.zeros(n_rows, np.bool_)
    have_i = np.zeros(n_rows, np.bool_)
    have_j = np.zeros(n_rows, np.bool_)
    PE = np.empty((E.shape[0], dh))
    for layer in range(E.shape[0]):
        _project(UeT, E[layer], PE[layer])

    for r in range(n_init, n_rows):
        for k in range(dh):
            R[r, k] = 0.0

    for c in range(cells.shape[0]):
        s = cells[c, STATE]
        ri = cells[c, RECV]
        q = cells[c, SEND]
        layer = cells[c, LAYER]
        t = cells[c, TARGET]
        if not have_w[s]:
            _project(WT, R[s], PW[s])
            have_w[s] = True
        if not have_i[ri]:
            _project(UiT, R[ri], PI[ri])
            have_i[ri] = True
        if not have_j[q]:
            _project(UjT, R[q], PJ[q])
            have_j[q] = True
        for k in range(dh):
            pre = PW[s, k] + PI[ri, k] + PE[layer, k] + PJ[q, k] + b[k]
            o = np.tanh(pre)
            outs[c, k] = o
            R[t, k] += o

    for m in range(loss_pairs.shape[0]):
        tg = loss_pairs[m, 0]
        pr = loss_pairs[m, 1]
        acc = 0.0
        for k in range(dh):
            d = R[pr, k] - R[tg, k]
            acc += d * d
        losses[m] = np.sqrt(acc)


@njit(cache=True)
def backward(W, U, b, R, n_init, E, cells, stage_ptr, loss_pairs, outs, dW, dU, db):
    dh = W.shape[0]
    dv = dh
    de = E.shape[1]
    n_rows = R.shape[0]
    Ui = np.ascontiguousarray(U[:, :dv])
    Uj = np.ascontiguousarray(U[:, dv + de:])

    G = np.zeros((n_rows, dh))
    AS = np.zeros((n_rows, dh))
    AR = np.zeros((n_rows, dh))
    AQ = np.zeros((n_rows, dh))
    AL = np.zeros((E.shape[0], dh))
    used_s = np.zeros(n_rows, np.bool_)
    used_r = np.zeros(n_rows, np.bool_)
    used_q = np.zeros(n_rows, np.bool_)
    used_l = np.zeros(E.shape[0], np.bool_)
    ready = np.zeros(n_rows, np.bool_)

    for m in range(loss_pairs.shape[0]):
        tg = loss_pairs[m, 0]
        pr = loss_pairs[m, 1]
        acc = 0.0
        for k in range(dh):
            d = R[pr, k] - R[tg, k]
            acc += d * d
        nrm = np.sqrt(acc)
        if nrm > 0.0:
            for k in range(dh):
                G[pr, k] += (R[pr, k] - R[tg, k]) / nrm

    gpre = np.empty(dh)
    for c in range(cells.shape[0] - 1, -1, -1):
        s = cells[c, STATE]
        ri = cells[c, RECV]
        q = cells[c, SEND]
        layer = cells[c, LAYER]
        t = cells[c, TARGET]
        if not ready[t]:
            # every consumer of row t sits later in the plan, so its
            # adjoint is complete once we first meet a producer of t
            if used_s[t]:
                _project_t(W, AS[t], G[t])
            if used_r[t]:
                _project_t(Ui, AR[t], G[t])
            if used_q[t]:
                _project_t(Uj, AQ[t], G[t])
            ready[t] = True
        for k in range(dh):
            o = outs[c, k]
            gpre[k] = G[t, k] * (1.0 - o * o)
        for k in range(dh):
            g = gpre[k]
            AS[s, k] += g
            AR[ri, k] += g
            AQ[q, k] += g
            AL[layer, k] += g
            db[k] += g
        used_s[s] = True
        used_r[ri] = True
        used_q[q] = True
        used_l[layer] = True

    for r in range(n_rows):
        if used_s[r]:
            _outer_acc(dW, 0, AS[r], R[r])
        if used_r[r]:
            _outer_acc(dU, 0, AR[r], R[r])
        if used_q[r]:
            _outer_acc(dU, dv + de, AQ[r], R[r])
    for layer in range(E.shape[0]):
        if used_l[layer]:
            _outer_acc(dU, dv, AL[layer], E[layer])
