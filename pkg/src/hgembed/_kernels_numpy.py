"""Pure-numpy twin of the numba kernels.

Same plan semantics and the same association order for the per-cell
pre-activation sum; matrix products go through BLAS, so bits can differ
from the numba path in the last place.
"""
import numpy as np

STATE, RECV, SEND, LAYER, TARGET = 0, 1, 2, 3, 4


def forward(W, U, b, R, n_init, E, cells, stage_ptr, loss_pairs, outs, losses):
    dh = W.shape[0]
    dv, de = dh, E.shape[1]
    Ui, Ue, Uj = U[:, :dv], U[:, dv:dv + de], U[:, dv + de:]
    n_rows = R.shape[0]
    PW = np.empty((n_rows, dh))
    PI = np.empty((n_rows, dh))
    PJ = np.empty((n_rows, dh))
    have = np.zeros((3, n_rows), dtype=bool)
    PE = E @ Ue.T
    R[n_init:] = 0.0

    for st in range(len(stage_ptr) - 1):
        sl = slice(stage_ptr[st], stage_ptr[st + 1])
        c = cells[sl]
        for role, col, P, M in ((0, STATE, PW, W), (1, RECV, PI, Ui), (2, SEND, PJ, Uj)):
            rows = np.unique(c[:, col])
            rows = rows[~have[role, rows]]
            if rows.size:
                P[rows] = R[rows] @ M.T
                have[role, rows] = True
        pre = PW[c[:, STATE]] + PI[c[:, RECV]] + PE[c[:, LAYER]] + PJ[c[:, SEND]] + b
        o = np.tanh(pre)
        outs[sl] = o
        np.add.at(R, c[:, TARGET], o)

    res = R[loss_pairs[:, 1]] - R[loss_pairs[:, 0]]
    losses[:] = np.sqrt(np.einsum("ij,ij->i", res, res))


def backward(W, U, b, R, n_init, E, cells, stage_ptr, loss_pairs, outs, dW, dU, db):
    dh = W.shape[0]
    dv, de = dh, E.shape[1]
    Ui, Uj = U[:, :dv], U[:, dv + de:]
    n_rows = R.shape[0]
    G = np.zeros((n_rows, dh))
    A = np.zeros((3, n_rows, dh))  # adjoint sums per row, by role: state, recv, send
    AL = np.zeros((E.shape[0], dh))
    used = np.zeros((3, n_rows), dtype=bool)

    res = R[loss_pairs[:, 1]] - R[loss_pairs[:, 0]]
    nrm = np.sqrt(np.einsum("ij,ij->i", res, res))
    live = nrm > 0
    np.add.at(G, loss_pairs[live, 1], res[live] / nrm[live, None])

    for st in range(len(stage_ptr) - 2, -1, -1):
        sl = slice(stage_ptr[st], stage_ptr[st + 1])
        c = cells[sl]
        tg = np.unique(c[:, TARGET])
        G[tg] += A[0, tg] @ W + A[1, tg] @ Ui + A[2, tg] @ Uj
        gpre = G[c[:, TARGET]] * (1.0 - outs[sl] ** 2)
        for role, col in ((0, STATE), (1, RECV), (2, SEND)):
            np.add.at(A[role], c[:, col], gpre)
            used[role, c[:, col]] = True
        np.add.at(AL, c[:, LAYER], gpre)
        db += gpre.sum(axis=0)

    for role, (lo, M) in enumerate(((None, dW), (0, dU), (dv + de, dU))):
        rows = np.flatnonzero(used[role])
        if rows.size == 0:
            continue
        prod = A[role, rows].T @ R[rows]
        if lo is None:
            M += prod
        else:
            M[:, lo:lo + dv] += prod
    dU[:, dv:dv + de] += AL.T @ E
