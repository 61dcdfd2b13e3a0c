"""Independent dense reference implementations used by several test files."""

import numpy as np

from transavg.lls import default_reg, _normal_matrix


def dense_design(rows, n):
    """Explicit ``A`` (3m x 3n) and ``b`` (3m) for residuals ``a (t_j - t_i) - b``."""
    m = rows.m
    A = np.zeros((3 * m, 3 * n))
    for k in range(m):
        for c in range(3):
            A[3 * k + c, 3 * rows.j[k] + c] += rows.a[k]
            A[3 * k + c, 3 * rows.i[k] + c] -= rows.a[k]
    return A, np.asarray(rows.b, dtype=float).reshape(-1)


def dense_kkt_solve(rows, n, cons, reg=None):
    A, b = dense_design(rows, n)
    w = np.repeat(np.asarray(rows.w, dtype=float), 3)
    if reg is None:
        reg = default_reg(_normal_matrix(rows, n)[0])
    H = A.T @ (w[:, None] * A) + reg * np.eye(3 * n)
    g = A.T @ (w * b)
    k = cons.C.shape[0]
    K = np.block([[H, cons.C.T], [cons.C, np.zeros((k, k))]])
    sol = np.linalg.solve(K, np.concatenate([g, cons.r]))
    return sol[: 3 * n].reshape(n, 3)


def random_rows(rng, n, p=0.5):
    from transavg.lls import EdgeRows

    while True:
        i, j = np.triu_indices(n, k=1)
        keep = rng.random(i.size) < p
        i, j = i[keep], j[keep]
        if i.size >= n - 1 and _connected(n, i, j):
            break
    m = i.size
    return EdgeRows(i, j, rng.uniform(0.2, 3.0, m), rng.standard_normal((m, 3)), rng.uniform(0.1, 2.0, m))


def _connected(n, i, j):
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    adj = sp.coo_matrix((np.ones(i.size), (i, j)), shape=(n, n))
    return connected_components(adj, directed=False)[0] == 1
