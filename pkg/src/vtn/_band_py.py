"""Pure-numpy band attention kernels (fallback for the compiled core).

Slot ``a`` of row ``i`` reads key ``index[i, a]``; -1 marks an empty slot.
Within one slot column, distinct rows map to distinct keys except for the
shared global key, so scatter-adds can use one fancy-indexed add per slot
after folding duplicates.
"""

import numpy as np


def _gather(x, index):
    safe = np.where(index < 0, 0, index)
    return x[:, safe]  # (G, n, A, D)


def band_qk(q, k, index):
    valid = index >= 0
    kg = _gather(k, index)
    s = np.einsum("gnd,gnad->gna", q, kg)
    return np.where(valid, s, 0).astype(q.dtype, copy=False)


def band_pv(p, v, index):
    valid = index >= 0
    vg = _gather(v, index)
    pm = np.where(valid, p, 0).astype(p.dtype, copy=False)
    return np.einsum("gna,gnad->gnd", pm, vg)


def _scatter_slots(weights, rows_src, index, total_rows):
    """out[:, index[i, a]] += weights[:, i, a, None] * rows_src[:, i] over valid slots."""
    g, n, a = weights.shape
    out = np.zeros((g, total_rows, rows_src.shape[-1]), dtype=rows_src.dtype)
    for slot in range(a):
        col = index[:, slot]
        rows = np.nonzero(col >= 0)[0]
        if rows.size == 0:
            continue
        targets = col[rows]
        contrib = weights[:, rows, slot, None] * rows_src[:, rows]
        if np.unique(targets).size == targets.size:
            out[:, targets] += contrib
        else:
            np.add.at(out, (slice(None), targets), contrib)
    return out


def band_qk_backward(ds, q, k, index):
    valid = index >= 0
    dsm = np.where(valid, ds, 0).astype(q.dtype, copy=False)
    kg = _gather(k, index)
    dq = np.einsum("gna,gnad->gnd", dsm, kg)
    dk = _scatter_slots(dsm, q, index, k.shape[1])
    return dq, dk


def band_pv_backward(dout, p, v, index):
    valid = index >= 0
    vg = _gather(v, index)
    dp = np.where(valid, np.einsum("gnd,gnad->gna", dout, vg), 0).astype(v.dtype, copy=False)
    pm = np.where(valid, p, 0).astype(p.dtype, copy=False)
    dv = _scatter_slots(pm, dout, index, v.shape[1])
    return dp, dv
