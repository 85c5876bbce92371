"""JIT-compiled inner loop of the SGD engine.

The kernel works on a packed flat view of the model so that several threads
can update it concurrently without locks: ``core`` is the raveled core
tensor, ``fac`` holds all factor matrices back to back (``fac_off[n]`` is the
flat offset of factor n, whose row i starts at ``fac_off[n] + i *
fac_cols[n]``), and ``rc``/``rc_off`` flatten the per-mode occurrence counts
the same way.

``stream`` is one epoch's shuffled permutation of entries and edges; a value
below ``n_entries`` selects a tensor entry, anything else selects edge
``stream[s] - n_entries``.  Workers process disjoint contiguous chunks
[start, stop); only the worker flagged as ``core_updater`` touches the core.
Compiled with ``nogil`` so threaded workers run in parallel.
"""

import numba
import numpy as np


@numba.njit(nogil=True, cache=True)
def run_chunk(
    stream,
    start,
    stop,
    entry_idx,
    entry_val,
    edge_nodes,
    edge_w,
    core,
    core_strides,
    fac,
    fac_off,
    fac_cols,
    rc,
    rc_off,
    n_entries,
    eta,
    lam,
    lam_g,
    cmode,
    pscale,
    core_updater,
):
    order = fac_cols.shape[0]
    core_size = core.shape[0]
    jmax = 0
    for n in range(order):
        if fac_cols[n] > jmax:
            jmax = fac_cols[n]
    snap = np.empty((order, jmax))
    grad = np.empty((order, jmax))
    rank1 = np.empty(core_size)
    pre = np.empty(order + 1)
    suf = np.empty(order + 1)
    jj = np.empty(order, np.int64)

    for s in range(start, stop):
        item = stream[s]
        if item < n_entries:
            e = item
            x = entry_val[e]
            # snapshot all touched rows; every gradient below uses these
            for n in range(order):
                base = fac_off[n] + entry_idx[e, n] * fac_cols[n]
                for j in range(fac_cols[n]):
                    snap[n, j] = fac[base + j]
                    grad[n, j] = 0.0
            xhat = 0.0
            for p in range(core_size):
                rem = p
                for n in range(order):
                    jj[n] = rem // core_strides[n]
                    rem -= jj[n] * core_strides[n]
                pre[0] = 1.0
                for n in range(order):
                    pre[n + 1] = pre[n] * snap[n, jj[n]]
                suf[order] = 1.0
                for n in range(order - 1, -1, -1):
                    suf[n] = suf[n + 1] * snap[n, jj[n]]
                rank1[p] = pre[order]
                xhat += core[p] * rank1[p]
                g = core[p]
                for n in range(order):
                    grad[n, jj[n]] += g * pre[n] * suf[n + 1]
            r = xhat - x
            for n in range(order):
                i = entry_idx[e, n]
                base = fac_off[n] + i * fac_cols[n]
                reg = lam / rc[rc_off[n] + i]
                for j in range(fac_cols[n]):
                    fac[base + j] = snap[n, j] - eta * (
                        r * grad[n, j] + reg * snap[n, j]
                    )
            if core_updater:
                reg = lam / n_entries
                for p in range(core_size):
                    core[p] -= eta * pscale * (r * rank1[p] + reg * core[p])
        else:
            e = item - n_entries
            k1 = edge_nodes[e, 0]
            k2 = edge_nodes[e, 1]
            cols = fac_cols[cmode]
            b1 = fac_off[cmode] + k1 * cols
            b2 = fac_off[cmode] + k2 * cols
            coef = eta * lam_g * edge_w[e]
            for j in range(cols):
                s1 = fac[b1 + j]
                s2 = fac[b2 + j]
                d = s1 - s2
                fac[b1 + j] = s1 - coef * d
                fac[b2 + j] = s2 + coef * d
