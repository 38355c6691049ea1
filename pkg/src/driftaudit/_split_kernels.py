"""Compiled kernels that maximize a two-sample statistic over stream splits.

For a window x_1..x_t these kernels evaluate the chosen two-sample statistic
between {x_1..x_k} and {x_k+1..x_t} for every admissible split k and return
the maximum with its argmax (smallest k on ties).  They must agree exactly
with the reference implementations in ``stat_tests`` (a property the test
suite enforces split by split).

Costs per call: Student and Lepage are O(t) after ranking, the Cramer-von-
Mises scan is O(t log t) via two Fenwick-indexed running sums, and the
Kolmogorov-Smirnov scan is O(t^2).
"""

import numpy as np
from numba import njit, prange

KIND_STUDENT = 0
KIND_KS = 1
KIND_CVM = 2
KIND_LEPAGE = 3


@njit(cache=True)
def _rank_groups(x):
    """Group the window by value.

    Returns (gidx, ghi, w, n_groups): per-observation group index, per-group
    1-based last order position, and per-group multiplicity.
    """
    t = x.size
    order = np.argsort(x)
    gidx = np.empty(t, np.int64)
    ghi = np.empty(t, np.int64)
    w = np.empty(t, np.int64)
    n_groups = 0
    start = 0
    while start < t:
        stop = start + 1
        v = x[order[start]]
        while stop < t and x[order[stop]] == v:
            stop += 1
        ghi[n_groups] = stop
        w[n_groups] = stop - start
        for pos in range(start, stop):
            gidx[order[pos]] = n_groups
        n_groups += 1
        start = stop
    return gidx, ghi[:n_groups], w[:n_groups], n_groups


@njit(cache=True)
def _student_scan(x, min_seg):
    t = x.size
    cs = np.cumsum(x)
    cs2 = np.cumsum(x * x)
    total_s = cs[t - 1]
    total_s2 = cs2[t - 1]
    df = t - 2
    best_d = -1.0
    best_k = min_seg
    for k in range(min_seg, t - min_seg + 1):
        n2 = t - k
        m1 = cs[k - 1] / k
        m2 = (total_s - cs[k - 1]) / n2
        ss1 = cs2[k - 1] - k * m1 * m1
        ss2 = (total_s2 - cs2[k - 1]) - n2 * m2 * m2
        if ss1 < 0.0:
            ss1 = 0.0
        if ss2 < 0.0:
            ss2 = 0.0
        pooled = (ss1 + ss2) / df
        if pooled <= 0.0:
            d = 0.0 if m1 == m2 else np.inf
        else:
            d = abs(m1 - m2) / np.sqrt(pooled * (1.0 / k + 1.0 / n2))
        if d > best_d:
            best_d = d
            best_k = k
    return best_d, best_k


@njit(cache=True)
def _ks_scan(x, min_seg):
    t = x.size
    order = np.argsort(x)
    is_end = np.empty(t, np.bool_)
    for pos in range(t - 1):
        is_end[pos] = x[order[pos]] != x[order[pos + 1]]
    is_end[t - 1] = True
    best_d = -1.0
    best_k = min_seg
    for k in range(min_seg, t - min_seg + 1):
        e = 0
        md = 0
        for pos in range(t):
            if order[pos] < k:
                e += 1
            if is_end[pos]:
                diff = t * e - k * (pos + 1)
                if diff < 0:
                    diff = -diff
                if diff > md:
                    md = diff
        d = md / (k * float(t - k))
        if d > best_d:
            best_d = d
            best_k = k
    return best_d, best_k


@njit(cache=True)
def _cvm_scan(x, min_seg):
    # Running ECDF-difference sums over value groups.  Inserting observation
    # k+1 bumps the prefix count e_g for every group at or above its value;
    # the two Fenwick trees answer "how many inserted values sit at or below
    # group g" and "sum of their suffix weights", which is all the update to
    # sum_g w_g e_g^2 needs.
    t = x.size
    gidx, ghi, w, n_groups = _rank_groups(x)
    sw = np.empty(n_groups, np.float64)   # suffix sum of w
    swg = np.empty(n_groups, np.float64)  # suffix sum of w * ghi
    acc_w = 0.0
    acc_wg = 0.0
    c_const = 0.0
    for g in range(n_groups - 1, -1, -1):
        acc_w += w[g]
        acc_wg += w[g] * ghi[g]
        sw[g] = acc_w
        swg[g] = acc_wg
        c_const += w[g] * float(ghi[g]) * ghi[g]
    bit_cnt = np.zeros(n_groups + 1, np.float64)
    bit_sw = np.zeros(n_groups + 1, np.float64)
    inserted_sw = 0.0
    a_sum = 0.0  # sum_g w_g e_g^2
    b_sum = 0.0  # sum_g w_g ghi_g e_g
    tt = float(t)
    best_d = -1.0
    best_k = min_seg
    for k0 in range(t):
        g = gidx[k0]
        i = g + 1
        cnt_le = 0.0
        sw_le = 0.0
        while i > 0:
            cnt_le += bit_cnt[i]
            sw_le += bit_sw[i]
            i -= i & (-i)
        a_sum += 2.0 * (sw[g] * cnt_le + (inserted_sw - sw_le)) + sw[g]
        b_sum += swg[g]
        i = g + 1
        while i <= n_groups:
            bit_cnt[i] += 1.0
            bit_sw[i] += sw[g]
            i += i & (-i)
        inserted_sw += sw[g]
        k = k0 + 1
        if min_seg <= k <= t - min_seg:
            s = tt * tt * a_sum - 2.0 * tt * k * b_sum + float(k) * k * c_const
            d = s / (float(k) * (tt - k) * tt * tt)
            if d > best_d:
                best_d = d
                best_k = k
    return best_d, best_k


@njit(cache=True)
def _lepage_scan(x, min_seg):
    t = x.size
    gidx, ghi, w, n_groups = _rank_groups(x)
    mean_r = 0.5 * (t + 1)
    ranks = np.empty(t, np.float64)
    for i in range(t):
        g = gidx[i]
        ranks[i] = ghi[g] - 0.5 * (w[g] - 1)
    scale = (ranks - mean_r) ** 2
    mean_b = 0.0
    for i in range(t):
        mean_b += scale[i]
    mean_b /= t
    # population variance of the ranks is exactly the mean scale score
    var_r = mean_b
    var_b = 0.0
    for i in range(t):
        diff = scale[i] - mean_b
        var_b += diff * diff
    var_b /= t
    cum_r = np.cumsum(ranks)
    cum_b = np.cumsum(scale)
    best_d = -1.0
    best_k = min_seg
    for k in range(min_seg, t - min_seg + 1):
        fac = k * float(t - k) / (t - 1.0)
        vw = fac * var_r
        vm = fac * var_b
        u = (cum_r[k - 1] - k * mean_r) / np.sqrt(vw) if vw > 0.0 else 0.0
        m = (cum_b[k - 1] - k * mean_b) / np.sqrt(vm) if vm > 0.0 else 0.0
        d = u * u + m * m
        if d > best_d:
            best_d = d
            best_k = k
    return best_d, best_k


@njit(cache=True)
def split_scan(x, min_seg, kind):
    if kind == KIND_STUDENT:
        return _student_scan(x, min_seg)
    elif kind == KIND_KS:
        return _ks_scan(x, min_seg)
    elif kind == KIND_CVM:
        return _cvm_scan(x, min_seg)
    else:
        return _lepage_scan(x, min_seg)


@njit(cache=True, parallel=True)
def split_scan_batch(X, t, min_seg, kind, out_d, out_k):
    """Row-wise split scan of X[:, :t]; each row writes only its own slot."""
    for i in prange(X.shape[0]):
        d, k = split_scan(X[i, :t], min_seg, kind)
        out_d[i] = d
        out_k[i] = k


@njit(cache=True, parallel=True)
def first_exceedance_batch(X, thresholds, burn_in, stride, min_seg, kind, out_t):
    """First check time where a row's split statistic exceeds its threshold.

    Checks run at t = burn_in, burn_in + stride, ... while t <= row length;
    rows that never exceed get -1.
    """
    for i in prange(X.shape[0]):
        det = -1
        for j in range(thresholds.size):
            t = burn_in + j * stride
            if t > X.shape[1]:
                break
            d, _ = split_scan(X[i, :t], min_seg, kind)
            if d > thresholds[j]:
                det = t
                break
        out_t[i] = det
