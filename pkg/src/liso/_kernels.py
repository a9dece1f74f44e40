# Compiled inner loops.  Everything here works on plain float64/int64 arrays;
# the public modules wrap them in typed objects.

import numpy as np
from numba import njit


@njit(cache=True)
def pava_blocks(y, w, sums, weights, ends):
    """Weighted PAVA on points already sorted by covariate.

    Fills ``sums``/``weights``/``ends`` (block weighted sum, total weight,
    exclusive end index) and returns the number of blocks.  Blocks are merged
    only on a strict violation.
    """
    m = 0
    for i in range(y.shape[0]):
        sums[m] = w[i] * y[i]
        weights[m] = w[i]
        ends[m] = i + 1
        m += 1
        while m > 1 and sums[m - 2] * weights[m - 1] > sums[m - 1] * weights[m - 2]:
            sums[m - 2] += sums[m - 1]
            weights[m - 2] += weights[m - 1]
            ends[m - 2] = ends[m - 1]
            m -= 1
    return m


@njit(cache=True)
def thresholds(levels, weights, m, lam):
    """Winsorizing levels for the penalised univariate fit.

    ``levels[:m]`` are increasing block levels with block weights
    ``weights[:m]``.  Returns ``(a, b, at_mean)``.
    """
    tot_w = 0.0
    tot_s = 0.0
    for j in range(m):
        tot_w += weights[j]
        tot_s += weights[j] * levels[j]
    mean = tot_s / tot_w
    spread = 0.0
    for j in range(m):
        spread += weights[j] * abs(levels[j] - mean)
    # the relative slack absorbs rounding when lam is computed from the
    # data's own zero threshold; ties go to the constant fit
    if 2.0 * lam >= spread * (1.0 - 1e-12):
        return mean, mean, True
    # upper: sum_j W_j (L_j - b)_+ = lam, scanning down from the top block
    c = 0.0
    s = 0.0
    j = m - 1
    while True:
        c += weights[j]
        s += weights[j] * levels[j]
        if j == 0 or s - levels[j - 1] * c >= lam:
            break
        j -= 1
    b = (s - lam) / c
    # lower: sum_j W_j (a - L_j)_+ = lam, scanning up from the bottom block
    c = 0.0
    s = 0.0
    j = 0
    while True:
        c += weights[j]
        s += weights[j] * levels[j]
        if j == m - 1 or levels[j + 1] * c - s >= lam:
            break
        j += 1
    a = (s + lam) / c
    if a > b:
        # only reachable through rounding right at the zero boundary
        return mean, mean, True
    return a, b, False


@njit(cache=True)
def liso_1d(y, w, lam, out):
    """Penalised increasing fit on sorted, tie-merged points.

    Writes the Winsorized PAVA fit into ``out`` (not centred) and returns
    ``(a, b, at_mean, mean)``.
    """
    n = y.shape[0]
    sums = np.empty(n)
    bw = np.empty(n)
    ends = np.empty(n, dtype=np.int64)
    m = pava_blocks(y, w, sums, bw, ends)
    levels = np.empty(m)
    for j in range(m):
        levels[j] = sums[j] / bw[j]
    a, b, at_mean = thresholds(levels, bw, m, lam)
    tot_w = 0.0
    tot_s = 0.0
    for j in range(m):
        tot_w += bw[j]
        tot_s += sums[j]
    mean = tot_s / tot_w
    start = 0
    for j in range(m):
        v = levels[j]
        if at_mean:
            v = a
        elif v < a:
            v = a
        elif v > b:
            v = b
        for i in range(start, ends[j]):
            out[i] = v
        start = ends[j]
    return a, b, at_mean, mean


@njit(cache=True)
def refit_column(resid, fobs, c, k, sign, lam, w, group, n_groups, gweight, zs, vals):
    """One thresholded-PAVA coordinate update of column ``c`` (covariate ``k``).

    Updates ``resid`` and ``fobs[c]`` in place and returns the largest
    absolute change of the column's fitted values.
    """
    n = resid.shape[0]
    ng = n_groups[k]
    for g in range(ng):
        zs[g] = 0.0
    for i in range(n):
        zs[group[k, i]] += w[i] * sign * (resid[i] + fobs[c, i])
    for g in range(ng):
        zs[g] = zs[g] / gweight[k, g]
    a, b, at_mean, mean = liso_1d(zs[:ng], gweight[k, :ng], lam, vals)
    if at_mean:
        for g in range(ng):
            vals[g] = 0.0
    else:
        tot = 0.0
        tw = 0.0
        for g in range(ng):
            tot += gweight[k, g] * vals[g]
            tw += gweight[k, g]
        shift = tot / tw
        for g in range(ng):
            vals[g] = vals[g] - shift
    change = 0.0
    for i in range(n):
        new = sign * vals[group[k, i]]
        d = new - fobs[c, i]
        if d != 0.0:
            resid[i] -= d
            fobs[c, i] = new
            if abs(d) > change:
                change = abs(d)
    return change


@njit(cache=True)
def tv_denoise(y, w, lam_up, lam_down, out):
    """Exact minimiser of ``0.5 sum w (y - f)^2 + lam_up * (upward jumps) +
    lam_down * (downward jumps)`` over all ``f`` on sorted points.

    Dynamic programming over the derivative of the running value function,
    stored as knots carrying changes of a linear piece ``a * t + b``.
    """
    n = y.shape[0]
    if n == 1:
        out[0] = y[0]
        return
    x = np.empty(2 * n)
    da = np.empty(2 * n)
    db = np.empty(2 * n)
    lo_k = np.empty(n)
    hi_k = np.empty(n)
    left = n
    right = n - 1  # empty deque: active knots are left..right
    for i in range(n - 1):
        base_lo = -lam_down if i > 0 else 0.0
        base_hi = lam_up if i > 0 else 0.0
        # lower crossing: derivative equals -lam_down
        a = w[i]
        b = -w[i] * y[i] + base_lo
        j = left
        while j <= right and a * x[j] + b <= -lam_down:
            a += da[j]
            b += db[j]
            j += 1
        lo = (-lam_down - b) / a
        new_left = j - 1
        a_lo, b_lo = a, b
        # upper crossing: derivative equals lam_up
        a = w[i]
        b = -w[i] * y[i] + base_hi
        j = right
        while j >= new_left + 1 and a * x[j] + b >= lam_up:
            a -= da[j]
            b -= db[j]
            j -= 1
        hi = (lam_up - b) / a
        new_right = j + 1
        a_hi, b_hi = a, b
        x[new_left] = lo
        da[new_left] = a_lo
        db[new_left] = b_lo + lam_down
        x[new_right] = hi
        da[new_right] = -a_hi
        db[new_right] = lam_up - b_hi
        left = new_left
        right = new_right
        lo_k[i] = lo
        hi_k[i] = hi
    # last point: derivative zero
    a = w[n - 1]
    b = -w[n - 1] * y[n - 1] - lam_down
    j = left
    while j <= right and a * x[j] + b <= 0.0:
        a += da[j]
        b += db[j]
        j += 1
    out[n - 1] = -b / a
    for i in range(n - 2, -1, -1):
        v = out[i + 1]
        if v < lo_k[i]:
            v = lo_k[i]
        elif v > hi_k[i]:
            v = hi_k[i]
        out[i] = v


@njit(cache=True)
def refit_pair(resid, fobs, cp, cm, k, lam_up, lam_down, w, group, n_groups, gweight,
               zs, vals, up, down):
    """Joint update of the increasing column ``cp`` and decreasing column
    ``cm`` of covariate ``k``: an exact total-variation fit of the partial
    residual, split into its upward and downward parts."""
    n = resid.shape[0]
    ng = n_groups[k]
    for g in range(ng):
        zs[g] = 0.0
    for i in range(n):
        zs[group[k, i]] += w[i] * (resid[i] + fobs[cp, i] + fobs[cm, i])
    for g in range(ng):
        zs[g] = zs[g] / gweight[k, g]
    tv_denoise(zs[:ng], gweight[k, :ng], lam_up, lam_down, vals)
    up[0] = 0.0
    down[0] = 0.0
    for g in range(1, ng):
        d = vals[g] - vals[g - 1]
        if d > 0.0:
            up[g] = up[g - 1] + d
            down[g] = down[g - 1]
        else:
            up[g] = up[g - 1]
            down[g] = down[g - 1] + d
    tw = 0.0
    su = 0.0
    sd = 0.0
    for g in range(ng):
        tw += gweight[k, g]
        su += gweight[k, g] * up[g]
        sd += gweight[k, g] * down[g]
    su /= tw
    sd /= tw
    for g in range(ng):
        up[g] -= su
        down[g] -= sd
    change = 0.0
    for i in range(n):
        g = group[k, i]
        d1 = up[g] - fobs[cp, i]
        d2 = down[g] - fobs[cm, i]
        if d1 != 0.0 or d2 != 0.0:
            resid[i] -= d1 + d2
            fobs[cp, i] = up[g]
            fobs[cm, i] = down[g]
            if abs(d1) > change:
                change = abs(d1)
            if abs(d2) > change:
                change = abs(d2)
    return change


@njit(cache=True)
def backfit_cycle(resid, fobs, order, col_cov, col_sign, col_lam, col_partner, w, group,
                  n_groups, gweight):
    """One full backfitting sweep over the columns in ``order``.

    A column whose ``col_partner`` is a later column is updated jointly with
    it; the partner itself is then skipped.
    """
    n = resid.shape[0]
    zs = np.empty(n)
    vals = np.empty(n)
    up = np.empty(n)
    down = np.empty(n)
    change = 0.0
    for t in range(order.shape[0]):
        c = order[t]
        q = col_partner[c]
        if q < 0:
            d = refit_column(resid, fobs, c, col_cov[c], col_sign[c], col_lam[c],
                             w, group, n_groups, gweight, zs, vals)
        elif q > c:
            d = refit_pair(resid, fobs, c, q, col_cov[c], col_lam[c], col_lam[q],
                           w, group, n_groups, gweight, zs, vals, up, down)
        else:
            continue
        if d > change:
            change = d
    return change


@njit(cache=True)
def column_loss(resid, fobs, col_lam, w):
    """Half weighted RSS plus the per-column range penalty."""
    loss = 0.0
    for i in range(resid.shape[0]):
        loss += w[i] * resid[i] * resid[i]
    loss *= 0.5
    for c in range(fobs.shape[0]):
        if col_lam[c] == 0.0:
            continue
        lo = fobs[c, 0]
        hi = fobs[c, 0]
        for i in range(1, fobs.shape[1]):
            v = fobs[c, i]
            if v < lo:
                lo = v
            elif v > hi:
                hi = v
        loss += col_lam[c] * (hi - lo)
    return loss
