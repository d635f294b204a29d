"""numba batch kernel behind build_composite.

Implements exactly the scalar pipeline from :mod:`hsiref.composite`, one
pixel per prange iteration with per-thread scratch buffers, so output is
independent of the worker count.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange


@njit(cache=True)
def _otsu_edge(raw, hist, bins, vmin, vmax, upper):
    """Bin-edge Otsu threshold over samples <= upper; caller guarantees at
    least two distinct such samples span [vmin, vmax]."""
    t_len = raw.shape[0]
    for b in range(bins):
        hist[b] = 0.0
    scale = bins / (vmax - vmin)
    n = 0.0
    for t in range(t_len):
        if raw[t] > upper:
            continue
        b = int((raw[t] - vmin) * scale)
        if b >= bins:
            b = bins - 1
        elif b < 0:
            b = 0
        hist[b] += 1.0
        n += 1.0
    bin_width = (vmax - vmin) / bins
    total_c = 0.0
    for b in range(bins):
        total_c += hist[b] * (vmin + (b + 0.5) * bin_width)
    best = -1.0
    best_k = 1
    cum = 0.0
    cum_c = 0.0
    for k in range(1, bins):
        cum += hist[k - 1]
        cum_c += hist[k - 1] * (vmin + (k - 0.5) * bin_width)
        if cum == 0.0 or cum == n:
            continue
        mu0 = cum_c / cum
        mu1 = (total_c - cum_c) / (n - cum)
        bcv = cum * (n - cum) * (mu0 - mu1) * (mu0 - mu1)
        if bcv > best:
            best = bcv
            best_k = k
    return vmin + best_k * bin_width


@njit(cache=True)
def _scan_peaks(v, min_height, min_prominence, out):
    """Local maxima with height/prominence filters; returns the count.

    Same convention as composite.find_peaks: left scan stops at values >=
    the peak height, right scan only at strictly higher values.
    """
    t_len = v.shape[0]
    count = 0
    for t in range(1, t_len - 1):
        if not (v[t - 1] < v[t] and v[t] >= v[t + 1]):
            continue
        h = v[t]
        if h < min_height:
            continue
        left_min = v[t - 1]
        i = t - 2
        while i >= 0 and v[i] < h:
            if v[i] < left_min:
                left_min = v[i]
            i -= 1
        right_min = v[t + 1]
        i = t + 2
        while i < t_len and v[i] <= h:
            if v[i] < right_min:
                right_min = v[i]
            i += 1
        base = left_min if left_min > right_min else right_min
        if h - base >= min_prominence:
            out[count] = t
            count += 1
    return count


@njit(cache=True)
def _pixel_composite(raw, pre, sm, grad, neg, hist, entries, exits, bounds,
                     saturation, coeffs, starts, lengths, height_frac,
                     prom_frac, margin, bins):
    """Full per-pixel pipeline; returns (median, valid)."""
    t_len = raw.shape[0]
    # threshold statistics over the unsaturated samples only
    vmin = np.inf
    vmax = -np.inf
    for t in range(t_len):
        if raw[t] > saturation:
            continue
        if raw[t] < vmin:
            vmin = raw[t]
        if raw[t] > vmax:
            vmax = raw[t]
    if not vmin < vmax or (vmax - vmin) / bins == 0.0:
        return 0.0, False

    threshold = _otsu_edge(raw, hist, bins, vmin, vmax, saturation)
    for t in range(t_len):
        v = raw[t]
        if v < threshold or v > saturation:
            pre[t] = 0.0
        else:
            pre[t] = v

    for t in range(t_len):
        acc = 0.0
        s = starts[t]
        for k in range(lengths[t]):
            acc += coeffs[t, k] * pre[s + k]
        sm[t] = acc

    grad[0] = sm[1] - sm[0]
    grad[t_len - 1] = sm[t_len - 1] - sm[t_len - 2]
    for t in range(1, t_len - 1):
        grad[t] = 0.5 * (sm[t + 1] - sm[t - 1])

    grad_max = 0.0
    for t in range(t_len):
        a = abs(grad[t])
        if a > grad_max:
            grad_max = a

    n_regions = 0
    if grad_max > 0.0:
        min_height = height_frac * grad_max
        min_prom = prom_frac * grad_max
        n_entries = _scan_peaks(grad, min_height, min_prom, entries)
        for t in range(t_len):
            neg[t] = -grad[t]
        n_exits = _scan_peaks(neg, min_height, min_prom, exits)
        ptr = 0
        for e_idx in range(n_entries):
            entry = entries[e_idx]
            while ptr < n_exits and exits[ptr] <= entry:
                ptr += 1
            if ptr == n_exits:
                break
            start = entry + margin
            end = exits[ptr] - margin
            if start <= end:
                if n_regions > 0 and start <= bounds[n_regions - 1, 1]:
                    if end > bounds[n_regions - 1, 1]:
                        bounds[n_regions - 1, 1] = end
                else:
                    bounds[n_regions, 0] = start
                    bounds[n_regions, 1] = end
                    n_regions += 1

    if n_regions == 0:
        # fall back to the longest nonzero run (>= 3) of the thresholded profile
        best_start = -1
        best_len = 0
        run_start = -1
        for t in range(t_len):
            if pre[t] != 0.0:
                if run_start < 0:
                    run_start = t
            else:
                if run_start >= 0 and t - run_start > best_len:
                    best_len = t - run_start
                    best_start = run_start
                run_start = -1
        if run_start >= 0 and t_len - run_start > best_len:
            best_len = t_len - run_start
            best_start = run_start
        if best_len >= 3:
            bounds[0, 0] = best_start
            bounds[0, 1] = best_start + best_len - 1
            n_regions = 1

    if n_regions == 0:
        return 0.0, False

    m = 0
    for r in range(n_regions):
        for t in range(bounds[r, 0], bounds[r, 1] + 1):
            pre[m] = raw[t]  # reuse pre as the gather buffer
            m += 1
    gathered = np.sort(pre[:m])
    if m % 2 == 1:
        return gathered[m // 2], True
    return 0.5 * (gathered[m // 2 - 1] + gathered[m // 2]), True


@njit(parallel=True, cache=True)
def _composite_grid(video, saturation, coeffs, starts, lengths, height_frac,
                    prom_frac, margin, bins, n_threads):
    t_len, height, width = video.shape
    n_pixels = height * width
    out = np.empty((height, width), dtype=np.float64)
    invalid = np.zeros((height, width), dtype=np.bool_)

    raw_buf = np.empty((n_threads, t_len), dtype=np.float64)
    pre_buf = np.empty((n_threads, t_len), dtype=np.float64)
    sm_buf = np.empty((n_threads, t_len), dtype=np.float64)
    grad_buf = np.empty((n_threads, t_len), dtype=np.float64)
    neg_buf = np.empty((n_threads, t_len), dtype=np.float64)
    hist_buf = np.empty((n_threads, bins), dtype=np.float64)
    entries_buf = np.empty((n_threads, t_len), dtype=np.int64)
    exits_buf = np.empty((n_threads, t_len), dtype=np.int64)
    bounds_buf = np.empty((n_threads, t_len, 2), dtype=np.int64)

    for p in prange(n_pixels):
        tid = numba.get_thread_id()
        i = p // width
        j = p % width
        raw = raw_buf[tid]
        for t in range(t_len):
            raw[t] = video[t, i, j]
        value, valid = _pixel_composite(
            raw, pre_buf[tid], sm_buf[tid], grad_buf[tid], neg_buf[tid],
            hist_buf[tid], entries_buf[tid], exits_buf[tid], bounds_buf[tid],
            saturation, coeffs, starts, lengths, height_frac, prom_frac,
            margin, bins,
        )
        out[i, j] = value
        invalid[i, j] = not valid
    return out, invalid


def composite_batch(video_data, saturation, coeffs, starts, lengths,
                    height_frac, prom_frac, margin, bins, threads=None):
    """Run the per-pixel pipeline over the whole video."""
    if threads is not None:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    n_threads = numba.get_num_threads()
    return _composite_grid(
        video_data,
        float(saturation),
        coeffs,
        starts,
        lengths,
        float(height_frac),
        float(prom_frac),
        int(margin),
        int(bins),
        n_threads,
    )
