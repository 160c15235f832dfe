"""Compiled pose sweep used by :func:`fastgrasp.generator.generate`.

For one grasp orientation every cloud point is expressed in the rotated
frame ``(a, c, m)``. Two bucket grids make each per-pose box query
logarithmic in the point count:

* ``G1`` buckets on ``(a, m)`` with points sorted by ``c`` inside each
  bucket; it answers the finger-slab and jaw-contact queries, which are thin
  in ``c``.
* ``G2`` buckets on ``(c, m)`` with points sorted by ``a``; it answers the
  palm query, which is thin in ``a``.

Box predicates here must agree with :mod:`fastgrasp.gripper`.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

TOL = 1e-9  # mirrors gripper.BOUNDARY_TOL
ACCEPT, REJECT_NORMAL, REJECT_COLLISION, REJECT_EMPTY, REJECT_ONE_SIDED = 0, 1, 2, 3, 4


@njit(cache=True, nogil=True)
def _argsort_stable(x):
    """Stable argsort of finite float64 values by 8-bit LSD radix passes.

    Float bits are mapped to unsigned integers with the same order; a pass
    whose digit is shared by every key is skipped.
    """
    n = x.shape[0]
    bits = x.view(np.uint64)
    keys = np.empty(n, np.uint64)
    sign = np.uint64(1) << np.uint64(63)
    for i in range(n):
        b = bits[i]
        keys[i] = ~b if b & sign else b | sign
    # -0.0 and 0.0 compare equal, so give them one image
    zero = np.uint64(0) | sign
    for i in range(n):
        if x[i] == 0.0:
            keys[i] = zero
    order = np.arange(n)
    tmp = np.empty(n, np.int64)
    hist = np.empty(257, np.int64)
    for p in range(8):
        shift = np.uint64(8 * p)
        hist[:] = 0
        for i in range(n):
            hist[((keys[i] >> shift) & np.uint64(255)) + 1] += 1
        if hist.max() == n:
            continue
        for d in range(256):
            hist[d + 1] += hist[d]
        for t in range(n):
            i = order[t]
            d = (keys[i] >> shift) & np.uint64(255)
            tmp[hist[d]] = i
            hist[d] += 1
        order, tmp = tmp, order
    return order


@njit(cache=True, nogil=True)
def _build_grid(u, v, key, order, cu, cv):
    """Bucket points on ``(u, v)`` cells, each bucket sorted by ``key``.

    ``order`` must sort ``key`` stably; a counting scatter in that order keeps
    every bucket sorted. Returns origin, shape, bucket starts and the
    reordered point ids/values.
    """
    n = u.shape[0]
    u0, u1, v0, v1 = u[0], u[0], v[0], v[0]
    for i in range(1, n):
        u0 = min(u0, u[i])
        u1 = max(u1, u[i])
        v0 = min(v0, v[i])
        v1 = max(v1, v[i])
    nu = int((u1 - u0) / cu) + 1
    nv = int((v1 - v0) / cv) + 1
    cell = np.empty(n, np.int64)
    counts = np.zeros(nu * nv + 1, np.int64)
    for i in range(n):
        iu = min(int((u[i] - u0) / cu), nu - 1)
        iv = min(int((v[i] - v0) / cv), nv - 1)
        cell[i] = iu * nv + iv
        counts[cell[i] + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    ids = np.empty(n, np.int64)
    for t in range(n):
        i = order[t]
        ids[fill[cell[i]]] = i
        fill[cell[i]] += 1
    skey = np.empty(n)
    su = np.empty(n)
    sv = np.empty(n)
    for i in range(n):
        skey[i] = key[ids[i]]
        su[i] = u[ids[i]]
        sv[i] = v[ids[i]]
    return u0, v0, nu, nv, start, ids, skey, su, sv


@njit(cache=True, nogil=True)
def _lower(skey, s, e, x, ref):
    """First index in ``[s, e)`` with ``skey - ref >= x``."""
    while s < e:
        mid = (s + e) // 2
        if skey[mid] - ref < x:
            s = mid + 1
        else:
            e = mid
    return s


@njit(cache=True, nogil=True)
def _upper(skey, s, e, x, ref):
    """First index in ``[s, e)`` with ``skey - ref > x``."""
    while s < e:
        mid = (s + e) // 2
        if skey[mid] - ref <= x:
            s = mid + 1
        else:
            e = mid
    return s


@njit(cache=True, nogil=True)
def _cell_range(x, lo, hi, x0, cx, nx):
    # the epsilon absorbs rounding between absolute and relative coordinates
    i0 = int(math.floor((x + lo - x0) / cx - 1e-7))
    i1 = int(math.floor((x + hi - x0) / cx + 1e-7))
    return max(i0, 0), min(i1, nx - 1)


@njit(cache=True, nogil=True)
def _center_out(mid, t, lo, hi):
    """``t``-th index of ``[lo, hi]`` ordered by distance from ``mid``."""
    d_lo = mid - lo
    d_hi = hi - mid
    both = min(d_lo, d_hi)
    if t <= 2 * both:
        return mid + (t + 1) // 2 if t % 2 == 1 else mid - t // 2
    # past the shorter side, continue on the longer one only
    extra = t - 2 * both
    return mid + both + extra if d_hi > d_lo else mid - both - extra


@njit(cache=True, nogil=True)
def _any_in_slab(grid, cu, cv, kref, u_lo, u_hi, v_lo, v_hi, k_lo, k_hi, lo_open, hi_open,
                 u_ref, v_ref):
    """Any point with relative key in the slab and relative (u, v) in the window.

    ``u``/``v`` bounds are closed; key bounds follow ``lo_open``/``hi_open``.
    """
    u0, v0, nu, nv, start, ids, skey, su, sv = grid
    iu0, iu1 = _cell_range(u_ref, u_lo, u_hi, u0, cu, nu)
    iv0, iv1 = _cell_range(v_ref, v_lo, v_hi, v0, cv, nv)
    if iu0 > iu1 or iv0 > iv1:
        return False
    # visit cells center-out: hits cluster near the query point
    cu_mid = min(max(int(math.floor((u_ref - u0) / cu)), iu0), iu1)
    cv_mid = min(max(int(math.floor((v_ref - v0) / cv)), iv0), iv1)
    nu_w = iu1 - iu0 + 1
    nv_w = iv1 - iv0 + 1
    for tu in range(nu_w):
        iu = _center_out(cu_mid, tu, iu0, iu1)
        for tv in range(nv_w):
            iv = _center_out(cv_mid, tv, iv0, iv1)
            b = iu * nv + iv
            s, e = start[b], start[b + 1]
            if s == e:
                continue
            j = _upper(skey, s, e, k_lo, kref) if lo_open else _lower(skey, s, e, k_lo, kref)
            while j < e:
                rk = skey[j] - kref
                if (rk >= k_hi) if hi_open else (rk > k_hi):
                    break
                du = su[j] - u_ref
                dv = sv[j] - v_ref
                if u_lo <= du <= u_hi and v_lo <= dv <= v_hi:
                    return True
                j += 1
    return False


@njit(cache=True, nogil=True)
def _extreme(grid, cu, cv, kref, u_lo, u_hi, v_lo, v_hi, k_lo, k_hi, want_min, u_ref, v_ref):
    """Point id with the smallest (or largest) relative key in the box, or -1.

    Key range is ``[k_lo, k_hi)`` when searching the minimum and
    ``[k_lo, k_hi]`` when searching the maximum.
    """
    u0, v0, nu, nv, start, ids, skey, su, sv = grid
    iu0, iu1 = _cell_range(u_ref, u_lo, u_hi, u0, cu, nu)
    iv0, iv1 = _cell_range(v_ref, v_lo, v_hi, v0, cv, nv)
    best = -1
    best_k = 0.0
    for iu in range(iu0, iu1 + 1):
        for iv in range(iv0, iv1 + 1):
            b = iu * nv + iv
            s, e = start[b], start[b + 1]
            if s == e:
                continue
            if want_min:
                j = _lower(skey, s, e, k_lo, kref)
                while j < e:
                    rk = skey[j] - kref
                    if rk >= k_hi or (best >= 0 and rk >= best_k):
                        break
                    du = su[j] - u_ref
                    dv = sv[j] - v_ref
                    if u_lo <= du <= u_hi and v_lo <= dv <= v_hi:
                        if best < 0 or rk < best_k or (rk == best_k and ids[j] < best):
                            best, best_k = ids[j], rk
                        break
                    j += 1
            else:
                j = _upper(skey, s, e, k_hi, kref) - 1
                while j >= s:
                    rk = skey[j] - kref
                    if rk < k_lo or (best >= 0 and rk <= best_k):
                        break
                    du = su[j] - u_ref
                    dv = sv[j] - v_ref
                    if u_lo <= du <= u_hi and v_lo <= dv <= v_hi:
                        if best < 0 or rk > best_k or (rk == best_k and ids[j] < best):
                            best, best_k = ids[j], rk
                        break
                    j -= 1
    return best


@njit(cache=True, nogil=True)
def _palm_pass(g2, cu, cv, in_query, standoff, W2, L2, T, H2, Li, alive):
    """Palm test for every query point; writes survivors to ``alive``.

    Buckets are walked in their sorted order. A point's own bucket is
    narrower than the palm footprint, so the palm slab is first searched
    there, galloping from the point's own slot; only points that clear it
    pay for the full footprint query. Returns ``(n_alive, n_rejected)``.
    """
    u0, v0, nu, nv, start, ids, skey, su, sv = g2
    x = -L2 - T
    n_alive = 0
    n_rej = 0
    for b in range(nu * nv):
        s, e = start[b], start[b + 1]
        for t in range(s, e):
            k = ids[t]
            if not in_query[k]:
                continue
            ak = skey[t] + standoff
            ck = su[t]
            mk = sv[t]
            # common case: the next point down the approach axis is in the slab
            if t > s:
                rk = skey[t - 1] - ak
                if (x <= rk < -Li and abs(su[t - 1] - ck) <= W2 + T
                        and abs(sv[t - 1] - mk) <= H2):
                    n_rej += 1
                    continue
            # first slot in the bucket with relative key >= x
            j = t
            if skey[j] - ak >= x:
                step = 1
                while j - step >= s and skey[j - step] - ak >= x:
                    step *= 2
                j = _lower(skey, max(s, j - step), j, x, ak)
            else:
                step = 1
                while j + step < e and skey[j + step] - ak < x:
                    step *= 2
                j = _lower(skey, j + step // 2 + 1, min(e, j + step + 1), x, ak)
            hit = False
            while j < e and skey[j] - ak < -Li:
                # windows are re-checked in case rounding stretched the bucket
                if abs(su[j] - ck) <= W2 + T and abs(sv[j] - mk) <= H2:
                    hit = True
                    break
                j += 1
            if not hit:
                hit = _any_in_slab(g2, cu, cv, ak, -W2 - T, W2 + T, -H2, H2, x, -Li,
                                   False, True, ck, mk)
            if hit:
                n_rej += 1
            else:
                alive[n_alive] = k
                n_alive += 1
    return n_alive, n_rej


@njit(cache=True, nogil=True)
def _footprint_scan(g2, cu, cv, ak, ck, mk, W2, Wi, Li, T, H2):
    """Finger collision and jaw contacts by scanning the hand footprint.

    Walks every palm-grid bucket under the hand and the depth range of the
    fingers within it. Returns ``(collides, left, right)`` with the same
    predicates and tie rules (lowest point id) as the finger-grid queries.
    """
    u0, v0, nu, nv, start, ids, skey, su, sv = g2
    iu0, iu1 = _cell_range(ck, -W2 - T, W2 + T, u0, cu, nu)
    iv0, iv1 = _cell_range(mk, -H2, H2, v0, cv, nv)
    il = -1
    ir = -1
    bl = 0.0
    br = 0.0
    for iu in range(iu0, iu1 + 1):
        for iv in range(iv0, iv1 + 1):
            b = iu * nv + iv
            s, e = start[b], start[b + 1]
            j = _lower(skey, s, e, -Li, ak)
            while j < e and skey[j] - ak <= Li:
                dm = sv[j] - mk
                dc = su[j] - ck
                if -H2 <= dm <= H2 and -W2 - T <= dc <= W2 + T:
                    if dc > Wi or dc < -Wi:
                        return True, -1, -1
                    k = ids[j]
                    if dc < -TOL:
                        if il < 0 or dc < bl or (dc == bl and k < il):
                            il, bl = k, dc
                    elif ir < 0 or dc > br or (dc == br and k < ir):
                        ir, br = k, dc
                j += 1
    return False, il, ir


@njit(cache=True, nogil=True)
def sweep(points, normals, rotations, query, W, L, T, H, standoff, cos_thr, counts,
          out_point, out_orient, out_left, out_right, out_d1, out_d2):
    """Evaluate every (query point, orientation) pose.

    The pose for point ``k`` is centered ``standoff`` along the approach axis
    beyond the point. The palm is tested first for every query; the finger
    grid is only built when enough poses clear the palm to pay for it.
    Accepted poses are appended to the ``out_*`` arrays (capacity
    ``len(query) * len(rotations)``); ``counts`` accumulates per-status
    tallies. Returns the number of accepted poses.
    """
    W2, L2, H2 = W / 2.0, L / 2.0, H / 2.0
    Wi, Li = W2 + TOL, L2 + TOL
    ga, gm, gc = L / 4.0, H / 2.0, W / 8.0
    n = points.shape[0]
    nq = query.shape[0]
    if n == 0 or nq == 0:
        return 0
    a = np.empty(n)
    c = np.empty(n)
    m = np.empty(n)
    alive = np.empty(nq, np.int64)
    in_query = np.zeros(n, np.bool_)
    for qi in range(nq):
        in_query[query[qi]] = True
    order_a = np.empty(n, np.int64)
    n_out = 0
    for o in range(rotations.shape[0]):
        R = rotations[o]
        same_dir = (o > 0 and R[0, 0] == rotations[o - 1, 0, 0]
                    and R[1, 0] == rotations[o - 1, 1, 0] and R[2, 0] == rotations[o - 1, 2, 0])
        for i in range(n):
            x, y, z = points[i, 0], points[i, 1], points[i, 2]
            if not same_dir:
                a[i] = x * R[0, 0] + y * R[1, 0] + z * R[2, 0]
            c[i] = x * R[0, 1] + y * R[1, 1] + z * R[2, 1]
            m[i] = x * R[0, 2] + y * R[1, 2] + z * R[2, 2]
        if not same_dir:
            order_a[:] = _argsort_stable(a)
        g2 = _build_grid(c, m, a, order_a, gc, gm)
        n_alive, n_rej = _palm_pass(g2, gc, gm, in_query, standoff, W2, L2, T, H2, Li, alive)
        counts[REJECT_COLLISION] += n_rej
        use_grid = n_alive > 8
        if use_grid:
            g1 = _build_grid(a, m, c, _argsort_stable(c), ga, gm)
        for t in range(n_alive):
            k = alive[t]
            ak, ck, mk = a[k] + standoff, c[k], m[k]
            if use_grid:
                # fingers: W/2 < c <= W/2 + T and mirrored
                if (_any_in_slab(g1, ga, gm, ck, -Li, Li, -H2, H2, Wi, W2 + T, True, False, ak, mk)
                        or _any_in_slab(g1, ga, gm, ck, -Li, Li, -H2, H2, -W2 - T, -Wi, False,
                                        True, ak, mk)):
                    counts[REJECT_COLLISION] += 1
                    continue
                il = _extreme(g1, ga, gm, ck, -Li, Li, -H2, H2, -Wi, -TOL, True, ak, mk)
                ir = _extreme(g1, ga, gm, ck, -Li, Li, -H2, H2, -TOL, Wi, False, ak, mk)
            else:
                hit, il, ir = _footprint_scan(g2, gc, gm, ak, ck, mk, W2, Wi, Li, T, H2)
                if hit:
                    counts[REJECT_COLLISION] += 1
                    continue
            if il < 0 and ir < 0:
                counts[REJECT_EMPTY] += 1
                continue
            if il < 0 or ir < 0:
                counts[REJECT_ONE_SIDED] += 1
                continue
            # jaw pushes +c on the left contact, -c on the right one
            ncl = normals[il, 0] * R[0, 1] + normals[il, 1] * R[1, 1] + normals[il, 2] * R[2, 1]
            ncr = normals[ir, 0] * R[0, 1] + normals[ir, 1] * R[1, 1] + normals[ir, 2] * R[2, 1]
            if -ncl < cos_thr or ncr < cos_thr:
                counts[REJECT_NORMAL] += 1
                continue
            counts[ACCEPT] += 1
            out_point[n_out] = k
            out_orient[n_out] = o
            out_left[n_out] = il
            out_right[n_out] = ir
            out_d1[n_out] = max((c[il] - ck) + W2, 0.0)
            out_d2[n_out] = max(W2 - (c[ir] - ck), 0.0)
            n_out += 1
    return n_out
