"""Compiled core: counter-based hashing and bit-parallel level stepping.

All site bitmaps live in a fixed *frame*: at level ``n`` bit ``j`` stands for
the site ``y = y0 + 2*j + (n & 1)`` where ``y0`` is even.  Stepping from an
even level to an odd one maps ``(R, L) -> R | (L >> 1)`` and from an odd level
to an even one ``(R, L) -> (R << 1) | L``, where ``R``/``L`` are the occupied
sites that transmit to the right/left neighbour above them.
"""

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_TOP = np.uint64(63)

N_CHANNELS = 4

PROCESS_SITE = 0
PROCESS_BOND = 1
PROCESS_COUPLED = 2

KERNEL_INDEPENDENT = 0
KERNEL_PAIR = 1

CH_SITE = 0
CH_BOND_LEFT = 1
CH_BOND_RIGHT = 2
CH_PRODUCT = 3


@njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always", cache=True)
def stream_key(seed, stream):
    k = mix64(np.uint64(seed) + GOLDEN)
    return mix64(k + (np.uint64(stream) + _ONE) * GOLDEN)


@njit(inline="always", cache=True)
def level_key(skey, n, channel):
    tag = np.uint64(n) * np.uint64(N_CHANNELS) + np.uint64(channel) + _ONE
    return mix64(skey ^ mix64(tag * GOLDEN))


@njit(inline="always", cache=True)
def site_bits(lkey, y):
    # 53-bit mantissa of the uniform at (y) under a level key
    return mix64(lkey + np.uint64(np.int64(y)) * GOLDEN) >> _S11


@njit(cache=True)
def uniform_scalar(seed, stream, y, n, channel):
    lk = level_key(stream_key(seed, stream), n, channel)
    return site_bits(lk, y) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def uniform_vector(seed, stream, ys, n, channel):
    lk = level_key(stream_key(seed, stream), n, channel)
    out = np.empty(ys.shape[0], np.float64)
    for i in range(ys.shape[0]):
        out[i] = site_bits(lk, ys[i]) * (1.0 / 9007199254740992.0)
    return out


@njit(inline="always", cache=True)
def _site_open(kcode, lkey, y, thr):
    if site_bits(lkey, y) >= thr:
        return False
    if kcode == KERNEL_PAIR:
        return site_bits(lkey, y + 2) < thr
    return True


@njit(inline="always", cache=True)
def _top_bit(w):
    b = 63
    while ((w >> np.uint64(b)) & _ONE) == _ZERO:
        b -= 1
    return b


@njit(inline="always", cache=True)
def _low_bit(w):
    b = 0
    while ((w >> np.uint64(b)) & _ONE) == _ZERO:
        b += 1
    return b


@njit(cache=True)
def _open_mask(x, out, lo_w, hi_w, y0, n, kcode, lkey, thr):
    """``out = x & open(level n)`` restricted to words ``lo_w..hi_w``."""
    par = n & 1
    for w in range(lo_w, hi_w + 1):
        xw = x[w]
        ow = _ZERO
        if xw != _ZERO:
            base = y0 + 128 * w + par
            for b in range(64):
                if (xw >> np.uint64(b)) & _ONE:
                    if _site_open(kcode, lkey, base + 2 * b, thr):
                        ow |= _ONE << np.uint64(b)
        out[w] = ow


@njit(cache=True)
def _bond_masks(x, r, l, lo_w, hi_w, y0, n, kright, kleft, thr):
    par = n & 1
    for w in range(lo_w, hi_w + 1):
        xw = x[w]
        rw = _ZERO
        lw = _ZERO
        if xw != _ZERO:
            base = y0 + 128 * w + par
            for b in range(64):
                if (xw >> np.uint64(b)) & _ONE:
                    y = base + 2 * b
                    bit = _ONE << np.uint64(b)
                    if site_bits(kright, y) < thr:
                        rw |= bit
                    if site_bits(kleft, y) < thr:
                        lw |= bit
        r[w] = rw
        l[w] = lw


@njit(cache=True)
def _spread(r, l, out, lo_w, hi_w, n, fault):
    """Advance one level; ``r``/``l`` are read only inside ``lo_w..hi_w``."""
    nw = out.shape[0]
    a = max(lo_w - 1, 0)
    z = min(hi_w + 1, nw - 1)
    even = (n & 1) == 0
    for w in range(a, z + 1):
        inside = w >= lo_w and w <= hi_w
        rw = r[w] if inside else _ZERO
        lw = l[w] if inside else _ZERO
        if even:
            # even -> odd: bit j <- R_j | L_{j+1}
            lw >>= _ONE
            if w + 1 >= lo_w and w + 1 <= hi_w:
                lw |= l[w + 1] << _TOP
        else:
            # odd -> even: bit j <- R_{j-1} | L_j
            rw <<= _ONE
            if w - 1 >= lo_w and w - 1 <= hi_w:
                rw |= r[w - 1] >> _TOP
        out[w] = (rw ^ lw) if fault else (rw | lw)


@njit(nogil=True, cache=True)
def simulate_chunk(init_words, y0, horizon, seed, streams, process,
                   kcode, site_thr, bond_thr, product_thr, use_product,
                   snap_slot, n_snaps, observe_open, fault):
    """Run one trajectory per entry of ``streams``.

    Returns per-level frame indices of the highest/lowest occupied bit
    (``-1`` when empty) and the bitmaps of the levels selected by
    ``snap_slot`` (``snap_slot[n] >= 0``).
    """
    nw = init_words.shape[0]
    count = streams.shape[0]
    top = np.full((count, horizon + 1), -1, np.int64)
    bot = np.full((count, horizon + 1), -1, np.int64)
    snaps = np.zeros((count, n_snaps, nw), np.uint64)
    x = np.empty(nw, np.uint64)
    r = np.zeros(nw, np.uint64)
    l = np.zeros(nw, np.uint64)
    nxt = np.zeros(nw, np.uint64)
    for t in range(count):
        skey = stream_key(seed, streams[t])
        for w in range(nw):
            x[w] = init_words[w]
        if use_product:
            pk = level_key(skey, 0, CH_PRODUCT)
            for w in range(nw):
                xw = x[w]
                if xw != _ZERO:
                    for b in range(64):
                        if (xw >> np.uint64(b)) & _ONE:
                            if site_bits(pk, y0 + 128 * w + 2 * b) >= product_thr:
                                xw &= ~(_ONE << np.uint64(b))
                    x[w] = xw
        lo_w = 0
        hi_w = nw - 1
        for n in range(horizon + 1):
            while lo_w <= hi_w and x[lo_w] == _ZERO:
                lo_w += 1
            while hi_w >= lo_w and x[hi_w] == _ZERO:
                hi_w -= 1
            if lo_w > hi_w:
                break
            # transmitting sets
            if process == PROCESS_SITE:
                if n == 0:
                    for w in range(lo_w, hi_w + 1):
                        r[w] = x[w]
                else:
                    _open_mask(x, r, lo_w, hi_w, y0, n, kcode,
                               level_key(skey, n, CH_SITE), site_thr)
                for w in range(lo_w, hi_w + 1):
                    l[w] = r[w]
            elif process == PROCESS_BOND:
                _bond_masks(x, r, l, lo_w, hi_w, y0, n,
                            level_key(skey, n, CH_BOND_RIGHT),
                            level_key(skey, n, CH_BOND_LEFT), bond_thr)
            else:
                for w in range(lo_w, hi_w + 1):
                    r[w] = x[w]
                    l[w] = x[w]
            obs = r if (observe_open and process == PROCESS_SITE and n > 0) else x
            o_lo = lo_w
            o_hi = hi_w
            while o_lo <= o_hi and obs[o_lo] == _ZERO:
                o_lo += 1
            while o_hi >= o_lo and obs[o_hi] == _ZERO:
                o_hi -= 1
            if o_lo <= o_hi:
                top[t, n] = 64 * o_hi + _top_bit(obs[o_hi])
                bot[t, n] = 64 * o_lo + _low_bit(obs[o_lo])
            s = snap_slot[n]
            if s >= 0:
                for w in range(lo_w, hi_w + 1):
                    snaps[t, s, w] = obs[w]
            if n == horizon:
                break
            _spread(r, l, nxt, lo_w, hi_w, n, fault)
            if process == PROCESS_COUPLED:
                a = max(lo_w - 1, 0)
                z = min(hi_w + 1, nw - 1)
                _open_mask(nxt, nxt, a, z, y0, n + 1, kcode,
                           level_key(skey, n + 1, CH_SITE), site_thr)
            a = max(lo_w - 1, 0)
            z = min(hi_w + 1, nw - 1)
            for w in range(lo_w, hi_w + 1):
                x[w] = _ZERO
            for w in range(a, z + 1):
                x[w] = nxt[w]
            lo_w = a
            hi_w = z
    return top, bot, snaps
