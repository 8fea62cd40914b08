"""Numba-compiled scans for the pooling primitives.

Argmax positions are flat offsets into one channel's H*W plane. Ties keep the
first position met in row-major order (strict `>` while scanning).
"""
import numba
import numpy as np

cache = True


@numba.njit(cache=cache)
def maxpool2_scan(x):
    C, H, W = x.shape
    Ho, Wo = H // 2, W // 2
    out = np.empty((C, Ho, Wo))
    arg = np.empty((C, Ho, Wo), dtype=np.int64)
    for c in range(C):
        for oy in range(Ho):
            for ox in range(Wo):
                y0 = 2 * oy
                x0 = 2 * ox
                best = x[c, y0, x0]
                best_at = y0 * W + x0
                for dy in range(2):
                    for dx in range(2):
                        v = x[c, y0 + dy, x0 + dx]
                        if v > best:
                            best = v
                            best_at = (y0 + dy) * W + (x0 + dx)
                out[c, oy, ox] = best
                arg[c, oy, ox] = best_at
    return out, arg


@numba.njit(cache=cache)
def quadrant_scan(x):
    C, H, W = x.shape
    my = H // 2
    mx = W // 2
    out = np.empty((C, 2, 2))
    arg = np.empty((C, 2, 2), dtype=np.int64)
    for c in range(C):
        for qy in range(2):
            ylo = 0 if qy == 0 else my
            yhi = my if qy == 0 else H
            for qx in range(2):
                xlo = 0 if qx == 0 else mx
                xhi = mx if qx == 0 else W
                best = x[c, ylo, xlo]
                best_at = ylo * W + xlo
                for y in range(ylo, yhi):
                    for xx in range(xlo, xhi):
                        v = x[c, y, xx]
                        if v > best:
                            best = v
                            best_at = y * W + xx
                out[c, qy, qx] = best
                arg[c, qy, qx] = best_at
    return out, arg


@numba.njit(cache=cache)
def route_to_argmax(grad_out, arg, H, W):
    """Send each upstream value to its recorded argmax; disjoint regions never collide."""
    C, Ho, Wo = grad_out.shape
    grad_in = np.zeros((C, H * W))
    for c in range(C):
        for oy in range(Ho):
            for ox in range(Wo):
                grad_in[c, arg[c, oy, ox]] += grad_out[c, oy, ox]
    return grad_in.reshape((C, H, W))
