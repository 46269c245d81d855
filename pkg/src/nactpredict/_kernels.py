"""Per-voxel sampling kernels used by registration.

Positions are ``index + displacement`` and are clamped to ``[0, n - 1]`` per
axis. Spatial derivatives are the exact derivatives of the trilinear
interpolant; along an axis where the position was clamped the derivative is 0.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _axis(c, n):
    clamped = False
    if c < 0.0:
        c = 0.0
        clamped = True
    elif c > n - 1:
        c = float(n - 1)
        clamped = True
    if n == 1:
        return 0, 0, 0.0, True
    i0 = int(np.floor(c))
    if i0 > n - 2:
        i0 = n - 2
    return i0, i0 + 1, c - i0, clamped


@njit(cache=True)
def trilinear_sample(src, u, want_grad):
    nx, ny, nz = src.shape
    out = np.empty((nx, ny, nz))
    grad = np.zeros((3, nx, ny, nz)) if want_grad else np.zeros((3, 1, 1, 1))
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                x0, x1, fx, cx = _axis(x + u[0, x, y, z], nx)
                y0, y1, fy, cy = _axis(y + u[1, x, y, z], ny)
                z0, z1, fz, cz = _axis(z + u[2, x, y, z], nz)
                c000 = src[x0, y0, z0]
                c100 = src[x1, y0, z0]
                c010 = src[x0, y1, z0]
                c110 = src[x1, y1, z0]
                c001 = src[x0, y0, z1]
                c101 = src[x1, y0, z1]
                c011 = src[x0, y1, z1]
                c111 = src[x1, y1, z1]
                gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
                c00 = c000 * gx + c100 * fx
                c10 = c010 * gx + c110 * fx
                c01 = c001 * gx + c101 * fx
                c11 = c011 * gx + c111 * fx
                c0 = c00 * gy + c10 * fy
                c1 = c01 * gy + c11 * fy
                out[x, y, z] = c0 * gz + c1 * fz
                if want_grad:
                    if not cx:
                        d00 = c100 - c000
                        d10 = c110 - c010
                        d01 = c101 - c001
                        d11 = c111 - c011
                        grad[0, x, y, z] = (d00 * gy + d10 * fy) * gz + (d01 * gy + d11 * fy) * fz
                    if not cy:
                        grad[1, x, y, z] = (c10 - c00) * gz + (c11 - c01) * fz
                    if not cz:
                        grad[2, x, y, z] = c1 - c0
    return out, grad


@njit(cache=True)
def nearest_sample(src, u):
    nx, ny, nz = src.shape
    out = np.empty((nx, ny, nz), dtype=src.dtype)
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                i = int(np.floor(x + u[0, x, y, z] + 0.5))
                j = int(np.floor(y + u[1, x, y, z] + 0.5))
                k = int(np.floor(z + u[2, x, y, z] + 0.5))
                i = min(max(i, 0), nx - 1)
                j = min(max(j, 0), ny - 1)
                k = min(max(k, 0), nz - 1)
                out[x, y, z] = src[i, j, k]
    return out
