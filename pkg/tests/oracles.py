"""Independent oracle implementations used only by the tests.

Everything here is deliberately written from first principles (plain loops,
direct formulas) so the tests never validate the package against itself.
"""

import numpy as np


def central_diff(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def qs_weight_direct(x):
    """Quadratic spectral kernel, retyped from the textbook formula."""
    if x == 0.0:
        return 1.0
    z = 6.0 * np.pi * x / 5.0
    return 25.0 / (12.0 * np.pi**2 * x**2) * (np.sin(z) / z - np.cos(z))


def bartlett_weight_direct(x):
    return max(0.0, 1.0 - abs(x))


def longrun_var_direct(series, bandwidth, kernel="qs"):
    """Scalar long-run variance: plain loop over lags, no shared code.

    Matches the estimator's published settings (kernel, bandwidth, and the
    lag cutoff of 150 bandwidths for the quadratic spectral kernel) while
    computing everything from scratch.
    """
    u = np.asarray(series, dtype=float).ravel()
    T = u.size
    gamma0 = float(u @ u) / T
    total = gamma0
    if bandwidth <= 0:
        return total
    weight = qs_weight_direct if kernel == "qs" else bartlett_weight_direct
    if kernel == "qs":
        max_lag = min(T - 1, int(np.ceil(150.0 * bandwidth)))
    else:
        max_lag = min(T - 1, int(np.ceil(bandwidth)))
    for lag in range(1, max_lag + 1):
        w = weight(lag / bandwidth)
        if w == 0.0:
            continue
        gamma = float(u[lag:] @ u[:-lag]) / T
        total += 2.0 * w * gamma
    return total


def dm_statistic_direct(d, bandwidth, kernel="qs"):
    """Classical test statistic of equal average scores from the loss differentials."""
    d = np.asarray(d, dtype=float).ravel()
    dc = d - d.mean()
    lrv = longrun_var_direct(dc, bandwidth, kernel)
    return np.sqrt(d.size) * d.mean() / np.sqrt(lrv)


def check_objective(level, a, b, x, y):
    u = y - a - b * x
    return float(np.mean(u * (level - (u < 0))))


def exact_check_lattice_min(level, x, y, lo=-5.0, hi=5.0, step=1e-3):
    """Exact minimizer of the mean check loss over the product lattice.

    For a fixed intercept the objective is convex piecewise linear in the
    slope with breakpoints (y - a) / x, so its continuous argmin is a
    breakpoint and the lattice argmin in the slope is one of the two lattice
    neighbours of that point.  This reduces the full two-dimensional lattice
    sweep to an exact computation.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    a_grid = np.arange(lo, hi + step / 2, step)
    best_val = np.inf
    best = None
    per_a = np.empty(a_grid.size)
    chunk = 512
    for s in range(0, a_grid.size, chunk):
        A = a_grid[s : s + chunk]
        R = (y[None, :] - A[:, None]) / x[None, :]
        U = y[None, None, :] - A[:, None, None] - R[:, :, None] * x[None, None, :]
        F = np.mean(U * (level - (U < 0)), axis=2)
        j = np.argmin(F, axis=1)
        bstar = R[np.arange(A.size), j]
        blo = np.clip(np.floor((bstar - lo) / step) * step + lo, lo, hi)
        bhi = np.clip(blo + step, lo, hi)
        vals = np.full(A.size, np.inf)
        args = np.zeros(A.size)
        for B in (blo, bhi):
            U2 = y[None, :] - A[:, None] - B[:, None] * x[None, :]
            F2 = np.mean(U2 * (level - (U2 < 0)), axis=1)
            better = F2 < vals
            vals[better] = F2[better]
            args[better] = B[better]
        per_a[s : s + A.size] = vals
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best = np.array([A[i], args[i]])
    return best, best_val, a_grid, per_a


def _profile_spread(grid, values, span=2):
    """Largest distance from the grid argmin to its near-optimal sublevel set.

    The sublevel threshold is the local increment within ``span`` lattice
    steps of the minimum, so locally flat wiggles do not hide a wide valley.
    Any point of the set could be the argmin under resolution noise; the
    spread bounds how far the reported argmin can wander.
    """
    i = int(np.argmin(values))
    vmin = values[i]
    lo = max(0, i - span)
    hi = min(values.size, i + span + 1)
    inc = float(values[lo:hi].max() - vmin)
    near = grid[values <= vmin + inc]
    if near.size == 0:
        return 0.0
    return float(np.max(np.abs(near - grid[i])))


def lattice_identifiable(level, x, y, best, best_val, a_grid, per_a, step=1e-3, radius=2e-3):
    """Whether the lattice resolves its own argmin within ``radius`` per coordinate.

    Both coordinates are screened through their profile objective (the other
    coordinate minimized out), so near-flat diagonal ridges are caught too.
    The profile over the slope uses the closed-form optimal intercept: the
    lower sample quantile of y - b*x.
    """
    limit = radius + step
    if _profile_width(a_grid, per_a) > limit:
        return False
    b_grid = np.arange(-5.0, 5.0 + step / 2, step)
    resid = y[None, :] - b_grid[:, None] * x[None, :]
    a_star = np.quantile(resid, level, axis=1, method="inverted_cdf")
    a_snap_lo = np.clip(np.floor((a_star + 5.0) / step) * step - 5.0, -5.0, 5.0)
    per_b = np.full(b_grid.size, np.inf)
    for a_cand in (a_snap_lo, np.clip(a_snap_lo + step, -5.0, 5.0)):
        U = resid - a_cand[:, None]
        F = np.mean(U * (level - (U < 0)), axis=1)
        per_b = np.minimum(per_b, F)
    if _profile_width(b_grid, per_b) > limit:
        return False
    return True


def vertex_enumeration_min(level, x, y):
    """Exact check-loss minimizer by enumerating all two-point interpolations.

    The optimum of the piecewise-linear program interpolates two data points
    for data in general position; sweeping every pair is an exact oracle for
    small samples.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    best = None
    best_val = np.inf
    T = x.size
    for i in range(T):
        for j in range(i + 1, T):
            if abs(x[i] - x[j]) < 1e-12:
                continue
            b = (y[i] - y[j]) / (x[i] - x[j])
            a = y[i] - b * x[i]
            val = check_objective(level, a, b, x, y)
            if val < best_val:
                best_val = val
                best = np.array([a, b])
    return best, best_val


def ar1_paths_direct(beta, T, rng):
    """AR(1) with stationary start, written as an explicit loop."""
    out = np.empty(T)
    state = rng.standard_normal() / np.sqrt(1.0 - beta**2)
    for t in range(T):
        state = beta * state + rng.standard_normal()
        out[t] = state
    return out
