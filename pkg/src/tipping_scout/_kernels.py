"""Numba-compiled inner loops for the simulators and the reservoir.

Everything here is deterministic: no fastmath, no threading, so results are
bit-identical across runs and across process counts.
"""

import numba
import numpy as np

__all__ = [
    "ikeda_orbit",
    "ikeda_escape_batch",
    "food_chain_orbit",
    "food_chain_escape_batch",
    "escape_scan",
    "reservoir_drive",
    "reservoir_closed_loop",
]


@numba.njit(cache=True)
def ikeda_orbit(x0, y0, mu, gamma, kappa, eta, n):
    """Iterate the Ikeda map n times; returns (n+1, 2) array including x0."""
    out = np.empty((n + 1, 2))
    x, y = x0, y0
    out[0, 0] = x
    out[0, 1] = y
    for i in range(1, n + 1):
        phase = kappa - eta / (1.0 + x * x + y * y)
        c = np.cos(phase)
        s = np.sin(phase)
        x, y = mu + gamma * (x * c - y * s), gamma * (x * s + y * c)
        out[i, 0] = x
        out[i, 1] = y
    return out


@numba.njit(cache=True)
def ikeda_escape_batch(starts, mu, gamma, kappa, eta, lo, hi, grace, max_steps):
    """First sample index opening a `grace`-long out-of-box run, per start.

    Returns -1 for orbits that never open such a run within max_steps.
    """
    m = starts.shape[0]
    res = np.full(m, -1, dtype=np.int64)
    for k in range(m):
        x = starts[k, 0]
        y = starts[k, 1]
        run = 0
        start = -1
        for i in range(1, max_steps + 1):
            phase = kappa - eta / (1.0 + x * x + y * y)
            c = np.cos(phase)
            s = np.sin(phase)
            x, y = mu + gamma * (x * c - y * s), gamma * (x * s + y * c)
            if x < lo[0] or x > hi[0] or y < lo[1] or y > hi[1] or not (
                np.isfinite(x) and np.isfinite(y)
            ):
                if run == 0:
                    start = i
                run += 1
                if run >= grace:
                    res[k] = start
                    break
            else:
                run = 0
    return res


@numba.njit(cache=True, inline="always")
def _fc_rhs(R, C, P, K, xc, yc, xp, yp, R0, C0):
    dR = R * (1.0 - R / K) - xc * yc * C * R / (R + R0)
    dC = xc * C * (yc * R / (R + R0) - 1.0) - xp * yp * P * C / (C + C0)
    dP = xp * P * (yp * C / (C + C0) - 1.0)
    return dR, dC, dP


@numba.njit(cache=True, inline="always")
def _fc_rk4_sample(R, C, P, K, xc, yc, xp, yp, R0, C0, dt, substeps):
    for _ in range(substeps):
        a1, b1, c1 = _fc_rhs(R, C, P, K, xc, yc, xp, yp, R0, C0)
        a2, b2, c2 = _fc_rhs(
            R + 0.5 * dt * a1, C + 0.5 * dt * b1, P + 0.5 * dt * c1,
            K, xc, yc, xp, yp, R0, C0,
        )
        a3, b3, c3 = _fc_rhs(
            R + 0.5 * dt * a2, C + 0.5 * dt * b2, P + 0.5 * dt * c2,
            K, xc, yc, xp, yp, R0, C0,
        )
        a4, b4, c4 = _fc_rhs(
            R + dt * a3, C + dt * b3, P + dt * c3,
            K, xc, yc, xp, yp, R0, C0,
        )
        R = R + dt * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0
        C = C + dt * (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0
        P = P + dt * (c1 + 2.0 * c2 + 2.0 * c3 + c4) / 6.0
    return R, C, P


@numba.njit(cache=True)
def food_chain_orbit(x0, K, xc, yc, xp, yp, R0, C0, dt, n_samples, substeps):
    """RK4 food-chain trajectory sampled every `substeps` integrator steps.

    Returns (n_samples+1, 3) including x0; row i is the state at time
    i * substeps * dt.
    """
    out = np.empty((n_samples + 1, 3))
    R, C, P = x0[0], x0[1], x0[2]
    out[0, 0] = R
    out[0, 1] = C
    out[0, 2] = P
    for i in range(1, n_samples + 1):
        R, C, P = _fc_rk4_sample(R, C, P, K, xc, yc, xp, yp, R0, C0, dt, substeps)
        out[i, 0] = R
        out[i, 1] = C
        out[i, 2] = P
    return out


@numba.njit(cache=True)
def food_chain_escape_batch(
    starts, K, xc, yc, xp, yp, R0, C0, dt, substeps,
    lo, hi, floor_coord, floor_val, grace, max_samples,
):
    """Escape sample index per initial condition, -1 if none within horizon.

    A sample is out of the operating region if it leaves the box or, when
    floor_coord >= 0, that coordinate drops below floor_val (extinction).
    """
    m = starts.shape[0]
    res = np.full(m, -1, dtype=np.int64)
    for k in range(m):
        R, C, P = starts[k, 0], starts[k, 1], starts[k, 2]
        run = 0
        start = -1
        for i in range(1, max_samples + 1):
            R, C, P = _fc_rk4_sample(R, C, P, K, xc, yc, xp, yp, R0, C0, dt, substeps)
            out = (
                R < lo[0] or R > hi[0]
                or C < lo[1] or C > hi[1]
                or P < lo[2] or P > hi[2]
                or not (np.isfinite(R) and np.isfinite(C) and np.isfinite(P))
            )
            if not out and floor_coord >= 0:
                v = R
                if floor_coord == 1:
                    v = C
                elif floor_coord == 2:
                    v = P
                out = v < floor_val
            if out:
                if run == 0:
                    start = i
                run += 1
                if run >= grace:
                    res[k] = start
                    break
            else:
                run = 0
    return res


@numba.njit(cache=True)
def escape_scan(states, lo, hi, floor_coord, floor_val, grace):
    """First index opening `grace` consecutive out-of-region samples, or -1.

    Non-finite samples count as out of the region. A trailing out-of-region
    run shorter than grace does not qualify.
    """
    T, D = states.shape
    run = 0
    start = -1
    for i in range(T):
        out = False
        for d in range(D):
            v = states[i, d]
            if v < lo[d] or v > hi[d] or not np.isfinite(v):
                out = True
                break
        if not out and floor_coord >= 0:
            out = states[i, floor_coord] < floor_val
        if out:
            if run == 0:
                start = i
            run += 1
            if run >= grace:
                return start
        else:
            run = 0
    return -1


@numba.njit(cache=True)
def reservoir_drive(data, indices, indptr, w_in, bias, r, inputs, alpha):
    """Teacher-forced reservoir update over `inputs`; r is advanced in place.

    Returns the (T, n) matrix of post-update states. `bias` is the
    precomputed parameter-channel vector k_b * W_b * (b + b0).
    """
    T, D = inputs.shape
    n = r.shape[0]
    states = np.empty((T, n))
    pre = np.empty(n)
    for t in range(T):
        for i in range(n):
            acc = bias[i]
            for jj in range(indptr[i], indptr[i + 1]):
                acc += data[jj] * r[indices[jj]]
            for d in range(D):
                acc += w_in[i, d] * inputs[t, d]
            pre[i] = acc
        for i in range(n):
            r[i] = (1.0 - alpha) * r[i] + alpha * np.tanh(pre[i])
            states[t, i] = r[i]
    return states


@numba.njit(cache=True)
def reservoir_closed_loop(
    data, indices, indptr, w_in, bias, w_out, r, alpha, steps,
    mean, scale, lo, hi, floor_coord, floor_val, grace, monitor,
):
    """Autonomous prediction: output fed back as the next input.

    Emits raw-unit samples (scale/mean applied on the way out). When
    `monitor` is true the loop stops once `grace` consecutive samples fall
    outside [lo, hi] (raw units, extinction floor included), returning just
    enough of the trajectory to locate the escape. Always stops at the first
    non-finite output.

    Returns (outputs, n_valid, diverged).
    """
    n = r.shape[0]
    D = w_out.shape[0]
    out = np.empty((steps, D))
    u = np.empty(D)
    raw = np.empty(D)
    pre = np.empty(n)
    run = 0
    for t in range(steps):
        ok = True
        for d in range(D):
            acc = 0.0
            for i in range(n):
                acc += w_out[d, i] * r[i]
            u[d] = acc
            raw[d] = acc * scale[d] + mean[d]
            out[t, d] = raw[d]
            if not np.isfinite(acc):
                ok = False
        if not ok:
            return out[:t], t, True
        if monitor:
            outside = False
            for d in range(D):
                if raw[d] < lo[d] or raw[d] > hi[d]:
                    outside = True
                    break
            if not outside and floor_coord >= 0:
                outside = raw[floor_coord] < floor_val
            if outside:
                run += 1
                if run >= grace:
                    return out[: t + 1], t + 1, False
            else:
                run = 0
        for i in range(n):
            acc = bias[i]
            for jj in range(indptr[i], indptr[i + 1]):
                acc += data[jj] * r[indices[jj]]
            for d in range(D):
                acc += w_in[i, d] * u[d]
            pre[i] = acc
        for i in range(n):
            r[i] = (1.0 - alpha) * r[i] + alpha * np.tanh(pre[i])
    return out, steps, False
