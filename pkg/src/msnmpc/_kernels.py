"""Compiled inner loops shared by the prediction model, the OCP and the plant.

Parameter vectors are packed as ``prm = [g, Ax, Ay, Az, tau_phi, tau_theta,
k_phi, k_theta]`` and obstacles as rows ``[x, y, radius, height]``.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def wrap_angle(a):
    if a > math.pi or a < -math.pi:
        a = (a + math.pi) % TWO_PI - math.pi
    return a


@njit(cache=True)
def deriv(x, u, prm, out):
    g = prm[0]
    phi = x[6]
    theta = x[7]
    thrust = u[0]
    sphi = math.sin(phi)
    cphi = math.cos(phi)
    sth = math.sin(theta)
    cth = math.cos(theta)
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = thrust * sth - prm[1] * x[3]
    out[4] = -thrust * sphi * cth - prm[2] * x[4]
    out[5] = thrust * cphi * cth - g - prm[3] * x[5]
    out[6] = (prm[6] * u[1] - phi) / prm[4]
    out[7] = (prm[7] * u[2] - theta) / prm[5]


@njit(cache=True)
def euler(x, u, ts, prm, out):
    # written out to keep the hot loop allocation-free; must mirror deriv()
    phi = x[6]
    theta = x[7]
    thrust = u[0]
    sphi = math.sin(phi)
    cphi = math.cos(phi)
    sth = math.sin(theta)
    cth = math.cos(theta)
    vx = x[3]
    vy = x[4]
    vz = x[5]
    out[0] = x[0] + ts * vx
    out[1] = x[1] + ts * vy
    out[2] = x[2] + ts * vz
    out[3] = vx + ts * (thrust * sth - prm[1] * vx)
    out[4] = vy + ts * (-thrust * sphi * cth - prm[2] * vy)
    out[5] = vz + ts * (thrust * cphi * cth - prm[0] - prm[3] * vz)
    out[6] = wrap_angle(phi + ts * ((prm[6] * u[1] - phi) / prm[4]))
    out[7] = wrap_angle(theta + ts * ((prm[7] * u[2] - theta) / prm[5]))


@njit(cache=True)
def rollout(x0, us, ts, prm):
    n = us.shape[0]
    traj = np.empty((n + 1, 8))
    traj[0] = x0
    for j in range(n):
        euler(traj[j], us[j], ts, prm, traj[j + 1])
    return traj


@njit(cache=True)
def integrate_held(x0, u, dt, n_full, tail, prm):
    """Integrate with a held input: ``n_full`` steps of ``dt`` then one of ``tail``.

    Returns every intermediate state (row 0 is the first step's end point).
    """
    n = n_full + (1 if tail > 0.0 else 0)
    out = np.empty((n, 8))
    x = x0.copy()
    for j in range(n):
        h = dt if j < n_full else tail
        euler(x, u, h, prm, out[j])
        x = out[j]
    return out


@njit(cache=True)
def point_violation(p0, p1, p2, obs):
    total = 0.0
    for k in range(obs.shape[0]):
        dx = p0 - obs[k, 0]
        dy = p1 - obs[k, 1]
        hc = obs[k, 2] * obs[k, 2] - dx * dx - dy * dy
        hz = obs[k, 3] - p2
        if hc > 0.0 and hz > 0.0:
            total += hc * hz
    return total


@njit(cache=True)
def point_penalty(p0, p1, p2, obs, power):
    """Sum over obstacles of ``violation**power`` (power 1 or 2)."""
    total = 0.0
    for k in range(obs.shape[0]):
        dx = p0 - obs[k, 0]
        dy = p1 - obs[k, 1]
        hc = obs[k, 2] * obs[k, 2] - dx * dx - dy * dy
        hz = obs[k, 3] - p2
        if hc > 0.0 and hz > 0.0:
            v = hc * hz
            total += v if power == 1 else v * v
    return total


@njit(cache=True)
def _penalty_grad(p0, p1, p2, obs, power, gout):
    gout[0] = 0.0
    gout[1] = 0.0
    gout[2] = 0.0
    for k in range(obs.shape[0]):
        dx = p0 - obs[k, 0]
        dy = p1 - obs[k, 1]
        hc = obs[k, 2] * obs[k, 2] - dx * dx - dy * dy
        hz = obs[k, 3] - p2
        if hc > 0.0 and hz > 0.0:
            scale = 1.0 if power == 1 else 2.0 * hc * hz
            gout[0] += -2.0 * dx * hz * scale
            gout[1] += -2.0 * dy * hz * scale
            gout[2] += -hc * scale


@njit(cache=True)
def scenario_state_cost(x0, us, ts, prm, xref, qx, obs, mu, power, want_grad):
    """State-dependent part of one branch cost and its gradient w.r.t. ``us``.

    Covers the tracking term over x_1..x_N and the obstacle penalty
    ``mu * sum violation**power`` over x_0..x_N. Returns ``(cost, grad, ok)``; ``ok`` is False on a non-finite
    rollout.
    """
    n = us.shape[0]
    traj = np.empty((n + 1, 8))
    trig = np.empty((n, 4))
    traj[0] = x0
    grad = np.zeros((n, 3))
    cost = mu * point_penalty(x0[0], x0[1], x0[2], obs, power)
    for j in range(n):
        x = traj[j]
        out = traj[j + 1]
        u = us[j]
        phi = x[6]
        theta = x[7]
        thrust = u[0]
        sphi = math.sin(phi)
        cphi = math.cos(phi)
        sth = math.sin(theta)
        cth = math.cos(theta)
        trig[j, 0] = sphi
        trig[j, 1] = cphi
        trig[j, 2] = sth
        trig[j, 3] = cth
        vx = x[3]
        vy = x[4]
        vz = x[5]
        out[0] = x[0] + ts * vx
        out[1] = x[1] + ts * vy
        out[2] = x[2] + ts * vz
        out[3] = vx + ts * (thrust * sth - prm[1] * vx)
        out[4] = vy + ts * (-thrust * sphi * cth - prm[2] * vy)
        out[5] = vz + ts * (thrust * cphi * cth - prm[0] - prm[3] * vz)
        out[6] = wrap_angle(phi + ts * ((prm[6] * u[1] - phi) / prm[4]))
        out[7] = wrap_angle(theta + ts * ((prm[7] * u[2] - theta) / prm[5]))
        for i in range(8):
            e = out[i] - xref[i]
            cost += qx[i] * e * e
        cost += mu * point_penalty(out[0], out[1], out[2], obs, power)
    if not math.isfinite(cost):
        return cost, grad, False
    if not want_grad:
        return cost, grad, True

    lam = np.empty(8)
    gv = np.empty(3)
    # terminal adjoint
    for i in range(8):
        lam[i] = 2.0 * qx[i] * (traj[n, i] - xref[i])
    _penalty_grad(traj[n, 0], traj[n, 1], traj[n, 2], obs, power, gv)
    lam[0] += mu * gv[0]
    lam[1] += mu * gv[1]
    lam[2] += mu * gv[2]
    new = np.empty(8)
    for j in range(n - 1, -1, -1):
        x = traj[j]
        thrust = us[j, 0]
        sphi = trig[j, 0]
        cphi = trig[j, 1]
        sth = trig[j, 2]
        cth = trig[j, 3]
        # dJ/du_j = ts * (df/du)^T lam_{j+1}
        grad[j, 0] = ts * (lam[3] * sth - lam[4] * sphi * cth + lam[5] * cphi * cth)
        grad[j, 1] = ts * lam[6] * prm[6] / prm[4]
        grad[j, 2] = ts * lam[7] * prm[7] / prm[5]
        # lam_j = dL/dx_j + (I + ts df/dx)^T lam_{j+1}
        new[0] = lam[0]
        new[1] = lam[1]
        new[2] = lam[2]
        new[3] = lam[3] + ts * (lam[0] - prm[1] * lam[3])
        new[4] = lam[4] + ts * (lam[1] - prm[2] * lam[4])
        new[5] = lam[5] + ts * (lam[2] - prm[3] * lam[5])
        new[6] = lam[6] + ts * (
            thrust * (-lam[4] * cphi * cth - lam[5] * sphi * cth) - lam[6] / prm[4]
        )
        new[7] = lam[7] + ts * (
            thrust * (lam[3] * cth + lam[4] * sphi * sth - lam[5] * cphi * sth)
            - lam[7] / prm[5]
        )
        if j > 0:
            for i in range(8):
                new[i] += 2.0 * qx[i] * (x[i] - xref[i])
            _penalty_grad(x[0], x[1], x[2], obs, power, gv)
            new[0] += mu * gv[0]
            new[1] += mu * gv[1]
            new[2] += mu * gv[2]
        for i in range(8):
            lam[i] = new[i]
    for j in range(n):
        for c in range(3):
            if not math.isfinite(grad[j, c]):
                return cost, grad, False
    return cost, grad, True


@njit(cache=True)
def multi_stage_cost(x0, us, times, weights, prm, xref, qx, obs, mu, power,
                     uref, uprev, qu, qdu, want_grad):
    """Weighted branch costs plus the shared input terms.

    Returns ``(cost, grad, bad)`` where ``bad`` is the index of the first
    branch with a non-finite rollout, or -1.
    """
    n = us.shape[0]
    grad = np.zeros((n, 3))
    total = 0.0
    for i in range(times.shape[0]):
        w = weights[i]
        if w == 0.0:
            continue
        c, g, ok = scenario_state_cost(x0, us, times[i], prm, xref, qx, obs, mu, power, want_grad)
        if not ok:
            return math.inf, grad, i
        total += w * c
        if want_grad:
            for j in range(n):
                for k in range(3):
                    grad[j, k] += w * g[j, k]
    for j in range(n):
        for k in range(3):
            e = us[j, k] - uref[k]
            prev = uprev[k] if j == 0 else us[j - 1, k]
            du = us[j, k] - prev
            total += qu[k] * e * e + qdu[k] * du * du
            if want_grad:
                grad[j, k] += 2.0 * qu[k] * e + 2.0 * qdu[k] * du
                if j > 0:
                    grad[j - 1, k] -= 2.0 * qdu[k] * du
    return total, grad, -1


@njit(cache=True)
def gauss_newton_diagonal(x0, us, times, weights, prm, qx, qu, qdu):
    """Diagonal of the Gauss-Newton Hessian of the tracking and input terms.

    Forward sensitivities of every input are propagated through each
    branch's linearized Euler map; obstacle terms are left out.
    """
    n = us.shape[0]
    diag = np.zeros((n, 3))
    s = np.empty(8)
    sn = np.empty(8)
    for b in range(times.shape[0]):
        w = weights[b]
        if w == 0.0:
            continue
        ts = times[b]
        traj = rollout(x0, us, ts, prm)
        trig = np.empty((n, 4))
        for j in range(n):
            trig[j, 0] = math.sin(traj[j, 6])
            trig[j, 1] = math.cos(traj[j, 6])
            trig[j, 2] = math.sin(traj[j, 7])
            trig[j, 3] = math.cos(traj[j, 7])
        for m in range(n):
            for c in range(3):
                # ds/du for x_{m+1}: ts * df/du column c at (x_m, u_m)
                for i in range(8):
                    s[i] = 0.0
                if c == 0:
                    s[3] = ts * trig[m, 2]
                    s[4] = -ts * trig[m, 0] * trig[m, 3]
                    s[5] = ts * trig[m, 1] * trig[m, 3]
                elif c == 1:
                    s[6] = ts * prm[6] / prm[4]
                else:
                    s[7] = ts * prm[7] / prm[5]
                acc = 0.0
                for i in range(8):
                    acc += qx[i] * s[i] * s[i]
                for j in range(m + 1, n):
                    th = us[j, 0]
                    sphi = trig[j, 0]
                    cphi = trig[j, 1]
                    sth = trig[j, 2]
                    cth = trig[j, 3]
                    sn[0] = s[0] + ts * s[3]
                    sn[1] = s[1] + ts * s[4]
                    sn[2] = s[2] + ts * s[5]
                    sn[3] = s[3] + ts * (th * cth * s[7] - prm[1] * s[3])
                    sn[4] = s[4] + ts * (-th * cphi * cth * s[6] + th * sphi * sth * s[7] - prm[2] * s[4])
                    sn[5] = s[5] + ts * (-th * sphi * cth * s[6] - th * cphi * sth * s[7] - prm[3] * s[5])
                    sn[6] = s[6] - ts * s[6] / prm[4]
                    sn[7] = s[7] - ts * s[7] / prm[5]
                    for i in range(8):
                        s[i] = sn[i]
                        acc += qx[i] * s[i] * s[i]
                diag[m, c] += 2.0 * w * acc
    for m in range(n):
        for c in range(3):
            diag[m, c] += 2.0 * qu[c] + 2.0 * qdu[c] * (2.0 if m < n - 1 else 1.0)
    return diag


@njit(cache=True)
def _project(u, lo, hi, out):
    for i in range(u.shape[0]):
        v = u[i]
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        out[i] = v


@njit(cache=True)
def projected_residual(u, g, lo, hi):
    r = 0.0
    for i in range(u.shape[0]):
        v = u[i] - g[i]
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        d = abs(u[i] - v)
        if d > r:
            r = d
    return r


@njit(cache=True)
def projected_lbfgs(u, g, f, lo, hi, scale, S, Y, rho, mem_state, max_iter, tol, max_bt,
                    x0, times, weights, prm, xref, qx, obs, mu, power, uref, uprev, qu, qdu):
    """Run up to ``max_iter`` projected L-BFGS iterations in scaled variables.

    ``u``, ``g``, the pair buffers ``S``/``Y``/``rho`` and ``mem_state =
    [count, head]`` are updated in place so the loop can be resumed.
    Returns ``(f, iterations, code, residual)`` with code 0 = budget used,
    1 = converged, 2 = line search stalled, 3 = non-finite rollout.
    """
    n = u.shape[0]
    horizon = n // 3
    mem = S.shape[0]
    c1 = 1e-4
    free = np.empty(n)
    gz = np.empty(n)
    q = np.empty(n)
    d = np.empty(n)
    u_new = np.empty(n)
    alpha = np.empty(max(mem, 1))
    res = projected_residual(u, g, lo, hi)
    it = 0
    while it < max_iter:
        if res <= tol:
            return f, it, 1, res
        for i in range(n):
            at_lo = u[i] <= lo[i] and g[i] > 0.0
            at_hi = u[i] >= hi[i] and g[i] < 0.0
            free[i] = 0.0 if (at_lo or at_hi) else 1.0
            gz[i] = g[i] * scale[i]
        accepted = False
        f_new = f
        for attempt in range(2):
            count = mem_state[0]
            head = mem_state[1]
            if attempt == 0 and count > 0:
                for i in range(n):
                    q[i] = gz[i] * free[i]
                for k in range(count):
                    idx = (head - 1 - k) % mem
                    a = 0.0
                    for i in range(n):
                        a += S[idx, i] * free[i] * q[i]
                    a *= rho[idx]
                    alpha[k] = a
                    for i in range(n):
                        q[i] -= a * Y[idx, i] * free[i]
                last = (head - 1) % mem
                sy = 0.0
                yy = 0.0
                for i in range(n):
                    yf = Y[last, i] * free[i]
                    sy += S[last, i] * free[i] * yf
                    yy += yf * yf
                gamma = sy / yy if (yy > 0.0 and sy > 0.0) else 1.0
                for i in range(n):
                    q[i] *= gamma
                for k in range(count - 1, -1, -1):
                    idx = (head - 1 - k) % mem
                    b = 0.0
                    for i in range(n):
                        b += Y[idx, i] * free[i] * q[i]
                    b *= rho[idx]
                    for i in range(n):
                        q[i] += (alpha[k] - b) * S[idx, i] * free[i]
                for i in range(n):
                    d[i] = -q[i] * free[i] * scale[i]
                t = 1.0
            elif attempt == 0:
                continue
            else:
                dmax = 0.0
                for i in range(n):
                    d[i] = -gz[i] * free[i] * scale[i]
                    if abs(gz[i] * free[i]) > dmax:
                        dmax = abs(gz[i] * free[i])
                t = 1.0 / dmax if dmax > 1.0 else 1.0
            slope = 0.0
            for i in range(n):
                slope += g[i] * d[i]
            if not slope < 0.0:
                mem_state[0] = 0
                continue
            for _ in range(max_bt):
                for i in range(n):
                    u_new[i] = u[i] + t * d[i]
                _project(u_new, lo, hi, u_new)
                pred = 0.0
                for i in range(n):
                    pred += g[i] * (u_new[i] - u[i])
                f_new, _, bad = multi_stage_cost(
                    x0, u_new.reshape((horizon, 3)), times, weights, prm, xref, qx, obs,
                    mu, power, uref, uprev, qu, qdu, False)
                if bad < 0 and f_new <= f + c1 * pred:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            mem_state[0] = 0
        it += 1
        if not accepted:
            return f, it, 2, res
        f_new, g_new2, bad = multi_stage_cost(
            x0, u_new.reshape((horizon, 3)), times, weights, prm, xref, qx, obs,
            mu, power, uref, uprev, qu, qdu, True)
        if bad >= 0:
            return f, it, 3, res
        g_new = g_new2.reshape(n)
        head = mem_state[1]
        sy = 0.0
        yy = 0.0
        for i in range(n):
            sz = (u_new[i] - u[i]) / scale[i]
            yz = (g_new[i] - g[i]) * scale[i]
            sy += sz * yz
            yy += yz * yz
        if mem > 0 and sy > 1e-12 * yy:
            for i in range(n):
                S[head, i] = (u_new[i] - u[i]) / scale[i]
                Y[head, i] = (g_new[i] - g[i]) * scale[i]
            rho[head] = 1.0 / sy
            mem_state[1] = (head + 1) % mem
            if mem_state[0] < mem:
                mem_state[0] += 1
        for i in range(n):
            u[i] = u_new[i]
            g[i] = g_new[i]
        f = f_new
        res = projected_residual(u, g, lo, hi)
    if res <= tol:
        return f, it, 1, res
    return f, it, 0, res
