"""Compiled fixed-step integrators for batches of trajectories.

State arrays are real, shaped ``(components, N, B)`` with the batch axis last
so the inner loops vectorise across independent trajectories. Lanes never
interact, which keeps each trajectory's bits independent of its batch.

Signal components are ``(Re a, Im a, Re b, Im b)``; the full model appends
``(Re a_p, Im a_p, Re b_p, Im b_p)``.

Gaussian noise is generated in place from a Philox4x32-10 counter keyed by
the master seed, with counter words ``(pair, step, traj_lo, traj_hi)``. Each
Philox block yields two normals by Box-Muller from two 52-bit uniforms.
``log``, ``sin`` and ``cos`` are evaluated by polynomials so the noise loop
vectorises too.
"""

import math

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.extending import intrinsic

# |amplitude|**2 beyond which a lane is declared diverged
DIVERGENCE_LIMIT2 = 1e200
# RK4 substeps keep stiffness * h at or below this; more than MAX_SUBSTEPS in one step counts as divergence
SUBSTEP_LIMIT = 0.5
MAX_SUBSTEPS = 1 << 16

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO32 = np.uint64(0xFFFFFFFF)
_U32 = np.uint64(32)
_U20 = np.uint64(20)
_U12 = np.uint64(12)
_U52 = np.uint64(52)
_U50 = np.uint64(50)
_U2 = np.uint64(2)
_MANT = np.uint64(0x000FFFFFFFFFFFFF)
_EXP_ONE = np.uint64(0x3FF0000000000000)  # bits of 1.0
_EXP_MAGIC = np.uint64(0x4330000000000000)  # bits of 2**52
_MAGIC_BIAS = 4503599627370496.0 + 1023.0
_LOW50 = np.uint64((1 << 50) - 1)

_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_SQRT2 = 1.4142135623730951
_INV_SQRT2 = 0.7071067811865476
_HALF_PI = 1.5707963267948966


@intrinsic
def _as_bits(typingctx, x):
    if not (isinstance(x, types.Float) and x.bitwidth == 64):
        return None

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.IntType(64))

    return types.uint64(x), codegen


@intrinsic
def _from_bits(typingctx, i):
    if not isinstance(i, types.Integer):
        return None

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.DoubleType())

    return types.float64(i), codegen


@njit(nogil=True, cache=True, inline="always", error_model="numpy")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 on 32-bit words held in uint64."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _U32) ^ c1 ^ k0, p1 & _LO32, (p0 >> _U32) ^ c3 ^ k1, p0 & _LO32
        k0 = (k0 + _W0) & _LO32
        k1 = (k1 + _W1) & _LO32
    return c0, c1, c2, c3


@njit(nogil=True, cache=True, inline="always", error_model="numpy")
def log_unit(k):
    """``log(1 - k*2**-52)`` for an integer ``0 <= k < 2**52``; result in ``[-52 ln 2, 0]``."""
    d = 2.0 - _from_bits(_EXP_ONE | k)
    bits = _as_bits(d)
    e = _from_bits(_EXP_MAGIC | (bits >> _U52)) - _MAGIC_BIAS
    m = _from_bits((bits & _MANT) | _EXP_ONE)
    if m > _SQRT2:
        m = 0.5 * m
        e = e + 1.0
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    p = 1.0 / 23.0
    p = p * s2 + 1.0 / 21.0
    p = p * s2 + 1.0 / 19.0
    p = p * s2 + 1.0 / 17.0
    p = p * s2 + 1.0 / 15.0
    p = p * s2 + 1.0 / 13.0
    p = p * s2 + 1.0 / 11.0
    p = p * s2 + 1.0 / 9.0
    p = p * s2 + 1.0 / 7.0
    p = p * s2 + 1.0 / 5.0
    p = p * s2 + 1.0 / 3.0
    p = p * s2 + 1.0
    return e * _LN2_HI + (e * _LN2_LO + 2.0 * s * p)


@njit(nogil=True, cache=True, inline="always", error_model="numpy")
def sincos_turn(k):
    """``(cos, sin)`` of ``2*pi*k*2**-52`` for an integer ``0 <= k < 2**52``."""
    q = k >> _U50
    frac = _from_bits(_EXP_ONE | ((k & _LOW50) << _U2)) - 1.0
    phi = (frac - 0.5) * _HALF_PI
    p2 = phi * phi
    c = 1.0 / 20922789888000.0
    c = c * p2 - 1.0 / 87178291200.0
    c = c * p2 + 1.0 / 479001600.0
    c = c * p2 - 1.0 / 3628800.0
    c = c * p2 + 1.0 / 40320.0
    c = c * p2 - 1.0 / 720.0
    c = c * p2 + 1.0 / 24.0
    c = c * p2 - 0.5
    c = c * p2 + 1.0
    s = -1.0 / 1307674368000.0
    s = s * p2 + 1.0 / 6227020800.0
    s = s * p2 - 1.0 / 39916800.0
    s = s * p2 + 1.0 / 362880.0
    s = s * p2 - 1.0 / 5040.0
    s = s * p2 + 1.0 / 120.0
    s = s * p2 - 1.0 / 6.0
    s = s * p2 + 1.0
    s = s * phi
    # rotate (phi + pi/4) into quadrant q
    c0 = (c - s) * _INV_SQRT2
    s0 = (c + s) * _INV_SQRT2
    cq = c0
    sq = s0
    if q == 1:
        cq = -s0
        sq = c0
    elif q == 2:
        cq = -c0
        sq = -s0
    elif q == 3:
        cq = s0
        sq = -c0
    return cq, sq


@njit(nogil=True, cache=True, error_model="numpy")
def gaussian_step(k0, k1, step, traj_lo, traj_hi, out):
    """Fill ``out[(component, lane)]`` with the standard normals of ``step``."""
    ncomp, nb = out.shape
    st = np.uint64(step)
    for j in range((ncomp + 1) // 2):
        cj = np.uint64(j)
        c_even = 2 * j
        c_odd = min(2 * j + 1, ncomp - 1)
        for b in range(nb):
            w0, w1, w2, w3 = philox4x32(cj, st, traj_lo[b], traj_hi[b], k0, k1)
            r = math.sqrt(-2.0 * log_unit((w0 << _U20) | (w1 >> _U12)))
            cs, sn = sincos_turn((w2 << _U20) | (w3 >> _U12))
            out[c_odd, b] = r * sn
            out[c_even, b] = r * cs


@njit(nogil=True, cache=True, inline="always", error_model="numpy")
def _csqrt(re, im):
    """Principal complex square root, cancellation-free.

    A zero imaginary part counts as +0 whatever its sign, so the negative real
    axis maps to ``+i sqrt|re|`` (the sign of a zero differs between formulas).
    """
    m = math.sqrt(re * re + im * im)
    t = math.sqrt(0.5 * (m + abs(re)))
    u = 0.5 * abs(im) / t if t > 0.0 else 0.0
    if re >= 0.0:
        return t, (u if im >= 0.0 else -u)
    return u, (t if im >= 0.0 else -t)


@njit(nogil=True, cache=True, error_model="numpy")
def _coherent_feedback(y, zeta, indptr, indices, values, fb, eps):
    """eps[0/1] = fb + zeta*J@x (real/imag), x = a + b."""
    n, nb = y.shape[1], y.shape[2]
    for i in range(n):
        for b in range(nb):
            eps[0, i, b] = fb[i, b]
            eps[1, i, b] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            w = zeta * values[k]
            for b in range(nb):
                eps[0, i, b] += w * (y[0, j, b] + y[2, j, b])
                eps[1, i, b] += w * (y[1, j, b] + y[3, j, b])


@njit(nogil=True, cache=True, error_model="numpy")
def _measurement_feedback(z, n, scale, indptr, indices, values, fb):
    """fb = scale * J @ xi_meas, the additive measurement-noise drive of one step."""
    nb = z.shape[1]
    for i in range(n):
        for b in range(nb):
            fb[i, b] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            w = scale * values[k]
            for b in range(nb):
                fb[i, b] += w * z[2 * n + j, b]


@njit(nogil=True, cache=True, error_model="numpy")
def _adiabatic_rhs(y, eps_p, z, sq, damping, kappa, gamma_p, linear, eps, out):
    """Adiabatic signal equations with noises ``z*sq``; eps holds the feedback."""
    n, nb = y.shape[1], y.shape[2]
    c1 = kappa * eps_p / gamma_p
    c2 = 0.5 * kappa * kappa / gamma_p
    if linear:
        c2 = 0.0
    for i in range(n):
        for b in range(nb):
            ar = y[0, i, b]
            ai = y[1, i, b]
            br = y[2, i, b]
            bi = y[3, i, b]
            # chi(a) = c1 - c2*a**2
            car = c1 - c2 * (ar * ar - ai * ai)
            cai = -2.0 * c2 * ar * ai
            cbr = c1 - c2 * (br * br - bi * bi)
            cbi = -2.0 * c2 * br * bi
            sar, sai = _csqrt(car, cai)
            sbr, sbi = _csqrt(cbr, cbi)
            wa = z[i, b] * sq
            wb = z[n + i, b] * sq
            er = eps[0, i, b]
            ei = eps[1, i, b]
            out[0, i, b] = er - damping * ar + (br * car - bi * cai) + sar * wa
            out[1, i, b] = ei - damping * ai + (br * cai + bi * car) + sai * wa
            out[2, i, b] = er - damping * br + (ar * cbr - ai * cbi) + sbr * wb
            out[3, i, b] = ei - damping * bi + (ar * cbi + ai * cbr) + sbi * wb


@njit(nogil=True, cache=True, error_model="numpy")
def _full_rhs(y, eps_p, z, sq, gamma, kappa, gamma_p, eps, out):
    n, nb = y.shape[1], y.shape[2]
    hk = 0.5 * kappa
    for i in range(n):
        for b in range(nb):
            ar = y[0, i, b]
            ai = y[1, i, b]
            br = y[2, i, b]
            bi = y[3, i, b]
            pr = y[4, i, b]
            pi = y[5, i, b]
            qr = y[6, i, b]
            qi = y[7, i, b]
            sar, sai = _csqrt(kappa * pr, kappa * pi)
            sbr, sbi = _csqrt(kappa * qr, kappa * qi)
            wa = z[i, b] * sq
            wb = z[n + i, b] * sq
            er = eps[0, i, b]
            ei = eps[1, i, b]
            out[0, i, b] = er - gamma * ar + kappa * (br * pr - bi * pi) + sar * wa
            out[1, i, b] = ei - gamma * ai + kappa * (br * pi + bi * pr) + sai * wa
            out[2, i, b] = er - gamma * br + kappa * (ar * qr - ai * qi) + sbr * wb
            out[3, i, b] = ei - gamma * bi + kappa * (ar * qi + ai * qr) + sbi * wb
            out[4, i, b] = eps_p - gamma_p * pr - hk * (ar * ar - ai * ai)
            out[5, i, b] = -gamma_p * pi - kappa * ar * ai
            out[6, i, b] = eps_p - gamma_p * qr - hk * (br * br - bi * bi)
            out[7, i, b] = -gamma_p * qi - kappa * br * bi


@njit(nogil=True, cache=True, error_model="numpy")
def _record(y, gidx, obs_steps, obs_ptr, obs):
    n_obs = obs_steps.shape[0]
    n, nb = y.shape[1], y.shape[2]
    while obs_ptr[0] < n_obs and obs_steps[obs_ptr[0]] == gidx:
        o = obs_ptr[0]
        for i in range(n):
            for b in range(nb):
                ar = y[0, i, b]
                ai = y[1, i, b]
                br = y[2, i, b]
                bi = y[3, i, b]
                obs[o, 0, i, b] = ar + br
                obs[o, 1, i, b] = ai + bi
                obs[o, 2, i, b] = br * ar - bi * ai
                obs[o, 3, i, b] = br * ai + bi * ar
        obs_ptr[0] += 1


@njit(nogil=True, cache=True, error_model="numpy")
def _guard(y, gidx, alive, fail_step, maxabs2, m2):
    """Track the largest signal |amplitude|**2 per lane; retire non-finite lanes."""
    n, nb = y.shape[1], y.shape[2]
    for b in range(nb):
        m2[b] = 0.0
    for i in range(n):
        for b in range(nb):
            a2 = y[0, i, b] * y[0, i, b] + y[1, i, b] * y[1, i, b]
            b2 = y[2, i, b] * y[2, i, b] + y[3, i, b] * y[3, i, b]
            v = a2 if a2 > b2 else b2
            v = v if v == v else np.inf
            m2[b] = v if v > m2[b] else m2[b]
    for b in range(nb):
        if m2[b] > maxabs2[b]:
            maxabs2[b] = m2[b]
        if not (m2[b] < DIVERGENCE_LIMIT2):
            if alive[b]:
                alive[b] = False
                fail_step[b] = gidx
            for c in range(y.shape[0]):
                for i in range(n):
                    y[c, i, b] = 0.0


@njit(nogil=True, cache=True, error_model="numpy")
def _rk4_advance(
    y, t, h, z, sq, fb, pump0, slope, damping, kappa, gamma_p, zeta, linear, indptr, indices, values,
    k, acc, yt, eps,
):
    """One classical RK4 step of size ``h`` with the noise values in ``z``/``fb`` held fixed."""
    nc, n, nb = y.shape
    h2 = 0.5 * h
    h6 = h / 6.0
    _coherent_feedback(y, zeta, indptr, indices, values, fb, eps)
    _adiabatic_rhs(y, pump0 + slope * t, z, sq, damping, kappa, gamma_p, linear, eps, k)
    for c in range(nc):
        for i in range(n):
            for b in range(nb):
                acc[c, i, b] = k[c, i, b]
                yt[c, i, b] = y[c, i, b] + h2 * k[c, i, b]
    em = pump0 + slope * (t + h2)
    _coherent_feedback(yt, zeta, indptr, indices, values, fb, eps)
    _adiabatic_rhs(yt, em, z, sq, damping, kappa, gamma_p, linear, eps, k)
    for c in range(nc):
        for i in range(n):
            for b in range(nb):
                acc[c, i, b] += 2.0 * k[c, i, b]
                yt[c, i, b] = y[c, i, b] + h2 * k[c, i, b]
    _coherent_feedback(yt, zeta, indptr, indices, values, fb, eps)
    _adiabatic_rhs(yt, em, z, sq, damping, kappa, gamma_p, linear, eps, k)
    for c in range(nc):
        for i in range(n):
            for b in range(nb):
                acc[c, i, b] += 2.0 * k[c, i, b]
                yt[c, i, b] = y[c, i, b] + h * k[c, i, b]
    _coherent_feedback(yt, zeta, indptr, indices, values, fb, eps)
    _adiabatic_rhs(yt, pump0 + slope * (t + h), z, sq, damping, kappa, gamma_p, linear, eps, k)
    for c in range(nc):
        for i in range(n):
            for b in range(nb):
                y[c, i, b] += h6 * (acc[c, i, b] + k[c, i, b])


@njit(nogil=True, cache=True, error_model="numpy")
def lane_stiffness(y, b, eps_p, damping, kappa, gamma_p, linear, fb_norm):
    """Upper bound on the drift Jacobian of lane ``b`` (noise terms left out)."""
    n = y.shape[1]
    c1 = abs(kappa * eps_p / gamma_p)
    c2 = 0.0 if linear else 0.5 * kappa * kappa / gamma_p
    worst = 0.0
    for i in range(n):
        a2 = y[0, i, b] * y[0, i, b] + y[1, i, b] * y[1, i, b]
        b2 = y[2, i, b] * y[2, i, b] + y[3, i, b] * y[3, i, b]
        big = a2 if a2 > b2 else b2
        v = 2.0 * c2 * math.sqrt(a2 * b2) + c1 + c2 * big
        if not (v <= worst):  # also catches nan
            worst = v
    return abs(damping) + fb_norm + worst


@njit(nogil=True, cache=True, error_model="numpy")
def feedback_norm(zeta, indptr, values):
    """``2 |zeta| max_i sum_j |J_ij|``: the feedback reaches both alpha and beta through x."""
    worst = 0.0
    for i in range(indptr.shape[0] - 1):
        r = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            r += abs(values[k])
        worst = r if r > worst else worst
    return 2.0 * abs(zeta) * worst


@njit(nogil=True, cache=True, error_model="numpy")
def integrate_rk4(
    y, k0, k1, traj_lo, traj_hi, n_steps, dt, pump0, slope, damping, kappa, gamma_p, zeta, fb_scale,
    linear, indptr, indices, values, obs_steps, obs, alive, fail_step, maxabs2,
):
    """Frozen-noise classical RK4 of the adiabatic model from step 0 to ``n_steps``.

    A lane whose stiffness bound times ``dt`` exceeds ``SUBSTEP_LIMIT`` (a
    positive-P spike) redoes the step in adaptive substeps with the same noise.
    Lanes that never spike are untouched by this.
    """
    nc, n, nb = y.shape
    k = np.empty_like(y)
    acc = np.empty_like(y)
    yt = np.empty_like(y)
    y0 = np.empty_like(y)
    eps = np.empty((2, n, nb))
    fb = np.empty((n, nb))
    z = np.empty((3 * n, nb))
    m2 = np.empty(nb)
    stiff = np.zeros(nb, dtype=np.bool_)
    lk = np.empty((nc, n, 1))
    lacc = np.empty((nc, n, 1))
    lyt = np.empty((nc, n, 1))
    leps = np.empty((2, n, 1))
    obs_ptr = np.zeros(1, dtype=np.int64)
    sq = 1.0 / math.sqrt(dt)
    fb_norm = feedback_norm(zeta, indptr, values)
    for s in range(n_steps):
        _record(y, s, obs_steps, obs_ptr, obs)
        t = s * dt
        gaussian_step(k0, k1, s, traj_lo, traj_hi, z)
        _measurement_feedback(z, n, zeta * fb_scale * sq, indptr, indices, values, fb)
        any_stiff = False
        for b in range(nb):
            rate = lane_stiffness(y, b, pump0 + slope * t, damping, kappa, gamma_p, linear, fb_norm)
            stiff[b] = not (rate * dt <= SUBSTEP_LIMIT)
            if stiff[b]:
                any_stiff = True
                for c in range(nc):
                    for i in range(n):
                        y0[c, i, b] = y[c, i, b]
        _rk4_advance(
            y, t, dt, z, sq, fb, pump0, slope, damping, kappa, gamma_p, zeta, linear, indptr, indices, values,
            k, acc, yt, eps,
        )
        if any_stiff:
            for b in range(nb):
                if stiff[b]:
                    ly = y[:, :, b : b + 1]
                    for c in range(nc):
                        for i in range(n):
                            ly[c, i, 0] = y0[c, i, b]
                    _substeps(
                        ly, t, dt, z[:, b : b + 1], sq, fb[:, b : b + 1], pump0, slope, damping, kappa, gamma_p,
                        zeta, linear, indptr, indices, values, fb_norm, lk, lacc, lyt, leps,
                    )
        _guard(y, s + 1, alive, fail_step, maxabs2, m2)
    _record(y, n_steps, obs_steps, obs_ptr, obs)


@njit(nogil=True, cache=True, error_model="numpy")
def _substeps(
    ly, t, dt, lz, sq, lfb, pump0, slope, damping, kappa, gamma_p, zeta, linear, indptr, indices, values,
    fb_norm, lk, lacc, lyt, leps,
):
    """Cover ``[t, t + dt]`` for one lane in substeps with ``rate * h <= SUBSTEP_LIMIT``."""
    rem = dt
    tt = t
    for _ in range(MAX_SUBSTEPS):
        rate = lane_stiffness(ly, 0, pump0 + slope * tt, damping, kappa, gamma_p, linear, fb_norm)
        m = math.ceil(rem * rate / SUBSTEP_LIMIT) if rate * rem < SUBSTEP_LIMIT * MAX_SUBSTEPS else -1
        if m < 0:
            break
        m = max(m, 1)
        h = rem / m
        _rk4_advance(
            ly, tt, h, lz, sq, lfb, pump0, slope, damping, kappa, gamma_p, zeta, linear, indptr, indices, values,
            lk, lacc, lyt, leps,
        )
        if m == 1:
            return
        tt += h
        rem -= h
    # too stiff to resolve: hand the lane to the divergence guard
    ly[0, 0, 0] = np.inf


@njit(nogil=True, cache=True, error_model="numpy")
def integrate_euler(
    y, k0, k1, traj_lo, traj_hi, n_steps, dt, pump0, slope, damping, kappa, gamma_p, zeta, fb_scale,
    linear, indptr, indices, values, obs_steps, obs, alive, fail_step, maxabs2,
):
    """Euler-Maruyama from step 0 to ``n_steps``.

    Eight components select the full pump model (``damping`` is then the total
    decay ``gamma``); four select the adiabatic model in Ito form.
    """
    nc, n, nb = y.shape
    k = np.empty_like(y)
    eps = np.empty((2, n, nb))
    fb = np.empty((n, nb))
    z = np.empty((3 * n, nb))
    m2 = np.empty(nb)
    obs_ptr = np.zeros(1, dtype=np.int64)
    sq = 1.0 / math.sqrt(dt)
    for s in range(n_steps):
        _record(y, s, obs_steps, obs_ptr, obs)
        t = s * dt
        gaussian_step(k0, k1, s, traj_lo, traj_hi, z)
        _measurement_feedback(z, n, zeta * fb_scale * sq, indptr, indices, values, fb)
        _coherent_feedback(y, zeta, indptr, indices, values, fb, eps)
        if nc == 8:
            _full_rhs(y, pump0 + slope * t, z, sq, damping, kappa, gamma_p, eps, k)
        else:
            _adiabatic_rhs(y, pump0 + slope * t, z, sq, damping, kappa, gamma_p, linear, eps, k)
        for c in range(nc):
            for i in range(n):
                for b in range(nb):
                    y[c, i, b] += dt * k[c, i, b]
        _guard(y, s + 1, alive, fail_step, maxabs2, m2)
    _record(y, n_steps, obs_steps, obs_ptr, obs)
