"""Pure-Python control-loop kernels.

Reference implementation of the compiled ``_ckernels`` module; both expose the
same functions with the same in-place array semantics.  Scalar complex math is
used instead of numpy on purpose: per-call overhead dominates on 2x2 operands.

Actuator layout in ``ret``: indices 0..3 are the R1 plates (axes H, +45, H,
+45, plate 0 acts first), index 4 is the R3 retarder whose generator n.sigma
is passed as ``k3``.

``state`` = [step, iteration, converged_streak]
``params`` = [grow, shrink, step_min, step_max, extinction_eps, conv_threshold]
"""
import math

TWO_PI = 2.0 * math.pi
N_ACT = 5
NOISE_PER_CYCLE = 15


def _wrap(x):
    return x - TWO_PI * math.floor(x / TWO_PI)


def _plate_cs(idx, c, s):
    if idx % 2 == 0:
        return (complex(c, -s), 0j, 0j, complex(c, s))
    return (complex(c, 0.0), complex(0.0, -s), complex(0.0, -s), complex(c, 0.0))


def _gen_rot_cs(k, c, s):
    return (c - 1j * s * k[0], -1j * s * k[1], -1j * s * k[2], c - 1j * s * k[3])


def _act(idx, k, c, s):
    return _plate_cs(idx, c, s) if idx < 4 else _gen_rot_cs(k, c, s)


def _mv(m, v):
    return (m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1])


def _mhv(m, v):
    # m^dagger v
    return (m[0].conjugate() * v[0] + m[2].conjugate() * v[1],
            m[1].conjugate() * v[0] + m[3].conjugate() * v[1])


def _mm(a, b):
    return (a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3])


def _proj(w, v, eps):
    ov = w[0].conjugate() * v[0] + w[1].conjugate() * v[1]
    f = ov.real * ov.real + ov.imag * ov.imag
    return (1.0 - eps) * f + eps * (1.0 - f)


def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def _tup(a):
    return (complex(a[0, 0]), complex(a[0, 1]), complex(a[1, 0]), complex(a[1, 1]))


def _vec(a):
    return (complex(a[0]), complex(a[1]))


def _true_intensities(ret, a1, a3, s1, s3, k3, eps):
    cs = [(math.cos(0.5 * x), math.sin(0.5 * x)) for x in ret]
    return _cached_intensities(cs, a1, a3, s1, s3, k3, eps)


def _cached_intensities(cs, a1, a3, s1, s3, k3, eps):
    v1 = _mv(a1, s1)
    v3 = _mv(a3, s3)
    for p in range(4):
        m = _plate_cs(p, cs[p][0], cs[p][1])
        v1 = _mv(m, v1)
        v3 = _mv(m, v3)
    v3 = _mv(_gen_rot_cs(k3, cs[4][0], cs[4][1]), v3)
    return _proj(s1, v1, eps), _proj(s3, v3, eps)


def intensities(ret, a1, a3, s1, s3, k3, eps):
    """Noise-free (i1, i3) for retardances ``ret`` and reference transfers a1, a3."""
    return _true_intensities(ret, _tup(a1), _tup(a3), _vec(s1), _vec(s3), _tup(k3), eps)


def _nearest_unitary(m):
    # polar factor m (m^dagger m)^(-1/2), closed form for 2x2
    h00 = (m[0].conjugate() * m[0] + m[2].conjugate() * m[2]).real
    h11 = (m[1].conjugate() * m[1] + m[3].conjugate() * m[3]).real
    h01 = m[0].conjugate() * m[1] + m[2].conjugate() * m[3]
    h10 = h01.conjugate()
    s = abs(m[0] * m[3] - m[1] * m[2])
    t = math.sqrt(h00 + h11 + 2.0 * s)
    ts = t * s
    inv = ((h11 + s) / ts, -h01 / ts, -h10 / ts, (h00 + s) / ts)
    return _mm(m, inv)


def _drift_factor(b1, b2, b3):
    phi = math.sqrt(b1 * b1 + b2 * b2 + b3 * b3)
    c = math.cos(0.5 * phi)
    sinc = 0.5 if phi == 0.0 else math.sin(0.5 * phi) / phi
    # cos(phi/2) I - i sin(phi/2)/phi (b.sigma); b.sigma = [[b1, b2 - i b3], [b2 + i b3, -b1]]
    return (complex(c, -sinc * b1), -1j * sinc * complex(b2, -b3),
            -1j * sinc * complex(b2, b3), complex(c, sinc * b1))


def drift_apply(u, incr):
    """Left-multiply ``u`` (2x2 array, in place) by each drift increment in
    ``incr`` (shape (k, 3)), re-orthonormalizing after every increment."""
    m = _tup(u)
    for j in range(incr.shape[0]):
        g = _drift_factor(float(incr[j, 0]), float(incr[j, 1]), float(incr[j, 2]))
        m = _nearest_unitary(_mm(g, m))
    u[0, 0], u[0, 1], u[1, 0], u[1, 1] = m


def nearest_unitary(u):
    """Polar-factor re-orthonormalization of a 2x2 array, in place."""
    u[0, 0], u[0, 1], u[1, 0], u[1, 1] = _nearest_unitary(_tup(u))


def _dither_cycle(ret, cs, step, a1, a3, s1, s3, k3, eps, noise, row):
    # probes at x0 +- step come from the cached half-angle cos/sin by angle addition
    accepted = 0
    ch, sh = math.cos(0.5 * step), math.sin(0.5 * step)
    plates = [_plate_cs(p, cs[p][0], cs[p][1]) for p in range(4)]
    for a in range(N_ACT):
        if a < 4:
            v = _mv(a1, s1)
            for p in range(a):
                v = _mv(plates[p], v)
            w = s1
            for p in range(3, a, -1):
                w = _mhv(plates[p], w)
        else:
            v = _mv(a3, s3)
            for p in range(4):
                v = _mv(plates[p], v)
            w = s3
        c, s = cs[a]
        probes = ((c, s), (c * ch - s * sh, s * ch + c * sh), (c * ch + s * sh, s * ch - c * sh))
        vals = []
        for j in range(3):
            f = _proj(w, _mv(_act(a, k3, probes[j][0], probes[j][1]), v), eps)
            if noise is not None:
                f = _clamp01(f + noise[row, 3 * a + j])
            vals.append(f)
        best, choice = vals[0], 0
        if vals[1] > best:
            best, choice = vals[1], 1
        if vals[2] > best:
            choice = 2
        if choice != 0:
            ret[a] = _wrap(ret[a] + (step if choice == 1 else -step))
            cs[a] = probes[choice]
            accepted += 1
            if a < 4:
                plates[a] = _plate_cs(a, cs[a][0], cs[a][1])
    return accepted


def run_loop(ret, state, u, p1, p3, s1, s3, k3, incr, noise, params, control,
             record_every, out_ret, out_state, out_i, out_u):
    """Run ``incr.shape[0]`` loop cycles: drift ``u`` by each cycle's increments,
    then (if ``control``) one dither cycle.  Mutates ret, state and u in place
    and fills one record every ``record_every`` cycles.  Returns the number of
    accepted dither moves."""
    grow, shrink, step_min, step_max, eps, thr = (float(x) for x in params)
    n = incr.shape[0]
    has_noise = noise.shape[1] == NOISE_PER_CYCLE
    s1v, s3v, k3t = _vec(s1), _vec(s3), _tup(k3)
    p1t, p3t = _tup(p1), _tup(p3)
    r = [float(x) for x in ret]
    step, it, streak = float(state[0]), float(state[1]), float(state[2])
    m = _tup(u)
    total = 0
    rec = 0
    for c in range(n):
        for j in range(incr.shape[1]):
            g = _drift_factor(float(incr[c, j, 0]), float(incr[c, j, 1]), float(incr[c, j, 2]))
            m = _nearest_unitary(_mm(g, m))
        a1 = _mm(m, p1t)
        a3 = _mm(m, p3t)
        cs = [(math.cos(0.5 * x), math.sin(0.5 * x)) for x in r]
        if control:
            acc = _dither_cycle(r, cs, step, a1, a3, s1v, s3v, k3t, eps,
                                noise if has_noise else None, c)
            total += acc
            if acc == 0:
                step = max(step * shrink, step_min)
            elif acc == N_ACT:
                step = min(step * grow, step_max)
            it += 1.0
        i1, i3 = _cached_intensities(cs, a1, a3, s1v, s3v, k3t, eps)
        if i1 > 1.0 - thr and i3 > 1.0 - thr:
            streak += 1.0
        else:
            streak = 0.0
        if (c + 1) % record_every == 0:
            for a in range(N_ACT):
                out_ret[rec, a] = r[a]
            out_state[rec, 0] = step
            out_state[rec, 1] = it
            out_state[rec, 2] = streak
            out_i[rec, 0] = i1
            out_i[rec, 1] = i3
            out_u[rec, 0, 0], out_u[rec, 0, 1], out_u[rec, 1, 0], out_u[rec, 1, 1] = m
            rec += 1
    for a in range(N_ACT):
        ret[a] = r[a]
    state[0], state[1], state[2] = step, it, streak
    u[0, 0], u[0, 1], u[1, 0], u[1, 1] = m
    return total
