# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled control-loop kernels; semantics mirror ``_kernels_py`` exactly."""
from libc.math cimport cos, sin, sqrt, floor, M_PI

cdef double TWO_PI = 2.0 * M_PI
cdef int N_ACT = 5
cdef int NOISE_PER_CYCLE = 15

ctypedef double complex cplx


cdef struct M2:
    cplx a
    cplx b
    cplx c
    cplx d


cdef struct V2:
    cplx x
    cplx y


cdef inline double _wrap(double x) noexcept nogil:
    return x - TWO_PI * floor(x / TWO_PI)


cdef inline M2 _plate_cs(int idx, double c, double s) noexcept nogil:
    cdef M2 m
    if idx % 2 == 0:
        m.a = c - 1j * s
        m.b = 0
        m.c = 0
        m.d = c + 1j * s
    else:
        m.a = c
        m.b = -1j * s
        m.c = -1j * s
        m.d = c
    return m


cdef inline M2 _gen_rot_cs(M2 k, double c, double s) noexcept nogil:
    cdef M2 m
    m.a = c - 1j * s * k.a
    m.b = -1j * s * k.b
    m.c = -1j * s * k.c
    m.d = c - 1j * s * k.d
    return m


cdef inline M2 _act(int idx, M2 k, double c, double s) noexcept nogil:
    if idx < 4:
        return _plate_cs(idx, c, s)
    return _gen_rot_cs(k, c, s)


cdef inline V2 _mv(M2 m, V2 v) noexcept nogil:
    cdef V2 r
    r.x = m.a * v.x + m.b * v.y
    r.y = m.c * v.x + m.d * v.y
    return r


cdef inline cplx _conj(cplx z) noexcept nogil:
    return z.real - 1j * z.imag


cdef inline V2 _mhv(M2 m, V2 v) noexcept nogil:
    cdef V2 r
    r.x = _conj(m.a) * v.x + _conj(m.c) * v.y
    r.y = _conj(m.b) * v.x + _conj(m.d) * v.y
    return r


cdef inline M2 _mm(M2 p, M2 q) noexcept nogil:
    cdef M2 r
    r.a = p.a * q.a + p.b * q.c
    r.b = p.a * q.b + p.b * q.d
    r.c = p.c * q.a + p.d * q.c
    r.d = p.c * q.b + p.d * q.d
    return r


cdef inline double _proj(V2 w, V2 v, double eps) noexcept nogil:
    cdef cplx ov = _conj(w.x) * v.x + _conj(w.y) * v.y
    cdef double f = ov.real * ov.real + ov.imag * ov.imag
    return (1.0 - eps) * f + eps * (1.0 - f)


cdef inline double _clamp01(double x) noexcept nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


cdef inline double _cabs(cplx z) noexcept nogil:
    return sqrt(z.real * z.real + z.imag * z.imag)


cdef inline M2 _nearest_unitary(M2 m) noexcept nogil:
    cdef double h00 = (_conj(m.a) * m.a + _conj(m.c) * m.c).real
    cdef double h11 = (_conj(m.b) * m.b + _conj(m.d) * m.d).real
    cdef cplx h01 = _conj(m.a) * m.b + _conj(m.c) * m.d
    cdef cplx h10 = _conj(h01)
    cdef double s = _cabs(m.a * m.d - m.b * m.c)
    cdef double t = sqrt(h00 + h11 + 2.0 * s)
    cdef double ts = t * s
    cdef M2 inv
    inv.a = (h11 + s) / ts
    inv.b = -h01 / ts
    inv.c = -h10 / ts
    inv.d = (h00 + s) / ts
    return _mm(m, inv)


cdef inline M2 _drift_factor(double b1, double b2, double b3) noexcept nogil:
    cdef double phi = sqrt(b1 * b1 + b2 * b2 + b3 * b3)
    cdef double c = cos(0.5 * phi)
    cdef double sinc
    if phi == 0.0:
        sinc = 0.5
    else:
        sinc = sin(0.5 * phi) / phi
    cdef M2 g
    g.a = c - 1j * sinc * b1
    g.b = -1j * sinc * (b2 - 1j * b3)
    g.c = -1j * sinc * (b2 + 1j * b3)
    g.d = c + 1j * sinc * b1
    return g


cdef inline M2 _load(const cplx[:, ::1] a) noexcept:
    cdef M2 m
    m.a = a[0, 0]
    m.b = a[0, 1]
    m.c = a[1, 0]
    m.d = a[1, 1]
    return m


cdef inline void _store(M2 m, cplx[:, ::1] a) noexcept:
    a[0, 0] = m.a
    a[0, 1] = m.b
    a[1, 0] = m.c
    a[1, 1] = m.d


cdef inline V2 _loadv(const cplx[::1] a) noexcept:
    cdef V2 v
    v.x = a[0]
    v.y = a[1]
    return v


cdef inline void _half_angles(double* r, double* cc, double* ss) noexcept nogil:
    cdef int p
    for p in range(5):
        cc[p] = cos(0.5 * r[p])
        ss[p] = sin(0.5 * r[p])


cdef void _cached_intensities(double* cc, double* ss, M2 a1, M2 a3, V2 s1, V2 s3, M2 k3,
                              double eps, double* i1, double* i3) noexcept nogil:
    cdef V2 v1 = _mv(a1, s1)
    cdef V2 v3 = _mv(a3, s3)
    cdef M2 m
    cdef int p
    for p in range(4):
        m = _plate_cs(p, cc[p], ss[p])
        v1 = _mv(m, v1)
        v3 = _mv(m, v3)
    v3 = _mv(_gen_rot_cs(k3, cc[4], ss[4]), v3)
    i1[0] = _proj(s1, v1, eps)
    i3[0] = _proj(s3, v3, eps)


def intensities(const double[::1] ret, const cplx[:, ::1] a1, const cplx[:, ::1] a3,
                const cplx[::1] s1, const cplx[::1] s3, const cplx[:, ::1] k3, double eps):
    cdef double r[5]
    cdef int a
    cdef double i1, i3
    cdef double cc[5]
    cdef double ss[5]
    for a in range(N_ACT):
        r[a] = ret[a]
    _half_angles(r, cc, ss)
    _cached_intensities(cc, ss, _load(a1), _load(a3), _loadv(s1), _loadv(s3), _load(k3), eps, &i1, &i3)
    return i1, i3


def drift_apply(cplx[:, ::1] u, const double[:, ::1] incr):
    cdef M2 m = _load(u)
    cdef Py_ssize_t j
    for j in range(incr.shape[0]):
        m = _nearest_unitary(_mm(_drift_factor(incr[j, 0], incr[j, 1], incr[j, 2]), m))
    _store(m, u)


def nearest_unitary(cplx[:, ::1] u):
    _store(_nearest_unitary(_load(u)), u)


cdef int _dither_cycle(double* r, double* cc, double* ss, double step, M2 a1, M2 a3,
                       V2 s1, V2 s3, M2 k3, double eps, const double[:, ::1] noise,
                       bint has_noise, Py_ssize_t row) noexcept:
    # probes at x0 +- step come from the cached half-angle cos/sin by angle addition
    cdef int accepted = 0
    cdef M2 plates[4]
    cdef int a, p, j, choice
    cdef V2 v, w
    cdef double f, best, c, s
    cdef double ch = cos(0.5 * step), sh = sin(0.5 * step)
    cdef double vals[3]
    cdef double pc[3]
    cdef double ps[3]
    for p in range(4):
        plates[p] = _plate_cs(p, cc[p], ss[p])
    for a in range(N_ACT):
        if a < 4:
            v = _mv(a1, s1)
            for p in range(a):
                v = _mv(plates[p], v)
            w = s1
            p = 3
            while p > a:
                w = _mhv(plates[p], w)
                p -= 1
        else:
            v = _mv(a3, s3)
            for p in range(4):
                v = _mv(plates[p], v)
            w = s3
        c = cc[a]
        s = ss[a]
        pc[0] = c
        ps[0] = s
        pc[1] = c * ch - s * sh
        ps[1] = s * ch + c * sh
        pc[2] = c * ch + s * sh
        ps[2] = s * ch - c * sh
        for j in range(3):
            f = _proj(w, _mv(_act(a, k3, pc[j], ps[j]), v), eps)
            if has_noise:
                f = _clamp01(f + noise[row, 3 * a + j])
            vals[j] = f
        best = vals[0]
        choice = 0
        if vals[1] > best:
            best = vals[1]
            choice = 1
        if vals[2] > best:
            choice = 2
        if choice != 0:
            if choice == 1:
                r[a] = _wrap(r[a] + step)
            else:
                r[a] = _wrap(r[a] - step)
            cc[a] = pc[choice]
            ss[a] = ps[choice]
            accepted += 1
            if a < 4:
                plates[a] = _plate_cs(a, cc[a], ss[a])
    return accepted


def run_loop(double[::1] ret, double[::1] state, cplx[:, ::1] u,
             const cplx[:, ::1] p1, const cplx[:, ::1] p3, const cplx[::1] s1, const cplx[::1] s3,
             const cplx[:, ::1] k3, const double[:, :, ::1] incr, const double[:, ::1] noise,
             const double[::1] params, bint control, Py_ssize_t record_every,
             double[:, ::1] out_ret, double[:, ::1] out_state,
             double[:, ::1] out_i, cplx[:, :, ::1] out_u):
    cdef double grow = params[0], shrink = params[1], step_min = params[2]
    cdef double step_max = params[3], eps = params[4], thr = params[5]
    cdef Py_ssize_t n = incr.shape[0], k = incr.shape[1], c, j, rec = 0
    cdef bint has_noise = noise.shape[1] == NOISE_PER_CYCLE
    cdef V2 s1v = _loadv(s1), s3v = _loadv(s3)
    cdef M2 k3t = _load(k3), p1t = _load(p1), p3t = _load(p3)
    cdef M2 m = _load(u), a1, a3
    cdef double r[5]
    cdef double cc[5]
    cdef double ss[5]
    cdef double step = state[0], it = state[1], streak = state[2]
    cdef double i1, i3
    cdef long total = 0
    cdef int acc, a
    for a in range(N_ACT):
        r[a] = ret[a]
    for c in range(n):
        for j in range(k):
            m = _nearest_unitary(_mm(_drift_factor(incr[c, j, 0], incr[c, j, 1], incr[c, j, 2]), m))
        a1 = _mm(m, p1t)
        a3 = _mm(m, p3t)
        _half_angles(r, cc, ss)
        if control:
            acc = _dither_cycle(r, cc, ss, step, a1, a3, s1v, s3v, k3t, eps, noise, has_noise, c)
            total += acc
            if acc == 0:
                step = step * shrink
                if step < step_min:
                    step = step_min
            elif acc == N_ACT:
                step = step * grow
                if step > step_max:
                    step = step_max
            it += 1.0
        _cached_intensities(cc, ss, a1, a3, s1v, s3v, k3t, eps, &i1, &i3)
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
            out_u[rec, 0, 0] = m.a
            out_u[rec, 0, 1] = m.b
            out_u[rec, 1, 0] = m.c
            out_u[rec, 1, 1] = m.d
            rec += 1
    for a in range(N_ACT):
        ret[a] = r[a]
    state[0] = step
    state[1] = it
    state[2] = streak
    _store(m, u)
    return total
