"""Numba kernels for ray casting and path tracing.

Everything here works on flat arrays produced by ``render.pack_scene``. Slot 0
of the per-surface tables is the floor; slot i >= 1 is scene object i - 1.
"""

import math

import numpy as np
from numba import njit, prange

EPS = 1e-5
INF = 1e30
FIREFLY_CLAMP = 16.0
DELTA_ROUGHNESS = 0.02
STACK_SIZE = 64

# material table columns
M_R, M_G, M_B, M_ROUGH, M_METAL, M_SPEC, M_IOR, M_TRANS, M_CHECKER = range(9)
MAT_COLS = 9

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


# ---------------------------------------------------------------- rng

@njit(cache=True, inline="always")
def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def seed_state(seed, x, y, s):
    z = _splitmix(np.uint64(seed))
    z = _splitmix(z ^ np.uint64(x))
    z = _splitmix(z ^ (np.uint64(y) << np.uint64(20)))
    return _splitmix(z ^ (np.uint64(s) << np.uint64(40)))


@njit(cache=True, inline="always")
def next_uniform(state):
    state = state + _GOLDEN
    z = _splitmix(state)
    return state, float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------- vectors

@njit(cache=True, inline="always")
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, inline="always")
def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


@njit(cache=True, inline="always")
def add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@njit(cache=True, inline="always")
def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@njit(cache=True, inline="always")
def scale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@njit(cache=True, inline="always")
def normalize(a):
    n = math.sqrt(dot(a, a))
    if n == 0.0:
        return a
    return (a[0] / n, a[1] / n, a[2] / n)


@njit(cache=True, inline="always")
def mat_vec(M, v):
    return (M[0, 0] * v[0] + M[0, 1] * v[1] + M[0, 2] * v[2],
            M[1, 0] * v[0] + M[1, 1] * v[1] + M[1, 2] * v[2],
            M[2, 0] * v[0] + M[2, 1] * v[1] + M[2, 2] * v[2])


@njit(cache=True, inline="always")
def mat_t_vec(M, v):
    return (M[0, 0] * v[0] + M[1, 0] * v[1] + M[2, 0] * v[2],
            M[0, 1] * v[0] + M[1, 1] * v[1] + M[2, 1] * v[2],
            M[0, 2] * v[0] + M[1, 2] * v[1] + M[2, 2] * v[2])


@njit(cache=True)
def onb(n):
    """Tangent frame (t, b) around unit normal ``n`` (Duff et al. branchless basis)."""
    sign = 1.0 if n[2] >= 0.0 else -1.0
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    t = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    bb = (b, sign + n[1] * n[1] * a, -n[1])
    return t, bb


@njit(cache=True, inline="always")
def to_world(local, t, b, n):
    return (local[0] * t[0] + local[1] * b[0] + local[2] * n[0],
            local[0] * t[1] + local[1] * b[1] + local[2] * n[1],
            local[0] * t[2] + local[1] * b[2] + local[2] * n[2])


# ---------------------------------------------------------------- intersection

@njit(cache=True)
def _ray_box(o, inv, lo, hi, tmax):
    t0 = 0.0
    t1 = tmax
    for a in range(3):
        ta = (lo[a] - o[a]) * inv[a]
        tb = (hi[a] - o[a]) * inv[a]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def intersect(o, d, tmax, has_floor, spheres, tri_v0, tri_e1, tri_e2,
              bvh_lo, bvh_hi, bvh_left, bvh_right, bvh_start, bvh_count, tri_order, stack):
    """Nearest hit along ``o + t d`` with 1e-9 < t < tmax.

    Returns ``(t, kind, index)`` with kind -1 miss, 0 floor, 1 sphere, 2 triangle.
    """
    best = tmax
    kind = -1
    index = -1
    if has_floor and d[2] != 0.0:
        t = -o[2] / d[2]
        if 1e-9 < t < best:
            best = t
            kind = 0
            index = 0
    dd = dot(d, d)
    for i in range(spheres.shape[0]):
        oc = (o[0] - spheres[i, 0], o[1] - spheres[i, 1], o[2] - spheres[i, 2])
        bq = dot(oc, d)
        c = dot(oc, oc) - spheres[i, 3] * spheres[i, 3]
        disc = bq * bq - dd * c
        if disc < 0.0:
            continue
        sq = math.sqrt(disc)
        # numerically stable root pair
        qq = -bq - sq if bq >= 0.0 else -bq + sq
        r0 = qq / dd
        r1 = c / qq if qq != 0.0 else r0
        t = min(r0, r1)
        if t <= 1e-9:
            t = max(r0, r1)
        if 1e-9 < t < best:
            best = t
            kind = 1
            index = i
    if bvh_lo.shape[0] > 0:
        inv = (1.0 / d[0] if d[0] != 0.0 else INF,
               1.0 / d[1] if d[1] != 0.0 else INF,
               1.0 / d[2] if d[2] != 0.0 else INF)
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(o, inv, bvh_lo[node], bvh_hi[node], best):
                continue
            cnt = bvh_count[node]
            if cnt > 0:
                start = bvh_start[node]
                for k in range(start, start + cnt):
                    j = tri_order[k]
                    e1 = (tri_e1[j, 0], tri_e1[j, 1], tri_e1[j, 2])
                    e2 = (tri_e2[j, 0], tri_e2[j, 1], tri_e2[j, 2])
                    p = cross(d, e2)
                    det = dot(e1, p)
                    if abs(det) < 1e-14:
                        continue
                    inv_det = 1.0 / det
                    s = (o[0] - tri_v0[j, 0], o[1] - tri_v0[j, 1], o[2] - tri_v0[j, 2])
                    u = dot(s, p) * inv_det
                    if u < 0.0 or u > 1.0:
                        continue
                    q = cross(s, e1)
                    v = dot(d, q) * inv_det
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = dot(e2, q) * inv_det
                    if 1e-9 < t < best:
                        best = t
                        kind = 2
                        index = j
            else:
                stack[sp] = bvh_left[node]
                stack[sp + 1] = bvh_right[node]
                sp += 2
    return best, kind, index


@njit(cache=True)
def surface_info(p, kind, index, spheres, sphere_slot, tri_n, tri_slot):
    """Outward geometric normal and surface slot at a hit point."""
    if kind == 0:
        return (0.0, 0.0, 1.0), 0
    if kind == 1:
        r = spheres[index, 3]
        n = ((p[0] - spheres[index, 0]) / r, (p[1] - spheres[index, 1]) / r, (p[2] - spheres[index, 2]) / r)
        return normalize(n), sphere_slot[index]
    return (tri_n[index, 0], tri_n[index, 1], tri_n[index, 2]), tri_slot[index]


@njit(cache=True)
def albedo_at(p, slot, mats, nocs_affine):
    r = mats[slot, M_R]
    g = mats[slot, M_G]
    b = mats[slot, M_B]
    cells = mats[slot, M_CHECKER]
    if cells > 0.0:
        if slot == 0:
            q = p
        else:
            A = nocs_affine[slot]
            q = (A[0, 0] * p[0] + A[0, 1] * p[1] + A[0, 2] * p[2] + A[0, 3],
                 A[1, 0] * p[0] + A[1, 1] * p[1] + A[1, 2] * p[2] + A[1, 3],
                 A[2, 0] * p[0] + A[2, 1] * p[1] + A[2, 2] * p[2] + A[2, 3])
        parity = int(math.floor(q[0] * cells) + math.floor(q[1] * cells) + math.floor(q[2] * cells)) & 1
        if parity == 1:
            r *= 0.5
            g *= 0.5
            b *= 0.5
    return r, g, b


# ---------------------------------------------------------------- BSDF

@njit(cache=True, inline="always")
def luminance(r, g, b):
    return 0.2126 * r + 0.7152 * g + 0.0722 * b


@njit(cache=True)
def fresnel_dielectric(cos_i, eta):
    """Unpolarised reflectance; ``eta`` = n_incident / n_transmitted, ``cos_i`` > 0."""
    sin2_t = eta * eta * (1.0 - cos_i * cos_i)
    if sin2_t >= 1.0:
        return 1.0
    cos_t = math.sqrt(1.0 - sin2_t)
    rs = (eta * cos_i - cos_t) / (eta * cos_i + cos_t)
    rp = (cos_i - eta * cos_t) / (cos_i + eta * cos_t)
    return 0.5 * (rs * rs + rp * rp)


@njit(cache=True)
def _lobe_weights(mats, slot):
    metal = mats[slot, M_METAL]
    trans = mats[slot, M_TRANS]
    w_diff = (1.0 - metal) * (1.0 - trans)
    spec_scale = min(1.0, 2.0 * mats[slot, M_SPEC])
    w_spec = metal + (1.0 - metal) * (1.0 - trans) * spec_scale
    w_glass = (1.0 - metal) * trans
    return w_diff, w_spec, w_glass


@njit(cache=True)
def _spec_f0(mats, slot, r, g, b):
    metal = mats[slot, M_METAL]
    d0 = 0.08 * mats[slot, M_SPEC]
    return (d0 + (r - d0) * metal, d0 + (g - d0) * metal, d0 + (b - d0) * metal)


@njit(cache=True, inline="always")
def _schlick(f0, c):
    m = 1.0 - c
    if m < 0.0:
        m = 0.0
    m5 = m * m * m * m * m
    return f0 + (1.0 - f0) * m5


@njit(cache=True)
def _ggx_d(cos_h, alpha):
    a2 = alpha * alpha
    k = cos_h * cos_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * k * k)


@njit(cache=True)
def _smith_g1(c, alpha):
    a2 = alpha * alpha
    return 2.0 * c / (c + math.sqrt(a2 + (1.0 - a2) * c * c))


@njit(cache=True)
def eval_bsdf(wo, wi, n, slot, mats, r, g, b):
    """Non-delta BSDF value f(wo, wi) for reflection on the side of ``n``."""
    cos_o = dot(wo, n)
    cos_i = dot(wi, n)
    if cos_o <= 0.0 or cos_i <= 0.0:
        return 0.0, 0.0, 0.0
    w_diff, w_spec, _ = _lobe_weights(mats, slot)
    fr = w_diff * r / math.pi
    fg = w_diff * g / math.pi
    fb = w_diff * b / math.pi
    rough = mats[slot, M_ROUGH]
    if w_spec > 0.0 and rough >= DELTA_ROUGHNESS:
        alpha = rough * rough
        h = normalize(add(wo, wi))
        cos_h = dot(h, n)
        oh = dot(wo, h)
        if cos_h > 0.0 and oh > 0.0:
            common = _ggx_d(cos_h, alpha) * _smith_g1(cos_o, alpha) * _smith_g1(cos_i, alpha) / (4.0 * cos_o * cos_i)
            f0 = _spec_f0(mats, slot, r, g, b)
            fr += w_spec * common * _schlick(f0[0], oh)
            fg += w_spec * common * _schlick(f0[1], oh)
            fb += w_spec * common * _schlick(f0[2], oh)
    return fr, fg, fb


@njit(cache=True)
def sample_bsdf(state, wo, n_f, front, slot, mats, r, g, b):
    """Sample an outgoing direction.

    Returns ``(state, ok, wi, weight_r, weight_g, weight_b)`` where weight is
    f * cos / pdf divided by the lobe-selection probability.
    """
    w_diff, w_spec, w_glass = _lobe_weights(mats, slot)
    cos_o = dot(wo, n_f)
    f0 = _spec_f0(mats, slot, r, g, b)
    p_diff = w_diff * max(luminance(r, g, b), 0.05)
    p_spec = w_spec * max(luminance(_schlick(f0[0], cos_o), _schlick(f0[1], cos_o), _schlick(f0[2], cos_o)), 0.05)
    p_glass = w_glass
    total = p_diff + p_spec + p_glass
    zero = (0.0, 0.0, 0.0)
    if total <= 0.0 or cos_o <= 0.0:
        return state, False, zero, 0.0, 0.0, 0.0
    state, u0 = next_uniform(state)
    state, u1 = next_uniform(state)
    state, u2 = next_uniform(state)
    u0 *= total
    if u0 < p_diff:
        sel = p_diff / total
        rad = math.sqrt(u1)
        phi = 2.0 * math.pi * u2
        local = (rad * math.cos(phi), rad * math.sin(phi), math.sqrt(max(0.0, 1.0 - u1)))
        t, bb = onb(n_f)
        wi = normalize(to_world(local, t, bb, n_f))
        k = w_diff / sel
        return state, True, wi, k * r, k * g, k * b
    if u0 < p_diff + p_spec:
        sel = p_spec / total
        rough = mats[slot, M_ROUGH]
        if rough < DELTA_ROUGHNESS:
            wi = sub(scale(n_f, 2.0 * cos_o), wo)
            k = w_spec / sel
            return (state, True, wi, k * _schlick(f0[0], cos_o), k * _schlick(f0[1], cos_o),
                    k * _schlick(f0[2], cos_o))
        alpha = rough * rough
        tan2 = alpha * alpha * u1 / max(1.0 - u1, 1e-12)
        cos_h = 1.0 / math.sqrt(1.0 + tan2)
        sin_h = math.sqrt(max(0.0, 1.0 - cos_h * cos_h))
        phi = 2.0 * math.pi * u2
        t, bb = onb(n_f)
        h = normalize(to_world((sin_h * math.cos(phi), sin_h * math.sin(phi), cos_h), t, bb, n_f))
        oh = dot(wo, h)
        if oh <= 0.0:
            return state, False, zero, 0.0, 0.0, 0.0
        wi = sub(scale(h, 2.0 * oh), wo)
        cos_i = dot(wi, n_f)
        if cos_i <= 0.0:
            return state, False, zero, 0.0, 0.0, 0.0
        k = w_spec / sel * _smith_g1(cos_o, alpha) * _smith_g1(cos_i, alpha) * oh / (cos_o * cos_h)
        return state, True, wi, k * _schlick(f0[0], oh), k * _schlick(f0[1], oh), k * _schlick(f0[2], oh)
    # smooth dielectric: reflect or refract by exact Fresnel
    sel = p_glass / total
    ior = mats[slot, M_IOR]
    eta = 1.0 / ior if front else ior
    fr = fresnel_dielectric(cos_o, eta)
    k = w_glass / sel
    state, u3 = next_uniform(state)
    if u3 < fr:
        wi = sub(scale(n_f, 2.0 * cos_o), wo)
        return state, True, wi, k, k, k
    sin2_t = eta * eta * (1.0 - cos_o * cos_o)
    cos_t = math.sqrt(max(0.0, 1.0 - sin2_t))
    # refract -wo through the interface whose normal faces the incoming side
    wi = normalize(sub(scale(scale(wo, -1.0), eta), scale(n_f, cos_t - eta * cos_o)))
    return state, True, wi, k * r, k * g, k * b


# ---------------------------------------------------------------- projector

@njit(cache=True)
def pattern_lookup(pattern, u, v):
    """Bilinear sample of the pattern at continuous pixel coords (pixel centres at integers)."""
    h, w = pattern.shape
    if u < -0.5 or v < -0.5 or u > w - 0.5 or v > h - 0.5:
        return 0.0
    x0 = int(math.floor(u))
    y0 = int(math.floor(v))
    fx = u - x0
    fy = v - y0
    acc = 0.0
    for dy in range(2):
        yy = y0 + dy
        if yy < 0 or yy >= h:
            continue
        wy = fy if dy == 1 else 1.0 - fy
        for dx in range(2):
            xx = x0 + dx
            if xx < 0 or xx >= w:
                continue
            wx = fx if dx == 1 else 1.0 - fx
            acc += wx * wy * pattern[yy, xx]
    return acc


# ---------------------------------------------------------------- kernels

@njit(cache=True, parallel=True)
def trace_image(width, height, K, cam_R, cam_t, spp, max_bounces, seed, env,
                proj_on, proj_R, proj_t, pattern, PK, proj_power,
                has_floor, mats, nocs_affine, spheres, sphere_slot,
                tri_v0, tri_e1, tri_e2, tri_n, tri_slot,
                bvh_lo, bvh_hi, bvh_left, bvh_right, bvh_start, bvh_count, tri_order):
    """Path-trace an H x W x 3 radiance image averaged over ``spp`` jittered samples."""
    out = np.zeros((height, width, 3))
    fx, fy, cx, cy = K[0], K[1], K[2], K[3]
    pfx, pfy, pcx, pcy = PK[0], PK[1], PK[2], PK[3]
    cam_o = (cam_t[0], cam_t[1], cam_t[2])
    proj_o = (proj_t[0], proj_t[1], proj_t[2])
    for y in prange(height):
        stack = np.empty(STACK_SIZE, dtype=np.int64)
        for x in range(width):
            ar = 0.0
            ag = 0.0
            ab = 0.0
            for s in range(spp):
                state = seed_state(seed, x, y, s)
                state, jx = next_uniform(state)
                state, jy = next_uniform(state)
                dc = normalize(((x + jx - 0.5 - cx) / fx, (y + jy - 0.5 - cy) / fy, 1.0))
                d = normalize(mat_vec(cam_R, dc))
                o = cam_o
                tr = 1.0
                tg = 1.0
                tb = 1.0
                lr = 0.0
                lg = 0.0
                lb = 0.0
                for _bounce in range(max_bounces):
                    t, kind, index = intersect(o, d, INF, has_floor, spheres, tri_v0, tri_e1, tri_e2, bvh_lo,
                                               bvh_hi, bvh_left, bvh_right, bvh_start, bvh_count, tri_order,
                                               stack)
                    if kind < 0:
                        lr += tr * env[0]
                        lg += tg * env[1]
                        lb += tb * env[2]
                        break
                    p = add(o, scale(d, t))
                    n, slot = surface_info(p, kind, index, spheres, sphere_slot, tri_n, tri_slot)
                    front = dot(d, n) < 0.0
                    n_f = n if front else scale(n, -1.0)
                    wo = scale(d, -1.0)
                    ar_, ag_, ab_ = albedo_at(p, slot, mats, nocs_affine)
                    if proj_on:
                        to_p = sub(proj_o, p)
                        dist2 = dot(to_p, to_p)
                        dist = math.sqrt(dist2)
                        wi = scale(to_p, 1.0 / dist)
                        cos_i = dot(wi, n_f)
                        if cos_i > 0.0:
                            q = mat_t_vec(proj_R, scale(to_p, -1.0))
                            if q[2] > 0.0:
                                pat = pattern_lookup(pattern, pfx * q[0] / q[2] + pcx, pfy * q[1] / q[2] + pcy)
                                if pat > 0.0:
                                    so = add(p, scale(n_f, EPS))
                                    st, skind, _ = intersect(so, wi, dist * (1.0 - 1e-6), has_floor, spheres,
                                                             tri_v0, tri_e1, tri_e2, bvh_lo, bvh_hi, bvh_left,
                                                             bvh_right, bvh_start, bvh_count, tri_order, stack)
                                    if skind < 0:
                                        f = eval_bsdf(wo, wi, n_f, slot, mats, ar_, ag_, ab_)
                                        li = proj_power * pat / dist2 * cos_i
                                        lr += tr * f[0] * li
                                        lg += tg * f[1] * li
                                        lb += tb * f[2] * li
                    state, ok, wi, wr, wg, wb = sample_bsdf(state, wo, n_f, front, slot, mats, ar_, ag_, ab_)
                    if not ok:
                        break
                    tr *= wr
                    tg *= wg
                    tb *= wb
                    if tr == 0.0 and tg == 0.0 and tb == 0.0:
                        break
                    side = EPS if dot(wi, n_f) > 0.0 else -EPS
                    o = add(p, scale(n_f, side))
                    d = wi
                ar += min(lr, FIREFLY_CLAMP)
                ag += min(lg, FIREFLY_CLAMP)
                ab += min(lb, FIREFLY_CLAMP)
            out[y, x, 0] = ar / spp
            out[y, x, 1] = ag / spp
            out[y, x, 2] = ab / spp
    return out


@njit(cache=True, parallel=True)
def cast_gt(width, height, K, cam_R, cam_t, has_floor, inst, nocs_affine, spheres, sphere_slot,
            tri_v0, tri_e1, tri_e2, tri_n, tri_slot,
            bvh_lo, bvh_hi, bvh_left, bvh_right, bvh_start, bvh_count, tri_order):
    """One ray through each pixel centre: z-depth, camera-frame normal, instance id and NOCS."""
    depth = np.zeros((height, width))
    normal = np.zeros((height, width, 3))
    mask = np.zeros((height, width), dtype=np.int64)
    nocs = np.zeros((height, width, 3))
    fx, fy, cx, cy = K[0], K[1], K[2], K[3]
    cam_o = (cam_t[0], cam_t[1], cam_t[2])
    for y in prange(height):
        stack = np.empty(STACK_SIZE, dtype=np.int64)
        for x in range(width):
            dc = ((x - cx) / fx, (y - cy) / fy, 1.0)
            d = mat_vec(cam_R, dc)  # unnormalised: t is then the camera-frame z-depth
            t, kind, index = intersect(cam_o, d, INF, has_floor, spheres, tri_v0, tri_e1, tri_e2, bvh_lo,
                                       bvh_hi, bvh_left, bvh_right, bvh_start, bvh_count, tri_order, stack)
            if kind < 0:
                continue
            p = add(cam_o, scale(d, t))
            n, slot = surface_info(p, kind, index, spheres, sphere_slot, tri_n, tri_slot)
            if dot(n, d) > 0.0:
                n = scale(n, -1.0)
            nc = mat_t_vec(cam_R, n)
            depth[y, x] = t
            normal[y, x, 0] = nc[0]
            normal[y, x, 1] = nc[1]
            normal[y, x, 2] = nc[2]
            mask[y, x] = inst[slot]
            if slot > 0:
                A = nocs_affine[slot]
                for c in range(3):
                    v = A[c, 0] * p[0] + A[c, 1] * p[1] + A[c, 2] * p[2] + A[c, 3]
                    nocs[y, x, c] = min(1.0, max(0.0, v))
    return depth, normal, mask, nocs
