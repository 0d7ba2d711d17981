"""Hot loops of the explicit solver, in numba and in vectorised numpy.

Both paths implement the same algorithm and must agree to round-off:

* elastic predictor in plane strain (stress vector ``xx, yy, zz, xy``)
* backward-Euler return map for the overstress law, solved by Newton with a
  bisection safeguard on ``g(x) = x - dt*D*((q - 3G x)/sigma0(ep + x) - 1)^n``
* central-difference update with lumped mass and prescribed velocities
"""
import numpy as np

from .._backend import njit

# status codes returned by the step runners
OK = 0
RETURN_MAP_FAILED = 1
NON_FINITE = 2


@njit(cache=True)
def hardening(ep, hx, hy):
    """Piecewise-linear static yield stress and its slope (linear extrapolation)."""
    n = hx.shape[0]
    if n == 1:
        return hy[0], 0.0
    if ep <= hx[0]:
        return hy[0], 0.0
    for k in range(n - 1):
        if ep <= hx[k + 1]:
            s = (hy[k + 1] - hy[k]) / (hx[k + 1] - hx[k])
            return hy[k] + s * (ep - hx[k]), s
    s = (hy[n - 1] - hy[n - 2]) / (hx[n - 1] - hx[n - 2])
    return hy[n - 1] + s * (ep - hx[n - 1]), s


@njit(cache=True)
def _power(x, n_exp):
    # integer exponents avoid the libm pow call in the innermost loop
    k = int(n_exp)
    if k == n_exp and 0 < k <= 8:
        r = x
        for _ in range(k - 1):
            r *= x
        return r
    return x ** n_exp


@njit(cache=True)
def return_map(q, ep, dt, G3, D, n_exp, hx, hy, tol, maxit, guess=-1.0):
    """Plastic strain increment for trial Mises stress ``q``.

    ``guess`` (e.g. the previous step's increment) seeds Newton when it lies
    inside the bracket; otherwise the explicit-rate estimate is used.
    Returns ``(dep, iterations, converged)``.
    """
    s0, _ = hardening(ep, hx, hy)
    if q <= s0:
        return 0.0, 0, True
    lo = 0.0
    hi = (q - s0) / G3
    span = hi
    if guess > 0.0 and guess < hi:
        x = guess
    else:
        x = dt * D * _power(q / s0 - 1.0, n_exp)
        if not (x < hi):
            x = 0.5 * hi
    for it in range(1, maxit + 1):
        s, H = hardening(ep + x, hx, hy)
        qn = q - G3 * x
        ratio = qn / s
        if ratio > 1.0:
            over = ratio - 1.0
            pw = dt * D * _power(over, n_exp)
            g = x - pw
            dg = 1.0 + n_exp * pw / over * (G3 * s + qn * H) / (s * s)
        else:
            g = x
            dg = 1.0
        if g > 0.0:
            hi = x
        elif g < 0.0:
            lo = x
        else:
            return x, it, True
        xn = x - g / dg
        if not (xn > lo and xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= tol * xn or hi - lo <= 4e-16 * span:
            return xn, it, True
        x = xn
    return x, maxit, False


def return_map_vec(q, ep, dt, G3, D, n_exp, hx, hy, tol=1e-13, maxit=100):
    """Vectorised :func:`return_map` over arrays ``q`` and ``ep``.

    Returns ``(dep, converged)`` arrays.
    """
    q = np.asarray(q, dtype=float)
    ep = np.asarray(ep, dtype=float)
    dep = np.zeros_like(q)
    conv = np.ones(q.shape, dtype=bool)
    s0 = np.interp(ep, hx, hy) if len(hx) > 1 else np.full_like(ep, hy[0])
    if len(hx) > 1:
        slope_end = (hy[-1] - hy[-2]) / (hx[-1] - hx[-2])
        s0 = np.where(ep > hx[-1], hy[-1] + slope_end * (ep - hx[-1]), s0)
    plastic = q > s0
    if not plastic.any():
        return dep, conv
    idx = np.nonzero(plastic)[0] if q.ndim == 1 else np.nonzero(plastic.ravel())[0]
    qf, epf = q.ravel()[idx], ep.ravel()[idx]
    s0f = s0.ravel()[idx]
    lo = np.zeros_like(qf)
    hi = (qf - s0f) / G3
    span = hi.copy()
    x = dt * D * (qf / s0f - 1.0) ** n_exp
    x = np.where(x < hi, x, 0.5 * hi)
    done = np.zeros(qf.shape, dtype=bool)
    out = np.zeros_like(qf)
    for _ in range(maxit):
        act = ~done
        if not act.any():
            break
        xa = x[act]
        s, H = _hardening_vec(epf[act] + xa, hx, hy)
        qn = qf[act] - G3 * xa
        ratio = qn / s
        over = np.maximum(ratio - 1.0, 0.0)
        yielding = ratio > 1.0
        g = np.where(yielding, xa - dt * D * over ** n_exp, xa)
        dg = np.where(yielding,
                      1.0 + dt * D * n_exp * over ** (n_exp - 1.0) * (G3 * s + qn * H) / (s * s),
                      1.0)
        loa, hia = lo[act], hi[act]
        hia = np.where(g > 0.0, xa, hia)
        loa = np.where(g < 0.0, xa, loa)
        xn = xa - g / dg
        xn = np.where((xn > loa) & (xn < hia), xn, 0.5 * (loa + hia))
        exact = g == 0.0
        xn = np.where(exact, xa, xn)
        fin = exact | (np.abs(xn - xa) <= tol * xn) | (hia - loa <= 4e-16 * span[act])
        lo[act], hi[act], x[act] = loa, hia, xn
        ai = np.nonzero(act)[0]
        out[ai[fin]] = xn[fin]
        done[ai[fin]] = True
    out[~done] = x[~done]
    flat = dep.ravel()
    flat[idx] = out
    cflat = conv.ravel()
    cflat[idx] = done
    return flat.reshape(q.shape), cflat.reshape(q.shape)


def _hardening_vec(ep, hx, hy):
    if len(hx) == 1:
        return np.full_like(ep, hy[0]), np.zeros_like(ep)
    slopes = np.diff(hy) / np.diff(hx)
    k = np.clip(np.searchsorted(hx, ep, side="left") - 1, 0, len(hx) - 2)
    s = hy[k] + slopes[k] * (ep - hx[k])
    H = slopes[k]
    below = ep <= hx[0]
    s = np.where(below, hy[0], s)
    H = np.where(below, 0.0, H)
    return s, H


# --------------------------------------------------------------------------
# full time integration


@njit(cache=True)
def _element_energy(stress, wdet, K, G):
    e = 0.0
    for el in range(stress.shape[0]):
        for g in range(stress.shape[1]):
            sxx = stress[el, g, 0]
            syy = stress[el, g, 1]
            szz = stress[el, g, 2]
            sxy = stress[el, g, 3]
            p = (sxx + syy + szz) / 3.0
            dxx = sxx - p
            dyy = syy - p
            dzz = szz - p
            q2 = 1.5 * (dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * sxy * sxy)
            e += wdet[g] * (p * p / (2.0 * K) + q2 / (6.0 * G))
    return e


@njit(cache=True)
def run_steps_numba(conn, B, wdet, lam, G, D, n_exp, hx, hy, mass, free, vpres,
                    v_init, dt, nsteps, rec_slot, top_ydofs, hg_coef, hg_vec,
                    tol, maxit, stress, epbar, out):
    """Integrate ``nsteps`` central-difference steps in place.

    ``out[k]`` receives ``(reaction, E_pl, E_el, E_k, W_ext, E_hg)`` at the
    step where ``rec_slot == k``.  Returns ``(status, step, element)``.
    """
    ne = conn.shape[0]
    ngp = B.shape[0]
    ndof = mass.shape[0]
    K = lam + 2.0 * G / 3.0
    G3 = 3.0 * G
    c11 = lam + 2.0 * G
    f = np.zeros(ndof)
    v = v_init.copy()
    ue = np.zeros(8)
    ve = np.zeros(8)
    fe = np.zeros(8)
    last_dep = np.zeros(epbar.shape)
    # current static yield stress per Gauss point
    ys = np.empty(epbar.shape)
    for el in range(ne):
        for g in range(ngp):
            ys[el, g] = hardening(epbar[el, g], hx, hy)[0]
    e_pl = 0.0
    e_hg = 0.0
    ke0 = 0.0
    for i in range(ndof):
        ke0 += 0.5 * mass[i] * v[i] * v[i]
    w_ext = ke0
    r_prev = 0.0
    if rec_slot[0] >= 0:
        k = rec_slot[0]
        out[k, 0] = 0.0
        out[k, 1] = 0.0
        out[k, 2] = 0.0
        out[k, 3] = ke0
        out[k, 4] = w_ext
        out[k, 5] = 0.0
    vtop = 0.0
    for i in range(top_ydofs.shape[0]):
        vtop = vpres[top_ydofs[i]]
    for step in range(1, nsteps + 1):
        # v currently holds v^{n-1/2} (or v^0 at the first step, where a^0 = 0)
        f[:] = 0.0
        for el in range(ne):
            for a in range(4):
                nd = conn[el, a]
                ue[2 * a] = dt * v[2 * nd]
                ue[2 * a + 1] = dt * v[2 * nd + 1]
                ve[2 * a] = v[2 * nd]
                ve[2 * a + 1] = v[2 * nd + 1]
                fe[2 * a] = 0.0
                fe[2 * a + 1] = 0.0
            for g in range(ngp):
                dxx = 0.0
                dyy = 0.0
                gxy = 0.0
                for k in range(8):
                    dxx += B[g, 0, k] * ue[k]
                    dyy += B[g, 1, k] * ue[k]
                    gxy += B[g, 2, k] * ue[k]
                sxx = stress[el, g, 0] + c11 * dxx + lam * dyy
                syy = stress[el, g, 1] + lam * dxx + c11 * dyy
                szz = stress[el, g, 2] + lam * (dxx + dyy)
                sxy = stress[el, g, 3] + G * gxy
                p = (sxx + syy + szz) / 3.0
                axx = sxx - p
                ayy = syy - p
                azz = szz - p
                q = np.sqrt(1.5 * (axx * axx + ayy * ayy + azz * azz + 2.0 * sxy * sxy))
                if q <= ys[el, g]:
                    last_dep[el, g] = 0.0
                    stress[el, g, 0] = sxx
                    stress[el, g, 1] = syy
                    stress[el, g, 2] = szz
                    stress[el, g, 3] = sxy
                    w = wdet[g]
                    for k in range(8):
                        fe[k] += (B[g, 0, k] * sxx + B[g, 1, k] * syy + B[g, 2, k] * sxy) * w
                    continue
                x, its, conv = return_map(q, epbar[el, g], dt, G3, D, n_exp, hx, hy, tol, maxit,
                                          last_dep[el, g])
                if not conv:
                    return RETURN_MAP_FAILED, step, el
                if x > 0.0:
                    qn = q - G3 * x
                    sc = qn / q
                    axx *= sc
                    ayy *= sc
                    azz *= sc
                    sxy *= sc
                    sxx = axx + p
                    syy = ayy + p
                    szz = azz + p
                    epbar[el, g] += x
                    e_pl += qn * x * wdet[g]
                    ys[el, g] = hardening(epbar[el, g], hx, hy)[0]
                last_dep[el, g] = x
                stress[el, g, 0] = sxx
                stress[el, g, 1] = syy
                stress[el, g, 2] = szz
                stress[el, g, 3] = sxy
                w = wdet[g]
                for k in range(8):
                    fe[k] += (B[g, 0, k] * sxx + B[g, 1, k] * syy + B[g, 2, k] * sxy) * w
            if hg_coef > 0.0:
                qx = 0.0
                qy = 0.0
                for a in range(4):
                    qx += hg_vec[a] * ve[2 * a]
                    qy += hg_vec[a] * ve[2 * a + 1]
                for a in range(4):
                    fe[2 * a] += hg_coef * qx * hg_vec[a]
                    fe[2 * a + 1] += hg_coef * qy * hg_vec[a]
                e_hg += hg_coef * (qx * qx + qy * qy) * dt
            for a in range(4):
                nd = conn[el, a]
                f[2 * nd] += fe[2 * a]
                f[2 * nd + 1] += fe[2 * a + 1]

        r = 0.0
        for i in range(top_ydofs.shape[0]):
            r += f[top_ydofs[i]]
        w_ext += vtop * dt * 0.5 * (r_prev + r)
        r_prev = r

        # a^n, v^n (for energy), v^{n+1/2}
        ke = 0.0
        for i in range(ndof):
            if free[i]:
                acc = -f[i] / mass[i]
                vn = v[i] + 0.5 * dt * acc
                v[i] = v[i] + dt * acc
            else:
                vn = vpres[i]
                v[i] = vpres[i]
            ke += 0.5 * mass[i] * vn * vn
        if not np.isfinite(ke) or not np.isfinite(r):
            return NON_FINITE, step, -1

        k = rec_slot[step]
        if k >= 0:
            out[k, 0] = -r
            out[k, 1] = e_pl
            out[k, 2] = _element_energy(stress, wdet, K, G)
            out[k, 3] = ke
            out[k, 4] = w_ext
            out[k, 5] = e_hg
    return OK, nsteps, -1


class NumpyStepper:
    """Vectorised twin of :func:`run_steps_numba`."""

    def __init__(self, conn, B, wdet, lam, G, D, n_exp, hx, hy, mass, free, vpres,
                 hg_coef, hg_vec, tol, maxit):
        self.conn = conn
        self.B = B
        self.wdet = wdet
        self.lam, self.G = lam, G
        self.D, self.n_exp = D, n_exp
        self.hx, self.hy = hx, hy
        self.mass, self.free, self.vpres = mass, free, vpres
        self.hg_coef, self.hg_vec = hg_coef, hg_vec
        self.tol, self.maxit = tol, maxit
        self.dofs = np.empty((conn.shape[0], 8), dtype=np.int64)
        self.dofs[:, 0::2] = 2 * conn
        self.dofs[:, 1::2] = 2 * conn + 1
        lam_, G_ = lam, G
        c11 = lam_ + 2 * G_
        # maps (dxx, dyy, gxy) -> (sxx, syy, szz, sxy)
        self.C = np.array([[c11, lam_, 0.0], [lam_, c11, 0.0], [lam_, lam_, 0.0], [0.0, 0.0, G_]])

    def run(self, v_init, dt, nsteps, rec_slot, top_ydofs, stress, epbar, out):
        ndof = self.mass.shape[0]
        K = self.lam + 2.0 * self.G / 3.0
        G3 = 3.0 * self.G
        v = v_init.copy()
        free = self.free
        mass = self.mass
        e_pl = 0.0
        e_hg = 0.0
        ke0 = 0.5 * float(np.dot(mass, v * v))
        w_ext = ke0
        r_prev = 0.0
        vtop = self.vpres[top_ydofs[0]] if len(top_ydofs) else 0.0
        if rec_slot[0] >= 0:
            out[rec_slot[0]] = (0.0, 0.0, 0.0, ke0, w_ext, 0.0)
        # strain operator over all gauss points: (ngp, 3, 8)
        B = self.B
        for step in range(1, nsteps + 1):
            ve = v[self.dofs]                      # (ne, 8)
            de = np.einsum("gik,ek->egi", B, ve * dt)   # (ne, ngp, 3)
            trial = stress + de @ self.C.T
            p = trial[..., :3].mean(axis=-1)
            dev = trial.copy()
            dev[..., :3] -= p[..., None]
            q = np.sqrt(1.5 * (dev[..., 0] ** 2 + dev[..., 1] ** 2 + dev[..., 2] ** 2
                               + 2.0 * dev[..., 3] ** 2))
            dep, conv = return_map_vec(q, epbar, dt, G3, self.D, self.n_exp, self.hx, self.hy,
                                       self.tol, self.maxit)
            if not conv.all():
                bad = np.argwhere(~conv)[0]
                return RETURN_MAP_FAILED, step, int(bad[0])
            yielded = dep > 0.0
            if yielded.any():
                qn = q - G3 * dep
                sc = np.where(yielded, qn / np.where(yielded, q, 1.0), 1.0)
                dev *= sc[..., None]
                e_pl += float(np.sum(qn * dep * self.wdet[None, :]))
                epbar += dep
            stress[...] = dev
            stress[..., :3] += p[..., None]
            sv = stress[..., [0, 1, 3]]            # (ne, ngp, 3)
            fe = np.einsum("gik,egi,g->ek", B, sv, self.wdet)
            if self.hg_coef > 0.0:
                qx = ve[:, 0::2] @ self.hg_vec
                qy = ve[:, 1::2] @ self.hg_vec
                fe[:, 0::2] += self.hg_coef * qx[:, None] * self.hg_vec[None, :]
                fe[:, 1::2] += self.hg_coef * qy[:, None] * self.hg_vec[None, :]
                e_hg += self.hg_coef * float(np.sum(qx * qx + qy * qy)) * dt
            f = np.bincount(self.dofs.ravel(), weights=fe.ravel(), minlength=ndof)

            r = float(f[top_ydofs].sum())
            w_ext += vtop * dt * 0.5 * (r_prev + r)
            r_prev = r

            acc = np.zeros(ndof)
            acc[free] = -f[free] / mass[free]
            vn = np.where(free, v + 0.5 * dt * acc, self.vpres)
            v = np.where(free, v + dt * acc, self.vpres)
            ke = 0.5 * float(np.dot(mass, vn * vn))
            if not (np.isfinite(ke) and np.isfinite(r)):
                return NON_FINITE, step, -1

            k = rec_slot[step]
            if k >= 0:
                pm = stress[..., :3].mean(axis=-1)
                dv = stress[..., :3] - pm[..., None]
                q2 = 1.5 * ((dv ** 2).sum(axis=-1) + 2.0 * stress[..., 3] ** 2)
                e_el = float(np.sum(self.wdet[None, :] * (pm * pm / (2 * K) + q2 / (6 * self.G))))
                out[k] = (-r, e_pl, e_el, ke, w_ext, e_hg)
        return OK, nsteps, -1
