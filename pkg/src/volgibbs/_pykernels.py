"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used
when the extension is not built or ``VOLGIBBS_PURE_PYTHON`` is set.
"""
import numpy as np

OK = 0
BAD_SHIFTED_RATE = 1
BAD_XHAT = 2


def normal_vol(alpha, beta, nu, rho, shift, forward, strike, tau, atm_eps, want_deriv):
    """Shifted-SABR normal vol and, optionally, its partial in the forward.

    All array arguments must be 1-d float64 of equal length. Returns
    ``(sigma, dsigma_dF, status)``; ``dsigma_dF`` is None unless requested.
    """
    a, be, v, r, b = alpha, beta, nu, rho, shift
    F, K, T = forward, strike, tau
    with np.errstate(all="ignore"):
        fb = F + b
        kb = K + b
        status = np.where((fb > 0) & (kb > 0), OK, BAD_SHIFTED_RATE).astype(np.int8)
        diff = F - K
        atm = np.abs(diff) <= atm_eps
        c = (2.0 - 3.0 * r * r) * v * v / 24.0

        # ATM branch
        fb_bm1 = fb ** (be - 1.0)
        g0 = (be * be - 2.0 * be) / 24.0 * fb_bm1 * fb_bm1 * a * a
        h0 = 0.25 * r * v * a * be * fb_bm1
        sig0 = a * fb ** be * (1.0 + (g0 + h0 + c) * T)

        # general branch
        u = np.log1p(diff / kb)
        one_m = 1.0 - be
        y = np.where(be == 1.0, u / a,
                     np.where(be == 0.0, diff / a,
                              kb ** one_m * np.expm1(one_m * u) / (a * np.where(one_m == 0, 1.0, one_m))))
        zeta = v * y
        disc = 1.0 - 2.0 * r * zeta + zeta * zeta
        s = np.sqrt(disc)
        # x(zeta) = log((s + zeta - r) / (1 - r)) = -log((s - zeta + r) / (1 + r));
        # the second form avoids cancellation for zeta < 0
        w = zeta * (zeta - 2.0 * r) / (s + 1.0)  # s - 1
        neg = zeta < 0.0
        q = np.where(neg, (w - zeta) / (1.0 + r), (w + zeta) / (1.0 - r))
        lg = np.where(neg, -np.log1p(q), np.log1p(q))
        ratio = np.where(zeta == 0.0, 1.0, lg / np.where(zeta == 0.0, 1.0, zeta))
        xhat = y * ratio
        A = diff / xhat
        fk = (fb * kb) ** (be - 1.0)
        g = (be * be - 2.0 * be) / 24.0 * fk * a * a
        h = 0.25 * r * v * a * be * np.sqrt(fk)
        sig1 = A * (1.0 + (g + h + c) * T)

        bad = (~atm) & ((disc <= 0) | (q <= -1.0) | (xhat == 0) | ~np.isfinite(xhat))
        status = np.where((status == OK) & bad, BAD_XHAT, status).astype(np.int8)
        sigma = np.where(atm, sig0, sig1)

        dsig = None
        if want_deriv:
            kappa0 = 0.5 * (be / fb - r * v / a * fb ** (-be))
            tau0 = a * (be - 1.0) * fb_bm1 * (g0 + 0.125 * r * v * a * be * fb_bm1) * T
            kappa1 = 1.0 / diff - fb ** (-be) / (a * xhat * s)
            tau1 = A / fb * (be - 1.0) * (g + 0.5 * h) * T
            dsig = np.where(atm, sigma * kappa0 + tau0, sigma * kappa1 + tau1)
    return sigma, dsig, status


def sabr_paths(F0, alpha, nu, rho, beta, shift, floor_eps, dt, active_steps,
               z1, z2, record_steps, track_node):
    """Euler scheme for (F, sigma) over many nodes driven by shared normals.

    ``z1``/``z2`` are (n_paths, n_steps) independent standard normals; node
    ``n`` uses ``rho[n] * z1 + sqrt(1 - rho[n]**2) * z2`` for its vol driver.
    Nodes stop moving after ``active_steps[n]`` steps. ``F + shift`` is
    absorbed at ``floor_eps``. Returns F at ``record_steps`` for all nodes,
    shape (n_paths, n_record, n_nodes), and the full path of ``track_node``,
    shape (n_paths, n_steps + 1).
    """
    n_paths, n_steps = z1.shape
    n_nodes = F0.shape[0]
    sq = np.sqrt(dt)
    rbar = np.sqrt(1.0 - rho * rho)
    vol_drift = -0.5 * nu * nu * dt
    F = np.broadcast_to(F0, (n_paths, n_nodes)).copy()
    sig = np.broadcast_to(alpha, (n_paths, n_nodes)).copy()
    rec = np.empty((n_paths, len(record_steps), n_nodes))
    track = np.empty((n_paths, n_steps + 1))
    track[:, 0] = F[:, track_node]
    ri = 0
    while ri < len(record_steps) and record_steps[ri] == 0:
        rec[:, ri] = F
        ri += 1
    floor = -shift + floor_eps
    for s in range(n_steps):
        live = (s < active_steps)[None, :] & (F + shift > floor_eps)
        dz1 = z1[:, s:s + 1]
        dz2 = rho * dz1 + rbar * z2[:, s:s + 1]
        step = sig * np.abs(F + shift) ** beta * sq * dz1
        F_new = np.maximum(F + step, floor)
        sig_new = sig * np.exp(nu * sq * dz2 + vol_drift)
        F = np.where(live, F_new, F)
        sig = np.where(live, sig_new, sig)
        track[:, s + 1] = F[:, track_node]
        while ri < len(record_steps) and record_steps[ri] == s + 1:
            rec[:, ri] = F
            ri += 1
    return rec, track
