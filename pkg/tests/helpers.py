"""Shared oracles for the test suite."""
import numpy as np

from volgibbs.vae import Mlp, MlpLayer, VaeModel, backward, elbo


def tiny_vae(seed, data_dim=5, latent_dim=2, hidden=(6, 4)):
    # moderate weights keep every log-variance inside the clamp; random biases
    # keep pre-activations off the ReLU kink (zero biases behind a dead layer sit on it)
    model = VaeModel.create(data_dim, latent_dim, hidden, seed=seed, init_std=0.4, head_std=0.2)
    rng = np.random.default_rng([seed, 3])
    for L in model.encoder.layers + model.decoder.layers:
        L.b[:] = rng.normal(0.0, 0.1, L.b.shape)
    return model


def fd_relative_errors(model, x, eps, h=1e-5):
    """Analytic gradient of -ELBO vs central differences, per parameter entry.

    The denominator is floored at 1e-6 of the largest gradient entry; below
    that, central differences are dominated by roundoff.
    """
    grads, _ = backward(model, x, eps)
    floor = 1e-6 * max(np.abs(g).max() for g in grads)
    errs = []
    for p, g in zip(model.params(), grads):
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = -elbo(model, x, eps)[0]
            flat[i] = keep - h
            dn = -elbo(model, x, eps)[0]
            flat[i] = keep
            fd = (up - dn) / (2 * h)
            errs.append(abs(fd - gf[i]) / max(abs(fd), abs(gf[i]), floor))
    return np.array(errs)


def two_gaussians(n, dim=4, seed=0, sep=3.0):
    rng = np.random.default_rng(seed)
    centers = np.stack([np.full(dim, -sep / 2), np.full(dim, sep / 2)])
    lab = rng.integers(0, 2, n)
    return centers[lab] + 0.5 * rng.standard_normal((n, dim))


def linear_gaussian_vae(data_dim, latent_dim, noise_var, seed=0, offset=0.0):
    """Factor-analysis model whose encoder is the exact posterior.

    Loadings have orthogonal columns, so with isotropic noise the posterior
    covariance is diagonal and the pseudo-Gibbs sampler is a true Gibbs
    sampler. Returns (model, mean, loadings).
    """
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((data_dim, latent_dim)))
    W = q * rng.uniform(1.0, 3.0, latent_dim)
    b = offset + rng.normal(0.0, 1.0, data_dim)
    prec = 1.0 + (W * W).sum(axis=0) / noise_var  # diagonal of I + W'W / s2
    post_var = 1.0 / prec
    M = (W / noise_var) * post_var  # (k, d): mu_z = (x - b) @ M
    enc = Mlp([MlpLayer(np.hstack([M, np.zeros_like(M)]),
                        np.concatenate([-b @ M, np.log(post_var)]), "identity")])
    dec = Mlp([MlpLayer(np.hstack([W.T, np.zeros((latent_dim, data_dim))]),
                        np.concatenate([b, np.full(data_dim, np.log(noise_var))]), "identity")])
    return VaeModel(enc, dec), b, W


def gaussian_conditional_mean(mean, cov, x, observed):
    o, m = observed, ~observed
    return mean[m] + cov[np.ix_(m, o)] @ np.linalg.solve(cov[np.ix_(o, o)], x[o] - mean[o])


def ar1_chain(n, phi, seed=0, sd=1.0):
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sd, n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi * phi)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x
