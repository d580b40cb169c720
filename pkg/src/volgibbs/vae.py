"""Dense Gaussian VAE written directly in numpy.

Encoder and decoder are ReLU MLPs whose last layer is linear and emits a
mean and a log-variance (clamped to [-12, 6]). Gradients of the negative
single-sample ELBO are derived by hand for this fixed topology.

The networks see standardized data: ``model.standardize`` maps raw vols (bp)
to per-feature z-scores using statistics stored in the model.
"""
from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

LOGVAR_MIN = -12.0
LOGVAR_MAX = 6.0
HIDDEN = (250, 200, 150, 100)
_LOG2PI = math.log(2.0 * math.pi)
_MAGIC = b"VOLGVAE\x00"
_FORMAT_VERSION = 1


class VaeNumericalError(FloatingPointError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, msg, checkpoint=None, history=None):
        super().__init__(msg)
        self.checkpoint = checkpoint
        self.history = history


@dataclass
class MlpLayer:
    W: np.ndarray  # (n_in, n_out)
    b: np.ndarray  # (n_out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"inconsistent layer shapes {self.W.shape} / {self.b.shape}")


class Mlp:
    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError("layer widths do not chain")

    @classmethod
    def build(cls, sizes, rng, init_std, hidden_activation="relu", head_std=None):
        """Normal(0, init_std) weights, zero biases; ``head_std`` overrides the output layer."""
        layers = []
        last = len(sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = hidden_activation if i < last else "identity"
            sd = head_std if (i == last and head_std is not None) else init_std
            layers.append(MlpLayer(rng.normal(0.0, sd, (n_in, n_out)), np.zeros(n_out), act))
        return cls(layers)

    @property
    def n_in(self):
        return self.layers[0].W.shape[0]

    @property
    def n_out(self):
        return self.layers[-1].W.shape[1]

    def forward(self, x):
        """Returns the output and a cache of layer inputs/pre-activations."""
        cache = []
        h = x
        for L in self.layers:
            a = h @ L.W + L.b
            cache.append((h, a))
            h = np.maximum(a, 0.0) if L.activation == "relu" else a
        return h, cache

    def backward(self, cache, grad_out):
        """Gradients [(dW, db), ...] and the gradient w.r.t. the input."""
        grads = [None] * len(self.layers)
        g = grad_out
        for idx in range(len(self.layers) - 1, -1, -1):
            L = self.layers[idx]
            h, a = cache[idx]
            if L.activation == "relu":
                g = g * (a > 0)
            grads[idx] = (h.T @ g, g.sum(axis=0))
            g = g @ L.W.T
        return grads, g

    def params(self):
        for L in self.layers:
            yield L.W
            yield L.b


@dataclass
class TrainConfig:
    epochs: int = 50000
    learning_rate: float = 1e-6
    batch_size: int = 256
    full_batch_max: int = 1024
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_std: float = math.sqrt(1.0 / 30.0)
    # Output-layer init; None keeps init_std. With sqrt(1/30) and wide layers the
    # log-variance heads start far outside the clamp, where their gradient is zero.
    head_std: float = None
    seed: int = 0
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate < 0 or self.batch_size <= 0:
            raise ValueError("epochs, learning_rate must be >= 0 and batch_size > 0")


class VaeModel:
    def __init__(self, encoder: Mlp, decoder: Mlp, mean=None, scale=None, config=None):
        self.encoder = encoder
        self.decoder = decoder
        self.latent_dim = encoder.n_out // 2
        self.data_dim = encoder.n_in
        if encoder.n_out != 2 * self.latent_dim or decoder.n_in != self.latent_dim \
                or decoder.n_out != 2 * self.data_dim:
            raise ValueError("encoder/decoder dims inconsistent")
        self.mean = np.zeros(self.data_dim) if mean is None else np.asarray(mean, dtype=float)
        self.scale = np.ones(self.data_dim) if scale is None else np.asarray(scale, dtype=float)
        self.config = dict(config or {})

    @classmethod
    def create(cls, data_dim, latent_dim=10, hidden=HIDDEN, seed=0, init_std=math.sqrt(1.0 / 30.0),
               activation="relu", head_std=None):
        rng = np.random.default_rng(seed)
        enc = Mlp.build([data_dim, *hidden, 2 * latent_dim], rng, init_std, activation, head_std)
        dec = Mlp.build([latent_dim, *hidden[::-1], 2 * data_dim], rng, init_std, activation, head_std)
        return cls(enc, dec, config={"hidden": list(hidden), "activation": activation})

    def params(self):
        return list(self.encoder.params()) + list(self.decoder.params())

    def copy(self):
        return copy.deepcopy(self)

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def destandardize(self, u):
        return np.asarray(u, dtype=float) * self.scale + self.mean

    def fit_standardization(self, data):
        data = np.asarray(data, dtype=float)
        self.mean = data.mean(axis=0)
        sd = data.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)


def _split(out, d):
    raw_lv = out[..., d:]
    return out[..., :d], np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX), raw_lv


def _check_dim(x, n, what):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"{what} has length {x.shape[-1]}, expected {n}")
    return x


def encode(model: VaeModel, x):
    """(mu_z, var_z) for network-space input ``x`` of shape (k,) or (n, k)."""
    x = _check_dim(x, model.data_dim, "x")
    out, _ = model.encoder.forward(x)
    mu, lv, _ = _split(out, model.latent_dim)
    return mu, np.exp(lv)


def decode(model: VaeModel, z):
    """(mu_x, var_x) in network space."""
    z = _check_dim(z, model.latent_dim, "z")
    out, _ = model.decoder.forward(z)
    mu, lv, _ = _split(out, model.data_dim)
    return mu, np.exp(lv)


def reparameterized_sample(mu, var, eps):
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    return np.asarray(mu, dtype=float) + np.sqrt(var) * eps


def kl_standard_normal(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=-1)


def gaussian_loglik(x, mu, logvar):
    return -0.5 * np.sum(_LOG2PI + logvar + (x - mu) ** 2 * np.exp(-logvar), axis=-1)


def _forward(model, x, eps):
    d = model.latent_dim
    eout, ecache = model.encoder.forward(x)
    mu_z, lv_z, raw_z = _split(eout, d)
    sd_z = np.exp(0.5 * lv_z)
    z = mu_z + sd_z * eps
    dout, dcache = model.decoder.forward(z)
    mu_x, lv_x, raw_x = _split(dout, model.data_dim)
    recon = gaussian_loglik(x, mu_x, lv_x)
    kl = kl_standard_normal(mu_z, lv_z)
    return dict(ecache=ecache, dcache=dcache, mu_z=mu_z, lv_z=lv_z, raw_z=raw_z, sd_z=sd_z, z=z,
                mu_x=mu_x, lv_x=lv_x, raw_x=raw_x, recon=recon, kl=kl)


def elbo(model: VaeModel, x, eps):
    """Single-sample ELBO: returns (elbo, reconstruction, kl), averaged over rows for 2-d ``x``."""
    x = _check_dim(x, model.data_dim, "x")
    eps = np.asarray(eps, dtype=float)
    with np.errstate(all="ignore"):
        f = _forward(model, np.atleast_2d(x), np.atleast_2d(eps))
    recon, kl = f["recon"].mean(), f["kl"].mean()
    if not (np.isfinite(recon) and np.isfinite(kl)):
        raise VaeNumericalError("non-finite ELBO term")
    return recon - kl, recon, kl


def _clamp_mask(raw):
    return ((raw > LOGVAR_MIN) & (raw < LOGVAR_MAX)).astype(float)


def backward(model: VaeModel, x, eps):
    """Gradients of the mean negative ELBO, ordered as ``model.params()``.

    Also returns ``(elbo, recon, kl)`` from the same forward pass.
    """
    x = np.atleast_2d(_check_dim(x, model.data_dim, "x"))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    n = x.shape[0]
    f = _forward(model, x, eps)

    # decoder head: -log N(x; mu, exp(lv))
    inv_var = np.exp(-f["lv_x"])
    resid = x - f["mu_x"]
    g_mu_x = -resid * inv_var
    g_lv_x = 0.5 * (1.0 - resid * resid * inv_var) * _clamp_mask(f["raw_x"])
    dgrads, g_z = model.decoder.backward(f["dcache"], np.hstack([g_mu_x, g_lv_x]) / n)

    # z = mu + exp(lv / 2) * eps, plus the KL term
    g_mu_z = g_z + f["mu_z"] / n
    g_lv_z = (g_z * eps * 0.5 * f["sd_z"] + 0.5 * (np.exp(f["lv_z"]) - 1.0) / n) * _clamp_mask(f["raw_z"])
    egrads, _ = model.encoder.backward(f["ecache"], np.hstack([g_mu_z, g_lv_z]))

    grads = [g for pair in egrads + dgrads for g in pair]
    recon, kl = f["recon"].mean(), f["kl"].mean()
    return grads, (recon - kl, recon, kl)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(data, config: TrainConfig, model: VaeModel = None, latent_dim=10, hidden=HIDDEN,
          standardize=True, callback=None):
    """Adam on the negative ELBO. Returns ``(model, history)``.

    ``history`` is an (epochs, 3) array of per-epoch mean (elbo, recon, kl)
    over the batches seen that epoch, evaluated at the pre-update weights.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("dataset must be a nonempty 2-d array")
    if model is None:
        model = VaeModel.create(data.shape[1], latent_dim, hidden, config.seed, config.init_std,
                                head_std=config.head_std)
    if standardize:
        model.fit_standardization(data)
    model.config["train"] = asdict(config)
    X = model.standardize(data)
    n = X.shape[0]
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(model.params(), config.learning_rate, config.beta1, config.beta2, config.eps)
    bs = n if n <= config.full_batch_max else config.batch_size
    history = np.zeros((config.epochs, 3))
    checkpoint = model.copy()
    for ep in range(config.epochs):
        order = np.arange(n) if bs == n else rng.permutation(n)
        acc = np.zeros(3)
        n_batches = 0
        for start in range(0, n, bs):
            xb = X[order[start:start + bs]]
            eps = rng.standard_normal((xb.shape[0], model.latent_dim))
            with np.errstate(all="ignore"):
                grads, terms = backward(model, xb, eps)
            if not all(np.isfinite(t) for t in terms) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(f"non-finite loss at epoch {ep}", checkpoint, history[:ep])
            opt.step(grads)
            acc += terms
            n_batches += 1
        history[ep] = acc / n_batches
        if config.checkpoint_every and (ep + 1) % config.checkpoint_every == 0:
            checkpoint = model.copy()
        if callback is not None:
            callback(ep, history[ep], model)
    return model, history


def latent_activity(model: VaeModel, data, standardized=False):
    """A_u: variance across the dataset of the encoder mean of each unit."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 2:
        raise ValueError("need at least 2 data points")
    X = data if standardized else model.standardize(data)
    mu, _ = encode(model, X)
    return mu.var(axis=0)


def active_units(activity, threshold=0.1):
    return int(np.sum(np.asarray(activity) >= threshold))


# ------------------------------------------------------------------ file I/O

def _layer_meta(mlp):
    return [{"shape": list(L.W.shape), "activation": L.activation} for L in mlp.layers]


def save_model(model: VaeModel, path):
    """Versioned container: magic, u32 header length, JSON header, f8 LE arrays."""
    header = {"format_version": _FORMAT_VERSION, "latent_dim": model.latent_dim,
              "data_dim": model.data_dim, "encoder": _layer_meta(model.encoder),
              "decoder": _layer_meta(model.decoder), "config": model.config}
    hdr = json.dumps(header, sort_keys=True).encode()
    arrays = [model.mean, model.scale] + model.params()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hdr)))
        fh.write(hdr)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> VaeModel:
    blob = Path(path).read_bytes()
    if not blob.startswith(_MAGIC):
        raise ValueError(f"{path}: not a model file")
    pos = len(_MAGIC)
    (n_hdr,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    header = json.loads(blob[pos:pos + n_hdr])
    pos += n_hdr
    if header["format_version"] != _FORMAT_VERSION:
        raise ValueError(f"unsupported model format {header['format_version']}")

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(float).reshape(shape)
        pos += 8 * count
        return a

    k = header["data_dim"]
    mean, scale = take((k,)), take((k,))

    def mlp(meta):
        layers = []
        for m in meta:
            W = take(tuple(m["shape"]))
            b = take((m["shape"][1],))
            layers.append(MlpLayer(W, b, m["activation"]))
        return Mlp(layers)

    enc = mlp(header["encoder"])
    dec = mlp(header["decoder"])
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes in model file")
    return VaeModel(enc, dec, mean, scale, header["config"])


def write_loss_history(history, path):
    with open(path, "w") as fh:
        fh.write("epoch,elbo,recon,kl\n")
        for i, (e, r, k) in enumerate(np.asarray(history)):
            fh.write(f"{i},{float(e)!r},{float(r)!r},{float(k)!r}\n")


def smoothed(values, window=100):
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
