"""Implicit multi-spectral attenuation field and colour-coding network.

Everything here has an explicit reverse pass; there is no autodiff
framework underneath.  Forward functions return a ``cache`` that the
matching ``*_backward`` consumes.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

# ---------------------------------------------------------------------------
# activations: (forward(z), derivative expressed through y = forward(z));
# forward may overwrite z
# ---------------------------------------------------------------------------


def _softplus(z):
    pos = np.maximum(z, 0)
    np.abs(z, out=z)
    np.negative(z, out=z)
    np.exp(z, out=z)
    np.log1p(z, out=z)
    z += pos
    return z


def _softplus_grad(y):
    # sigmoid(z) == 1 - exp(-softplus(z))
    out = np.negative(y)
    np.expm1(out, out=out)
    np.negative(out, out=out)
    return out


ACTIVATIONS = {
    "softplus": (_softplus, _softplus_grad),
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "relu": (lambda z: np.maximum(z, 0, out=z), lambda y: (y > 0).astype(y.dtype)),
    "sigmoid": (expit, lambda y: y * (1.0 - y)),
    "identity": (lambda z: z, np.ones_like),
}


# ---------------------------------------------------------------------------
# frequency encoder
# ---------------------------------------------------------------------------

@dataclass
class FreqEncoder:
    """``p -> [p, w_l sin(2^l pi p), w_l cos(2^l pi p)]`` for bands ``l < n_bands``."""

    n_bands: int = 8
    include_input: bool = True
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.ones(self.n_bands)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.n_bands,) or np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("band weights must be n_bands values in [0, 1]")

    @property
    def out_dim(self) -> int:
        return 3 * (int(self.include_input) + 2 * self.n_bands)

    @property
    def freqs(self) -> np.ndarray:
        return (2.0 ** np.arange(self.n_bands)) * math.pi


def encode(enc: FreqEncoder, p, weights=None):
    """Encode points (..., 3); returns ``(features, cache)``."""
    p = np.asarray(p)
    w = enc.weights if weights is None else np.asarray(weights, dtype=float)
    lead = p.shape[:-1]
    x = p.reshape(-1, 3)
    dt = x.dtype
    arg = x[:, None, :] * enc.freqs.astype(dt)[None, :, None]  # (M, L, 3)
    sn, cs = np.sin(arg), np.cos(arg)
    wl = w.astype(dt)[None, :, None]
    bands = np.stack([wl * sn, wl * cs], axis=2).reshape(len(x), -1)  # (M, L*2*3)
    feats = np.concatenate([x, bands], axis=1) if enc.include_input else bands
    return feats.reshape(lead + (feats.shape[-1],)), (sn, cs, w, lead)


def encode_backward(enc: FreqEncoder, cache, d_feats):
    sn, cs, w, lead = cache
    m = sn.shape[0]
    d = d_feats.reshape(m, -1)
    off = 3 if enc.include_input else 0
    db = d[:, off:].reshape(m, enc.n_bands, 2, 3)
    scale = (w * enc.freqs).astype(d.dtype)[None, :, None]
    dx = np.sum(scale * (cs * db[:, :, 0, :] - sn * db[:, :, 1, :]), axis=1)
    if enc.include_input:
        dx = dx + d[:, :3]
    return dx.reshape(lead + (3,))


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

class Mlp:
    """Dense network ``x -> act(... act(x W0 + b0) ...) W_last + b_last -> out_act``."""

    def __init__(self, sizes, hidden="softplus", output="identity", rng=None,
                 dtype=np.float32, out_bias: float = 0.0):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.hidden = hidden
        self.output = output
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
            self.biases.append(rng.uniform(-bound, bound, fan_out).astype(dtype))
        self.biases[-1][:] = out_bias

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def astype(self, dtype) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes, clone.hidden, clone.output = list(self.sizes), self.hidden, self.output
        clone.weights = [w.astype(dtype) for w in self.weights]
        clone.biases = [b.astype(dtype) for b in self.biases]
        return clone

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        acts = [x]
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w
            z += b
            h = ACTIVATIONS[self.output if i == n - 1 else self.hidden][0](z)
            acts.append(h)
        return h, acts

    def backward(self, cache, d_out, need_input_grad: bool = False):
        """Returns ``(param_grads, d_input)``; ``param_grads`` matches :meth:`params` order."""
        acts = cache
        n = len(self.weights)
        grads = [None] * (2 * n)
        g = np.asarray(d_out, dtype=self.dtype)
        for i in range(n - 1, -1, -1):
            deriv = ACTIVATIONS[self.output if i == n - 1 else self.hidden][1]
            g = g * deriv(acts[i + 1])
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or need_input_grad:
                g = g @ self.weights[i].T
        return grads, (g if need_input_grad else None)


# ---------------------------------------------------------------------------
# field and colour networks
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    n_spectral: int = 3
    n_bands: int = 8
    include_input: bool = True
    field_hidden: int = 4
    field_width: int = 128
    color_hidden: int = 2
    color_width: int = 32
    activation: str = "softplus"
    field_out_bias: float = -2.0

    def to_json(self) -> dict:
        return asdict(self)


class FieldNet:
    """Position -> n-channel attenuation, non-negative through a softplus output."""

    def __init__(self, encoder: FreqEncoder, mlp: Mlp):
        if mlp.sizes[0] != encoder.out_dim:
            raise ValueError("MLP input size must match the encoder output")
        if mlp.output != "softplus":
            raise ValueError("field output must be softplus so attenuation stays non-negative")
        self.encoder = encoder
        self.mlp = mlp

    @classmethod
    def build(cls, cfg: ModelConfig, rng=None, dtype=np.float32) -> "FieldNet":
        enc = FreqEncoder(cfg.n_bands, cfg.include_input)
        sizes = [enc.out_dim] + [cfg.field_width] * cfg.field_hidden + [cfg.n_spectral]
        return cls(enc, Mlp(sizes, cfg.activation, "softplus", rng, dtype, cfg.field_out_bias))

    @property
    def n_spectral(self) -> int:
        return self.mlp.sizes[-1]

    def forward(self, p, band_weights=None):
        feats, ecache = encode(self.encoder, np.asarray(p, dtype=self.mlp.dtype), band_weights)
        lead = feats.shape[:-1]
        mu, mcache = self.mlp.forward(feats.reshape(-1, feats.shape[-1]))
        return mu.reshape(lead + (mu.shape[-1],)), (ecache, mcache, lead)

    def backward(self, cache, d_mu, need_input_grad: bool = False):
        ecache, mcache, lead = cache
        grads, d_feats = self.mlp.backward(mcache, d_mu.reshape(-1, d_mu.shape[-1]), need_input_grad)
        dp = encode_backward(self.encoder, ecache, d_feats) if need_input_grad else None
        return grads, (dp.reshape(lead + (3,)) if dp is not None else None)


class ColorNet:
    """Per-channel transmittance -> RGB in [0, 1] (sigmoid output)."""

    def __init__(self, mlp: Mlp):
        if mlp.sizes[-1] != 3 or mlp.output != "sigmoid":
            raise ValueError("colour network must map to 3 sigmoid outputs")
        self.mlp = mlp

    @classmethod
    def build(cls, cfg: ModelConfig, rng=None, dtype=np.float32) -> "ColorNet":
        sizes = [cfg.n_spectral] + [cfg.color_width] * cfg.color_hidden + [3]
        return cls(Mlp(sizes, cfg.activation, "sigmoid", rng, dtype))

    @property
    def n_spectral(self) -> int:
        return self.mlp.sizes[0]

    def forward(self, t):
        t = np.asarray(t, dtype=self.mlp.dtype)
        lead = t.shape[:-1]
        rgb, cache = self.mlp.forward(t.reshape(-1, t.shape[-1]))
        return rgb.reshape(lead + (3,)), (cache, lead)

    def backward(self, cache, d_rgb):
        mcache, lead = cache
        grads, dt = self.mlp.backward(mcache, d_rgb.reshape(-1, 3), need_input_grad=True)
        return grads, dt.reshape(lead + (dt.shape[-1],))


def field_forward(net: FieldNet, p, band_weights=None) -> np.ndarray:
    return net.forward(p, band_weights)[0]


def color_forward(net: ColorNet, t) -> np.ndarray:
    return net.forward(t)[0]


def accumulate(mu_samples, deltas) -> np.ndarray:
    """Per-channel ``sum_i mu_i * delta_i`` over the sample axis (second to last of ``mu``)."""
    mu = np.asarray(mu_samples)
    d = np.asarray(deltas)
    if np.any(d < 0):
        raise ValueError("sample spacings must be non-negative")
    return np.sum(mu * d[..., None], axis=-2)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

@dataclass
class RenderConfig:
    samples_per_ray: int = 64
    stratified: bool = True
    incident: tuple | None = None  # per-channel incident intensity, default all ones

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")

    def incident_for(self, n: int) -> np.ndarray:
        if self.incident is None:
            return np.ones(n)
        inc = np.asarray(self.incident, dtype=float)
        if inc.shape != (n,):
            raise ValueError("incident intensity must have one value per channel")
        return inc

    def to_json(self) -> dict:
        d = asdict(self)
        d["incident"] = None if self.incident is None else list(self.incident)
        return d


def render_rays(fnet: FieldNet, cnet: ColorNet, cfg: RenderConfig, origins, dirs, tn, tf,
                jitter=None, band_weights=None):
    """Render a batch of clipped rays.

    Sample ``i`` of ``N`` sits at ``t = tn + (i + xi) / N * (tf - tn)`` with
    spacing ``delta = (tf - tn) / N``; ``xi`` is ``jitter`` (B, N) when
    stratified, else 0.5 (midpoint rule).  Returns ``(rgb, cache)``.
    """
    dt = fnet.mlp.dtype
    n = cfg.samples_per_ray
    origins = np.asarray(origins, dtype=dt)
    dirs = np.asarray(dirs, dtype=dt)
    tn = np.asarray(tn, dtype=dt)
    tf = np.asarray(tf, dtype=dt)
    b = len(origins)
    if jitter is None:
        xi = np.full((b, n), 0.5, dtype=dt)
    else:
        xi = np.asarray(jitter, dtype=dt)
    frac = (np.arange(n, dtype=dt)[None, :] + xi) / n  # (B, N)
    span = tf - tn
    t = tn[:, None] + frac * span[:, None]
    delta = span / n
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    mu, fcache = fnet.forward(pts.reshape(-1, 3), band_weights)
    mu = mu.reshape(b, n, -1)
    deltas = np.broadcast_to(delta[:, None], (b, n))
    acc = accumulate(mu, deltas)
    inc = cfg.incident_for(mu.shape[-1]).astype(dt)
    trans = inc * np.exp(-acc)
    rgb, ccache = cnet.forward(trans)
    cache = dict(fcache=fcache, ccache=ccache, mu=mu, trans=trans, t=t, frac=frac,
                 delta=delta, dirs=dirs, acc=acc)
    return rgb, cache


def render_rays_backward(fnet: FieldNet, cnet: ColorNet, cache, d_rgb, need_ray_grads: bool = False):
    """Reverse pass of :func:`render_rays`.

    Returns ``(field_grads, color_grads, ray_grads)``; ``ray_grads`` is
    ``(d_origins, d_dirs, d_tn, d_tf)`` or ``None``.
    """
    cgrads, d_trans = cnet.backward(cache["ccache"], d_rgb)
    d_acc = -cache["trans"] * d_trans  # (B, C)
    mu, delta = cache["mu"], cache["delta"]
    b, n, _ = mu.shape
    d_mu = np.broadcast_to(d_acc[:, None, :] * delta[:, None, None], mu.shape)
    fgrads, d_pts = fnet.backward(cache["fcache"], d_mu.reshape(b * n, -1), need_ray_grads)
    if not need_ray_grads:
        return fgrads, cgrads, None
    d_delta = np.sum(mu.sum(axis=1) * d_acc, axis=1)  # (B,)
    d_pts = d_pts.reshape(b, n, 3)
    t, frac, dirs = cache["t"], cache["frac"], cache["dirs"]
    d_o = d_pts.sum(axis=1)
    d_d = np.sum(d_pts * t[..., None], axis=1)
    d_t = np.sum(d_pts * dirs[:, None, :], axis=2)  # (B, N)
    d_tn = np.sum(d_t * (1.0 - frac), axis=1) - d_delta / n
    d_tf = np.sum(d_t * frac, axis=1) + d_delta / n
    return fgrads, cgrads, (d_o, d_d, d_tn, d_tf)


def render_ray(fnet: FieldNet, cnet: ColorNet, cfg: RenderConfig, ray, jitter=None,
               band_weights=None) -> np.ndarray:
    """RGB for one clipped :class:`~xrayfield.geometry.Ray`.

    A miss (``None``, or an empty interval) renders the background colour.
    """
    if ray is None:
        return background_color(cnet, cfg)
    if not (ray.t_near <= ray.t_far < math.inf):
        raise ValueError("ray must be clipped (t_near <= t_far < inf)")
    rgb, _ = render_rays(fnet, cnet, cfg, ray.origin[None], ray.direction[None],
                         np.array([ray.t_near]), np.array([ray.t_far]),
                         None if jitter is None else np.asarray(jitter)[None], band_weights)
    return rgb[0]


def background_color(cnet: ColorNet, cfg: RenderConfig) -> np.ndarray:
    return color_forward(cnet, cfg.incident_for(cnet.n_spectral))
