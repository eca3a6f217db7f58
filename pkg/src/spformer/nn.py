"""Neural building blocks and the four assembled architectures.

Everything here is built from the autodiff primitives, so any forward pass
is differentiable to the depth the physics residuals need. Parameters are
float64 ``Tensor``s with ``requires_grad=True``, registered in construction
order; ``model.parameters()`` returns them as a flat list whose order is
the contract for flattening, checkpoints and the optimizer.

Architectures:

- ``mlp``        plain feed-forward stack applied per position,
- ``pformer``    linear spatio-temporal mixer, one encoder layer
                 (self-attention + feed-forward), one decoder layer whose
                 attention queries come from the mixer output while keys and
                 values come from the encoder output, then the output MLP,
- ``do_pformer`` decoder-only variant: linear + positional embedding,
                 N decoder layers with self-attention, output MLP,
- ``s_pformer``  same as ``do_pformer`` but the linear embedding is replaced
                 by a frozen random Fourier feature embedding.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ARCHITECTURES = ("mlp", "pformer", "do_pformer", "s_pformer")

# normalized coordinates may overhang [0, 1] slightly: a pseudo-sequence
# started at the top of the time domain extends (k-1)*dt past it
_NORM_SLACK = 1e-2


def _xavier_uniform(rng, d_in, d_out):
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


@dataclass
class ModelConfig:
    """Architecture and extents; ``seed`` fixes every random draw at build.

    ``n_layers`` means decoder blocks for the transformer variants and the
    total number of linear layers for ``mlp``. ``None`` picks the baseline
    default (1 block, 4 linears respectively).
    """

    architecture: str = "s_pformer"
    d_in: int = 2
    d_out: int = 1
    d_emb: int = 32
    d_hidden: int = 512
    d_ff: int = 256
    d_mapping: int = 64
    n_layers: int | None = None
    n_heads: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; "
                f"expected one of {ARCHITECTURES}")
        if self.n_layers is None:
            self.n_layers = 4 if self.architecture == "mlp" else 1
        extents = dict(d_in=self.d_in, d_out=self.d_out, d_emb=self.d_emb,
                       d_hidden=self.d_hidden, d_ff=self.d_ff,
                       d_mapping=self.d_mapping, n_layers=self.n_layers,
                       n_heads=self.n_heads)
        for name, v in extents.items():
            if int(v) != v or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.d_emb % self.n_heads:
            raise ValueError(
                f"d_emb={self.d_emb} not divisible by n_heads={self.n_heads}")
        if self.architecture == "mlp" and self.n_layers < 2:
            raise ValueError("mlp needs at least 2 linear layers")


# -- building blocks ----------------------------------------------------------


class Linear:
    """Dense map with bias. Xavier-uniform weights, zero bias."""

    def __init__(self, d_in, d_out, rng):
        self.w = Tensor(_xavier_uniform(rng, d_in, d_out), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class WaveletActivation:
    """phi(z) = w1*sin(z) + w2*cos(z), one learnable scalar pair per instance."""

    def __init__(self):
        self.w1 = Tensor(1.0, requires_grad=True)
        self.w2 = Tensor(1.0, requires_grad=True)

    def __call__(self, z):
        return ad.add(ad.mul(self.w1, ad.sin(z)), ad.mul(self.w2, ad.cos(z)))

    def parameters(self):
        return [self.w1, self.w2]


class FourierEmbedding:
    """Frozen random projection B followed by sin/cos features and a trained
    linear map 2*d_mapping -> d_emb.

    ``b_seed`` controls only the draw of B, which is excluded from
    ``parameters()`` and therefore never touched by an optimizer.
    """

    def __init__(self, d_in, d_mapping, d_emb, b_seed, rng, sigma2=1.0):
        b_rng = np.random.default_rng(b_seed)
        b = b_rng.normal(0.0, np.sqrt(sigma2), size=(d_mapping, d_in))
        self.b = Tensor(b)
        self._bt = Tensor(b.T.copy())
        self.theta_f = Linear(2 * d_mapping, d_emb, rng)

    def set_projection(self, b):
        """Replace the frozen projection (d_mapping, d_in); for experiments."""
        b = np.asarray(b, dtype=np.float64)
        self.b = Tensor(b)
        self._bt = Tensor(b.T.copy())

    def __call__(self, z):
        proj = ad.mul(ad.matmul(z, self._bt), Tensor(2.0 * np.pi))
        feats = ad.concat([ad.sin(proj), ad.cos(proj)], axis=-1)
        return self.theta_f(feats)

    def parameters(self):
        return self.theta_f.parameters()


class PositionalEmbedding:
    """Affine lift of the raw normalized coordinates, d_in -> d_emb."""

    def __init__(self, d_in, d_emb, rng):
        self.theta_p = Linear(d_in, d_emb, rng)

    def __call__(self, z):
        return self.theta_p(z)

    def parameters(self):
        return self.theta_p.parameters()


class MultiHeadAttention:
    def __init__(self, d_emb, n_heads, rng):
        self.d_emb = d_emb
        self.n_heads = n_heads
        self.d_head = d_emb // n_heads
        self.wq = Linear(d_emb, d_emb, rng)
        self.wk = Linear(d_emb, d_emb, rng)
        self.wv = Linear(d_emb, d_emb, rng)
        self.wo = Linear(d_emb, d_emb, rng)
        self.last_weights = None  # (batch, heads, k_q, k_kv) from latest call

    def _split(self, x):
        b, k, _ = x.shape
        return ad.transpose(
            ad.reshape(x, (b, k, self.n_heads, self.d_head)), 1, 2)

    def __call__(self, q, k, v):
        b, kq, _ = q.shape
        qh = self._split(self.wq(q))
        kh = self._split(self.wk(k))
        vh = self._split(self.wv(v))
        scores = ad.mul(ad.matmul(qh, ad.transpose(kh, -1, -2)),
                        Tensor(1.0 / np.sqrt(self.d_head)))
        attn = ad.softmax(scores, axis=-1)
        self.last_weights = attn.data
        mixed = ad.reshape(ad.transpose(ad.matmul(attn, vh), 1, 2),
                           (b, kq, self.d_emb))
        return self.wo(mixed)

    def parameters(self):
        return (self.wq.parameters() + self.wk.parameters()
                + self.wv.parameters() + self.wo.parameters())


class ThreeLayerMLP:
    """linear -> wavelet -> linear -> wavelet -> linear.

    Used both for the decoder feed-forward (d_emb -> d_ff -> d_ff -> d_emb)
    and the per-position output head (d_emb -> d_hidden -> d_hidden -> d_out).
    """

    def __init__(self, d_in, d_mid, d_out, rng):
        self.lin1 = Linear(d_in, d_mid, rng)
        self.act1 = WaveletActivation()
        self.lin2 = Linear(d_mid, d_mid, rng)
        self.act2 = WaveletActivation()
        self.lin3 = Linear(d_mid, d_out, rng)

    def __call__(self, x):
        return self.lin3(self.act2(self.lin2(self.act1(self.lin1(x)))))

    def parameters(self):
        return (self.lin1.parameters() + self.act1.parameters()
                + self.lin2.parameters() + self.act2.parameters()
                + self.lin3.parameters())


class DecoderLayer:
    """wavelet -> attention -> residual -> wavelet -> feed-forward -> residual.

    With ``context=None`` the attention is self-attention on the activated
    input; otherwise queries come from the activated input and keys/values
    from ``context`` (the cross-attention form used by the encoder-decoder
    baseline). Input and output are both (batch, k, d_emb).
    """

    def __init__(self, d_emb, d_ff, n_heads, rng):
        self.pre_attn = WaveletActivation()
        self.attn = MultiHeadAttention(d_emb, n_heads, rng)
        self.pre_ffn = WaveletActivation()
        self.ffn = ThreeLayerMLP(d_emb, d_ff, d_emb, rng)

    def __call__(self, h, context=None):
        u = self.pre_attn(h)
        kv = u if context is None else context
        s = ad.add(h, self.attn(u, kv, kv))
        v = self.pre_ffn(s)
        return ad.add(s, self.ffn(v))

    def parameters(self):
        return (self.pre_attn.parameters() + self.attn.parameters()
                + self.pre_ffn.parameters() + self.ffn.parameters())


# -- assembled models ---------------------------------------------------------


def _check_sequences(z):
    if z.ndim != 3:
        raise ValueError(f"expected (batch, k, d_in) input, got shape {z.shape}")
    if z.shape[1] == 0:
        raise ValueError("empty pseudo-sequence (k = 0)")


def _check_normalized(z):
    if z.size and (z.data.min() < -_NORM_SLACK
                   or z.data.max() > 1.0 + _NORM_SLACK):
        raise ValueError(
            "embedding input must be normalized to [0, 1] per component "
            f"(got range [{z.data.min():.4g}, {z.data.max():.4g}])")


class _Model:
    """Common plumbing: parameter registry, finiteness guard, call sugar."""

    config: ModelConfig

    def parameters(self):
        return list(self._params)

    def parameter_count(self):
        return sum(p.size for p in self._params)

    def _guard(self, z):
        _check_sequences(z)
        for p in self._params:
            if not np.all(np.isfinite(p.data)):
                raise FloatingPointError(
                    "non-finite model parameter before forward pass")

    def __call__(self, z):
        return self.forward(z)


class MLPPinn(_Model):
    """Per-position feed-forward stack: n_layers linears of width d_hidden
    with a wavelet activation after each hidden layer."""

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        n = config.n_layers
        widths = ([config.d_in] + [config.d_hidden] * (n - 1) + [config.d_out])
        self.layers = [Linear(widths[i], widths[i + 1], rng) for i in range(n)]
        self.acts = [WaveletActivation() for _ in range(n - 1)]
        self._params = []
        for lin, act in zip(self.layers, self.acts):
            self._params += lin.parameters() + act.parameters()
        self._params += self.layers[-1].parameters()

    def forward(self, z):
        z = ad._wrap(z)
        self._guard(z)
        h = z
        for lin, act in zip(self.layers, self.acts):
            h = act(lin(h))
        return self.layers[-1](h)


class _DecoderOnlyBase(_Model):
    """Shared body of the decoder-only variants: embedding is provided by the
    subclass, then N self-attention decoder layers and the output MLP."""

    def _build_body(self, config, rng):
        self.layers = [DecoderLayer(config.d_emb, config.d_ff, config.n_heads, rng)
                       for _ in range(config.n_layers)]
        self.head = ThreeLayerMLP(config.d_emb, config.d_hidden, config.d_out, rng)

    def forward(self, z):
        z = ad._wrap(z)
        self._guard(z)
        h = self.embed(z)
        for layer in self.layers:
            h = layer(h)
        return self.head(h)


class SPformer(_DecoderOnlyBase):
    """Spectral variant: Fourier feature embedding plus positional embedding."""

    def __init__(self, config):
        self.config = config
        b_seed, init_seed = np.random.SeedSequence(config.seed).spawn(2)
        rng = np.random.default_rng(init_seed)
        self.fourier = FourierEmbedding(
            config.d_in, config.d_mapping, config.d_emb, b_seed, rng)
        self.positional = PositionalEmbedding(config.d_in, config.d_emb, rng)
        self._build_body(config, rng)
        self._params = (self.fourier.parameters()
                        + self.positional.parameters())
        for layer in self.layers:
            self._params += layer.parameters()
        self._params += self.head.parameters()

    def embed(self, z):
        z = ad._wrap(z)
        _check_normalized(z)
        return ad.add(self.fourier(z), self.positional(z))


class DOPformer(_DecoderOnlyBase):
    """Decoder-only ablation: the Fourier embedding is a single linear map."""

    def __init__(self, config):
        self.config = config
        # same seed layout as SPformer so the shared trailing draws line up
        _, init_seed = np.random.SeedSequence(config.seed).spawn(2)
        rng = np.random.default_rng(init_seed)
        self.linear_embed = Linear(config.d_in, config.d_emb, rng)
        self.positional = PositionalEmbedding(config.d_in, config.d_emb, rng)
        self._build_body(config, rng)
        self._params = (self.linear_embed.parameters()
                        + self.positional.parameters())
        for layer in self.layers:
            self._params += layer.parameters()
        self._params += self.head.parameters()

    def embed(self, z):
        z = ad._wrap(z)
        _check_normalized(z)
        return ad.add(self.linear_embed(z), self.positional(z))


class Pformer(_Model):
    """Encoder-decoder baseline: linear mixer, one encoder layer with
    self-attention, one decoder layer attending over the encoder output."""

    def __init__(self, config):
        self.config = config
        _, init_seed = np.random.SeedSequence(config.seed).spawn(2)
        rng = np.random.default_rng(init_seed)
        self.mixer = Linear(config.d_in, config.d_emb, rng)
        self.encoder = DecoderLayer(config.d_emb, config.d_ff, config.n_heads, rng)
        self.decoder = DecoderLayer(config.d_emb, config.d_ff, config.n_heads, rng)
        self.head = ThreeLayerMLP(config.d_emb, config.d_hidden, config.d_out, rng)
        self._params = (self.mixer.parameters() + self.encoder.parameters()
                        + self.decoder.parameters() + self.head.parameters())

    def embed(self, z):
        z = ad._wrap(z)
        _check_normalized(z)
        return self.mixer(z)

    def forward(self, z):
        z = ad._wrap(z)
        self._guard(z)
        x = self.embed(z)
        enc = self.encoder(x)
        dec = self.decoder(x, context=enc)
        return self.head(dec)


_BUILDERS = {
    "mlp": MLPPinn,
    "pformer": Pformer,
    "do_pformer": DOPformer,
    "s_pformer": SPformer,
}


def build_model(config):
    return _BUILDERS[config.architecture](config)


def parameter_count(config):
    """Learnable scalars for a config (frozen Fourier projection excluded)."""
    return build_model(config).parameter_count()


def flop_estimate(config, k):
    """Multiply-accumulate count of one forward pass over one k-position
    pseudo-sequence.

    Counted: every dense map (k*d_in*d_out per linear) and the two attention
    contractions (scores and mixing, k*k*d_emb each). Activations, softmax
    normalizers, residual adds and biases are dropped; they are linear in the
    activation count while the matmuls are quadratic in width.
    """
    c = config
    linear = lambda di, do: k * di * do
    attention = 4 * linear(c.d_emb, c.d_emb) + 2 * k * k * c.d_emb
    ffn = (linear(c.d_emb, c.d_ff) + linear(c.d_ff, c.d_ff)
           + linear(c.d_ff, c.d_emb))
    head = (linear(c.d_emb, c.d_hidden) + linear(c.d_hidden, c.d_hidden)
            + linear(c.d_hidden, c.d_out))
    block = attention + ffn
    if c.architecture == "mlp":
        n = c.n_layers
        return (linear(c.d_in, c.d_hidden)
                + (n - 2) * linear(c.d_hidden, c.d_hidden)
                + linear(c.d_hidden, c.d_out))
    if c.architecture == "pformer":
        return linear(c.d_in, c.d_emb) + 2 * block + head
    if c.architecture == "do_pformer":
        embed = 2 * linear(c.d_in, c.d_emb)
        return embed + c.n_layers * block + head
    # s_pformer
    embed = (linear(c.d_in, c.d_mapping) + linear(2 * c.d_mapping, c.d_emb)
             + linear(c.d_in, c.d_emb))
    return embed + c.n_layers * block + head


# -- parameter vector and checkpoints ----------------------------------------


def get_flat_params(model):
    """All learnable parameters as one float64 vector, registration order."""
    return np.concatenate([p.data.ravel() for p in model.parameters()])


def set_flat_params(model, vec):
    vec = np.asarray(vec, dtype=np.float64)
    total = model.parameter_count()
    if vec.shape != (total,):
        raise ValueError(f"parameter vector has shape {vec.shape}, "
                         f"model needs ({total},)")
    i = 0
    for p in model.parameters():
        n = p.data.size
        p.data = vec[i:i + n].reshape(p.data.shape).copy()
        p._sin = p._cos = None  # drop any memoized nodes of the old values
        i += n


def save_checkpoint(model, path, extra=None):
    """Write config + parameter vector; round-trips bit-exactly.

    ``extra`` is an optional JSON-serializable dict for run metadata the
    model itself does not carry (e.g. dataset-derived normalization
    bounds); it rides along in the same archive.
    """
    arrays = {"config": np.asarray(json.dumps(asdict(model.config))),
              "params": get_flat_params(model)}
    if extra is not None:
        arrays["extra"] = np.asarray(json.dumps(extra))
    np.savez(path, **arrays)


def load_checkpoint(path, with_extra=False):
    with np.load(path, allow_pickle=False) as z:
        config = ModelConfig(**json.loads(str(z["config"])))
        params = np.asarray(z["params"], dtype=np.float64)
        extra = json.loads(str(z["extra"])) if "extra" in z else None
    model = build_model(config)
    set_flat_params(model, params)
    if with_extra:
        return model, extra
    return model
