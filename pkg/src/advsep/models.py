"""The mask-predicting U-Net separator and the configurable discriminators.

The separator maps the mixture magnitude spectrogram (frequency bins as
channels, convolution along time) through a 4-stage encoder of ResNet blocks
with stride-2 downsamplers, a bottleneck with single-head self-attention,
and a mirrored decoder with linear-interpolation upsamplers and skip
connections. A softmax across the source axis yields masks, the masked
complex spectrogram is inverted back to waveforms.

Discriminators are conv stacks ending in a projection conv and a final
linear layer mapping the remaining extent to one scalar. Waveform
discriminators use unpadded convolutions (kernel 4, stride 3); the
STFT/mask variants use the same stack in 2-D with zero padding, since an
unpadded stride-3 stack never survives a one-sided bin axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import dsp
from .autodiff import Tensor
from .dsp import StftConfig

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class SeparatorConfig:
    k: int = 4
    stft: StftConfig = field(default_factory=StftConfig.desk)
    encoder_channels: tuple = (16, 32, 32, 32)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("separator needs at least one output source")
        if len(self.encoder_channels) != 4 or any(c < 1 for c in self.encoder_channels):
            raise ValueError("encoder_channels must be 4 positive widths")

    @staticmethod
    def desk(k: int = 4, sample_rate: int = 8000) -> "SeparatorConfig":
        return SeparatorConfig(k=k, stft=StftConfig.desk(sample_rate))

    @staticmethod
    def paper_scale(k: int = 4) -> "SeparatorConfig":
        return SeparatorConfig(k=k, stft=StftConfig.paper(), encoder_channels=(256, 512, 512, 512))

    @property
    def min_input_len(self) -> int:
        # the encoder needs 16 frames ahead of its four stride-2 stages
        return max(self.stft.window_len, 15 * self.stft.hop + 1)


DESK_WAVE_CHANNELS = (16, 32, 32, 64)
DESK_SPEC_CHANNELS = (8, 16, 16, 32)
PAPER_WAVE_CHANNELS = (128, 256, 256, 512)
PAPER_SPEC_CHANNELS = (64, 128, 128, 256)


@dataclass(frozen=True)
class DiscriminatorSpec:
    domain: str  # wave | stft | mask
    kind: str  # instance | context
    m_conditioned: bool = False
    i_replace: int = 0
    k: int = 4
    channels: Optional[tuple] = None

    def __post_init__(self):
        if self.domain not in ("wave", "stft", "mask"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.kind not in ("instance", "context"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "instance":
            if self.m_conditioned:
                raise ValueError("instance discriminators are never mix-conditioned")
            if self.i_replace != 0:
                raise ValueError("replacement applies to context discriminators only")
        elif not 0 <= self.i_replace < self.k:
            raise ValueError(f"need 0 <= I < K, got I={self.i_replace}, K={self.k}")
        if self.channels is None:
            object.__setattr__(
                self, "channels", DESK_WAVE_CHANNELS if self.domain == "wave" else DESK_SPEC_CHANNELS
            )

    @property
    def input_channels(self) -> int:
        if self.kind == "instance":
            return 1
        return self.k + (1 if self.m_conditioned else 0)

    @property
    def matching_kind(self) -> str:
        return {"wave": "eq2-waveform", "stft": "l1-magstft", "mask": "l1-mask"}[self.domain]

    @property
    def name(self) -> str:
        tag = "inst" if self.kind == "instance" else f"ctx{self.i_replace}"
        cond = "_m" if self.m_conditioned else ""
        return f"d_{self.domain}_{tag}{cond}"


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(ad.get_default_dtype())
    return Tensor(data, requires_grad=True)


class _ParamModule:
    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        self.params[name] = tensor
        return tensor

    def parameters(self):
        return list(self.params.items())

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def set_requires_grad(self, flag: bool):
        for t in self.params.values():
            t.requires_grad = flag


def _conv_params(module: _ParamModule, name: str, cin: int, cout: int, k, rng) -> tuple:
    kernel = (k,) if isinstance(k, int) else tuple(k)
    fan_in = cin * int(np.prod(kernel))
    w = module._add(f"{name}.w", _uniform(rng, (cout, cin) + kernel, fan_in))
    b = module._add(f"{name}.b", _uniform(rng, (cout,), fan_in))
    return w, b


class Separator(_ParamModule):
    """Mask-predicting U-Net f_theta."""

    def __init__(self, cfg: SeparatorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        f = cfg.stft.bins
        enc = cfg.encoder_channels
        self.proj_in = _conv_params(self, "proj_in", f, enc[0], 1, rng)
        prev = enc[0]
        self.enc_blocks = []
        self.downs = []
        for i, ch in enumerate(enc):
            self.enc_blocks.append(self._res_block(f"enc{i}", prev, ch, rng))
            self.downs.append(_conv_params(self, f"down{i}", ch, ch, 3, rng))
            prev = ch
        self.mid1 = self._res_block("mid1", prev, prev, rng)
        self.attn = tuple(
            self._add(f"attn.{n}", _uniform(rng, (prev, prev), prev)) for n in ("wq", "wk", "wv")
        )
        self.mid2 = self._res_block("mid2", prev, prev, rng)
        dec_channels = tuple(reversed(enc))
        self.ups = []
        self.fuses = []
        self.dec_blocks = []
        for i, ch in enumerate(dec_channels):
            self.ups.append(_conv_params(self, f"up{i}", prev, prev, 3, rng))
            skip_ch = enc[len(enc) - 1 - i]
            self.fuses.append(_conv_params(self, f"fuse{i}", prev + skip_ch, ch, 1, rng))
            self.dec_blocks.append(self._res_block(f"dec{i}", ch, ch, rng))
            prev = ch
        self.proj_out = _conv_params(self, "proj_out", prev, cfg.k * f, 1, rng)

    def _res_block(self, name, cin, cout, rng):
        conv1 = _conv_params(self, f"{name}.conv1", cin, cout, 3, rng)
        conv2 = _conv_params(self, f"{name}.conv2", cout, cout, 3, rng)
        skip = _conv_params(self, f"{name}.skip", cin, cout, 1, rng) if cin != cout else None
        return (conv1, conv2, skip)

    @staticmethod
    def _conv(x, params, stride=1, padding=0):
        w, b = params
        out = ad.conv1d(x, w, stride=stride, padding=padding)
        return ad.add(out, ad.reshape(b, (b.size, 1)))

    def _run_block(self, x, block):
        conv1, conv2, skip = block
        h = ad.leaky_relu(self._conv(x, conv1, padding=1), LEAKY_SLOPE)
        h = self._conv(h, conv2, padding=1)
        shortcut = x if skip is None else self._conv(x, skip)
        return ad.add(h, shortcut)

    def forward(self, mix: np.ndarray) -> "SeparatorOutput":
        """Run the separator on a (L,) or (B, L) mixture array."""
        mix = np.asarray(mix, dtype=ad.get_default_dtype())
        squeeze = mix.ndim == 1
        if squeeze:
            mix = mix[None]
        if mix.ndim != 2:
            raise ValueError(f"expected (L,) or (B, L) mixture, got shape {mix.shape}")
        b, n = mix.shape
        cfg = self.cfg
        if n < cfg.min_input_len:
            raise ValueError(
                f"mixture of {n} samples is too short for four stride-2 stages; "
                f"minimum length is {cfg.min_input_len}"
            )
        spec = dsp.stft(mix, cfg.stft)  # (B, T, F)
        mag = np.abs(spec)
        t = spec.shape[-2]
        f = cfg.stft.bins
        dtype = ad.get_default_dtype()

        x = Tensor(np.ascontiguousarray(mag.swapaxes(-1, -2), dtype=dtype))  # (B, F, T)
        t_pad = -(-t // 16) * 16
        if t_pad != t:
            x = ad.concat([x, Tensor(np.zeros((b, f, t_pad - t), dtype=dtype))], axis=2)
        h = self._conv(x, self.proj_in)
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            h = self._run_block(h, block)
            skips.append(h)
            h = ad.leaky_relu(self._conv(h, down, stride=2, padding=1), LEAKY_SLOPE)
        h = self._run_block(h, self.mid1)
        h = ad.self_attention(h, *self.attn)
        h = self._run_block(h, self.mid2)
        for i, (up, fuse, block) in enumerate(zip(self.ups, self.fuses, self.dec_blocks)):
            h = ad.upsample_linear_2x(h)
            h = ad.leaky_relu(self._conv(h, up, padding=1), LEAKY_SLOPE)
            h = ad.concat([h, skips[len(skips) - 1 - i]], axis=1)
            h = self._conv(h, fuse)
            h = self._run_block(h, block)
        logits = self._conv(h, self.proj_out)  # (B, K*F, Tp)
        logits = ad.slice_(logits, (slice(None), slice(None), slice(0, t)))
        logits = ad.reshape(logits, (b, cfg.k, f, t))
        masks = ad.softmax(logits, axis=1)  # (B, K, F, T)

        re = np.ascontiguousarray(spec.real.swapaxes(-1, -2), dtype=dtype)[:, None]
        im = np.ascontiguousarray(spec.imag.swapaxes(-1, -2), dtype=dtype)[:, None]
        est_re = ad.multiply(masks, Tensor(re))  # (B, K, F, T)
        est_im = ad.multiply(masks, Tensor(im))
        masks_tf = ad.transpose(masks, (0, 1, 3, 2))  # (B, K, T, F)
        est_re_tf = ad.transpose(est_re, (0, 1, 3, 2))
        est_im_tf = ad.transpose(est_im, (0, 1, 3, 2))
        est_mag_tf = ad.multiply(masks_tf, Tensor(mag[:, None].astype(dtype)))
        waves = dsp.istft_tensor(est_re_tf, est_im_tf, cfg.stft, n)  # (B, K, L)
        return SeparatorOutput(
            mix=mix,
            mix_spec=spec,
            mix_mag=mag,
            masks=masks_tf,
            est_mags=est_mag_tf,
            est_re=est_re_tf,
            est_im=est_im_tf,
            est_waves=waves,
            squeezed=squeeze,
        )

    def separate(self, mix: np.ndarray, mixture_consistent: bool = True) -> tuple:
        """Inference: (masks, est_specs, est_waves) numpy arrays for one mixture."""
        with ad.no_grad():
            out = self.forward(np.asarray(mix))
        masks = out.masks.data[0]
        specs = out.est_re.data[0] + 1j * out.est_im.data[0]
        waves = out.est_waves.data[0]
        if mixture_consistent:
            waves = dsp.mixture_consistency(waves, np.asarray(mix, dtype=np.float64))
        return masks, specs, waves


@dataclass
class SeparatorOutput:
    mix: np.ndarray  # (B, L)
    mix_spec: np.ndarray  # (B, T, F) complex
    mix_mag: np.ndarray  # (B, T, F)
    masks: Tensor  # (B, K, T, F)
    est_mags: Tensor  # (B, K, T, F)
    est_re: Tensor  # (B, K, T, F)
    est_im: Tensor  # (B, K, T, F)
    est_waves: Tensor  # (B, K, L)
    squeezed: bool = False


def _chain_extent(n: int, layers: Sequence[tuple]) -> int:
    """Extent after a chain of (kernel, stride, pad_lo, pad_hi) conv layers; -1 if impossible."""
    for k, s, lo, hi in layers:
        n = n + lo + hi
        if n < k:
            return -1
        n = (n - k) // s + 1
    return n


def _min_extent(layers: Sequence[tuple]) -> int:
    n = 1
    for k, s, lo, hi in reversed(layers):
        n = s * (n - 1) + k - lo - hi
        n = max(n, 1)
    return n


class Discriminator(_ParamModule):
    """Conv stack scoring one assembled input with a single scalar."""

    def __init__(self, spec: DiscriminatorSpec, input_extent, seed: int = 0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        cin = spec.input_channels
        if spec.domain == "wave":
            self.input_extent = (int(input_extent),)
            layers = [(4, 3, 0, 0)] * 4 + [(4, 1, 0, 0)]
        else:
            if np.ndim(input_extent) == 0 or len(input_extent) != 2:
                raise ValueError("stft/mask discriminators need (frames, bins) input extent")
            self.input_extent = (int(input_extent[0]), int(input_extent[1]))
            layers = [(4, 3, 1, 2)] * 4 + [(4, 1, 1, 2)]
        self._layers = layers
        extents = []
        for axis, n in enumerate(self.input_extent):
            out = _chain_extent(n, layers)
            if out < 1:
                raise ValueError(
                    f"input extent {n} on axis {axis} does not survive the conv stack; "
                    f"minimum extent is {_min_extent(layers)}"
                )
            extents.append(out)
        self.convs = []
        prev = cin
        for i, ch in enumerate(spec.channels):
            self.convs.append(_conv_params(self, f"conv{i}", prev, ch, self._kernel(), rng))
            prev = ch
        self.proj = _conv_params(self, "proj", prev, 1, self._kernel(), rng)
        flat = int(np.prod(extents))
        self.flat_extent = flat
        self.final_w = self._add("final.w", _uniform(rng, (flat, 1), flat))
        self.final_b = self._add("final.b", _uniform(rng, (1,), flat))

    def _kernel(self):
        return 4 if self.spec.domain == "wave" else (4, 4)

    def _apply_conv(self, x, params, stride):
        w, b = params
        if self.spec.domain == "wave":
            out = ad.conv1d(x, w, stride=stride, padding=0)
            return ad.add(out, ad.reshape(b, (b.size, 1)))
        out = ad.conv2d(x, w, stride=(stride, stride), padding=((1, 2), (1, 2)))
        return ad.add(out, ad.reshape(b, (b.size, 1, 1)))

    def forward(self, x) -> Tensor:
        """Score assembled inputs: (C, ...) -> (1,) or (B, C, ...) -> (B,)."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=ad.get_default_dtype()))
        spatial_rank = 1 if self.spec.domain == "wave" else 2
        if x.ndim == 1 + spatial_rank:
            x = ad.reshape(x, (1,) + x.shape)
        if x.ndim != 2 + spatial_rank:
            raise ValueError(f"unexpected input rank for {self.spec.name}: shape {x.shape}")
        if x.shape[1] != self.spec.input_channels:
            raise ValueError(
                f"{self.spec.name} expects {self.spec.input_channels} channels, got {x.shape[1]}"
            )
        if tuple(x.shape[2:]) != self.input_extent:
            raise ValueError(
                f"{self.spec.name} was built for extent {self.input_extent}, got {tuple(x.shape[2:])}"
            )
        h = x
        for conv in self.convs:
            h = ad.leaky_relu(self._apply_conv(h, conv, stride=3), LEAKY_SLOPE)
        h = self._apply_conv(h, self.proj, stride=1)
        b = h.shape[0]
        h = ad.reshape(h, (b, self.flat_extent))
        out = ad.add(ad.matmul(h, self.final_w), ad.reshape(self.final_b, (1, 1)))
        return ad.reshape(out, (b,))


def assemble_d_input(spec: DiscriminatorSpec, items: Sequence, mix=None) -> Tensor:
    """Channel-stack one example's items (mix first when conditioned).

    Instance discriminators consume exactly one item; context discriminators
    consume K items in index order. Items must live in the spec's domain:
    (L,) waveforms or (frames, bins) planes.
    """
    if spec.kind == "instance":
        if len(items) != 1:
            raise ValueError(f"instance input takes exactly one item, got {len(items)}")
        if mix is not None:
            raise ValueError("instance discriminators are never mix-conditioned")
    else:
        if len(items) != spec.k:
            raise ValueError(f"context input needs K={spec.k} items, got {len(items)}")
        if spec.m_conditioned and mix is None:
            raise ValueError(f"{spec.name} is mix-conditioned; pass the mixture")
        if not spec.m_conditioned and mix is not None:
            raise ValueError(f"{spec.name} is not mix-conditioned; do not pass a mixture")
    rank = 1 if spec.domain == "wave" else 2
    pieces = []
    for item in ([mix] if mix is not None else []) + list(items):
        t = item if isinstance(item, Tensor) else Tensor(np.asarray(item, dtype=ad.get_default_dtype()))
        if t.ndim != rank:
            raise ValueError(f"{spec.domain} items must have rank {rank}, got shape {t.shape}")
        if pieces and t.shape != pieces[0].shape[1:]:
            raise ValueError(f"mixed item shapes: {t.shape} vs {pieces[0].shape[1:]}")
        pieces.append(ad.reshape(t, (1,) + t.shape))
    return ad.concat(pieces, axis=0)
