"""Transformer backbone shared by all duration model families.

A small bidirectional transformer with UNet-style concat-project skip
connections between mirrored layers. Per-position conditioning (phoneme
embedding, duration context, target-duration track, and for flow models the
ODE state and time) is linearly projected and summed into the embedding.

Checkpoints use a self-contained binary format: a JSON header followed by
named float32 little-endian tensors, so files round-trip byte-exactly.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from .errors import DomainError, DurkitError

CHECKPOINT_MAGIC = b"DKCKPT01"
CHECKPOINT_VERSION = 1

FAMILIES = ("regression", "fm", "maskgit")
VARIANTS = {
    "regression": ("baseline", "tda", "tda_e2e"),
    "fm": ("baseline", "tda"),
    "maskgit": ("baseline", "tda"),
}


@dataclass(frozen=True)
class TransformerConfig:
    """Architecture hyperparameters."""

    layers: int = 2
    heads: int = 2
    embed_dim: int = 64
    ffn_dim: int = 128
    phone_embed_dim: int = 32
    unet_skips: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise DomainError("embed_dim must be divisible by heads")
        if self.unet_skips and self.layers % 2 != 0:
            raise DomainError("UNet skip pairing requires an even layer count")

    @classmethod
    def preset(cls, name: str) -> "TransformerConfig":
        if name == "small":
            return cls()
        if name == "large":
            return cls(layers=8, heads=8, embed_dim=512, ffn_dim=2048, phone_embed_dim=1024)
        raise DomainError(f"unknown preset: {name}")


def split_family_tag(tag: str) -> tuple[str, str]:
    """Split a 'family/variant' tag and validate the pair."""
    try:
        family, variant = tag.split("/")
    except ValueError as exc:
        raise DomainError(f"model tag must look like 'family/variant', got {tag!r}") from exc
    if family not in FAMILIES or variant not in VARIANTS[family]:
        raise DomainError(f"unknown model family/variant: {tag!r}")
    return family, variant


def sinusoidal_encoding(pos: Tensor, dim: int) -> Tensor:
    """Fixed sin/cos features of arbitrary positions; output shape [..., dim]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=pos.dtype, device=pos.device) / half
    )
    angles = pos.unsqueeze(-1) * freqs
    enc = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if dim % 2 == 1:
        enc = torch.nn.functional.pad(enc, (0, 1))
    return enc


class SelfAttention(nn.Module):
    """Multi-head bidirectional self-attention."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # [b, heads, n, head_dim] each
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(y), attn


class Block(nn.Module):
    """Pre-norm transformer block: attention + GELU feed-forward."""

    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(config.embed_dim)
        self.attn = SelfAttention(config.embed_dim, config.heads)
        self.norm2 = nn.LayerNorm(config.embed_dim)
        self.ffn = nn.Sequential(
            nn.Linear(config.embed_dim, config.ffn_dim),
            nn.GELU(),
            nn.Linear(config.ffn_dim, config.embed_dim),
        )

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        y, attn = self.attn(self.norm1(x))
        x = x + y
        x = x + self.ffn(self.norm2(x))
        return x, attn


class TransformerCore(nn.Module):
    """Block stack with sinusoidal positions and UNet concat-project skips.

    The output of layer i (i < L/2) is combined into the input of layer
    L-1-i through a linear projection of the concatenated states.
    """

    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.layers))
        if config.unet_skips:
            self.skip_projs = nn.ModuleList(
                nn.Linear(2 * config.embed_dim, config.embed_dim)
                for _ in range(config.layers // 2)
            )
        else:
            self.skip_projs = nn.ModuleList()
        self.final_norm = nn.LayerNorm(config.embed_dim)
        self.skip_scale = 2.0 ** -0.5

    def forward(
        self, x: Tensor, use_positions: bool = True, return_attn: bool = False
    ):
        b, n, d = x.shape
        if use_positions:
            pos = torch.arange(n, dtype=x.dtype, device=x.device)
            x = x + sinusoidal_encoding(pos, d).unsqueeze(0)
        half = self.config.layers // 2
        stack: list[Tensor] = []
        attns = []
        for i, block in enumerate(self.blocks):
            if self.config.unet_skips and i >= half:
                skip = stack.pop() * self.skip_scale
                x = self.skip_projs[i - half](torch.cat([x, skip], dim=-1))
            x, attn = block(x)
            if self.config.unet_skips and i < half:
                stack.append(x)
            if return_attn:
                attns.append(attn)
        x = self.final_norm(x)
        return (x, attns) if return_attn else x


class DurationTransformer(nn.Module):
    """Backbone plus per-family input fusion and output head.

    Inputs are prepared by the model-family modules: duration context and
    target track arrive in the log domain for continuous families, while the
    discrete family embeds context durations as tokens (MASK = max_duration+1).
    """

    def __init__(
        self,
        config: TransformerConfig,
        family: str,
        variant: str,
        phone_vocab_size: int,
        max_duration: int | None = None,
    ):
        super().__init__()
        if family not in FAMILIES or variant not in VARIANTS[family]:
            raise DomainError(f"unknown model family/variant: {family}/{variant}")
        if family == "maskgit" and (max_duration is None or max_duration < 1):
            raise DomainError("maskgit models need a positive max_duration")
        self.config = config
        self.family = family
        self.variant = variant
        self.phone_vocab_size = phone_vocab_size
        self.max_duration = max_duration

        self.phone_embed = nn.Embedding(phone_vocab_size, config.phone_embed_dim)
        self.phone_proj = nn.Linear(config.phone_embed_dim, config.embed_dim)
        if family == "maskgit":
            self.ctx_embed = nn.Embedding(max_duration + 2, config.embed_dim)
        else:
            self.ctx_proj = nn.Linear(1, config.embed_dim)
        if variant != "baseline":
            self.track_proj = nn.Linear(1, config.embed_dim)
        if family == "fm":
            self.state_proj = nn.Linear(1, config.embed_dim)
            self.time_proj = nn.Linear(config.embed_dim, config.embed_dim)
        self.core = TransformerCore(config)
        out_dim = max_duration + 1 if family == "maskgit" else 1
        self.head = nn.Linear(config.embed_dim, out_dim)

    @property
    def mask_token(self) -> int:
        if self.family != "maskgit":
            raise DurkitError("mask token only exists for the discrete family")
        return self.max_duration + 1

    def forward(
        self,
        phones: Tensor,
        ctx: Tensor,
        track: Tensor | None = None,
        state: Tensor | None = None,
        t: Tensor | float | None = None,
        use_positions: bool = True,
    ) -> Tensor:
        """Run the backbone; returns [B, N] values or [B, N, V] logits.

        Args:
            phones: [B, N] phoneme ids.
            ctx: [B, N] log-domain context values, or token ids for maskgit.
            track: [B, N] log-domain target track (non-baseline variants only).
            state: [B, N] flow state (fm only; zeros at unmasked positions).
            t: flow time in [0, 1] (fm only), scalar or [B].
        """
        if phones.max().item() >= self.phone_vocab_size:
            raise DomainError("phoneme id out of range for this model's vocabulary")
        if self.family == "maskgit":
            x = self.ctx_embed(ctx)
        else:
            x = self.ctx_proj(ctx.unsqueeze(-1))
        x = x + self.phone_proj(self.phone_embed(phones))
        if track is not None:
            if self.variant == "baseline":
                raise DurkitError("baseline models do not accept a target track")
            x = x + self.track_proj(track.unsqueeze(-1))
        elif self.variant != "baseline":
            raise DurkitError(f"{self.family}/{self.variant} requires a target track")
        if self.family == "fm":
            if state is None or t is None:
                raise DurkitError("flow models require the ODE state and time")
            x = x + self.state_proj(state.unsqueeze(-1))
            tt = torch.as_tensor(t, dtype=x.dtype, device=x.device).reshape(-1)
            temb = self.time_proj(sinusoidal_encoding(tt * 1000.0, self.config.embed_dim))
            x = x + temb.unsqueeze(1)
        h = self.core(x, use_positions=use_positions)
        out = self.head(h)
        return out if self.family == "maskgit" else out.squeeze(-1)


@dataclass
class ModelCheckpoint:
    """Named parameter tensors plus the metadata needed to rebuild the model."""

    family: str  # "family/variant" tag
    config: TransformerConfig
    phone_vocab_size: int
    max_duration: int | None
    seed: int
    steps: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def validate_shapes(self) -> None:
        """Check every named tensor against the config-derived shape."""
        module = build_module_skeleton(self)
        expected = {k: tuple(v.shape) for k, v in module.state_dict().items()}
        got = {k: tuple(v.shape) for k, v in self.params.items()}
        if expected != got:
            missing = set(expected) - set(got)
            extra = set(got) - set(expected)
            wrong = {k for k in expected.keys() & got.keys() if expected[k] != got[k]}
            raise DurkitError(
                f"checkpoint tensors do not match config: missing={sorted(missing)} "
                f"extra={sorted(extra)} wrong_shape={sorted(wrong)}"
            )


def build_module_skeleton(ckpt: ModelCheckpoint) -> DurationTransformer:
    family, variant = split_family_tag(ckpt.family)
    return DurationTransformer(
        ckpt.config, family, variant, ckpt.phone_vocab_size, ckpt.max_duration
    )


def new_checkpoint(
    family_tag: str,
    config: TransformerConfig,
    phone_vocab_size: int,
    max_duration: int | None = None,
    seed: int = 0,
) -> ModelCheckpoint:
    """Freshly initialized parameters, deterministic in the seed."""
    split_family_tag(family_tag)
    torch.manual_seed(seed)
    ckpt = ModelCheckpoint(
        family=family_tag,
        config=config,
        phone_vocab_size=phone_vocab_size,
        max_duration=max_duration,
        seed=seed,
        steps=0,
        params={},
    )
    module = build_module_skeleton(ckpt)
    ckpt.params = snapshot_params(module)
    return ckpt


def snapshot_params(module: nn.Module) -> dict[str, np.ndarray]:
    return {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in module.state_dict().items()
    }


def build_module(ckpt: ModelCheckpoint, dtype: torch.dtype = torch.float32) -> DurationTransformer:
    """Instantiate the model and load the checkpoint's parameters."""
    ckpt.validate_shapes()
    module = build_module_skeleton(ckpt)
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in ckpt.params.items()}
    module.load_state_dict(state, strict=True)
    return module.to(dtype)


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    """Write the versioned binary container; byte-identical for equal inputs."""
    names = sorted(ckpt.params)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "family": ckpt.family,
        "config": asdict(ckpt.config),
        "phone_vocab_size": ckpt.phone_vocab_size,
        "max_duration": ckpt.max_duration,
        "seed": ckpt.seed,
        "steps": ckpt.steps,
        "tensors": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DurkitError(f"{path}: not a checkpoint file (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    if header["format_version"] != CHECKPOINT_VERSION:
        raise DurkitError(f"unsupported checkpoint version {header['format_version']}")
    off += hlen
    params = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        params[spec["name"]] = arr.copy()
        off += count * 4
    ckpt = ModelCheckpoint(
        family=header["family"],
        config=TransformerConfig(**header["config"]),
        phone_vocab_size=header["phone_vocab_size"],
        max_duration=header["max_duration"],
        seed=header["seed"],
        steps=header["steps"],
        params=params,
    )
    ckpt.validate_shapes()
    return ckpt


def gradients(loss: Tensor, module: nn.Module) -> dict[str, Tensor]:
    """d(loss)/d(p) for every named parameter; zeros where the graph is unused."""
    names, params = zip(*module.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for name, p, g in zip(names, params, grads)
    }


@dataclass
class AdamState:
    """First/second moment accumulators for the Adam update."""

    step: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update; params are modified in place."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            state.m[name].mul_(beta1).add_(g, alpha=1.0 - beta1)
            state.v[name].mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            m_hat = state.m[name] / bc1
            v_hat = state.v[name] / bc2
            p.add_(-lr * m_hat / (v_hat.sqrt() + eps))
    return params, state
