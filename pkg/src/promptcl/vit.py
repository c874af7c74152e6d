"""A tiny pre-norm Vision Transformer that prompts can be spliced into.

Patch tokens run alone through the first ``prompt_layer`` blocks; the
per-class prompt tokens are then concatenated in front and the remaining
blocks process the combined sequence. Prompts never receive positional
embeddings. Blocks from ``adapter_start`` upward may carry a bottleneck
adapter wired in parallel with the MLP branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import seeded_rng, trunc_normal
from .tensor import Tensor, concat, expand_leading, narrow

MLP_RATIO = 4


@dataclass
class ModelConfig:
    embed_dim: int = 32
    layers: int = 4
    heads: int = 4
    image_side: int = 16
    patch_side: int = 4
    prompt_layer: int = 2    # prompts join after this many blocks
    adapter_start: int = 3   # first adapted block, 1-indexed
    adapter_dim: int = 8     # bottleneck width
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.image_side % self.patch_side != 0:
            raise ValueError(
                f"image_side {self.image_side} not divisible by patch_side {self.patch_side}"
            )
        if not 1 <= self.prompt_layer < self.layers:
            raise ValueError(
                f"prompt_layer must lie in [1, layers), got {self.prompt_layer} with layers {self.layers}"
            )
        if not 1 <= self.adapter_start <= self.layers:
            raise ValueError(
                f"adapter_start must lie in [1, layers], got {self.adapter_start} with layers {self.layers}"
            )
        if not 1 <= self.adapter_dim < self.embed_dim:
            raise ValueError(
                f"adapter_dim must lie in [1, embed_dim), got {self.adapter_dim} with embed_dim {self.embed_dim}"
            )

    @property
    def grid_side(self) -> int:
        return self.image_side // self.patch_side

    @property
    def n_patches(self) -> int:
        return self.grid_side * self.grid_side

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "layers": self.layers,
            "heads": self.heads,
            "image_side": self.image_side,
            "patch_side": self.patch_side,
            "prompt_layer": self.prompt_layer,
            "adapter_start": self.adapter_start,
            "adapter_dim": self.adapter_dim,
            "seed": self.seed,
        }


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


class EncoderParams:
    """Every backbone weight: patch projection, positions, blocks, final norm.

    Created with ``frozen=True``; nothing in the incremental protocol is
    allowed to update these. Only the one-off pretraining pass and the
    fine-tuning baseline flip the flag.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        d = config.embed_dim
        hidden = MLP_RATIO * d
        p2 = config.patch_side * config.patch_side
        rng = seeded_rng(config.seed, "backbone")

        def w(shape):
            return Tensor(trunc_normal(rng, shape), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(shape):
            return Tensor(np.ones(shape), requires_grad=True)

        self.patch_w = w((p2, d))
        self.patch_b = zeros((d,))
        self.pos = w((config.n_patches, d))
        self.blocks: list[BlockParams] = []
        for _ in range(config.layers):
            self.blocks.append(
                BlockParams(
                    ln1_g=ones((d,)), ln1_b=zeros((d,)),
                    wq=w((d, d)), bq=zeros((d,)),
                    wk=w((d, d)), bk=zeros((d,)),
                    wv=w((d, d)), bv=zeros((d,)),
                    wo=w((d, d)), bo=zeros((d,)),
                    ln2_g=ones((d,)), ln2_b=zeros((d,)),
                    w1=w((d, hidden)), b1=zeros((hidden,)),
                    w2=w((hidden, d)), b2=zeros((d,)),
                )
            )
        self.final_ln_g = ones((d,))
        self.final_ln_b = zeros((d,))
        self.frozen = True

    def named(self) -> dict[str, Tensor]:
        out = {
            "backbone.patch_w": self.patch_w,
            "backbone.patch_b": self.patch_b,
            "backbone.pos": self.pos,
        }
        for i, block in enumerate(self.blocks, start=1):
            for name, t in block.named().items():
                out[f"backbone.l{i:02d}.{name}"] = t
        out["backbone.final_ln_g"] = self.final_ln_g
        out["backbone.final_ln_b"] = self.final_ln_b
        return out


def patchify(images, params: EncoderParams) -> Tensor:
    """Cut images into non-overlapping patches and embed them.

    Accepts one (H, W) grid or a batch (B, H, W); returns (N, d) or
    (B, N, d) token embeddings with positional offsets already added.
    """
    cfg = params.config
    arr = np.asarray(images, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != cfg.image_side or arr.shape[2] != cfg.image_side:
        raise ValueError(
            f"patchify: expected images of side {cfg.image_side}, got array shape {np.asarray(images).shape}"
        )
    b = arr.shape[0]
    g, p = cfg.grid_side, cfg.patch_side
    # (B, g, p, g, p) -> (B, g, g, p, p) -> (B, N, p*p), patches in row-major grid order
    patches = arr.reshape(b, g, p, g, p).transpose(0, 1, 3, 2, 4).reshape(b, cfg.n_patches, p * p)
    tokens = Tensor(patches) @ params.patch_w + params.patch_b + params.pos
    if single:
        return tokens.reshape((cfg.n_patches, cfg.embed_dim))
    return tokens


def _attention(x: Tensor, block: BlockParams, heads: int) -> Tensor:
    d = x.shape[-1]
    dh = d // heads
    q = x @ block.wq + block.bq
    k = x @ block.wk + block.bk
    v = x @ block.wv + block.bv
    scale = 1.0 / np.sqrt(dh)
    outs = []
    for h in range(heads):
        qs = narrow(q, -1, h * dh, (h + 1) * dh)
        ks = narrow(k, -1, h * dh, (h + 1) * dh)
        vs = narrow(v, -1, h * dh, (h + 1) * dh)
        attn = ((qs @ ks.transpose_last()) * scale).softmax()
        outs.append(attn @ vs)
    merged = outs[0] if heads == 1 else concat(outs, axis=-1)
    return merged @ block.wo + block.bo


def _mlp(x: Tensor, block: BlockParams) -> Tensor:
    return (x @ block.w1 + block.b1).relu() @ block.w2 + block.b2


def sab_forward(x: Tensor, block: BlockParams, heads: int, adapter=None) -> Tensor:
    """One pre-norm block; the adapter branch reads the un-normalised
    post-attention residual and its output joins the main residual sum."""
    h = x.layer_norm() * block.ln1_g + block.ln1_b
    x_o = _attention(h, block, heads) + x
    y_o = _mlp(x_o.layer_norm() * block.ln2_g + block.ln2_b, block) + x_o
    if adapter is None:
        return y_o
    from .adapters import adapter_forward

    return y_o + adapter_forward(x_o, adapter)


def encoder_forward(images, prompt_pool, params: EncoderParams, adapters=None):
    """Run the full encoder and split the output sequence.

    Returns ``(o_P, o_I)``: the n prompt output rows (empty when no
    prompts are registered) and the N patch output rows, both after the
    final layer norm.
    """
    cfg = params.config
    x = patchify(images, params)
    batched = x.ndim == 3

    stack = None
    if prompt_pool is not None:
        stack = prompt_pool if isinstance(prompt_pool, Tensor) else prompt_pool.stacked()
    n = 0 if stack is None else stack.shape[0]
    if stack is not None and stack.shape[-1] != cfg.embed_dim:
        raise ValueError(
            f"encoder_forward: prompt dim {stack.shape[-1]} does not match embed_dim {cfg.embed_dim}"
        )

    def adapter_for(layer: int):
        if adapters is None:
            return None
        return adapters.layers.get(layer)

    for layer in range(1, cfg.prompt_layer + 1):
        x = sab_forward(x, params.blocks[layer - 1], cfg.heads, adapter_for(layer))
    if n:
        front = expand_leading(stack, x.shape[0]) if batched else stack
        x = concat([front, x], axis=-2)
    for layer in range(cfg.prompt_layer + 1, cfg.layers + 1):
        x = sab_forward(x, params.blocks[layer - 1], cfg.heads, adapter_for(layer))
    x = x.layer_norm() * params.final_ln_g + params.final_ln_b

    o_P = narrow(x, -2, 0, n)
    o_I = narrow(x, -2, n, n + cfg.n_patches)
    return o_P, o_I
