"""Network layers as torch modules.

Submodule names are part of the weight snapshot format: a parameter is
stored under its ``state_dict`` key, e.g. ``cnn.block0.conv1.weight``.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.features.attention import ViewTransforms, cross_view_attention, global_attention, windowed_attention

LEAKY_SLOPE = 0.01
CNN_STRIDES = (1, 2, 1, 2, 1, 1)


def cnn_widths(d: int) -> tuple[int, ...]:
    return (d // 4, d // 2, d // 2, d, d, d)


def conv(c_in: int, c_out: int, k: int = 3, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, k, stride=stride, padding=k // 2)


def _instance_norm(x: torch.Tensor) -> torch.Tensor:
    return F.instance_norm(x, eps=1e-5)


class ResidualBlock(nn.Module):
    """conv-norm-act, conv-norm, plus a 1x1 skip when the shape changes."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = conv(c_in, c_out, stride=stride)
        self.conv2 = conv(c_out, c_out)
        self.skip = conv(c_in, c_out, k=1, stride=stride) if stride != 1 or c_in != c_out else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(_instance_norm(self.conv1(x)), LEAKY_SLOPE)
        h = _instance_norm(self.conv2(h))
        skip = self.skip(x) if self.skip is not None else x
        return F.leaky_relu(h + skip, LEAKY_SLOPE)


class ResidualCNN(nn.Module):
    """Stem plus six residual blocks; two of them stride by 2."""

    def __init__(self, d: int):
        super().__init__()
        widths = cnn_widths(d)
        self.stem = conv(3, widths[0])
        c_in = widths[0]
        for i, (c_out, stride) in enumerate(zip(widths, CNN_STRIDES)):
            self.add_module(f"block{i}", ResidualBlock(c_in, c_out, stride))
            c_in = c_out
        self.num_blocks = len(widths)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.stem(x), LEAKY_SLOPE)
        for i in range(self.num_blocks):
            x = getattr(self, f"block{i}")(x)
        return x


class SemanticRefiner(nn.Module):
    def __init__(self, d: int, blocks: int = 2):
        super().__init__()
        for i in range(blocks):
            self.add_module(f"block{i}", ResidualBlock(d, d))
        self.num_blocks = blocks

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i in range(self.num_blocks):
            x = getattr(self, f"block{i}")(x)
        return x


class AttentionProjections(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)


class FeedForward(nn.Module):
    def __init__(self, d: int, expansion: int):
        super().__init__()
        self.fc1 = nn.Linear(d, expansion * d)
        self.fc2 = nn.Linear(expansion * d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """norm -> self-attention -> residual, norm -> cross-view -> residual, norm -> FFN -> residual."""

    def __init__(self, d: int, expansion: int):
        super().__init__()
        self.attn = AttentionProjections(d)
        self.cross = AttentionProjections(d)
        self.ffn = FeedForward(d, expansion)

    def forward(
        self,
        x: torch.Tensor,
        transforms: ViewTransforms,
        window: int,
        shift: int,
        swin: bool,
        heads: int,
        trace: list | None = None,
    ) -> torch.Tensor:
        n, _, _, d = x.shape
        keep = trace is not None
        y = F.layer_norm(x, (d,))
        kwargs = {"keys": self.attn.k(y), "values": self.attn.v(y), "heads": heads, "return_weights": keep}
        if swin:
            attn = windowed_attention(self.attn.q(y), transforms, window, shift, **kwargs)
        else:
            attn = global_attention(self.attn.q(y), transforms, **kwargs)
        attn, self_w = attn if keep else (attn, None)
        x = x + self.attn.o(attn)

        cross_w = None
        if n > 1:
            y = F.layer_norm(x, (d,))
            cross = cross_view_attention(
                self.cross.q(y),
                transforms,
                window,
                keys=self.cross.k(y),
                values=self.cross.v(y),
                heads=heads,
                return_weights=keep,
            )
            cross, cross_w = cross if keep else (cross, None)
            x = x + self.cross.o(cross)

        x = x + self.ffn(F.layer_norm(x, (d,)))
        if keep:
            trace.append((self_w, cross_w))
        return x


class TransformerStack(nn.Module):
    def __init__(self, d: int, blocks: int, expansion: int):
        super().__init__()
        for i in range(blocks):
            self.add_module(f"block{i}", TransformerBlock(d, expansion))
        self.num_blocks = blocks

    def forward(
        self,
        features: torch.Tensor,
        transforms: ViewTransforms,
        window: int,
        swin: bool,
        heads: int,
        trace: list | None = None,
    ) -> torch.Tensor:
        """(N, d, H', W') -> (N, d, H', W'); odd blocks shift by half a window."""
        x = features.permute(0, 2, 3, 1)
        _, h, w, _ = x.shape
        for i in range(self.num_blocks):
            shift = window // 2 if (swin and i % 2 == 1 and window < max(h, w)) else 0
            x = getattr(self, f"block{i}")(x, transforms, window, shift, swin, heads, trace)
        return x.permute(0, 3, 1, 2)


class DepthRefiner(nn.Module):
    """Two-scale U-Net over [cost volume, features] with a 2-layer head.

    Returns the head output only; the caller adds it to the volume.
    """

    def __init__(self, num_candidates: int, d: int, width: int):
        super().__init__()
        self.enc1 = conv(num_candidates + d, width)
        self.enc2 = conv(width, 2 * width, stride=2)
        self.dec1 = conv(3 * width, width)
        self.head1 = conv(width, width)
        self.head2 = conv(width, num_candidates)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = F.leaky_relu(self.enc1(x), LEAKY_SLOPE)
        e2 = F.leaky_relu(self.enc2(e1), LEAKY_SLOPE)
        up = F.interpolate(e2, size=e1.shape[-2:], mode="bilinear", align_corners=False)
        d1 = F.leaky_relu(self.dec1(torch.cat([up, e1], dim=1)), LEAKY_SLOPE)
        return self.head2(F.leaky_relu(self.head1(d1), LEAKY_SLOPE))


class OpacityHead(nn.Module):
    def __init__(self, num_candidates: int, width: int):
        super().__init__()
        self.conv1 = conv(num_candidates, width)
        self.conv2 = conv(width, 1)

    def forward(self, probs: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv2(F.leaky_relu(self.conv1(probs), LEAKY_SLOPE)))


class GaussianHead(nn.Module):
    """3x3 conv over [rgb, features], then a 1x1 conv to raw attributes."""

    def __init__(self, c_in: int, width: int, c_out: int):
        super().__init__()
        self.conv1 = conv(c_in, width)
        self.conv2 = conv(width, c_out, k=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.leaky_relu(self.conv1(x), LEAKY_SLOPE))
