"""Backbone, feature pyramid, and prediction heads.

Single-image forward pass (batching happens through gradient
accumulation). All feature maps are NCHW with N=1; head outputs are
flattened location-major so loss code and target assignment share one
enumeration: levels in ascending stride order, locations row-major
within a level.

A location (i, j) at stride s sits at image point ((j+0.5)s, (i+0.5)s).
Radii are regressed in image pixels as exp(scale_l * z); the refinement
stage samples the regression trunk at the coarse boundary points and
adds a per-ray correction produced by a grouped 1x1 convolution that
starts at zero, so refinement is exactly the identity at init.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .codec import ray_angles
from .diffcore import Parameter, Tensor


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 3
    in_channels: int = 1
    num_rays: int = 36
    backbone_widths: tuple[int, ...] = (16, 32, 64)
    fpn_channels: int = 64
    strides: tuple[int, ...] = (4, 8)
    head_convs: int = 2
    fine_enabled: bool = True
    standard_conv_regressor: bool = False
    # sampling points move with the coarse radii, so by default the fine
    # loss back-propagates into them through the bilinear coordinates;
    # detaching is an ablation, not the normal mode
    detach_sampling_coords: bool = False
    hbb_enabled: bool = False
    hbb_widths: tuple[int, ...] = (128, 64, 64, 64)
    min_radius: float = 0.01

    def __post_init__(self):
        if not self.backbone_widths:
            raise ValueError("backbone needs at least one stage")
        if self.num_rays < 4:
            raise ValueError("need at least 4 rays")
        if self.head_convs < 1:
            raise ValueError("need at least one head conv")
        strides = self.strides
        if not strides:
            raise ValueError("need at least one pyramid level")
        for a, b in zip(strides, strides[1:]):
            if b != 2 * a:
                raise ValueError(f"strides must double level to level, got {strides}")
        for s in strides:
            if s < 2 or s & (s - 1):
                raise ValueError(f"stride {s} is not a power of two >= 2")
        if strides[0] > 2 ** len(self.backbone_widths):
            raise ValueError("finest pyramid stride exceeds backbone reach")

    @property
    def backbone_strides(self) -> tuple[int, ...]:
        return tuple(2 ** (i + 1) for i in range(len(self.backbone_widths)))


@dataclass
class ModelOutputs:
    """Flattened head outputs for one image.

    cls_flat is (L, num_classes) logits, cnt_flat (L,) logits, coarse and
    fine are (L, num_rays) radii in pixels. hbb is the (1, 1, h, w)
    box-membership logit map on the finest level, present only when
    requested. level_shapes/strides describe the location enumeration.
    """

    cls_flat: Tensor
    cnt_flat: Tensor
    coarse: Tensor
    fine: Tensor | None
    hbb: Tensor | None
    level_shapes: list[tuple[int, int]]
    strides: tuple[int, ...]

    @property
    def radii(self) -> Tensor:
        return self.coarse if self.fine is None else self.fine


def _conv_shapes(widths, in_ch):
    prev = in_ch
    for w in widths:
        yield prev, w
        prev = w


class Model:
    """Parameter container plus the forward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Parameter] = {}
        rng = np.random.default_rng(seed)
        self._build(rng)

    # -- construction -----------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def _conv_pair(self, rng, name, ci, co, k, he=True, std=0.01, bias_fill=0.0):
        fan_in = ci * k * k
        scale = np.sqrt(2.0 / fan_in) if he else std
        w = rng.normal(0.0, scale, size=(co, ci, k, k))
        self._add(f"{name}.w", w)
        self._add(f"{name}.b", np.full(co, bias_fill, dtype=np.float64))

    def _build(self, rng):
        cfg = self.config
        for i, (ci, co) in enumerate(_conv_shapes(cfg.backbone_widths, cfg.in_channels)):
            self._conv_pair(rng, f"backbone.{i}", ci, co, 3)

        bstrides = cfg.backbone_strides
        self.tap_strides = [s for s in cfg.strides if s <= bstrides[-1]]
        self.extra_strides = [s for s in cfg.strides if s > bstrides[-1]]
        for s in self.tap_strides:
            ci = cfg.backbone_widths[bstrides.index(s)]
            self._conv_pair(rng, f"fpn.lateral.s{s}", ci, cfg.fpn_channels, 1)
            self._conv_pair(rng, f"fpn.post.s{s}", cfg.fpn_channels, cfg.fpn_channels, 3)
        for s in self.extra_strides:
            self._conv_pair(rng, f"fpn.extra.s{s}", cfg.fpn_channels, cfg.fpn_channels, 1)

        for i in range(cfg.head_convs):
            self._conv_pair(rng, f"head.cls.conv{i}", cfg.fpn_channels, cfg.fpn_channels, 3)
            self._conv_pair(rng, f"head.reg.conv{i}", cfg.fpn_channels, cfg.fpn_channels, 3)
        # rare-positive prior: start every class near sigmoid ~ 0.01
        self._conv_pair(rng, "head.cls.out", cfg.fpn_channels, cfg.num_classes, 1,
                        he=False, bias_fill=-np.log(99.0))
        self._conv_pair(rng, "head.cnt.out", cfg.fpn_channels, 1, 1, he=False)
        self._conv_pair(rng, "head.reg.out", cfg.fpn_channels, cfg.num_rays, 1, he=False)
        for s in cfg.strides:
            self._add(f"head.scale.coarse.s{s}", np.asarray(1.0))
            if cfg.fine_enabled:
                self._add(f"head.scale.fine.s{s}", np.asarray(1.0))

        if cfg.fine_enabled:
            n, c = cfg.num_rays, cfg.fpn_channels
            if cfg.standard_conv_regressor:
                self._add("fine.w", np.zeros((n, n * c)))
            else:
                self._add("fine.w", np.zeros((n, c)))
            self._add("fine.b", np.zeros(n))

        if cfg.hbb_enabled:
            for i, (ci, co) in enumerate(_conv_shapes(cfg.hbb_widths, cfg.fpn_channels)):
                self._conv_pair(rng, f"hbb.conv{i}", ci, co, 3)
            self._conv_pair(rng, "hbb.out", cfg.hbb_widths[-1], 1, 1, he=False)

        angles = ray_angles(cfg.num_rays)
        self._sin = np.sin(angles)
        self._cos = np.cos(angles)

    # -- parameter access -------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)[:4]}"
                             f" extra {sorted(extra)[:4]}")
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward ----------------------------------------------------------

    def _conv(self, x, name, stride=1, padding=0, act=False):
        out = dc.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"],
                        stride=stride, padding=padding)
        return dc.relu(out) if act else out

    def _pyramid(self, image: np.ndarray) -> list[Tensor]:
        cfg = self.config
        h, w = image.shape
        if h % cfg.strides[-1] or w % cfg.strides[-1]:
            raise dc.ShapeMismatch(
                f"image {h}x{w} not divisible by coarsest stride {cfg.strides[-1]}")
        x = Tensor(image[None, None, :, :])
        taps: dict[int, Tensor] = {}
        for i, s in enumerate(cfg.backbone_strides):
            x = self._conv(x, f"backbone.{i}", stride=2, padding=1, act=True)
            taps[s] = x

        merged: dict[int, Tensor] = {}
        above = None
        for s in reversed(self.tap_strides):
            lat = self._conv(taps[s], f"fpn.lateral.s{s}")
            if above is not None:
                lat = dc.add(lat, dc.upsample_nearest2x(above))
            above = lat
            merged[s] = self._conv(lat, f"fpn.post.s{s}", padding=1)

        levels = [merged[s] for s in self.tap_strides]
        for s in self.extra_strides:
            levels.append(self._conv(levels[-1], f"fpn.extra.s{s}", stride=2))
        return levels

    def _refine(self, trunk: Tensor, coarse_r: Tensor, stride: int,
                h: int, w: int) -> Tensor:
        """Per-ray additive correction from features at the coarse boundary."""
        cfg = self.config
        n = cfg.num_rays
        locs = h * w
        jj = np.tile(np.arange(w, dtype=np.float64), h)
        ii = np.repeat(np.arange(h, dtype=np.float64), w)
        base_x = np.tile(jj[:, None], (1, n))
        base_y = np.tile(ii[:, None], (1, n))
        sin_n = np.tile(self._sin[None, :], (locs, 1))
        cos_n = np.tile(self._cos[None, :], (locs, 1))

        r_for_points = coarse_r.detach() if cfg.detach_sampling_coords else coarse_r
        r_grid = dc.mul_const(r_for_points, 1.0 / stride)
        px = dc.add_const(dc.mul_const(r_grid, sin_n), base_x)
        py = dc.add_const(dc.mul_const(r_grid, cos_n), base_y)
        pts = dc.concat([dc.reshape(px, (locs * n, 1)),
                         dc.reshape(py, (locs * n, 1))], axis=1)

        feat = dc.reshape(trunk, trunk.data.shape[1:])  # (C, h, w)
        sampled = dc.bilinear_sample(feat, pts)          # (locs*n, C)
        rows = dc.reshape(sampled, (locs, n * cfg.fpn_channels))
        if cfg.standard_conv_regressor:
            delta = dc.linear(rows, self.params["fine.w"], self.params["fine.b"])
        else:
            delta = dc.grouped_conv1x1(rows, n, self.params["fine.w"],
                                       self.params["fine.b"])
        delta = dc.scalar_scale(delta, self.params[f"head.scale.fine.s{stride}"])
        return dc.clamp_min(dc.add(coarse_r, delta), cfg.min_radius)

    def forward(self, image: np.ndarray, with_hbb: bool = False) -> ModelOutputs:
        cfg = self.config
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise dc.ShapeMismatch("expected a single-channel (H, W) image")
        levels = self._pyramid(image)

        cls_parts, cnt_parts, coarse_parts, fine_parts = [], [], [], []
        shapes: list[tuple[int, int]] = []
        for feat, stride in zip(levels, cfg.strides):
            _, _, h, w = feat.data.shape
            shapes.append((h, w))

            t = feat
            for i in range(cfg.head_convs):
                t = self._conv(t, f"head.cls.conv{i}", padding=1, act=True)
            cls_map = self._conv(t, "head.cls.out")
            cnt_map = self._conv(t, "head.cnt.out")
            cls_parts.append(dc.transpose2d(dc.reshape(cls_map, (cfg.num_classes, h * w))))
            cnt_parts.append(dc.reshape(cnt_map, (h * w,)))

            t = feat
            for i in range(cfg.head_convs):
                t = self._conv(t, f"head.reg.conv{i}", padding=1, act=True)
            z = dc.transpose2d(dc.reshape(self._conv(t, "head.reg.out"),
                                          (cfg.num_rays, h * w)))
            coarse_r = dc.exp(dc.scalar_scale(z, self.params[f"head.scale.coarse.s{stride}"]))
            coarse_parts.append(coarse_r)
            if cfg.fine_enabled:
                fine_parts.append(self._refine(t, coarse_r, stride, h, w))

        hbb = None
        if with_hbb:
            if not cfg.hbb_enabled:
                raise ValueError("hbb output requested but head not configured")
            t = levels[0]
            for i in range(len(cfg.hbb_widths)):
                t = self._conv(t, f"hbb.conv{i}", padding=1, act=True)
            hbb = self._conv(t, "hbb.out")

        return ModelOutputs(
            cls_flat=dc.concat(cls_parts, axis=0),
            cnt_flat=dc.concat(cnt_parts, axis=0),
            coarse=dc.concat(coarse_parts, axis=0),
            fine=dc.concat(fine_parts, axis=0) if cfg.fine_enabled else None,
            hbb=hbb,
            level_shapes=shapes,
            strides=cfg.strides)


def level_locations(shapes: list[tuple[int, int]],
                    strides: tuple[int, ...]) -> np.ndarray:
    """Image-space (x, y) centers for the flat location enumeration."""
    pieces = []
    for (h, w), s in zip(shapes, strides):
        jj = np.tile(np.arange(w, dtype=np.float64), h)
        ii = np.repeat(np.arange(h, dtype=np.float64), w)
        pieces.append(np.stack([(jj + 0.5) * s, (ii + 0.5) * s], axis=1))
    return np.concatenate(pieces, axis=0)
