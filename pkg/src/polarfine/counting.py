"""Parameter and arithmetic-cost accounting.

Cost is reported in multiply-accumulates. Convolutions contribute
C_in*C_out*k^2 per output position; bilinear sampling contributes four
taps per channel per sample point; bias adds, activations, upsampling
and scalar scales are free. Counts mirror the forward pass exactly, so
they shift with image size and with which stages are enabled.
"""

from __future__ import annotations

import numpy as np

from .network import Model, ModelConfig


def count_params(source, prefix: str | None = None) -> int:
    """Total element count, optionally restricted to a name prefix."""
    if isinstance(source, Model):
        arrays = {n: p.data for n, p in source.params.items()}
    else:
        arrays = source
    total = 0
    for name, arr in arrays.items():
        if prefix is None or name.startswith(prefix):
            total += int(np.asarray(arr).size)
    return total


def count_macs(config: ModelConfig, image_hw: tuple[int, int],
               include_fine: bool | None = None,
               include_hbb: bool = False) -> dict[str, int]:
    """Per-component MAC breakdown for one forward pass.

    include_fine defaults to the config's fine_enabled flag. The result
    carries backbone/fpn/heads/fine/hbb entries plus their total.
    """
    h, w = image_hw
    cfg = config
    if include_fine is None:
        include_fine = cfg.fine_enabled
    c = cfg.fpn_channels
    n = cfg.num_rays

    backbone = 0
    ci = cfg.in_channels
    for i, co in enumerate(cfg.backbone_widths):
        s = 2 ** (i + 1)
        backbone += ci * co * 9 * (h // s) * (w // s)
        ci = co

    bstrides = tuple(2 ** (i + 1) for i in range(len(cfg.backbone_widths)))
    fpn = 0
    for s in cfg.strides:
        hw = (h // s) * (w // s)
        if s <= bstrides[-1]:
            width = cfg.backbone_widths[bstrides.index(s)]
            fpn += width * c * hw          # lateral 1x1
            fpn += c * c * 9 * hw          # post-merge 3x3
        else:
            fpn += c * c * hw              # strided 1x1 from the level below

    heads = 0
    fine = 0
    for s in cfg.strides:
        hw = (h // s) * (w // s)
        heads += 2 * cfg.head_convs * c * c * 9 * hw
        heads += c * cfg.num_classes * hw  # class logits
        heads += c * hw                    # centerness
        heads += c * n * hw                # coarse radii
        if include_fine:
            fine += hw * n * 4 * c         # boundary sampling
            per_group = (n * c) if cfg.standard_conv_regressor else c
            fine += hw * n * per_group     # correction regressor

    hbb = 0
    if include_hbb:
        s = cfg.strides[0]
        hw = (h // s) * (w // s)
        ci = c
        for co in cfg.hbb_widths:
            hbb += ci * co * 9 * hw
            ci = co
        hbb += ci * hw

    total = backbone + fpn + heads + fine + hbb
    return {"backbone": backbone, "fpn": fpn, "heads": heads,
            "fine": fine, "hbb": hbb, "total": total}
