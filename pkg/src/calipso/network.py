"""Multi-task dense interaction network.

A strided convolutional encoder with top-down lateral merges builds the feature
pyramid; an interaction subnet of ``blocks`` conv-BN-ReLU blocks runs on every
pyramid level (one set of weights by default) and ends in three heads: verb
scores (active and passive), target presence, and per-verb embeddings.
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import nn

from .types import DenseOutputs, LevelOutputs

CHECKPOINT_FORMAT = 1


class ConfigError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    levels: tuple[int, int] = (3, 5)
    channels: int = 64
    blocks: int = 8
    A: int = 9
    V: int = 6
    T: int = 8
    share_weights_across_levels: bool = True
    passive_head_enabled: bool = True
    target_head_enabled: bool = True
    in_channels: int = 3
    # widths of the strided encoder stages, finest first; the last is reused when short
    backbone_channels: tuple[int, ...] = (16, 32, 48, 64, 64)
    head_kernel: int = 3
    # append normalised (x, y) maps to the image and to each level's features
    coord_channels: bool = True

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.levels[0] > self.levels[1] or self.levels[0] < 1:
            raise ConfigError(f"bad pyramid levels {self.levels}")

    @property
    def verb_channels(self) -> int:
        return 2 * self.V if self.passive_head_enabled else self.V

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class BatchStatNorm(nn.BatchNorm2d):
    """Batch norm with batch statistics at train and test time (instance statistics for one image)."""

    def __init__(self, channels: int):
        super().__init__(channels, track_running_stats=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] * x.shape[2] * x.shape[3] == 1:
            # a single value per channel normalises to zero, leaving the shift
            return x * 0 + self.bias.view(1, -1, 1, 1)
        return super().forward(x)


def _conv_bn_relu(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        BatchStatNorm(cout),
        nn.ReLU(inplace=False),
    )


def coord_maps(n: int, h: int, w: int, device=None) -> torch.Tensor:
    ys = torch.linspace(-1.0, 1.0, h, device=device) if h > 1 else torch.zeros(1, device=device)
    xs = torch.linspace(-1.0, 1.0, w, device=device) if w > 1 else torch.zeros(1, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy]).unsqueeze(0).expand(n, 2, h, w)


class Backbone(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        l_max = config.levels[1]
        widths = [config.backbone_channels[min(k, len(config.backbone_channels) - 1)] for k in range(l_max)]
        cin = config.in_channels + (2 if config.coord_channels else 0)
        stages = []
        for k, w in enumerate(widths):
            if k == 0:
                stages.append(_conv_bn_relu(cin, w, stride=2))
            else:
                stages.append(nn.Sequential(_conv_bn_relu(cin, w, stride=2), _conv_bn_relu(w, w)))
            cin = w
        self.stages = nn.ModuleList(stages)
        lo, hi = config.levels
        c = config.channels
        self.lateral = nn.ModuleDict({str(l): nn.Conv2d(widths[l - 1], c, 1) for l in range(lo, hi + 1)})
        self.smooth = nn.ModuleDict({str(l): nn.Conv2d(c, c, 3, padding=1) for l in range(lo, hi + 1)})
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        if self.config.coord_channels:
            x = torch.cat([x, coord_maps(x.shape[0], x.shape[2], x.shape[3], x.device)], dim=1)
        feats = {}
        for k, stage in enumerate(self.stages):
            x = stage(x)
            feats[k + 1] = x
        lo, hi = self.config.levels
        out = {}
        top = None
        for l in range(hi, lo - 1, -1):
            lat = self.lateral[str(l)](feats[l])
            if top is not None:
                up = self.up(top)
                # floor-sized maps may be one cell smaller than the upsampled coarser level
                lat = lat + up[:, :, : lat.shape[2], : lat.shape[3]]
            top = lat
            out[l] = self.smooth[str(l)](lat)
        return out


class InteractionNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        c = config.channels
        cin = c + (2 if config.coord_channels else 0)
        self.coord = config.coord_channels
        self.blocks = nn.Sequential(*[_conv_bn_relu(cin if k == 0 else c, c) for k in range(config.blocks)])
        k, pad = config.head_kernel, config.head_kernel // 2
        A = config.A
        self.verb = nn.Conv2d(c, A * config.verb_channels, k, padding=pad)
        self.target = nn.Conv2d(c, A * 2 * config.V, k, padding=pad) if config.target_head_enabled else None
        self.emb = nn.Conv2d(c, A * config.V * config.T, k, padding=pad)
        prior = -float(np.log((1 - 0.1) / 0.1))
        for head in (self.verb, self.target):
            if head is not None:
                nn.init.normal_(head.weight, std=0.01)
                nn.init.constant_(head.bias, prior)
        nn.init.normal_(self.emb.weight, std=0.01)
        nn.init.zeros_(self.emb.bias)

    def forward(self, f: torch.Tensor) -> dict[str, Optional[torch.Tensor]]:
        if self.coord:
            f = torch.cat([f, coord_maps(f.shape[0], f.shape[2], f.shape[3], f.device)], dim=1)
        h = self.blocks(f)
        return {"verb": self.verb(h), "target": None if self.target is None else self.target(h), "emb": self.emb(h)}


def _to_anchor_major(t: torch.Tensor, A: int) -> torch.Tensor:
    """``[B, A*C, H, W]`` -> ``[B, W, H, A, C]``."""
    B, AC, H, W = t.shape
    return t.view(B, A, AC // A, H, W).permute(0, 4, 3, 1, 2)


class CalipsoNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config)
        lo, hi = config.levels
        if config.share_weights_across_levels:
            self.interaction = InteractionNet(config)
        else:
            self.interaction = nn.ModuleDict({str(l): InteractionNet(config) for l in range(lo, hi + 1)})

    def _subnet(self, level: int) -> InteractionNet:
        if self.config.share_weights_across_levels:
            return self.interaction
        return self.interaction[str(level)]

    def check_input(self, height: int, width: int) -> None:
        l_max = self.config.levels[1]
        if height // 2**l_max < 1 or width // 2**l_max < 1:
            raise ConfigError(f"image {width}x{height} is too small for pyramid level {l_max}")

    def forward_levels(self, x: torch.Tensor) -> dict[int, dict[str, Optional[torch.Tensor]]]:
        """Raw logits/embeddings per level, each ``[B, W_l, H_l, A, C]``."""
        self.check_input(x.shape[2], x.shape[3])
        feats = self.backbone(x)
        A = self.config.A
        out = {}
        for l in range(self.config.levels[0], self.config.levels[1] + 1):
            f = feats[l]
            Wl, Hl = x.shape[3] // 2**l, x.shape[2] // 2**l
            f = f[:, :, :Hl, :Wl]
            o = self._subnet(l)(f)
            out[l] = {k: None if v is None else _to_anchor_major(v, A) for k, v in o.items()}
        return out

    def forward(self, x: torch.Tensor) -> dict[str, Optional[torch.Tensor]]:
        """Flat per-anchor outputs in anchor-grid order: ``verb``/``target`` logits ``[B, N, C]``, ``emb`` ``[B, N, V, T]``."""
        lv = self.forward_levels(x)
        B = x.shape[0]
        cfg = self.config

        def cat(key, tail):
            parts = [lv[l][key] for l in sorted(lv)]
            if parts[0] is None:
                return None
            return torch.cat([p.reshape(B, -1, *tail) for p in parts], dim=1)

        return {
            "verb": cat("verb", (cfg.verb_channels,)),
            "target": cat("target", (2 * cfg.V,)),
            "emb": cat("emb", (cfg.V, cfg.T)),
        }


def image_to_tensor(images: Union[np.ndarray, list]) -> torch.Tensor:
    """``(H, W, C)`` uint8 image(s) -> float ``[B, C, H, W]`` in [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).float() / 255.0


@torch.no_grad()
def forward(image: np.ndarray, model: CalipsoNet) -> DenseOutputs:
    """One pass over the whole image; scores squashed to [0, 1], embeddings raw."""
    model.check_input(image.shape[0], image.shape[1])
    lv = model.forward_levels(image_to_tensor(image))
    levels = []
    for l in sorted(lv):
        o = lv[l]
        levels.append(LevelOutputs(
            level=l,
            verb_scores=torch.sigmoid(o["verb"][0]).numpy(),
            target_scores=None if o["target"] is None else torch.sigmoid(o["target"][0]).numpy(),
            embeddings=o["emb"][0].reshape(*o["emb"].shape[1:4], model.config.V, model.config.T).numpy(),
        ))
    return DenseOutputs(levels)


def interaction_parameter_count(model: CalipsoNet) -> int:
    return sum(p.numel() for p in model.interaction.parameters())


# -- operation counting ---------------------------------------------------------

class OpCounter:
    """Counts arithmetic of leaf modules during forward passes via hooks.

    Convolutions and linear layers count multiply-accumulates; normalisation,
    activations and resampling count one op per output element.
    """

    def __init__(self, model: nn.Module):
        self.model = model
        self.total = 0
        self.calls = 0
        self._handles = []

    def _hook(self, module, inputs, output):
        if isinstance(module, nn.Conv2d):
            per_out = module.in_channels // module.groups * module.kernel_size[0] * module.kernel_size[1]
            self.total += output.numel() * per_out
        elif isinstance(module, nn.Linear):
            self.total += output.numel() * module.in_features
        elif isinstance(module, nn.BatchNorm2d):
            self.total += 2 * output.numel()
        elif isinstance(module, (nn.ReLU, nn.Upsample, nn.AdaptiveAvgPool2d, nn.MaxPool2d)):
            self.total += output.numel()

    def __enter__(self) -> "OpCounter":
        for m in self.model.modules():
            if len(list(m.children())) == 0:
                self._handles.append(m.register_forward_hook(self._hook))
        self._handles.append(self.model.register_forward_hook(self._count_call))
        return self

    def _count_call(self, *_):
        self.calls += 1

    def __exit__(self, *exc):
        for h in self._handles:
            h.remove()
        self._handles.clear()


def count_forward_ops(model: CalipsoNet, image: np.ndarray) -> int:
    with OpCounter(model) as oc:
        forward(image, model)
    return oc.total


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path: Union[str, Path], model: CalipsoNet, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format": CHECKPOINT_FORMAT, "config": model.config.to_dict(), "config_hash": model.config.hash(),
            "extra": extra or {}}
    arrays = {"__meta__": np.array(json.dumps(meta))}
    arrays.update({f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()})
    # same layout as np.savez, but with fixed member timestamps so equal weights give equal bytes
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            with zf.open(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), "w") as f:
                np.lib.format.write_array(f, np.asanyarray(arr), allow_pickle=False)
    return path


def load_checkpoint(path: Union[str, Path], config: Optional[NetworkConfig] = None) -> tuple[CalipsoNet, dict]:
    """Rebuild the model stored at ``path``; refuse when ``config`` hashes differently from the stored one."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')}")
        stored = NetworkConfig.from_dict(meta["config"])
        if stored.hash() != meta["config_hash"]:
            raise CheckpointError(f"{path}: stored config does not match its hash")
        if config is not None and config.hash() != meta["config_hash"]:
            raise CheckpointError(f"{path}: config hash {config.hash()} differs from checkpoint {meta['config_hash']}")
        state = {k[len("param/"):]: torch.from_numpy(z[k]) for k in z.files if k.startswith("param/")}
    model = CalipsoNet(stored)
    model.load_state_dict(state)
    model.eval()
    return model, meta.get("extra", {})
