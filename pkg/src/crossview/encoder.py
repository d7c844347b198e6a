"""Dual-branch encoders and gradient-based attribution heatmaps.

Any ``nn.Module`` exposing ``features(x)`` (last spatial stage, ``N x C x H' x W'``)
and ``head(fmap)`` (unit-norm embedding) can be used as an encoder; the
small convolutional network here is the default.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CapabilityError, CheckpointError, GeometryError, KindError, NumericError
from .imaging import GROUND, SATELLITE, HeatMap, ViewImage
from .objectives import EmbeddingBatch

BRANCH_KIND = {"ground": GROUND, "satellite": SATELLITE}
CHECKPOINT_FORMAT = "crossview-checkpoint/1"


@dataclass
class EncoderSpec:
    embedding_dim: int = 64
    channels: tuple[int, ...] = (16, 32, 64, 64)
    strides: tuple[int, ...] = (2, 2, 2, 1)
    input_pool: int = 1
    circular: bool = False
    in_channels: int = 3
    norm: str = "group"
    center_input: bool = True


class CircularWidthConv(nn.Conv2d):
    """3x3 convolution that wraps around horizontally and zero-pads vertically."""

    def forward(self, x):
        x = F.pad(x, (1, 1, 0, 0), mode="circular")
        x = F.pad(x, (0, 0, 1, 1))
        return self._conv_forward(x, self.weight, self.bias)


class ConvEncoder(nn.Module):
    attribution_layer = "stages.-1"

    def __init__(self, branch: str, spec: EncoderSpec | None = None):
        super().__init__()
        if branch not in BRANCH_KIND:
            raise ValueError(f"unknown branch {branch!r}")
        spec = spec or EncoderSpec()
        if len(spec.channels) != len(spec.strides):
            raise ValueError("channels and strides must have the same length")
        self.branch = branch
        self.spec = spec
        stages = []
        c_in = spec.in_channels
        for c_out, stride in zip(spec.channels, spec.strides):
            if spec.circular:
                conv = CircularWidthConv(c_in, c_out, 3, stride=stride, padding=0)
            else:
                conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
            layers = [conv]
            if spec.norm == "group":
                layers.append(nn.GroupNorm(min(8, c_out), c_out))
            elif spec.norm != "none":
                raise ValueError(f"unknown norm {spec.norm!r}")
            stages.append(nn.Sequential(*layers, nn.ReLU()))
            c_in = c_out
        self.stages = nn.ModuleList(stages)
        self.proj = nn.Linear(c_in, spec.embedding_dim)

    @property
    def embedding_dim(self) -> int:
        return self.spec.embedding_dim

    @property
    def kind(self) -> str:
        return BRANCH_KIND[self.branch]

    def tied(self, branch: str, input_pool: int) -> "ConvEncoder":
        """A second branch sharing every parameter with this one."""
        twin = ConvEncoder.__new__(ConvEncoder)
        nn.Module.__init__(twin)
        twin.branch = branch
        twin.spec = EncoderSpec(**{**asdict(self.spec), "input_pool": input_pool})
        twin.stages = self.stages
        twin.proj = self.proj
        return twin

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if self.spec.center_input:
            x = x - 0.5
        if self.spec.input_pool > 1:
            x = F.avg_pool2d(x, self.spec.input_pool)
        for stage in self.stages:
            x = stage(x)
        return x

    def head(self, fmap: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.proj(fmap.mean(dim=(2, 3))), dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class DualEncoder(nn.Module):
    """Ground and satellite branches; parameters are deduplicated when shared."""

    def __init__(self, ground: nn.Module, satellite: nn.Module):
        super().__init__()
        self.ground = ground
        self.satellite = satellite

    @classmethod
    def build(cls, ground_spec: EncoderSpec, satellite_spec: EncoderSpec,
              share_weights: bool = False) -> "DualEncoder":
        ground = ConvEncoder("ground", ground_spec)
        if share_weights:
            satellite = ground.tied("satellite", satellite_spec.input_pool)
        else:
            satellite = ConvEncoder("satellite", satellite_spec)
        return cls(ground, satellite)


def images_to_tensor(images: Sequence[ViewImage] | ViewImage, dtype=torch.float32) -> torch.Tensor:
    if isinstance(images, ViewImage):
        images = [images]
    shapes = {im.pixels.shape for im in images}
    if len(shapes) != 1:
        raise GeometryError(f"images in one batch must share a shape, got {sorted(shapes)}")
    arr = np.stack([im.pixels for im in images])
    return torch.from_numpy(arr).to(dtype).permute(0, 3, 1, 2).contiguous()


def _param_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def encode(handle: nn.Module, images: Sequence[ViewImage], ids: Sequence[str] | None = None,
           chunk: int = 64) -> EmbeddingBatch:
    """Inference-mode embeddings of ``images`` (all of the handle's branch kind)."""
    kind = getattr(handle, "kind", None)
    for im in images:
        if kind is not None and im.kind != kind:
            raise KindError(f"{handle.branch} encoder cannot encode a {im.kind} image")
    was_training = handle.training
    handle.eval()
    dtype = _param_dtype(handle)
    out = []
    with torch.no_grad():
        for start in range(0, len(images), chunk):
            out.append(handle(images_to_tensor(images[start:start + chunk], dtype)))
    handle.train(was_training)
    vectors = torch.cat(out) if out else torch.zeros(0, handle.embedding_dim, dtype=dtype)
    if not torch.all(torch.isfinite(vectors)):
        raise NumericError("encoder produced non-finite embeddings")
    if ids is None:
        ids = [str(i) for i in range(len(images))]
    return EmbeddingBatch(vectors, list(ids))


def minmax_normalize(cam: np.ndarray) -> np.ndarray:
    lo, hi = float(cam.min()), float(cam.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        # constant map: keep zeros as zeros, flag a positive constant as uniform activation
        return np.full_like(cam, 1.0 if hi > 0 else 0.0)
    return (cam - lo) / (hi - lo)


def attribution_heatmap(query_embedding, handle: nn.Module, reference: ViewImage) -> HeatMap:
    """Grad-CAM of the cosine similarity between ``query_embedding`` and ``reference``.

    Channel weights are the spatially averaged gradients of the score with
    respect to the last feature stage; the rectified weighted sum is
    bilinearly upsampled to the reference size and min-max normalized.
    """
    if not (callable(getattr(handle, "features", None)) and callable(getattr(handle, "head", None))):
        raise CapabilityError("encoder does not expose features()/head() for attribution")
    dtype = _param_dtype(handle)
    q = torch.as_tensor(np.asarray(query_embedding), dtype=dtype).reshape(-1)
    x = images_to_tensor(reference, dtype)
    was_training = handle.training
    handle.eval()
    with torch.enable_grad():
        with torch.no_grad():
            fmap = handle.features(x)
        if fmap.ndim != 4:
            raise CapabilityError("features() must return an N x C x H x W map")
        # gradients are only needed from the feature map onwards
        fmap = fmap.detach().requires_grad_(True)
        emb = handle.head(fmap)[0]
        score = F.cosine_similarity(q, emb, dim=0)
        (grads,) = torch.autograd.grad(score, fmap)
    handle.train(was_training)
    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * fmap).sum(dim=1, keepdim=True)).detach()
    cam = F.interpolate(cam, size=(reference.height, reference.width), mode="bilinear",
                        align_corners=False)
    values = minmax_normalize(cam[0, 0].to(torch.float64).numpy())
    return HeatMap(values, reference.kind, reference.width_degrees, score=float(score.detach()))


def save_checkpoint(path: str | Path, model: DualEncoder, ground_spec: EncoderSpec,
                    satellite_spec: EncoderSpec, share_weights: bool, extra: dict | None = None,
                    config_text: str = "") -> None:
    """Self-describing checkpoint: architecture, parameters, and training metadata."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "architecture": {
            "ground": asdict(ground_spec),
            "satellite": asdict(satellite_spec),
            "share_weights": share_weights,
            "dtype": str(_param_dtype(model)).replace("torch.", ""),
        },
        "parameters": model.state_dict(),
        "config_text": config_text,
        "config_hash": hashlib.sha256(config_text.encode()).hexdigest(),
        **(extra or {}),
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def _spec_from_dict(d: dict) -> EncoderSpec:
    d = dict(d)
    d["channels"] = tuple(d["channels"])
    d["strides"] = tuple(d["strides"])
    return EncoderSpec(**d)


def load_checkpoint(path: str | Path) -> tuple[DualEncoder, dict]:
    path = Path(path)
    if not path.exists() and path.with_suffix(".pt").exists():
        path = path.with_suffix(".pt")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a crossview checkpoint")
    arch = payload["architecture"]
    model = DualEncoder.build(_spec_from_dict(arch["ground"]), _spec_from_dict(arch["satellite"]),
                              arch["share_weights"])
    model.to(getattr(torch, arch["dtype"]))
    model.load_state_dict(payload["parameters"])
    return model, payload
