"""Training loop: curriculum-scheduled augmentation, dual contrastive loss, per-epoch mining."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .curriculum import SCHEDULE_FUNCTIONS, CurriculumState, ScheduleSpec, curriculum_for_epoch
from .data import ScenePair, load_split
from .encoder import DualEncoder, EncoderSpec, encode, images_to_tensor, load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericError
from .evaluation import evaluate_fov_protocol
from .imaging import (SATELLITE_MODES, GroundTransformParams, SatelliteTransformParams, ViewImage,
                      color_augment, transform_ground, transform_satellite)
from .mining import MiningPlan, build_mining_plan, random_plan
from .objectives import EmbeddingBatch, LossWeights, needs_augmented_views, total_loss

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "theta", "p", "lr", "loss", "val_r1"]


@dataclass
class RunConfig:
    train_manifest: str = ""
    eval_manifest: str = ""
    # encoder
    embedding_dim: int = 64
    channels: tuple = (16, 32, 64, 64)
    strides: tuple = (2, 2, 2, 1)
    satellite_input_pool: int = 2
    share_weights: bool = False
    # objective
    omega1: float = 0.25
    omega2: float = 0.25
    omega3: float = 0.25
    gamma: float = 0.5
    tau: float = 0.07
    learn_temperature: bool = False
    label_smoothing: float = 0.1
    # curriculum
    theta_init: float = 360.0
    theta_final: float = 70.0
    theta_schedule: str = "linear"
    theta_lambda: float = 3.0
    fov_mode: str = "exact"
    pad_to_full: bool = False
    satellite_mode: str = "discrete_rotation"
    satellite_init: float = 1.0
    satellite_final: float = 0.25
    satellite_schedule: str = "linear"
    satellite_lambda: float = 3.0
    color_strength: float = 0.2
    # optimisation
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.01
    cosine_decay: bool = True
    dtype: str = "float32"
    # mining
    mining: bool = True
    mining_source: str = "satellite"
    remainder_policy: str = "keep"
    # bookkeeping
    seed: int = 0
    val_every: int = 0
    val_fovs: tuple = (360.0,)
    checkpoint_every: int = 0

    def validate(self) -> None:
        if not self.train_manifest:
            raise ConfigError("missing required key: train_manifest")
        if self.batch_size < 2:
            raise ConfigError(f"degenerate batch: batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        for name in ("theta_schedule", "satellite_schedule"):
            if getattr(self, name) not in SCHEDULE_FUNCTIONS:
                raise ConfigError(f"{name}: unknown scheduling function {getattr(self, name)!r}")
        if self.satellite_mode not in SATELLITE_MODES:
            raise ConfigError(f"satellite_mode: unknown mode {self.satellite_mode!r}")
        choices = {"fov_mode": ("exact", "mixed"), "dtype": ("float32", "float64"),
                   "mining_source": ("satellite", "ground_star"), "remainder_policy": ("keep", "merge")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if len(self.channels) != len(self.strides):
            raise ConfigError("channels and strides must have the same length")
        try:
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_weights(self, tau=None) -> LossWeights:
        return LossWeights(self.omega1, self.omega2, self.omega3, self.gamma,
                           self.tau if tau is None else tau, self.label_smoothing)

    def theta_spec(self) -> ScheduleSpec:
        return ScheduleSpec(self.theta_init, self.theta_final, self.epochs, self.theta_schedule,
                            self.theta_lambda, self.seed)

    def satellite_spec(self) -> ScheduleSpec:
        return ScheduleSpec(self.satellite_init, self.satellite_final, self.epochs,
                            self.satellite_schedule, self.satellite_lambda, self.seed)

    def encoder_specs(self) -> tuple[EncoderSpec, EncoderSpec]:
        ground = EncoderSpec(self.embedding_dim, tuple(self.channels), tuple(self.strides), 1)
        sat = EncoderSpec(self.embedding_dim, tuple(self.channels), tuple(self.strides),
                          self.satellite_input_pool)
        return ground, sat

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _convert(name: str, default, raw: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            item = type(default[0]) if default else float
            return tuple(item(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_config(text: str, base_dir: str | Path | None = None, **overrides) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed); unknown keys are rejected."""
    defaults = RunConfig()
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, getattr(defaults, key), raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    if base_dir is not None:
        for key in ("train_manifest", "eval_manifest"):
            p = getattr(cfg, key)
            if p and not Path(p).is_absolute():
                setattr(cfg, key, str(Path(base_dir) / p))
    cfg.validate()
    return cfg


def load_config(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent, **overrides)


@dataclass
class TrainState:
    epoch: int
    model: DualEncoder
    optimizer: torch.optim.Optimizer
    plan: MiningPlan
    log_tau: torch.nn.Parameter | None = None
    curriculum: CurriculumState | None = None
    history: list[dict] = field(default_factory=list)
    train_data: list[ScenePair] = field(default_factory=list, repr=False)
    eval_data: list[ScenePair] = field(default_factory=list, repr=False)


def learning_rate(config: RunConfig, epoch: int) -> float:
    if not config.cosine_decay:
        return config.lr
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample stream; results never depend on worker count or visiting order."""
    return np.random.default_rng([seed, epoch, index])


def _plan_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, 31337])


def augment_pair(pair: ScenePair, config: RunConfig, cs: CurriculumState,
                 rng: np.random.Generator) -> tuple[ViewImage, ViewImage]:
    """The augmented ground and satellite views of one training pair."""
    alpha = float(rng.uniform(0.0, 360.0))
    theta = cs.theta
    if config.fov_mode == "mixed":
        lo, hi = sorted((cs.theta, config.theta_init))
        theta = float(rng.uniform(lo, hi))
    g_star = transform_ground(pair.panorama, GroundTransformParams(alpha, theta, config.pad_to_full))
    if config.satellite_mode == "discrete_rotation":
        sat_params = SatelliteTransformParams("discrete_rotation", p=cs.p)
    else:
        phi = float(rng.uniform(-cs.phi, cs.phi)) if cs.phi else 0.0
        sat_params = SatelliteTransformParams(config.satellite_mode, phi=phi)
    s_star = transform_satellite(pair.satellite, sat_params, rng)
    g_star = color_augment(g_star, config.color_strength, rng)
    s_star = color_augment(s_star, config.color_strength, rng)
    return g_star, s_star


def _encode_train(module, images: Sequence[ViewImage], dtype) -> torch.Tensor:
    """Training-mode forward; images of different widths are encoded per width group."""
    widths = {im.width for im in images}
    if len(widths) == 1:
        return module(images_to_tensor(images, dtype))
    out = [None] * len(images)
    for w in sorted(widths):
        idx = [i for i, im in enumerate(images) if im.width == w]
        emb = module(images_to_tensor([images[i] for i in idx], dtype))
        for j, i in enumerate(idx):
            out[i] = emb[j]
    return torch.stack(out)


def _param_norms(model: torch.nn.Module) -> dict[str, float]:
    return {name: float(p.detach().norm()) for name, p in model.named_parameters()}


def mining_embeddings(state: TrainState, config: RunConfig, epoch: int):
    data = state.train_data
    ids = [p.id for p in data]
    if config.mining_source == "satellite":
        return encode(state.model.satellite, [p.satellite for p in data], ids)
    cs = curriculum_for_epoch(config.theta_spec(), config.satellite_spec(), min(epoch, config.epochs),
                              config.satellite_mode)
    views = [augment_pair(p, config, cs, sample_rng(config.seed, epoch, i))[0]
             for i, p in enumerate(data)]
    if len({v.width for v in views}) == 1:
        return encode(state.model.ground, views, ids)
    state.model.eval()
    with torch.no_grad():
        vecs = _encode_train(state.model.ground, views, config.torch_dtype)
    state.model.train()
    return EmbeddingBatch(vecs, ids)


def train_epoch(state: TrainState, config: RunConfig, out_dir: str | Path | None = None) -> TrainState:
    t = state.epoch
    if t >= config.epochs:
        raise ConfigError(f"training already finished ({t} of {config.epochs} epochs)")
    cs = curriculum_for_epoch(config.theta_spec(), config.satellite_spec(), t, config.satellite_mode)
    lr = learning_rate(config, t)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    dtype = config.torch_dtype
    index = {p.id: i for i, p in enumerate(state.train_data)}
    augmented = needs_augmented_views(config.loss_weights())
    model = state.model
    model.train()
    losses = []
    for batch_ids in state.plan.batches:
        if len(batch_ids) < 2:
            continue
        idx = [index[i] for i in batch_ids]
        pairs = [state.train_data[i] for i in idx]
        g = model.ground(images_to_tensor([p.panorama for p in pairs], dtype))
        s = model.satellite(images_to_tensor([p.satellite for p in pairs], dtype))
        g_star = s_star = None
        if augmented:
            views = [augment_pair(p, config, cs, sample_rng(config.seed, t, i)) for p, i in zip(pairs, idx)]
            g_star = _encode_train(model.ground, [v[0] for v in views], dtype)
            s_star = model.satellite(images_to_tensor([v[1] for v in views], dtype))
        tau = state.log_tau.exp() if state.log_tau is not None else config.tau
        finite = all(torch.isfinite(v).all() for v in (g, s, g_star, s_star) if v is not None)
        loss = total_loss(g, g_star, s, s_star, config.loss_weights(tau)) if finite else None
        if loss is None or not torch.isfinite(loss):
            diag = {"epoch": t, "batch_ids": list(batch_ids), "parameter_norms": _param_norms(model)}
            if out_dir is not None:
                Path(out_dir, "diagnostic.json").write_text(json.dumps(diag, indent=2))
            raise NumericError(f"non-finite loss at epoch {t}, batch {list(batch_ids)}; "
                               f"parameter norms {diag['parameter_norms']}")
        state.optimizer.zero_grad()
        loss.backward()
        state.optimizer.step()
        losses.append(float(loss.detach()))

    next_epoch = t + 1
    if next_epoch < config.epochs:
        ids = [p.id for p in state.train_data]
        rng = _plan_rng(config.seed, next_epoch)
        if config.mining:
            emb = mining_embeddings(state, config, next_epoch)
            state.plan = build_mining_plan(emb, config.batch_size, rng, next_epoch,
                                           config.remainder_policy, config.mining_source)
        else:
            state.plan = random_plan(ids, config.batch_size, rng, next_epoch, config.remainder_policy)

    val_r1 = None
    every = config.val_every or max(1, config.epochs // 10)
    if state.eval_data and (next_epoch % every == 0 or next_epoch == config.epochs):
        report = evaluate_fov_protocol(model, state.eval_data, config.val_fovs, seed=config.seed,
                                       pad_to_full=config.pad_to_full)
        val_r1 = report.average_r1
    state.history.append({
        "epoch": t,
        "theta": cs.theta,
        "p": cs.satellite_value,
        "lr": lr,
        "loss": float(np.mean(losses)) if losses else float("nan"),
        "val_r1": val_r1,
    })
    state.curriculum = cs
    state.epoch = next_epoch
    log.info("epoch %d theta=%.1f p=%.3f lr=%.2e loss=%.5f val_r1=%s", t, cs.theta,
             cs.satellite_value, lr, state.history[-1]["loss"], val_r1)
    return state


def write_metrics(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in history:
            writer.writerow(["" if row[k] is None else repr(row[k]) if isinstance(row[k], float)
                             else row[k] for k in METRICS_HEADER])


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (int(v) if k == "epoch" else float(v) if v != "" else None)
                    for k, v in row.items()})
    return out


def _load_pairs(path: str) -> list[ScenePair]:
    if not path:
        return []
    if not Path(path).is_file():
        raise ConfigError(f"manifest not found: {path}")
    return list(load_split(path))


def init_state(config: RunConfig, train_data: list[ScenePair] | None = None,
               eval_data: list[ScenePair] | None = None) -> TrainState:
    config.validate()
    if train_data is None:
        train_data = _load_pairs(config.train_manifest)
    if eval_data is None:
        eval_data = _load_pairs(config.eval_manifest)
    if len(train_data) < config.batch_size:
        raise ConfigError(f"training set of {len(train_data)} pairs is smaller than batch_size "
                          f"{config.batch_size}")
    torch.manual_seed(config.seed)
    ground_spec, sat_spec = config.encoder_specs()
    model = DualEncoder.build(ground_spec, sat_spec, config.share_weights).to(config.torch_dtype)
    params = list(model.parameters())
    log_tau = None
    if config.learn_temperature:
        log_tau = torch.nn.Parameter(torch.tensor(math.log(config.tau), dtype=config.torch_dtype))
        params.append(log_tau)
    optimizer = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    plan = random_plan([p.id for p in train_data], config.batch_size, _plan_rng(config.seed, 0),
                       0, config.remainder_policy)
    return TrainState(0, model, optimizer, plan, log_tau, train_data=train_data, eval_data=eval_data)


def save_state(state: TrainState, config: RunConfig, path: str | Path) -> None:
    ground_spec, sat_spec = config.encoder_specs()
    extra = {
        "epoch": state.epoch,
        "optimizer": state.optimizer.state_dict(),
        "log_tau": None if state.log_tau is None else state.log_tau.detach().clone(),
        "curriculum": None if state.curriculum is None else dataclasses.asdict(state.curriculum),
        "plan": dataclasses.asdict(state.plan),
        "history": state.history,
    }
    save_checkpoint(path, state.model, ground_spec, sat_spec, config.share_weights, extra,
                    config.to_text())


def resume_state(path: str | Path, config: RunConfig, train_data=None, eval_data=None) -> TrainState:
    state = init_state(config, train_data, eval_data)
    model, payload = load_checkpoint(path)
    if payload["config_hash"] != config.digest():
        raise ConfigError(f"checkpoint {path} was written with a different configuration")
    state.model.load_state_dict(model.state_dict())
    if payload["log_tau"] is not None:
        with torch.no_grad():
            state.log_tau.copy_(payload["log_tau"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.epoch = payload["epoch"]
    state.plan = MiningPlan(**payload["plan"])
    state.history = list(payload["history"])
    if payload["curriculum"] is not None:
        state.curriculum = CurriculumState(**payload["curriculum"])
    return state


def run_training(config: RunConfig, out_dir: str | Path, resume: str | Path | None = None,
                 train_data=None, eval_data=None) -> TrainState:
    """Train for ``config.epochs`` epochs, writing ``last.pt`` and ``metrics.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = resume_state(resume, config, train_data, eval_data)
    else:
        state = init_state(config, train_data, eval_data)
    (out / "config.txt").write_text(config.to_text())
    while state.epoch < config.epochs:
        train_epoch(state, config, out)
        save_state(state, config, out / "last.pt")
        if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            save_state(state, config, out / f"epoch_{state.epoch:04d}.pt")
        write_metrics(state.history, out / "metrics.csv")
    return state
