"""Run configuration: presets, flat dotted-key overrides and validation."""
import dataclasses
import json
from dataclasses import dataclass, field

PRESETS = ("paper", "desk")
MODES = ("full", "vit_only", "gnn_only", "no_attention")


class ConfigError(ValueError):
    pass


@dataclass
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    mlp_dim: int = 128
    channels: int = 3
    dropout: float = 0.0
    pixel_mean: float = 0.5  # inputs are standardized before patch embedding
    pixel_std: float = 0.5

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def n_patches(self):
        return self.grid ** 2

    @property
    def patch_dim(self):
        return self.channels * self.patch_size ** 2


@dataclass
class GcnConfig:
    hidden: int = 64
    dropout: float = 0.2


@dataclass
class FusionConfig:
    d_model: int = 128
    n_heads: int = 4

    @property
    def head_dim(self):
        return self.d_model // self.n_heads


@dataclass
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 16
    tau: float = 0.5
    lambda_nce: float = 1.0
    use_ce: bool = True
    patience: int = 5
    seed: int = 0
    preset: str = "desk"


@dataclass
class VizConfig:
    low: tuple = (32, 32, 32)
    high: tuple = (255, 255, 0)
    alpha: float = 0.5


@dataclass
class RunConfig:
    preset: str = "desk"
    vit: ViTConfig = field(default_factory=ViTConfig)
    gcn: GcnConfig = field(default_factory=GcnConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    viz: VizConfig = field(default_factory=VizConfig)

    def to_flat(self):
        flat = {"preset": self.preset}
        for section in ("vit", "gcn", "fusion", "train", "viz"):
            for k, v in dataclasses.asdict(getattr(self, section)).items():
                flat[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return flat

    def to_json(self):
        return json.dumps(self.to_flat(), indent=2, sort_keys=True)

    def validate(self):
        v, f, t = self.vit, self.fusion, self.train
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        for name in ("image_size", "patch_size", "embed_dim", "n_layers", "n_heads", "mlp_dim", "channels"):
            if getattr(v, name) < 1:
                raise ConfigError(f"vit.{name} must be positive")
        if v.pixel_std <= 0:
            raise ConfigError("vit.pixel_std must be positive")
        if v.image_size % v.patch_size:
            raise ConfigError(f"vit.patch_size {v.patch_size} does not divide image_size {v.image_size}")
        if v.image_size % 2:
            raise ConfigError("vit.image_size must be even for the quadrant split")
        if v.embed_dim % v.n_heads:
            raise ConfigError(f"vit.embed_dim {v.embed_dim} not divisible by vit.n_heads {v.n_heads}")
        if f.d_model < 1 or f.n_heads < 1 or f.d_model % f.n_heads:
            raise ConfigError(f"fusion.d_model {f.d_model} not divisible by fusion.n_heads {f.n_heads}")
        if self.gcn.hidden < 1:
            raise ConfigError("gcn.hidden must be positive")
        for name, p in (("vit.dropout", v.dropout), ("gcn.dropout", self.gcn.dropout)):
            if not 0 <= p < 1:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if t.tau <= 0:
            raise ConfigError("train.tau must be positive")
        if not (0 < t.beta1 < 1 and 0 < t.beta2 < 1):
            raise ConfigError("train.beta1 and train.beta2 must lie in (0, 1)")
        if t.patience < 1 or t.epochs < 1 or t.batch_size < 1:
            raise ConfigError("train.patience, train.epochs and train.batch_size must be >= 1")
        if t.lr < 0 or t.weight_decay < 0 or t.eps <= 0:
            raise ConfigError("train.lr and train.weight_decay must be >= 0, train.eps > 0")
        if len(self.viz.low) != 3 or len(self.viz.high) != 3:
            raise ConfigError("viz.low and viz.high must be RGB triples")
        if not 0 <= self.viz.alpha <= 1:
            raise ConfigError("viz.alpha must lie in [0, 1]")
        return self


def preset(name):
    """Default configuration for preset ``name``."""
    if name == "desk":
        cfg = RunConfig(preset="desk")
    elif name == "paper":
        cfg = RunConfig(
            preset="paper",
            vit=ViTConfig(image_size=224, patch_size=16, embed_dim=768, n_layers=12,
                          n_heads=12, mlp_dim=3072),
            gcn=GcnConfig(hidden=256),
            fusion=FusionConfig(d_model=1024, n_heads=8),
            train=TrainConfig(lr=5e-6, batch_size=32, preset="paper"),
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return cfg


def apply_overrides(cfg, overrides):
    """Apply flat dotted-key overrides in place. Unknown keys are errors."""
    for key, value in overrides.items():
        if key == "preset":
            continue
        section, _, name = key.partition(".")
        sub = getattr(cfg, section, None)
        if not name or not dataclasses.is_dataclass(sub) or name not in {
            f.name for f in dataclasses.fields(sub)
        }:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(sub, name)
        try:
            if isinstance(current, bool):
                if isinstance(value, str):
                    value = value.strip().lower() in ("1", "true", "yes", "on")
                value = bool(value)
            elif isinstance(current, int):
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError(value)
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            elif isinstance(current, tuple):
                value = tuple(int(x) for x in value)
            else:
                value = type(current)(value)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value {value!r} for config key {key!r}") from None
        setattr(sub, name, value)
    cfg.train.preset = cfg.preset
    return cfg


def load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object of dotted keys")
    return data


def resolve(preset_name="desk", config_path=None, overrides=None):
    """Preset defaults < config file < explicit overrides, then validated."""
    file_values = load_config_file(config_path) if config_path else {}
    name = preset_name or file_values.get("preset", "desk")
    cfg = preset(name)
    apply_overrides(cfg, file_values)
    apply_overrides(cfg, overrides or {})
    return cfg.validate()


def from_flat(flat):
    cfg = preset(flat.get("preset", "desk"))
    return apply_overrides(cfg, flat).validate()
