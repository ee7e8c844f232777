"""Run configuration: a flat dotted-key text format, diff-friendly for
sweeps.

Each non-blank line is ``section.key = value``; ``#`` starts a comment.
parse -> serialize -> parse is a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import augment as aug
from . import models, objectives, schedules


class ConfigError(ValueError):
    pass


OBJECTIVES = ("sce", "infonce", "ressl", "combined")
DATASET_KINDS = ("blobs", "cifar10", "cifar100")


@dataclass
class RunConfig:
    objective: str = "sce"
    obj: objectives.ObjectiveConfig = field(
        default_factory=objectives.ObjectiveConfig)
    schedule: schedules.ScheduleConfig = field(
        default_factory=schedules.ScheduleConfig)
    encoder: models.EncoderSpec = field(default_factory=models.EncoderSpec)
    projector: models.ProjectorSpec = field(
        default_factory=models.ProjectorSpec)
    queue_size: int = 1024
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    output_dir: str = "runs/out"
    dataset_kind: str = "blobs"
    dataset_path: str = ""
    blobs_classes: int = 4
    blobs_per_class: int = 500
    blobs_noise_sigma: float = 0.1
    holdout: int = 400
    strong_aug: aug.AugmentationPolicy | None = None
    weak_aug: aug.AugmentationPolicy | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; "
                              f"expected one of {OBJECTIVES}")
        if self.dataset_kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.dataset_kind!r}")
        if self.strong_aug is None:
            self.strong_aug = aug.strong_policy(self.encoder.in_size)
        if self.weak_aug is None:
            self.weak_aug = aug.weak_policy(self.encoder.in_size)
        self.projector.in_dim = self.encoder.feature_dim
        self.schedule.batch_size = self.batch_size
        self.schedule.total_epochs = self.epochs

    def to_flat(self) -> dict[str, str]:
        o, s, e, p = self.obj, self.schedule, self.encoder, self.projector
        flat = {
            "objective.kind": self.objective,
            "objective.lam": _fmt(o.lam),
            "objective.mu": "" if o.mu is None else _fmt(o.mu),
            "objective.eta": "" if o.eta is None else _fmt(o.eta),
            "objective.tau": _fmt(o.tau),
            "objective.tau_m": _fmt(o.tau_m),
            "objective.mask_self_in_target": _fmt(o.mask_self_in_target),
            "schedule.base_lr": _fmt(s.base_lr),
            "schedule.reference_batch": _fmt(s.reference_batch),
            "schedule.warmup_epochs": _fmt(s.warmup_epochs),
            "schedule.ema_base": _fmt(s.ema_base),
            "schedule.momentum": _fmt(s.momentum),
            "schedule.weight_decay": _fmt(s.weight_decay),
            "encoder.in_channels": _fmt(e.in_channels),
            "encoder.in_size": _fmt(e.in_size),
            "encoder.widths": ",".join(str(w) for w in e.widths),
            "projector.hidden_dim": _fmt(p.hidden_dim),
            "projector.out_dim": _fmt(p.out_dim),
            "projector.hidden_batchnorm": _fmt(p.hidden_batchnorm),
            "run.queue_size": _fmt(self.queue_size),
            "run.batch_size": _fmt(self.batch_size),
            "run.epochs": _fmt(self.epochs),
            "run.seed": _fmt(self.seed),
            "run.output_dir": self.output_dir,
            "data.kind": self.dataset_kind,
            "data.path": self.dataset_path,
            "data.classes": _fmt(self.blobs_classes),
            "data.per_class": _fmt(self.blobs_per_class),
            "data.noise_sigma": _fmt(self.blobs_noise_sigma),
            "data.holdout": _fmt(self.holdout),
        }
        for prefix, pol in (("augment.strong", self.strong_aug),
                            ("augment.weak", self.weak_aug)):
            flat[f"{prefix}.crop_min_area"] = _fmt(pol.crop_min_area)
            flat[f"{prefix}.flip_p"] = _fmt(pol.flip_p)
            flat[f"{prefix}.color_p"] = _fmt(pol.color_p)
            flat[f"{prefix}.color_strength"] = _fmt(pol.color_strength)
            flat[f"{prefix}.grayscale_p"] = _fmt(pol.grayscale_p)
            flat[f"{prefix}.blur_p"] = _fmt(pol.blur_p)
        return flat

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "RunConfig":
        flat = dict(flat)
        g = _Getter(flat)
        obj = objectives.ObjectiveConfig(
            lam=g.num("objective.lam", 0.5),
            mu=g.opt_num("objective.mu"),
            eta=g.opt_num("objective.eta"),
            tau=g.num("objective.tau", 0.1),
            tau_m=g.num("objective.tau_m", 0.05),
            mask_self_in_target=g.flag("objective.mask_self_in_target", True),
        )
        encoder = models.EncoderSpec(
            in_channels=g.int("encoder.in_channels", 3),
            in_size=g.int("encoder.in_size", 32),
            widths=tuple(int(w) for w in
                         g.str("encoder.widths", "32,64,128").split(",")),
        )
        projector = models.ProjectorSpec(
            in_dim=encoder.feature_dim,
            hidden_dim=g.int("projector.hidden_dim", 512),
            out_dim=g.int("projector.out_dim", 256),
            hidden_batchnorm=g.flag("projector.hidden_batchnorm", True),
        )
        schedule = schedules.ScheduleConfig(
            base_lr=g.num("schedule.base_lr", 0.06),
            batch_size=g.int("run.batch_size", 64),
            reference_batch=g.int("schedule.reference_batch", 256),
            warmup_epochs=g.int("schedule.warmup_epochs", 5),
            total_epochs=g.int("run.epochs", 30),
            ema_base=g.num("schedule.ema_base", 0.996),
            momentum=g.num("schedule.momentum", 0.9),
            weight_decay=g.num("schedule.weight_decay", 5e-4),
        )

        def policy(prefix, default):
            return aug.AugmentationPolicy(
                crop_min_area=g.num(f"{prefix}.crop_min_area",
                                    default.crop_min_area),
                out_size=encoder.in_size,
                flip_p=g.num(f"{prefix}.flip_p", default.flip_p),
                color_p=g.num(f"{prefix}.color_p", default.color_p),
                color_strength=g.num(f"{prefix}.color_strength",
                                     default.color_strength),
                grayscale_p=g.num(f"{prefix}.grayscale_p",
                                  default.grayscale_p),
                blur_p=g.num(f"{prefix}.blur_p", default.blur_p),
            )

        cfg = cls(
            objective=g.str("objective.kind", "sce"),
            obj=obj,
            schedule=schedule,
            encoder=encoder,
            projector=projector,
            queue_size=g.int("run.queue_size", 1024),
            batch_size=g.int("run.batch_size", 64),
            epochs=g.int("run.epochs", 30),
            seed=g.int("run.seed", 0),
            output_dir=g.str("run.output_dir", "runs/out"),
            dataset_kind=g.str("data.kind", "blobs"),
            dataset_path=g.str("data.path", ""),
            blobs_classes=g.int("data.classes", 4),
            blobs_per_class=g.int("data.per_class", 500),
            blobs_noise_sigma=g.num("data.noise_sigma", 0.1),
            holdout=g.int("data.holdout", 400),
            strong_aug=policy("augment.strong",
                              aug.strong_policy(encoder.in_size)),
            weak_aug=policy("augment.weak", aug.weak_policy(encoder.in_size)),
        )
        unknown = set(flat) - set(cfg.to_flat())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cfg


class _Getter:
    def __init__(self, flat):
        self.flat = flat

    def str(self, key, default):
        return self.flat.get(key, default)

    def num(self, key, default):
        v = self.flat.get(key)
        if v is None or v == "":
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {v!r}")

    def opt_num(self, key):
        v = self.flat.get(key)
        if v is None or v == "":
            return None
        return self.num(key, None)

    def int(self, key, default):
        v = self.flat.get(key)
        if v is None or v == "":
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {v!r}")

    def flag(self, key, default):
        v = self.flat.get(key)
        if v is None or v == "":
            return default
        if v.lower() in ("true", "1", "yes"):
            return True
        if v.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str) -> RunConfig:
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = value
    return RunConfig.from_flat(flat)


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{k} = {v}" for k, v in sorted(cfg.to_flat().items())]
    return "\n".join(lines) + "\n"


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())
