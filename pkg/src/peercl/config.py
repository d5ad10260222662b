"""Experiment configuration: dataclasses with JSON round-trip and validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .augment import AugPolicy, ChainSpec
from .data import SyntheticSpec
from .errors import ConfigError
from .losses import SCHEME_VARIANTS, LossWeights
from .nn import OptimizerSpec

TRAIN_MODES = (
    "er_baseline",
    "er_untrained_distill",
    "er_multiview",
    "ccl_only",
    "ccl_dc",
    "sdc",
)
PAIR_MODES = ("ccl_only", "ccl_dc")
EVAL_MODES = ("independent", "ensemble", "both")
AUG_STRATEGIES = ("partial", "full")


@dataclass
class IdxPaths:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass
class Diagnostics:
    step_records: bool = False
    loss_probe: bool = False
    entropy: bool = False
    ncm: bool = False


@dataclass
class RunConfig:
    """Everything a run needs: stream source, split, memory, losses, seeds."""

    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    idx: IdxPaths | None = None
    n_tasks: int = 5
    memory_size: int = 200
    stream_batch: int = 10
    memory_batch: int = 64
    mode: str = "ccl_dc"
    scheme: str = "hard_to_easy"
    aug_strategy: str = "partial"
    weights: LossWeights = field(default_factory=LossWeights)
    chain: ChainSpec = field(default_factory=ChainSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    hidden: tuple[int, ...] = (128, 64)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    eval_mode: str = "both"
    probe_every: int = 10
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def validate(self) -> None:
        if (self.synthetic is None) == (self.idx is None):
            raise ConfigError("exactly one of 'synthetic' or 'idx' must be set")
        if self.n_tasks < 1:
            raise ConfigError(f"n_tasks must be >= 1, got {self.n_tasks}")
        if self.memory_size < 0:
            raise ConfigError(f"memory_size must be >= 0, got {self.memory_size}")
        if self.stream_batch < 1:
            raise ConfigError(f"stream_batch must be >= 1, got {self.stream_batch}")
        if self.memory_batch < 1:
            raise ConfigError(f"memory_batch must be >= 1, got {self.memory_batch}")
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.scheme not in SCHEME_VARIANTS:
            raise ConfigError(f"scheme must be one of {SCHEME_VARIANTS}, got {self.scheme!r}")
        if self.aug_strategy not in AUG_STRATEGIES:
            raise ConfigError(f"aug_strategy must be one of {AUG_STRATEGIES}, got {self.aug_strategy!r}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}, got {self.eval_mode!r}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.probe_every < 1:
            raise ConfigError(f"probe_every must be >= 1, got {self.probe_every}")
        self.weights.validate()
        self.optimizer.validate()


def config_to_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["seeds"] = list(cfg.seeds)
    out["hidden"] = list(cfg.hidden)
    if cfg.chain is not None:
        out["chain"]["policy"]["op_set"] = list(cfg.chain.policy.op_set)
    return out


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    kwargs: dict = {}
    try:
        if raw.get("synthetic") is not None:
            kwargs["synthetic"] = SyntheticSpec(**raw.pop("synthetic"))
        elif "synthetic" in raw:
            kwargs["synthetic"] = raw.pop("synthetic")
        if raw.get("idx") is not None:
            kwargs["idx"] = IdxPaths(**raw.pop("idx"))
        elif "idx" in raw:
            kwargs["idx"] = raw.pop("idx")
        if "weights" in raw:
            kwargs["weights"] = LossWeights(**raw.pop("weights"))
        if "chain" in raw:
            chain_raw = dict(raw.pop("chain"))
            if "policy" in chain_raw:
                policy_raw = dict(chain_raw["policy"])
                if "op_set" in policy_raw:
                    policy_raw["op_set"] = tuple(policy_raw["op_set"])
                chain_raw["policy"] = AugPolicy(**policy_raw)
            kwargs["chain"] = ChainSpec(**chain_raw)
        if "optimizer" in raw:
            kwargs["optimizer"] = OptimizerSpec(**raw.pop("optimizer"))
        if "diagnostics" in raw:
            kwargs["diagnostics"] = Diagnostics(**raw.pop("diagnostics"))
        if "seeds" in raw:
            kwargs["seeds"] = tuple(raw.pop("seeds"))
        if "hidden" in raw:
            kwargs["hidden"] = tuple(raw.pop("hidden"))
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = [k for k in raw if k not in known]
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        kwargs.update(raw)
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
