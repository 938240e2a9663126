"""Run configuration: one declarative YAML/JSON document, strictly validated.

Unknown keys are rejected at every level. Endpoint credentials never live in
the file; a backend names the environment variable that holds its key.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from hsg.answers import DIAGNOSIS_FORMAT, SNEAKY_FORMAT, FormatSpec, get_tokenizer
from hsg.errors import ConfigError
from hsg.grpo import GrpoConfig
from hsg.rewards import RewardConfig, RoleFormats

BACKEND_KINDS = ("toy", "mock", "endpoint", "rule", "none")


def _strict(cls, data: Any, where: str, nested: Mapping[str, Any] | None = None):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    kwargs = dict(data)
    for name, builder in (nested or {}).items():
        if name in kwargs:
            kwargs[name] = builder(kwargs[name], f"{where}.{name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "toy"
    # endpoint
    base_url: str = ""
    path: str = "/v1/chat/completions"
    model: str = ""
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 1024
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0
    cache_dir: str | None = None
    api_key_env: str = "HSG_API_KEY"
    template_id: str = ""
    # mock
    responses: tuple[str, ...] = ()
    logprob: float = 0.0

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"backend kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "responses", tuple(self.responses))
        if self.kind == "endpoint" and not (self.base_url and self.model):
            raise ValueError("endpoint backend needs base_url and model")
        if self.kind == "mock" and not self.responses:
            raise ValueError("mock backend needs scripted responses")

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or None


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    source: str = "gsm8k-style"
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("dataset weight must be positive")


@dataclass(frozen=True)
class ToyConfig:
    num_train: int = 48
    num_distractors: int = 3
    min_ops: int = 2
    max_ops: int = 4
    temperature: float = 1.0


def _backend(default_kind: str):
    def build(data, where):
        data = dict(data or {})
        data.setdefault("kind", default_kind)
        return _strict(BackendConfig, data, where)

    return build


@dataclass(frozen=True)
class RunConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    sneaky: BackendConfig = field(default_factory=BackendConfig)
    diagnosis: BackendConfig = field(default_factory=BackendConfig)
    corrector: BackendConfig = field(default_factory=lambda: BackendConfig(kind="rule"))
    judge: BackendConfig = field(default_factory=lambda: BackendConfig(kind="none"))
    datasets: tuple[DatasetSpec, ...] = ()
    heldout: DatasetSpec | None = None
    toy: ToyConfig = field(default_factory=ToyConfig)
    seed: int = 0
    steps: int = 600
    eval_interval: int = 20
    heldout_size: int = 64
    eval_samples: int = 1
    output_dir: str = "runs/default"
    tokenizer: str = "regex-v1"
    formats: RoleFormats = field(default_factory=RoleFormats)
    templates_dir: str | None = None
    max_workers: int = 1
    # S-rounds take even round indices when 0, odd when 1
    s_round_parity: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.heldout_size < 1:
            raise ValueError("heldout_size must be >= 1")
        if self.s_round_parity not in (0, 1):
            raise ValueError("s_round_parity must be 0 or 1")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        get_tokenizer(self.tokenizer)
        object.__setattr__(self, "datasets", tuple(self.datasets))

    @property
    def uses_toy(self) -> bool:
        return self.sneaky.kind == "toy" or self.diagnosis.kind == "toy"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:
        def datasets(value, where):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}: expected a list")
            return tuple(_strict(DatasetSpec, d, f"{where}[{i}]") for i, d in enumerate(value))

        def formats(value, where):
            value = dict(value or {})
            unknown = set(value) - {"sneaky", "diagnosis"}
            if unknown:
                raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
            try:
                return RoleFormats(
                    sneaky=FormatSpec.from_rules(value["sneaky"]) if "sneaky" in value else SNEAKY_FORMAT,
                    diagnosis=FormatSpec.from_rules(value["diagnosis"]) if "diagnosis" in value else DIAGNOSIS_FORMAT,
                )
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}: {exc}") from exc

        nested = {
            "reward": lambda v, w: _strict(RewardConfig, v, w),
            "grpo": lambda v, w: _strict(GrpoConfig, v, w),
            "sneaky": _backend("toy"),
            "diagnosis": _backend("toy"),
            "corrector": _backend("rule"),
            "judge": _backend("none"),
            "datasets": datasets,
            "heldout": lambda v, w: None if v is None else _strict(DatasetSpec, v, w),
            "toy": lambda v, w: _strict(ToyConfig, v, w),
            "formats": formats,
        }
        return _strict(cls, data, "config", nested)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        return cls.from_dict(data or {})

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["formats"] = {"sneaky": self.formats.sneaky.to_list(), "diagnosis": self.formats.diagnosis.to_list()}
        for name in ("sneaky", "diagnosis", "corrector", "judge"):
            out[name]["responses"] = list(out[name]["responses"])
        out["datasets"] = [dict(d) for d in out["datasets"]]
        return out

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)
