"""Flat key-value training configuration with command-line overrides."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional
import json
import logging
import typing

from .psp import PspMode, WeightScheme
from .sampler import NegativeSamplerConfig, SamplerKind
from .utils import ConfigError, IssueSeverity, ValidationIssue

logger = logging.getLogger(__name__)

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass(frozen=True)
class TrainConfig:
    """Every hyperparameter of a run. Config keys equal field names except
    the sampler block, which uses the dotted ``sampler.*`` keys."""

    q: int = 50
    oversample: int = 10
    n_power: int = 4
    s: int = 2
    a: float = 0.01
    cap: float = 1e4
    scheme: str = WeightScheme.LOG.value
    mode: str = PspMode.W_EW.value
    sampler_kind: str = field(default=SamplerKind.UNIFORM.value, metadata={"key": "sampler.kind"})
    sampler_exponent: float = field(default=1.0, metadata={"key": "sampler.exponent"})
    sampler_M: int = field(default=8, metadata={"key": "sampler.M"})
    sampler_seed: Optional[int] = field(default=None, metadata={"key": "sampler.seed"})
    sampler_exclude_psp_positives: bool = field(default=True, metadata={"key": "sampler.exclude_psp_positives"})
    d: int = 64
    lr: float = 0.001
    batch_size: int = 2048
    l2: float = 1e-4
    decoupled_weight_decay: bool = False
    max_epochs: int = 200
    patience: int = 10
    eval_every: int = 1
    ks: tuple[int, ...] = (20, 30)
    seed: int = 0
    inactive_fraction: float = 0.2
    eval_batch_users: int = 1024

    @classmethod
    def config_keys(cls) -> dict[str, str]:
        """Config key -> field name."""

        return {f.metadata.get("key", f.name): f.name for f in fields(cls)}

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], base: Optional["TrainConfig"] = None) -> "TrainConfig":
        """Validate ``mapping`` on top of ``base`` (defaults when omitted).

        Values may be JSON-native or strings from the command line. All
        problems are collected and raised together.
        """

        keys = cls.config_keys()
        hints = typing.get_type_hints(cls)
        issues: list[ValidationIssue] = []
        values: dict[str, Any] = {}

        for key, raw in mapping.items():
            name = keys.get(key)
            if name is None:
                issues.append(ValidationIssue(IssueSeverity.CRITICAL, "unknown configuration key", key=key))
                continue
            try:
                values[name] = _coerce(hints[name], raw)
            except (TypeError, ValueError) as exc:
                issues.append(ValidationIssue(IssueSeverity.CRITICAL, str(exc), key=key))

        config = replace(base or cls(), **values)
        issues.extend(config.validate())
        if issues:
            raise ConfigError(issues)
        return config

    def validate(self) -> list[ValidationIssue]:
        issues: list[ValidationIssue] = []
        names = {name: key for key, name in self.config_keys().items()}
        for name, (check, message) in _RULES.items():
            if not check(getattr(self, name)):
                issues.append(ValidationIssue(IssueSeverity.CRITICAL, message, key=names[name]))
        for name, enum in (("scheme", WeightScheme), ("mode", PspMode), ("sampler_kind", SamplerKind)):
            allowed = [member.value for member in enum]
            if getattr(self, name) not in allowed:
                issues.append(
                    ValidationIssue(IssueSeverity.CRITICAL, f"must be one of {allowed}", key=names[name])
                )
        return issues

    def with_overrides(self, overrides: Mapping[str, Any]) -> "TrainConfig":
        return self.from_mapping(overrides, base=self)

    def to_dict(self) -> dict[str, Any]:
        keys = {name: key for key, name in self.config_keys().items()}
        payload = {keys[f.name]: getattr(self, f.name) for f in fields(self)}
        payload["ks"] = list(self.ks)
        return payload

    @property
    def psp_mode(self) -> PspMode:
        return PspMode(self.mode)

    @property
    def weight_scheme(self) -> WeightScheme:
        return WeightScheme(self.scheme)

    def sampler_config(self) -> NegativeSamplerConfig:
        return NegativeSamplerConfig(
            kind=SamplerKind(self.sampler_kind),
            popularity_exponent=self.sampler_exponent,
            candidate_count=self.sampler_M,
            seed=self.seed if self.sampler_seed is None else self.sampler_seed,
            exclude_psp_positives=self.sampler_exclude_psp_positives,
        )


def _ascending_ks(ks: tuple[int, ...]) -> bool:
    return bool(ks) and ks[0] >= 1 and all(a < b for a, b in zip(ks, ks[1:]))


_RULES: dict[str, tuple[Callable[[Any], bool], str]] = {
    "q": (lambda v: v >= 1, "must be >= 1"),
    "oversample": (lambda v: v >= 0, "must be >= 0"),
    "n_power": (lambda v: v >= 0, "must be >= 0"),
    "s": (lambda v: v >= 1, "must be an integer >= 1"),
    "a": (lambda v: v > 0, "must be > 0"),
    "cap": (lambda v: v > 0, "must be > 0"),
    "sampler_exponent": (lambda v: v >= 0, "must be >= 0"),
    "sampler_M": (lambda v: v >= 1, "must be >= 1"),
    "sampler_seed": (lambda v: v is None or v >= 0, "must be >= 0"),
    "d": (lambda v: v >= 1, "must be >= 1"),
    "lr": (lambda v: v > 0, "must be > 0"),
    "batch_size": (lambda v: v >= 1, "must be >= 1"),
    "l2": (lambda v: v >= 0, "must be >= 0"),
    "max_epochs": (lambda v: v >= 1, "must be >= 1"),
    "patience": (lambda v: v >= 1, "must be >= 1"),
    "eval_every": (lambda v: v >= 1, "must be >= 1"),
    "ks": (_ascending_ks, "must be a non-empty strictly ascending list of positive cutoffs"),
    "seed": (lambda v: v >= 0, "must be >= 0"),
    "inactive_fraction": (lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]"),
    "eval_batch_users": (lambda v: v >= 1, "must be >= 1"),
}


def _to_int(raw: Any) -> int:
    if isinstance(raw, bool):
        raise TypeError(f"expected an integer, got {raw!r}")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, float):
        if not raw.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(raw)
    if isinstance(raw, str):
        try:
            return int(raw.strip())
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}") from None
    raise TypeError(f"expected an integer, got {raw!r}")


def _to_float(raw: Any) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
        raise TypeError(f"expected a number, got {raw!r}")
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"expected a number, got {raw!r}") from None


def _to_bool(raw: Any) -> bool:
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, str) and raw.strip().lower() in _TRUE | _FALSE:
        return raw.strip().lower() in _TRUE
    raise ValueError(f"expected a boolean, got {raw!r}")


def _coerce(hint: Any, raw: Any) -> Any:
    if hint is int:
        return _to_int(raw)
    if hint is float:
        return _to_float(raw)
    if hint is bool:
        return _to_bool(raw)
    if hint is str:
        if not isinstance(raw, str):
            raise TypeError(f"expected a string, got {raw!r}")
        return raw.strip()
    if hint == Optional[int]:
        if raw is None or (isinstance(raw, str) and raw.strip().lower() in {"", "none", "null"}):
            return None
        return _to_int(raw)
    if hint == tuple[int, ...]:
        if isinstance(raw, str):
            raw = [part for part in raw.split(",") if part.strip()]
        if not isinstance(raw, (list, tuple)):
            raise TypeError(f"expected a list of integers, got {raw!r}")
        return tuple(_to_int(item) for item in raw)
    raise TypeError(f"unsupported configuration type {hint!r}")


def load_config(path: Optional[Path]) -> TrainConfig:
    """Read a flat JSON object; ``None`` yields the defaults."""

    if path is None:
        return TrainConfig()
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([ValidationIssue(IssueSeverity.CRITICAL, f"cannot read config: {exc}")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            [ValidationIssue(IssueSeverity.CRITICAL, f"invalid JSON: {exc.msg}", line_number=exc.lineno)]
        ) from exc
    if not isinstance(payload, dict):
        raise ConfigError([ValidationIssue(IssueSeverity.CRITICAL, "config must be a flat JSON object")])
    logger.info("Loaded config %s (%d keys)", path, len(payload))
    return TrainConfig.from_mapping(payload)


__all__ = ["TrainConfig", "load_config"]
