"""Line-oriented experiment config files.

The format is ``key = value``, one per line; blank lines and ``#`` comments
are ignored. Keys are flat with dotted group prefixes (``gnn.layers``,
``mask.beta``). Every key is optional and falls back to the dataclass
default; unknown or duplicate keys are errors, not warnings.

``interaction.dim`` is not a key: the interaction stage always runs at the
encoder width, so it follows ``gnn.hidden_dim``.
"""

from __future__ import annotations

from .backbone import GnnConfig
from .datasets import SplitSpec
from .errors import ArgumentError, ConfigError
from .interaction import InteractionConfig
from .masking import MaskConfig
from .train import ExperimentConfig

# key -> (group, dataclass field, value kind). Group "top" means a direct
# ExperimentConfig field. Order here is the canonical serialization order.
CONFIG_SCHEMA: dict[str, tuple[str, str, str]] = {
    "model": ("top", "model", "str"),
    "n_classes": ("top", "n_classes", "int"),
    "objective_center": ("top", "objective_center", "str"),
    "epochs": ("top", "epochs", "int"),
    "batch_size": ("top", "batch_size", "int"),
    "lr": ("top", "lr", "float"),
    "seed": ("top", "seed", "int"),
    "patience": ("top", "patience", "int"),
    "generator.mode": ("top", "generator_mode", "str"),
    "generator.per_graph": ("top", "per_graph", "int"),
    "generator.regrow_each_epoch": ("top", "regrow_each_epoch", "bool"),
    "gnn.kind": ("gnn", "kind", "str"),
    "gnn.layers": ("gnn", "layers", "int"),
    "gnn.hidden_dim": ("gnn", "hidden_dim", "int"),
    "gnn.gin_epsilon": ("gnn", "gin_epsilon", "float"),
    "gnn.readout": ("gnn", "readout", "str"),
    "mask.beta": ("mask", "beta", "float"),
    "mask.tau": ("mask", "tau", "float"),
    "mask.tau_anneal": ("mask", "tau_anneal", "float"),
    "mask.tau_floor": ("mask", "tau_floor", "float"),
    "mask.prior_init": ("mask", "prior_init", "float"),
    "interaction.heads": ("interaction", "heads", "int"),
    "interaction.noise_std": ("interaction", "noise_std", "float"),
    "interaction.enabled": ("interaction", "interaction_enabled", "bool"),
    "interaction.bridge": ("interaction", "bridge_enabled", "bool"),
    "split.criterion": ("split", "criterion", "str"),
    "split.train_frac": ("split", "train_frac", "float"),
    "split.val_frac": ("split", "val_frac", "float"),
    "split.test_frac": ("split", "test_frac", "float"),
}

_TRUE = frozenset(("true", "1", "yes"))
_FALSE = frozenset(("false", "0", "no"))


def _convert(kind: str, value: str, where: str) -> object:
    if kind == "str":
        return value
    if kind == "bool":
        low = value.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    try:
        if kind == "int":
            return int(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"{where}: expected {kind}, got {value!r}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse config text into an experiment config, defaults filled in."""
    groups: dict[str, dict[str, object]] = {
        "top": {},
        "gnn": {},
        "mask": {},
        "interaction": {},
        "split": {},
    }
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if not sep or not key or not value:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add(key)
        group, field, kind = CONFIG_SCHEMA[key]
        groups[group][field] = _convert(kind, value, where)

    try:
        gnn = GnnConfig(**groups["gnn"])
        mask = MaskConfig(**groups["mask"])
        interaction = InteractionConfig(dim=gnn.hidden_dim, **groups["interaction"])
        split = SplitSpec(**groups["split"])
        return ExperimentConfig(
            gnn=gnn, mask=mask, interaction=interaction, split=split, **groups["top"]
        )
    except ArgumentError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read(), source=path)


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config`` round-trips it exactly."""
    parts = {
        "top": config,
        "gnn": config.gnn,
        "mask": config.mask,
        "interaction": config.interaction,
        "split": config.split,
    }
    lines = []
    for key, (group, field, kind) in CONFIG_SCHEMA.items():
        value = getattr(parts[group], field)
        if kind == "bool":
            text = "true" if value else "false"
        elif kind == "float":
            text = repr(float(value))
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
