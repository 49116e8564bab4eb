"""Flat ``key = value`` experiment configuration.

Keys carry a section prefix (``model.``, ``optim.``, ``asgd.``, ``data.``).
Blank lines and ``#`` comments are ignored; unknown keys are errors that
name the key and the line.
"""

import dataclasses
from dataclasses import dataclass, field

from .asgd import AsgdConfig
from .data import SyntheticSpec
from .errors import ConfigError
from .layers import TimeConvSpec
from .model import ModelConfig
from .optim import OptimConfig


@dataclass(frozen=True)
class DataConfig:
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)
    dir: str = ""  # where gen writes and train/eval read; empty means --out


@dataclass(frozen=True)
class Experiment:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    asgd: AsgdConfig = field(default_factory=AsgdConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def with_seed(self, seed):
        """Apply one seed everywhere a seed is consumed."""
        return dataclasses.replace(
            self,
            seed=seed,
            model=dataclasses.replace(self.model, seed=seed),
            data=dataclasses.replace(self.data, spec=dataclasses.replace(self.data.spec, seed=seed)),
        )

    def validate(self):
        self.model.validate()
        self.optim.validate()
        self.asgd.validate()
        self.data.spec.validate()
        if self.model.feat_dim != self.data.spec.feat_dim:
            raise ConfigError(f"model.feat_dim={self.model.feat_dim} but data.feat_dim={self.data.spec.feat_dim}")
        if self.model.num_classes != self.data.spec.num_classes:
            raise ConfigError(
                f"model.num_classes={self.model.num_classes} but data.num_classes={self.data.spec.num_classes}"
            )
        return self


def _int_list(text):
    text = text.strip()
    if text in ("", "none", "[]"):
        return ()
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (section, attribute, parser); "model.tc.*" lands on the nested TimeConvSpec
_KEYS = {
    "model.variant": ("model", "variant", str),
    "model.feat_dim": ("model", "feat_dim", int),
    "model.num_classes": ("model", "num_classes", int),
    "model.input_dnn_layers": ("model", "input_dnn_layers", _int_list),
    "model.cell_dim": ("model", "cell_dim", int),
    "model.blstm_layers": ("model", "blstm_layers", int),
    "model.output_dnn_layers": ("model", "output_dnn_layers", _int_list),
    "model.context_frames": ("tc", "context_frames", int),
    "model.tc_width": ("tc", "tc_width", int),
    "model.tied_columns": ("tc", "tied_columns", _bool),
    "model.lstm_init_range": ("model", "lstm_init_range", float),
    "model.dnn_init_std": ("model", "dnn_init_std", float),
    "model.cell_clip": ("model", "cell_clip", float),
    "optim.initial_lr": ("optim", "initial_lr", float),
    "optim.decay": ("optim", "decay", float),
    "optim.lr_floor": ("optim", "lr_floor", float),
    "optim.minibatch": ("optim", "minibatch", int),
    "optim.momentum": ("optim", "momentum", float),
    "optim.patience": ("optim", "patience", int),
    "optim.max_epochs": ("optim", "max_epochs", int),
    "asgd.num_shards": ("asgd", "num_shards", int),
    "asgd.transport": ("asgd", "transport", str),
    "asgd.synchronous": ("asgd", "synchronous", _bool),
    "data.num_classes": ("spec", "num_classes", int),
    "data.feat_dim": ("spec", "feat_dim", int),
    "data.utterance_length": ("spec", "utterance_length", int),
    "data.train_utterances": ("spec", "train_utterances", int),
    "data.dev_utterances": ("spec", "dev_utterances", int),
    "data.test_utterances": ("spec", "test_utterances", int),
    "data.noise_sigma": ("spec", "noise_sigma", float),
    "data.latent_smoothing": ("spec", "latent_smoothing", int),
    "data.dir": ("data", "dir", str),
    "seed": ("top", "seed", int),
}

KNOWN_KEYS = tuple(_KEYS)


def parse_lines(lines, source="<config>"):
    """Parse ``key = value`` lines into ``{key: (value, line_no)}``."""
    values = {}
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{no}: key {key!r} repeats line {values[key][1]}")
        values[key] = (value, no)
    return values


def build(values, source="<config>"):
    parts = {"model": {}, "tc": {}, "optim": {}, "asgd": {}, "spec": {}, "data": {}, "top": {}}
    for key, (text, no) in values.items():
        section, attr, parser = _KEYS[key]
        try:
            parts[section][attr] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"{source}:{no}: bad value for {key!r}: {exc}") from None
    seed = parts["top"].get("seed", 0)
    tc = TimeConvSpec(**parts["tc"])
    model = ModelConfig(tc=tc, **parts["model"])
    optim = OptimConfig(**parts["optim"])
    exp = Experiment(
        model=model,
        optim=optim,
        asgd=AsgdConfig(optim=optim, **parts["asgd"]),
        data=DataConfig(spec=SyntheticSpec(**parts["spec"]), **parts["data"]),
    )
    return exp.with_seed(seed)


def loads(text, source="<config>"):
    return build(parse_lines(text.splitlines(), source), source)


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), source=str(path))
