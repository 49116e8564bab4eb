"""Datasets, the synthetic temporal task, context windows and binary files.

Both file formats are little-endian with a 4-byte magic and a ``u32``
version. Strings are ``u32`` length + UTF-8 bytes; arrays are float32.

Dataset (``TCBD``)::

    magic "TCBD" | u32 version | u32 num_utterances
    per utterance: str id | u32 num_frames | u32 feat_dim
                   | f32[num_frames*feat_dim] frames | u32[num_frames] labels

Checkpoint (``TCKP``)::

    magic "TCKP" | u32 version | str model-config JSON | str train-state JSON
    | block section (current parameters) | block section (best parameters)
    block section: u32 count, then per block: str name | u32 rows | u32 cols
                   | f32[rows*cols]
"""

import json
import struct
from collections import Counter, OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError
from .layers import TimeConvSpec
from .model import ModelConfig, ModelParams
from .optim import TrainState

DATASET_MAGIC = b"TCBD"
CHECKPOINT_MAGIC = b"TCKP"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
SLOPE_HALF_WIDTH = 5
FREQ_RANGE = (0.5, 2.0)
# equal to the default noise_sigma: frame SNR low enough that no single frame
# pins down the latent, so evidence has to be pooled across the window
SIGNAL_AMPLITUDE = 0.5


@dataclass
class Utterance:
    id: str
    frames: np.ndarray  # (num_frames, feat_dim) float32
    labels: np.ndarray  # (num_frames,) int64

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 2 or self.labels.shape != (self.frames.shape[0],):
            raise FormatError(
                f"utterance {self.id}: {self.frames.shape[0]} frames but {self.labels.shape} labels"
            )

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass
class WindowDataset:
    windows: np.ndarray  # (N, context_frames*feat_dim)
    targets: np.ndarray  # (N,)
    provenance: list = field(default_factory=list)  # (utterance id, center frame)

    def __len__(self):
        return self.windows.shape[0]

    def subset(self, idx):
        return WindowDataset(self.windows[idx], self.targets[idx], [self.provenance[i] for i in idx])


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    feat_dim: int = 16
    utterance_length: int = 200
    train_utterances: int = 200
    dev_utterances: int = 40
    test_utterances: int = 40
    noise_sigma: float = 0.5
    latent_smoothing: int = 11
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.latent_smoothing < 1 or self.utterance_length < self.latent_smoothing:
            raise ConfigError(
                f"utterance_length {self.utterance_length} must be >= latent_smoothing "
                f"{self.latent_smoothing} >= 1"
            )
        if self.feat_dim < 1 or min(self.train_utterances, self.dev_utterances, self.test_utterances) < 1:
            raise ConfigError("feat_dim and every split size must be >= 1")
        return self


@dataclass
class SyntheticData:
    train: list
    dev: list
    test: list
    latents: dict  # utterance id -> hidden latent path
    bin_edges: np.ndarray

    def splits(self):
        return {"train": self.train, "dev": self.dev, "test": self.test}


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------


def local_slope(latent, half_width=SLOPE_HALF_WIDTH):
    """Finite-difference slope over +-half_width frames, clamped at the edges."""
    n = len(latent)
    t = np.arange(n)
    hi = np.minimum(t + half_width, n - 1)
    lo = np.maximum(t - half_width, 0)
    return (latent[hi] - latent[lo]) / (hi - lo)


def slope_labels(latent, bin_edges):
    return np.searchsorted(bin_edges, local_slope(latent), side="right")


def generate_synthetic(spec):
    """Latent random walks rendered through a noisy sinusoid bank.

    Each frame depends on the latent *level*; the label is the quantile bucket
    of the latent *slope*, so a single frame is ambiguous and the class must
    be read from neighbouring frames.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    freqs = rng.uniform(*FREQ_RANGE, spec.feat_dim)
    phases = rng.uniform(0.0, 2 * np.pi, spec.feat_dim)
    kernel = np.ones(spec.latent_smoothing) / spec.latent_smoothing
    L = spec.utterance_length

    def draw(split, count):
        utts = []
        for k in range(count):
            walk = np.cumsum(rng.normal(0.0, 1.0, L + spec.latent_smoothing - 1))
            latent = np.convolve(walk, kernel, mode="valid")
            latent -= latent.mean()
            frames = SIGNAL_AMPLITUDE * np.sin(np.outer(latent, freqs) + phases)
            frames += rng.normal(0.0, spec.noise_sigma, frames.shape) if spec.noise_sigma else 0.0
            utts.append((f"{split}-{k:05d}", latent, frames))
        return utts

    raw = {
        "train": draw("train", spec.train_utterances),
        "dev": draw("dev", spec.dev_utterances),
        "test": draw("test", spec.test_utterances),
    }
    train_slopes = np.concatenate([local_slope(lat) for _, lat, _ in raw["train"]])
    edges = np.quantile(train_slopes, np.arange(1, spec.num_classes) / spec.num_classes)
    latents = {}
    out = {}
    for split, utts in raw.items():
        out[split] = []
        for uid, latent, frames in utts:
            latents[uid] = latent
            out[split].append(Utterance(uid, frames, slope_labels(latent, edges)))
    return SyntheticData(out["train"], out["dev"], out["test"], latents, edges)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


def extract_windows(utts, context_frames):
    """One centred window per frame; edges repeat the first/last frame."""
    if context_frames < 1 or context_frames % 2 == 0:
        raise ConfigError(f"context_frames must be odd and positive, got {context_frames}")
    half = context_frames // 2
    offsets = np.arange(-half, half + 1)
    windows, targets, provenance = [], [], []
    for utt in utts:
        n = utt.num_frames
        idx = np.clip(np.arange(n)[:, None] + offsets, 0, n - 1)
        windows.append(utt.frames[idx].reshape(n, -1))
        targets.append(utt.labels)
        provenance.extend((utt.id, t) for t in range(n))
    if not windows:
        return WindowDataset(np.zeros((0, 0), np.float32), np.zeros(0, np.int64), [])
    return WindowDataset(np.concatenate(windows), np.concatenate(targets), provenance)


def summarize(utts, num_classes=None):
    """Human-readable counts, dims and label histogram."""
    frames = sum(u.num_frames for u in utts)
    feat = utts[0].frames.shape[1] if utts else 0
    hist = Counter()
    for u in utts:
        hist.update(u.labels.tolist())
    k = num_classes if num_classes is not None else (max(hist) + 1 if hist else 0)
    lines = [f"utterances\t{len(utts)}", f"frames\t{frames}", f"feat_dim\t{feat}"]
    lines += [f"label_{c}\t{hist.get(c, 0)}" for c in range(k)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# binary IO helpers
# ---------------------------------------------------------------------------


class _Writer:
    def __init__(self):
        self.parts = []

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def string(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def array(self, a, dtype):
        self.parts.append(np.ascontiguousarray(a, dtype=dtype).tobytes())

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CorruptionError(
                f"truncated file: need {n} bytes for {what}, {len(self.data) - self.pos} left",
                self.pos,
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what):
        n = self.u32(what)
        return self.take(n, what).decode("utf-8")

    def array(self, count, dtype, what):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(count * dtype.itemsize, what), dtype=dtype).copy()

    def header(self, magic, version, kind):
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"not a {kind} file: magic {got!r}, expected {magic!r}")
        v = self.u32("version")
        if v != version:
            raise FormatError(f"{kind} version {v} is not supported (this build reads version {version})")

    def done(self):
        if self.pos != len(self.data):
            raise CorruptionError(f"{len(self.data) - self.pos} trailing bytes", self.pos)


def dataset_bytes(utts):
    w = _Writer()
    w.parts.append(DATASET_MAGIC)
    w.u32(DATASET_VERSION)
    w.u32(len(utts))
    for u in utts:
        w.string(u.id)
        w.u32(u.frames.shape[0])
        w.u32(u.frames.shape[1])
        w.array(u.frames, "<f4")
        w.array(u.labels, "<u4")
    return w.bytes()


def parse_dataset(data):
    r = _Reader(data)
    r.header(DATASET_MAGIC, DATASET_VERSION, "dataset")
    utts = []
    for _ in range(r.u32("utterance count")):
        uid = r.string("utterance id")
        n = r.u32("frame count")
        feat = r.u32("feature dim")
        frames = r.array(n * feat, "<f4", f"frames of {uid}").reshape(n, feat)
        labels = r.array(n, "<u4", f"labels of {uid}").astype(np.int64)
        utts.append(Utterance(uid, frames.astype(np.float32), labels))
    r.done()
    return utts


def save_dataset(path, utts):
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(utts))


def load_dataset(path):
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    state: TrainState
    best_params: ModelParams = None


def config_to_dict(config):
    d = asdict(config)
    d["input_dnn_layers"] = list(config.input_dnn_layers)
    d["output_dnn_layers"] = list(config.output_dnn_layers)
    return d


def config_from_dict(d):
    d = dict(d)
    d["tc"] = TimeConvSpec(**d["tc"])
    return ModelConfig(**d)


def _write_blocks(w, params):
    if params is None:
        w.u32(0)
        return
    w.u32(len(params))
    for name, arr in params.items():
        w.string(name)
        w.u32(arr.shape[0])
        w.u32(arr.shape[1])
        w.array(arr, "<f4")


def _read_blocks(r):
    blocks = OrderedDict()
    for _ in range(r.u32("block count")):
        name = r.string("block name")
        rows = r.u32(f"rows of {name}")
        cols = r.u32(f"cols of {name}")
        blocks[name] = r.array(rows * cols, "<f4", f"block {name}").reshape(rows, cols).astype(np.float32)
    return ModelParams(blocks) if blocks else None


def checkpoint_bytes(config, params, state, best_params=None):
    w = _Writer()
    w.parts.append(CHECKPOINT_MAGIC)
    w.u32(CHECKPOINT_VERSION)
    w.string(json.dumps(config_to_dict(config), sort_keys=True))
    w.string(json.dumps(asdict(state), sort_keys=True))
    _write_blocks(w, params)
    _write_blocks(w, best_params)
    return w.bytes()


def parse_checkpoint(data, variant=None):
    r = _Reader(data)
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
    config = config_from_dict(json.loads(r.string("model config")))
    state = TrainState(**json.loads(r.string("train state")))
    params = _read_blocks(r)
    best = _read_blocks(r)
    r.done()
    if variant is not None and config.variant != variant:
        raise ConfigError(f"checkpoint holds variant {config.variant!r}, requested {variant!r}")
    if params is None:
        raise FormatError("checkpoint has no parameter blocks")
    return Checkpoint(config, params, state, best)


def save_checkpoint(path, config, params, state, best_params=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(config, params, state, best_params))


def load_checkpoint(path, variant=None):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read(), variant)
