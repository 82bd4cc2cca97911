"""The nine fully-connected networks of the coupled-cycle model.

Outer cycle: a pass-through image encoder, an affine text embedding, two
feature-space generators with a 256-wide middle tap (the shared space), and
two feature discriminators. Inner cycle: two generators over the shared
space whose K-wide tanh middle layer is the hashing tap, and two
discriminators. Discriminators end in a learned 32->1 head plus sigmoid.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor

PROB_EPS = 1e-7
SHARED_WIDTH = 256
CHECKPOINT_MAGIC = b"UCHCKPT1"

_ACTIVATIONS = {"relu", "tanh", "sigmoid", "identity"}


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus per-layer activations and an optional tap layer."""

    widths: tuple
    activations: tuple
    tap_index: int | None = None

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least 2 widths")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.tap_index is not None and not (
            0 <= self.tap_index < len(self.widths) - 2
        ):
            raise ValueError("tap_index must name a hidden (non-final) layer")


def _apply_activation(tape, kind, x):
    if kind == "relu":
        return ad.relu(tape, x)
    if kind == "tanh":
        return ad.tanh(tape, x)
    if kind == "sigmoid":
        return ad.sigmoid(tape, x)
    return x


class Mlp:
    """Stack of affine layers; weights U(-1/sqrt(fan_in), +), zero biases."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator):
        self.spec = spec
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            # He-style bound: keeps activation variance stable through the
            # relu stacks; 1/sqrt(fan_in) attenuates ~3x per layer and makes
            # the deep cycle collapse to low rank at these widths
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(Tensor(w))
            self.biases.append(Tensor(np.zeros((1, fan_out))))

    def forward(self, tape: Tape, x: Tensor):
        """Returns (output, tap) where tap is None unless spec.tap_index set."""
        if x.shape[1] != self.spec.widths[0]:
            raise ShapeError(
                f"input width {x.shape[1]} != expected {self.spec.widths[0]}"
            )
        tap = None
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(tape, ad.matmul(tape, h, w), b)
            h = _apply_activation(tape, self.spec.activations[i], h)
            if self.spec.tap_index == i:
                tap = h
        return h, tap

    def parameters(self, prefix):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}.{i}.W", w))
            out.append((f"{prefix}.{i}.b", b))
        return out


@dataclass
class BundleConfig:
    k: int
    d_img: int = 4096
    d_txt_vocab: int = 1386
    d_txt_emb: int = 300
    seed: int = 0


_NET_ORDER = (
    "text_encoder",
    "gen_f_i2t",
    "gen_f_t2i",
    "disc_f_i",
    "disc_f_t",
    "gen_z_i2t",
    "gen_z_t2i",
    "disc_z_i",
    "disc_z_t",
)


@dataclass
class NetworkBundle:
    config: BundleConfig
    nets: dict = field(default_factory=dict)

    def net(self, name):
        return self.nets[name]

    def named_parameters(self):
        out = []
        for name in _NET_ORDER:
            out.extend(self.nets[name].parameters(name))
        return out

    # -- forward surfaces -------------------------------------------------

    def encode_image(self, tape, v):
        if v.shape[1] != self.config.d_img:
            raise ShapeError(
                f"image batch width {v.shape[1]} != d_img {self.config.d_img}"
            )
        return v

    def encode_text(self, tape, t):
        out, _ = self.nets["text_encoder"].forward(tape, t)
        return out

    def gen_outer(self, tape, direction, f_real):
        """Returns (fake features, shared-space tap)."""
        net = self.nets["gen_f_i2t" if direction == "i2t" else "gen_f_t2i"]
        return net.forward(tape, f_real)

    def gen_inner(self, tape, direction, z_real):
        """Returns (fake shared representation, K-wide hashing tap)."""
        net = self.nets["gen_z_i2t" if direction == "i2t" else "gen_z_t2i"]
        return net.forward(tape, z_real)

    def discriminate(self, tape, which, x):
        net = self.nets[{
            "f_I": "disc_f_i",
            "f_T": "disc_f_t",
            "z_I": "disc_z_i",
            "z_T": "disc_z_t",
        }[which]]
        prob, _ = net.forward(tape, x)
        return ad.clip(tape, prob, PROB_EPS, 1.0 - PROB_EPS)

    # -- parameter groups (per-modality learning rates) -------------------

    def image_side_parameters(self):
        names = ("gen_f_t2i", "disc_f_i", "gen_z_t2i", "disc_z_i")
        return [p for n in names for p in self.nets[n].parameters(n)]

    def text_side_parameters(self):
        names = ("text_encoder", "gen_f_i2t", "disc_f_t", "gen_z_i2t", "disc_z_t")
        return [p for n in names for p in self.nets[n].parameters(n)]


def _specs(cfg: BundleConfig):
    k = cfg.k
    # zero-centered hidden units: relu stacks leave a large DC component
    # that swamps the cluster signal and saturates the hashing layer
    gen_acts = ("tanh", "tanh", "tanh", "identity")
    disc_acts = ("relu", "relu", "sigmoid")
    return {
        "text_encoder": MlpSpec((cfg.d_txt_vocab, cfg.d_txt_emb), ("identity",)),
        "gen_f_i2t": MlpSpec(
            (cfg.d_img, 512, SHARED_WIDTH, 512, cfg.d_txt_emb), gen_acts, tap_index=1
        ),
        "gen_f_t2i": MlpSpec(
            (cfg.d_txt_emb, 512, SHARED_WIDTH, 512, cfg.d_img), gen_acts, tap_index=1
        ),
        "disc_f_i": MlpSpec((cfg.d_img, 256, 32, 1), disc_acts),
        "disc_f_t": MlpSpec((cfg.d_txt_emb, 256, 32, 1), disc_acts),
        "gen_z_i2t": MlpSpec(
            (SHARED_WIDTH, 128, k, 128, SHARED_WIDTH),
            ("tanh", "tanh", "tanh", "identity"),
            tap_index=1,
        ),
        "gen_z_t2i": MlpSpec(
            (SHARED_WIDTH, 128, k, 128, SHARED_WIDTH),
            ("tanh", "tanh", "tanh", "identity"),
            tap_index=1,
        ),
        "disc_z_i": MlpSpec((SHARED_WIDTH, 128, 32, 1), disc_acts),
        "disc_z_t": MlpSpec((SHARED_WIDTH, 128, 32, 1), disc_acts),
    }


def build_bundle(config: BundleConfig) -> NetworkBundle:
    rng = np.random.default_rng(config.seed)
    nets = {name: Mlp(spec, rng) for name, spec in _specs(config).items()}
    return NetworkBundle(config=config, nets=nets)


# -- checkpoint I/O -------------------------------------------------------


def save_checkpoint(bundle: NetworkBundle, path):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, tensor in bundle.named_parameters():
            raw = name.encode("utf-8")
            rows, cols = tensor.shape
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<II", rows, cols))
            f.write(tensor.value.astype("<f4").tobytes())


def load_checkpoint_tensors(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        tensors = {}
        while True:
            head = f.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", f.read(8))
            data = np.frombuffer(f.read(rows * cols * 4), dtype="<f4")
            tensors[name] = data.astype(np.float64).reshape(rows, cols)
    return tensors


def load_bundle(path) -> NetworkBundle:
    """Rebuild a bundle from a checkpoint; dims are inferred from shapes."""
    tensors = load_checkpoint_tensors(path)
    cfg = BundleConfig(
        k=tensors["gen_z_i2t.1.W"].shape[1],
        d_img=tensors["gen_f_i2t.0.W"].shape[0],
        d_txt_vocab=tensors["text_encoder.0.W"].shape[0],
        d_txt_emb=tensors["text_encoder.0.W"].shape[1],
    )
    bundle = build_bundle(cfg)
    for name, tensor in bundle.named_parameters():
        if name not in tensors:
            raise ValueError(f"{path}: missing tensor {name}")
        if tensors[name].shape != tensor.shape:
            raise ShapeError(
                f"{path}: tensor {name} shape {tensors[name].shape} != {tensor.shape}"
            )
        tensor.value = tensors[name]
    return bundle
