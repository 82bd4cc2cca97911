"""Alternating adversarial optimization and hash-code extraction.

Each iteration runs four phases in order: outer-discriminator ascent,
outer-generator descent, inner-discriminator ascent, inner-generator
descent. Weight decay is decoupled multiplicative shrinkage (1 - lr*wd)
applied to a parameter group when that group is updated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tape, Tensor
from .codes import CodeMatrix
from .networks import BundleConfig, NetworkBundle, build_bundle

VALID_K = (8, 16, 32, 64)


class DivergenceError(RuntimeError):
    def __init__(self, iteration, term):
        super().__init__(f"non-finite value in {term} at iteration {iteration}")
        self.iteration = iteration
        self.term = term
        self.partial_log = []


@dataclass
class TrainConfig:
    k: int
    batch_size: int = 128
    max_iterations: int = 1000
    lr_image: float = 1e-4
    lr_text: float = 1e-2
    weight_decay: float = 0.1
    seed: int = 0
    gen_adv: bool = True
    optimizer: str = "sgd-momentum"
    momentum: float = 0.9
    # term weights; 1.0 keeps the objective an unweighted sum
    rec_weight: float = 1.0
    sim_weight: float = 1.0
    gen_adv_weight: float = 1.0
    # per-cycle overrides for the generator-side adversarial weight;
    # None falls back to gen_adv_weight
    gen_adv_weight_f: float | None = None
    gen_adv_weight_z: float | None = None

    def validate(self):
        if self.k not in VALID_K:
            raise ValueError(f"k must be one of {VALID_K}, got {self.k}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr_text < 0 or self.lr_image < 0:
            raise ValueError("learning rates must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.optimizer not in ("sgd", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainState:
    bundle: NetworkBundle
    config: TrainConfig
    iteration: int = 0
    velocities: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def lr_for(self, name):
        image_names = {n for n, _ in self.bundle.image_side_parameters()}
        return self.config.lr_image if name in image_names else self.config.lr_text


def init_state(config: TrainConfig, d_img, d_txt_vocab, d_txt_emb) -> TrainState:
    config.validate()
    cfg = BundleConfig(
        k=config.k,
        d_img=d_img,
        d_txt_vocab=d_txt_vocab,
        d_txt_emb=d_txt_emb,
        seed=config.seed,
    )
    return TrainState(bundle=build_bundle(cfg), config=config)


def _apply_updates(state: TrainState, named_params, grads, ascend):
    cfg = state.config
    use_momentum = cfg.optimizer == "sgd-momentum"
    direction = 1.0 if ascend else -1.0
    for name, p in named_params:
        g = grads.get(p)
        if use_momentum:
            v = state.velocities.get(name)
            v = g if v is None else cfg.momentum * v + g
            state.velocities[name] = v
        else:
            v = g
        lr = state.lr_for(name)
        new = p.value * (1.0 - lr * cfg.weight_decay) + direction * lr * v
        if not np.isfinite(new).all():
            raise DivergenceError(state.iteration, f"parameter {name}")
        p.value = new


def _check_finite(state, tensor, term):
    if not np.isfinite(tensor.value).all():
        raise DivergenceError(state.iteration, term)
    return tensor


def _detached_outer_fakes(bundle, images, texts):
    tape = Tape()
    f_i = bundle.encode_image(tape, images)
    f_t = bundle.encode_text(tape, texts)
    f_t_fake, z_i = bundle.gen_outer(tape, "i2t", f_i)
    f_i_fake, z_t = bundle.gen_outer(tape, "t2i", f_t)
    return (
        ad.detach(f_i_fake),
        ad.detach(f_t_fake),
        ad.detach(z_i),
        ad.detach(z_t),
    )


def train_step(state: TrainState, images: Tensor, texts: Tensor) -> L.LossBreakdown:
    """One four-phase alternating update on an aligned feature batch."""
    if images.shape[0] != texts.shape[0]:
        raise ad.ShapeError(
            f"batch size mismatch: {images.shape[0]} images vs {texts.shape[0]} texts"
        )
    bundle = state.bundle
    cfg = state.config
    if cfg.gen_adv:
        gen_w_f = (
            cfg.gen_adv_weight if cfg.gen_adv_weight_f is None else cfg.gen_adv_weight_f
        )
        gen_w_z = (
            cfg.gen_adv_weight if cfg.gen_adv_weight_z is None else cfg.gen_adv_weight_z
        )
    else:
        gen_w_f = gen_w_z = 0.0

    # (a) outer discriminators ascend their adversarial value
    f_i_fake, f_t_fake, _, _ = _detached_outer_fakes(bundle, images, texts)
    tape = Tape()
    di_real = bundle.discriminate(tape, "f_I", images)
    di_fake = bundle.discriminate(tape, "f_I", f_i_fake)
    f_t_real_const = ad.detach(bundle.encode_text(Tape(), texts))
    dt_real = bundle.discriminate(tape, "f_T", f_t_real_const)
    dt_fake = bundle.discriminate(tape, "f_T", f_t_fake)
    adv_f_i = L.adv_loss(tape, di_real, di_fake, "discriminator")
    adv_f_t = L.adv_loss(tape, dt_real, dt_fake, "discriminator")
    adv_f = _check_finite(state, ad.add(tape, adv_f_i, adv_f_t), "adv_f")
    grads = ad.backward(adv_f, tape)
    disc_outer = bundle.nets["disc_f_i"].parameters("disc_f_i") + bundle.nets[
        "disc_f_t"
    ].parameters("disc_f_t")
    _apply_updates(state, disc_outer, grads, ascend=True)
    adv_f_I_val, adv_f_T_val = adv_f_i.item(), adv_f_t.item()

    # (b) outer generators + text encoder descend rec + sim (+ adv term)
    tape = Tape()
    f_i = bundle.encode_image(tape, images)
    f_t = bundle.encode_text(tape, texts)
    f_t_fake, z_i = bundle.gen_outer(tape, "i2t", f_i)
    f_i_fake, z_t = bundle.gen_outer(tape, "t2i", f_t)
    f_i_rec, _ = bundle.gen_outer(tape, "t2i", f_t_fake)
    f_t_rec, _ = bundle.gen_outer(tape, "i2t", f_i_fake)
    rec_f = L.cycle_reconstruction_loss(tape, f_i, f_i_rec, f_t, f_t_rec)
    sim_f = L.similarity_loss(tape, z_i, z_t)
    obj = ad.add(
        tape,
        ad.scale(tape, rec_f, cfg.rec_weight),
        ad.scale(tape, sim_f, cfg.sim_weight),
    )
    if gen_w_f > 0.0:
        gi = bundle.discriminate(tape, "f_I", f_i_fake)
        gt = bundle.discriminate(tape, "f_T", f_t_fake)
        gen_adv_f = ad.add(
            tape,
            L.adv_loss(tape, gi, gi, "generator"),
            L.adv_loss(tape, gt, gt, "generator"),
        )
        obj = ad.add(tape, obj, ad.scale(tape, gen_adv_f, gen_w_f))
    _check_finite(state, obj, "L_f_generator")
    grads = ad.backward(obj, tape)
    gen_outer = (
        bundle.nets["text_encoder"].parameters("text_encoder")
        + bundle.nets["gen_f_i2t"].parameters("gen_f_i2t")
        + bundle.nets["gen_f_t2i"].parameters("gen_f_t2i")
    )
    _apply_updates(state, gen_outer, grads, ascend=False)
    rec_f_val, sim_f_val = rec_f.item(), sim_f.item()
    gen_adv_f_val = gen_adv_f.item() if gen_w_f > 0.0 else 0.0

    # shared representations for the inner cycle, from the updated outer nets
    _, _, z_i_const, z_t_const = _detached_outer_fakes(bundle, images, texts)

    # (c) inner discriminators ascend
    tape = Tape()
    z_t_fake, _ = bundle.gen_inner(tape, "i2t", z_i_const)
    z_i_fake, _ = bundle.gen_inner(tape, "t2i", z_t_const)
    z_t_fake, z_i_fake = ad.detach(z_t_fake), ad.detach(z_i_fake)
    dzi_real = bundle.discriminate(tape, "z_I", z_i_const)
    dzi_fake = bundle.discriminate(tape, "z_I", z_i_fake)
    dzt_real = bundle.discriminate(tape, "z_T", z_t_const)
    dzt_fake = bundle.discriminate(tape, "z_T", z_t_fake)
    adv_z_i = L.adv_loss(tape, dzi_real, dzi_fake, "discriminator")
    adv_z_t = L.adv_loss(tape, dzt_real, dzt_fake, "discriminator")
    adv_z = _check_finite(state, ad.add(tape, adv_z_i, adv_z_t), "adv_z")
    grads = ad.backward(adv_z, tape)
    disc_inner = bundle.nets["disc_z_i"].parameters("disc_z_i") + bundle.nets[
        "disc_z_t"
    ].parameters("disc_z_t")
    _apply_updates(state, disc_inner, grads, ascend=True)
    adv_z_I_val, adv_z_T_val = adv_z_i.item(), adv_z_t.item()

    # (d) inner generators descend rec + sim (+ adv term)
    tape = Tape()
    z_t_fake, h_i = bundle.gen_inner(tape, "i2t", z_i_const)
    z_i_fake, h_t = bundle.gen_inner(tape, "t2i", z_t_const)
    z_i_rec, _ = bundle.gen_inner(tape, "t2i", z_t_fake)
    z_t_rec, _ = bundle.gen_inner(tape, "i2t", z_i_fake)
    rec_z = L.cycle_reconstruction_loss(tape, z_i_const, z_i_rec, z_t_const, z_t_rec)
    sim_z = L.similarity_loss(tape, h_i, h_t)
    obj = ad.add(
        tape,
        ad.scale(tape, rec_z, cfg.rec_weight),
        ad.scale(tape, sim_z, cfg.sim_weight),
    )
    if gen_w_z > 0.0:
        gzi = bundle.discriminate(tape, "z_I", z_i_fake)
        gzt = bundle.discriminate(tape, "z_T", z_t_fake)
        gen_adv_z = ad.add(
            tape,
            L.adv_loss(tape, gzi, gzi, "generator"),
            L.adv_loss(tape, gzt, gzt, "generator"),
        )
        obj = ad.add(tape, obj, ad.scale(tape, gen_adv_z, gen_w_z))
    _check_finite(state, obj, "L_z_generator")
    grads = ad.backward(obj, tape)
    gen_inner = bundle.nets["gen_z_i2t"].parameters("gen_z_i2t") + bundle.nets[
        "gen_z_t2i"
    ].parameters("gen_z_t2i")
    _apply_updates(state, gen_inner, grads, ascend=False)
    rec_z_val, sim_z_val = rec_z.item(), sim_z.item()
    gen_adv_z_val = gen_adv_z.item() if gen_w_z > 0.0 else 0.0

    state.iteration += 1
    l_f = gen_w_f * gen_adv_f_val + rec_f_val + sim_f_val
    l_z = gen_w_z * gen_adv_z_val + rec_z_val + sim_z_val
    return L.LossBreakdown(
        adv_f_I=adv_f_I_val,
        adv_f_T=adv_f_T_val,
        rec_f=rec_f_val,
        sim_f=sim_f_val,
        adv_z_I=adv_z_I_val,
        adv_z_T=adv_z_T_val,
        rec_z=rec_z_val,
        sim_z=sim_z_val,
        L_f=l_f,
        L_z=l_z,
        L_total=l_f + l_z,
    )


def fit(dataset, config: TrainConfig, d_txt_emb=None):
    """Run max_iterations alternating steps over reshuffled minibatches."""
    config.validate()
    images, texts = dataset.training_images(), dataset.training_texts()
    n = images.shape[0]
    if n == 0:
        raise ValueError("dataset has no training items")
    if d_txt_emb is None:
        d_txt_emb = texts.shape[1]
    state = init_state(config, images.shape[1], texts.shape[1], d_txt_emb)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    cursor = 0
    while state.iteration < config.max_iterations:
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        try:
            row = train_step(state, Tensor(images[idx]), Tensor(texts[idx]))
        except DivergenceError as exc:
            exc.partial_log = state.log
            raise
        state.log.append(row)
    return state.bundle, state.log


def write_training_log(path, log):
    with open(path, "w") as f:
        f.write(L.LOG_CSV_HEADER + "\n")
        for i, row in enumerate(log):
            f.write(row.csv_row(i) + "\n")


def _hash_taps(bundle, images=None, texts=None):
    tape = Tape()
    h_i = h_t = None
    if images is not None:
        f_i = bundle.encode_image(tape, Tensor(images))
        _, z_i = bundle.gen_outer(tape, "i2t", f_i)
        _, h_i = bundle.gen_inner(tape, "i2t", z_i)
    if texts is not None:
        f_t = bundle.encode_text(tape, Tensor(texts))
        _, z_t = bundle.gen_outer(tape, "t2i", f_t)
        _, h_t = bundle.gen_inner(tape, "t2i", z_t)
    return h_i, h_t


def extract_codes(bundle, mode, images=None, texts=None) -> CodeMatrix:
    """sign(H_I + H_T) for paired items, sign(H) for single-modality queries.

    sign(0) resolves to +1.
    """
    if mode == "paired":
        h_i, h_t = _hash_taps(bundle, images=images, texts=texts)
        raw = h_i.value + h_t.value
    elif mode == "image":
        h_i, _ = _hash_taps(bundle, images=images)
        raw = h_i.value
    elif mode == "text":
        _, h_t = _hash_taps(bundle, texts=texts)
        raw = h_t.value
    else:
        raise ValueError(f"unknown mode {mode!r}")
    signs = np.where(raw >= 0.0, 1, -1)
    return CodeMatrix.pack(signs)
