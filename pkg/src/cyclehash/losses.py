"""Differentiable loss terms for both adversarial cycles.

All terms are batch means so magnitudes are independent of batch size.
Discriminator adversarial value: mean log d_real + mean log(1 - d_fake),
to be maximized. Generator adversarial value: non-saturating mean -log d_fake.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

from . import autodiff as ad
from .autodiff import ContractError, ShapeError

LOG_CSV_HEADER = (
    "iter,adv_f_I,adv_f_T,rec_f,sim_f,adv_z_I,adv_z_T,rec_z,sim_z,L_f,L_z,L_total"
)


@dataclass
class LossBreakdown:
    adv_f_I: float
    adv_f_T: float
    rec_f: float
    sim_f: float
    adv_z_I: float
    adv_z_T: float
    rec_z: float
    sim_z: float
    L_f: float
    L_z: float
    L_total: float

    def csv_row(self, iteration):
        vals = [getattr(self, f.name) for f in fields(self)]
        return ",".join([str(iteration)] + [f"{v:.10g}" for v in vals])


def adv_loss(tape, d_real, d_fake, side):
    if d_real.value.size == 0 or d_fake.value.size == 0:
        raise ContractError("adv_loss on empty batch")
    if side == "discriminator":
        term_real = ad.reduce_mean(tape, ad.log(tape, d_real))
        one_minus = ad.sub(tape, ad.constant(1.0 + 0.0 * d_fake.value), d_fake)
        term_fake = ad.reduce_mean(tape, ad.log(tape, one_minus))
        return ad.add(tape, term_real, term_fake)
    if side == "generator":
        return ad.scale(tape, ad.reduce_mean(tape, ad.log(tape, d_fake)), -1.0)
    raise ContractError(f"unknown side {side!r}")


def _mean_sq_dist(tape, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = ad.sub(tape, a, b)
    total = ad.reduce_sum(tape, ad.square(tape, diff))
    return ad.scale(tape, total, 1.0 / a.shape[0])


def cycle_reconstruction_loss(tape, real_a, regen_a, real_b, regen_b):
    """Both round-trip squared errors, item-summed, averaged over the batch."""
    return ad.add(
        tape, _mean_sq_dist(tape, real_a, regen_a), _mean_sq_dist(tape, real_b, regen_b)
    )


def similarity_loss(tape, a, b):
    return _mean_sq_dist(tape, a, b)


@dataclass
class ForwardTensors:
    """All intermediate tensors of one full two-cycle forward pass."""

    f_i_real: object
    f_t_real: object
    f_t_fake: object
    f_i_fake: object
    f_i_rec: object
    f_t_rec: object
    z_i_real: object
    z_t_real: object
    z_t_fake: object
    z_i_fake: object
    z_i_rec: object
    z_t_rec: object
    h_i: object
    h_t: object


def forward_all(tape, bundle, images, texts) -> ForwardTensors:
    f_i = bundle.encode_image(tape, images)
    f_t = bundle.encode_text(tape, texts)
    f_t_fake, z_i = bundle.gen_outer(tape, "i2t", f_i)
    f_i_fake, z_t = bundle.gen_outer(tape, "t2i", f_t)
    f_i_rec, _ = bundle.gen_outer(tape, "t2i", f_t_fake)
    f_t_rec, _ = bundle.gen_outer(tape, "i2t", f_i_fake)
    z_t_fake, h_i = bundle.gen_inner(tape, "i2t", z_i)
    z_i_fake, h_t = bundle.gen_inner(tape, "t2i", z_t)
    z_i_rec, _ = bundle.gen_inner(tape, "t2i", z_t_fake)
    z_t_rec, _ = bundle.gen_inner(tape, "i2t", z_i_fake)
    return ForwardTensors(
        f_i_real=f_i,
        f_t_real=f_t,
        f_t_fake=f_t_fake,
        f_i_fake=f_i_fake,
        f_i_rec=f_i_rec,
        f_t_rec=f_t_rec,
        z_i_real=z_i,
        z_t_real=z_t,
        z_t_fake=z_t_fake,
        z_i_fake=z_i_fake,
        z_i_rec=z_i_rec,
        z_t_rec=z_t_rec,
        h_i=h_i,
        h_t=h_t,
    )


def total_losses(tape, bundle, fw: ForwardTensors, gen_adv_weight=1.0):
    """Every loss scalar for one batch, as (tensor dict, LossBreakdown)."""
    d = {}
    di_real = bundle.discriminate(tape, "f_I", fw.f_i_real)
    di_fake = bundle.discriminate(tape, "f_I", fw.f_i_fake)
    dt_real = bundle.discriminate(tape, "f_T", fw.f_t_real)
    dt_fake = bundle.discriminate(tape, "f_T", fw.f_t_fake)
    d["adv_f_I"] = adv_loss(tape, di_real, di_fake, "discriminator")
    d["adv_f_T"] = adv_loss(tape, dt_real, dt_fake, "discriminator")
    d["gen_adv_f"] = ad.add(
        tape,
        adv_loss(tape, di_real, di_fake, "generator"),
        adv_loss(tape, dt_real, dt_fake, "generator"),
    )
    d["rec_f"] = cycle_reconstruction_loss(
        tape, fw.f_i_real, fw.f_i_rec, fw.f_t_real, fw.f_t_rec
    )
    d["sim_f"] = similarity_loss(tape, fw.z_i_real, fw.z_t_real)

    dzi_real = bundle.discriminate(tape, "z_I", fw.z_i_real)
    dzi_fake = bundle.discriminate(tape, "z_I", fw.z_i_fake)
    dzt_real = bundle.discriminate(tape, "z_T", fw.z_t_real)
    dzt_fake = bundle.discriminate(tape, "z_T", fw.z_t_fake)
    d["adv_z_I"] = adv_loss(tape, dzi_real, dzi_fake, "discriminator")
    d["adv_z_T"] = adv_loss(tape, dzt_real, dzt_fake, "discriminator")
    d["gen_adv_z"] = ad.add(
        tape,
        adv_loss(tape, dzi_real, dzi_fake, "generator"),
        adv_loss(tape, dzt_real, dzt_fake, "generator"),
    )
    d["rec_z"] = cycle_reconstruction_loss(
        tape, fw.z_i_real, fw.z_i_rec, fw.z_t_real, fw.z_t_rec
    )
    d["sim_z"] = similarity_loss(tape, fw.h_i, fw.h_t)

    d["L_f"] = ad.add(
        tape,
        ad.scale(tape, d["gen_adv_f"], gen_adv_weight),
        ad.add(tape, d["rec_f"], d["sim_f"]),
    )
    d["L_z"] = ad.add(
        tape,
        ad.scale(tape, d["gen_adv_z"], gen_adv_weight),
        ad.add(tape, d["rec_z"], d["sim_z"]),
    )
    d["L_total"] = ad.add(tape, d["L_f"], d["L_z"])

    breakdown = LossBreakdown(
        adv_f_I=d["adv_f_I"].item(),
        adv_f_T=d["adv_f_T"].item(),
        rec_f=d["rec_f"].item(),
        sim_f=d["sim_f"].item(),
        adv_z_I=d["adv_z_I"].item(),
        adv_z_T=d["adv_z_T"].item(),
        rec_z=d["rec_z"].item(),
        sim_z=d["sim_z"].item(),
        L_f=d["L_f"].item(),
        L_z=d["L_z"].item(),
        L_total=d["L_total"].item(),
    )
    return d, breakdown
