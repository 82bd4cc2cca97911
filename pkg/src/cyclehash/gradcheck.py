"""Central finite-difference validation of every loss term's gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .losses import forward_all, total_losses
from .networks import BundleConfig, build_bundle

TERMS = (
    "adv_f_I",
    "adv_f_T",
    "gen_adv_f",
    "rec_f",
    "sim_f",
    "L_f",
    "adv_z_I",
    "adv_z_T",
    "gen_adv_z",
    "rec_z",
    "sim_z",
    "L_z",
    "L_total",
)


@dataclass
class CheckResult:
    term: str
    max_rel_err: float
    ok: bool


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-4)


def run_checks(
    seed=0,
    d_img=16,
    d_txt=12,
    k=8,
    batch=8,
    coords_per_tensor=3,
    h=1e-5,
    tol=1e-4,
):
    """Compare analytic gradients of each loss term against central FD."""
    cfg = BundleConfig(
        k=k, d_img=d_img, d_txt_vocab=d_txt, d_txt_emb=d_txt, seed=seed
    )
    bundle = build_bundle(cfg)
    rng = np.random.default_rng(seed + 1)
    images = Tensor(rng.uniform(-1.0, 1.0, size=(batch, d_img)))
    texts = Tensor(rng.uniform(-1.0, 1.0, size=(batch, d_txt)))
    # nonzero biases so no activation sits exactly on a kink
    for _, p in bundle.named_parameters():
        if p.shape[0] == 1:
            p.value = rng.uniform(-0.05, 0.05, size=p.shape)

    def eval_terms(masks=None):
        if masks is None:
            masks = []
        with ad.record_kink_masks(masks):
            tape = Tape()
            fw = forward_all(tape, bundle, images, texts)
            tensors, _ = total_losses(tape, bundle, fw)
        return tape, tensors, masks

    tape, tensors, _ = eval_terms()
    analytic = {t: ad.backward(tensors[t], tape) for t in TERMS}

    params = bundle.named_parameters()
    sampled = []
    for name, p in params:
        size = p.value.size
        count = min(coords_per_tensor, size)
        for flat in rng.choice(size, size=count, replace=False):
            sampled.append((p, np.unravel_index(flat, p.shape)))

    errs = {t: 0.0 for t in TERMS}
    for p, idx in sampled:
        orig = p.value
        bump = np.zeros_like(orig)
        bump[idx] = h
        p.value = orig + bump
        _, plus, masks_plus = eval_terms()
        plus_vals = {t: plus[t].item() for t in TERMS}
        p.value = orig - bump
        _, minus, masks_minus = eval_terms()
        p.value = orig
        # central FD is invalid across a relu/clip kink; skip such points
        if any(
            not np.array_equal(mp, mm) for mp, mm in zip(masks_plus, masks_minus)
        ):
            continue
        for t in TERMS:
            fd = (plus_vals[t] - minus[t].item()) / (2.0 * h)
            a = analytic[t].get(p)[idx]
            errs[t] = max(errs[t], _rel_err(a, fd))
    return [CheckResult(term=t, max_rel_err=errs[t], ok=errs[t] < tol) for t in TERMS]
