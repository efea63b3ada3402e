"""Distillation losses over concept-similarity rows.

Two cross-modal signals drive the student: a prototype loss that aligns
per-class mean similarity rows between modalities, and a contrastive loss
that pulls each student row toward same-class rows from either modality.
Teacher rows always enter as constants; gradients flow only through the
student's tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Matrix, ShapeError


@dataclass
class DistillConfig:
    alpha: float = 0.6  # prototype-loss weight
    beta: float = 0.05  # contrastive-loss weight
    tau: float = 10.0  # contrastive temperature
    gpd_class_reduction: str = "mean"  # "sum" switch for sensitivity runs

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.gpd_class_reduction not in ("mean", "sum"):
            raise ValueError("gpd_class_reduction must be 'mean' or 'sum'")


@dataclass
class ClassPrototypes:
    vectors: Matrix  # C x N, zero rows where a class is absent
    present: np.ndarray  # bool per class

    @property
    def num_classes(self) -> int:
        return self.vectors.rows


def class_prototypes(similarity, labels, num_classes: int) -> ClassPrototypes:
    """Mean similarity row per class over the batch; absent classes are masked."""
    sim = ad.as_matrix(similarity)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != sim.rows:
        raise ValueError(f"labels must be 1-D of length {sim.rows}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    indicator = np.zeros((num_classes, sim.rows))
    indicator[labels, np.arange(sim.rows)] = 1.0
    counts = indicator.sum(axis=1)
    present = counts > 0
    weights = indicator / np.maximum(counts, 1.0)[:, None]
    return ClassPrototypes(vectors=ad.matmul(Matrix(weights), sim), present=present)


def gpd_loss(a: ClassPrototypes, b: ClassPrototypes, reduction: str = "mean") -> Matrix:
    """Squared L2 distance between prototypes, over classes present in both."""
    if a.vectors.cols != b.vectors.cols:
        raise ShapeError(
            f"prototype widths differ: {a.vectors.cols} vs {b.vectors.cols}"
        )
    if a.num_classes != b.num_classes:
        raise ShapeError(
            f"class counts differ: {a.num_classes} vs {b.num_classes}"
        )
    common = np.flatnonzero(a.present & b.present)
    if len(common) == 0:
        return Matrix([[0.0]])
    selector = np.zeros((len(common), a.num_classes))
    selector[np.arange(len(common)), common] = 1.0
    sel = Matrix(selector)
    diff = ad.sub(ad.matmul(sel, a.vectors), ad.matmul(sel, b.vectors))
    total = ad.sum_all(ad.mul(diff, diff))
    if reduction == "sum":
        return total
    return ad.scale(total, 1.0 / len(common))


def lcd_loss(student_sims, student_labels, teacher_sims, teacher_labels,
             tau: float) -> tuple[Matrix, int]:
    """Supervised contrastive pull between same-class similarity rows.

    Anchors are student rows. The candidate set of anchor i is every other
    student row plus every teacher row; positives are candidates sharing
    the anchor's class. Each positive p is scored against the candidate
    set minus p itself, and anchors are averaged over those that have at
    least one positive (and at least two candidates, else no denominator
    exists). Returns the loss and the number of skipped anchors.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s = ad.as_matrix(student_sims)
    t = ad.as_matrix(teacher_sims)
    if s.cols != t.cols:
        raise ShapeError(f"similarity widths differ: {s.cols} vs {t.cols}")
    ls = np.asarray(student_labels, dtype=np.int64)
    lt = np.asarray(teacher_labels, dtype=np.int64)
    if ls.shape != (s.rows,) or lt.shape != (t.rows,):
        raise ValueError("label vectors must match similarity row counts")
    n_s, n_t = s.rows, t.rows

    off_diag = 1.0 - np.eye(n_s)
    pos_ss = (ls[:, None] == ls[None, :]).astype(np.float64) * off_diag
    pos_st = (ls[:, None] == lt[None, :]).astype(np.float64)

    n_candidates = (n_s - 1) + n_t
    n_pos = pos_ss.sum(axis=1) + pos_st.sum(axis=1)
    active = (n_pos > 0) & (n_candidates >= 2)
    skipped = int(n_s - active.sum())
    if not active.any():
        return Matrix([[0.0]]), skipped

    z_ss = ad.scale(ad.matmul(s, ad.transpose(s)), 1.0 / tau)
    z_st = ad.scale(ad.matmul(s, ad.transpose(t)), 1.0 / tau)

    # constant per-anchor shift keeps every exponential <= 1
    stacked = np.concatenate(
        [np.where(off_diag > 0, z_ss.data, -np.inf), z_st.data], axis=1
    )
    shift = Matrix(stacked.max(axis=1, keepdims=True))

    e_ss = ad.mul(ad.exp(ad.sub(z_ss, shift)), Matrix(off_diag))
    e_st = ad.exp(ad.sub(z_st, shift))
    denom_total = ad.add(ad.sum_rows(e_ss), ad.sum_rows(e_st))

    pos_ss_eff = pos_ss * active[:, None]
    pos_st_eff = pos_st * active[:, None]

    def block_terms(z, e, pos_mask):
        mask = Matrix(pos_mask)
        denom = ad.sub(denom_total, e)  # candidate sum excluding this positive
        safe = ad.add(ad.mul(denom, mask), Matrix(1.0 - pos_mask))
        log_ratio = ad.sub(ad.sub(z, shift), ad.log(safe))
        return ad.sum_rows(ad.mul(mask, log_ratio))

    per_anchor = ad.add(
        block_terms(z_ss, e_ss, pos_ss_eff), block_terms(z_st, e_st, pos_st_eff)
    )
    n_active = int(active.sum())
    anchor_weight = np.where(active, 1.0 / np.maximum(n_pos, 1.0), 0.0) / n_active
    loss = ad.scale(ad.sum_all(ad.mul(per_anchor, Matrix(anchor_weight[:, None]))), -1.0)
    return loss, skipped


def total_loss(cls, gpd, lcd, cfg: DistillConfig) -> Matrix:
    """cls + alpha * gpd + beta * lcd."""
    cls = ad.as_matrix(cls)
    gpd = ad.as_matrix(gpd)
    lcd = ad.as_matrix(lcd)
    return ad.add(cls, ad.add(ad.scale(gpd, cfg.alpha), ad.scale(lcd, cfg.beta)))
