import logging
import math
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from flowforge.core.exceptions import InvalidParamsError, NoOpsEnabledError, SingularTransformError
from flowforge.core.raster import FlowField, Image, bilinear_sample
from flowforge.core.rng import SeedPath, sample_unit
from flowforge.models.hyperparams import AugmentParams
from flowforge.services.scene_service import RenderedSample

logger = logging.getLogger(__name__)

SPATIAL_KINDS = ("rotation", "scale", "squeeze", "translation")
COLOR_KINDS = ("noise",)
MIN_ABS_DET = 1e-6

AugmentKind = Literal["rotation", "scale", "squeeze", "translation", "noise"]


class AugmentOp(BaseModel):
    """One transform; magnitude is (degrees,), (factor,), (x factor,), (dx_rel, dy_rel) or (std,)."""
    model_config = ConfigDict(frozen=True)

    kind: AugmentKind
    magnitude: Tuple[float, ...]
    noise_seed: int = 0

    @property
    def spatial(self) -> bool:
        return self.kind in SPATIAL_KINDS


def enabled_kinds(p: AugmentParams) -> List[str]:
    kinds: List[str] = []
    if p.enabled_spatial:
        kinds.extend(SPATIAL_KINDS)
    if p.enabled_color:
        kinds.extend(COLOR_KINDS)
    return kinds


def _sample_op(kind: str, p: AugmentParams, gen: np.random.Generator) -> AugmentOp:
    b, level = p.bounds, p.level
    if kind == "rotation":
        return AugmentOp(kind=kind, magnitude=(b.rotation_deg * level * sample_unit(gen),))
    if kind == "scale":
        return AugmentOp(kind=kind, magnitude=(b.scale_ratio ** (level * sample_unit(gen)),))
    if kind == "squeeze":
        return AugmentOp(kind=kind, magnitude=(b.squeeze_ratio ** (level * sample_unit(gen)),))
    if kind == "translation":
        u = sample_unit(gen, size=2)
        return AugmentOp(kind=kind, magnitude=(b.translation_rel * level * u[0], b.translation_rel * level * u[1]))
    return AugmentOp(kind="noise", magnitude=(b.noise_std * level,), noise_seed=int(gen.integers(0, 2**63 - 1)))


def sample_augment_ops(p: AugmentParams, rng: SeedPath) -> List[AugmentOp]:
    if p.num_ops < 0 or not 0.0 <= p.level <= 1.0:
        raise InvalidParamsError(f"augment.num_ops must be >= 0 and level in [0, 1], got {p.num_ops}, {p.level}")
    kinds = enabled_kinds(p)
    if p.mode == "all":
        if not kinds:
            raise NoOpsEnabledError("Augmentation mode 'all' with every kind disabled")
        chosen = kinds
    else:
        if p.num_ops == 0:
            return []
        if not kinds:
            raise NoOpsEnabledError(f"num_ops={p.num_ops} but spatial and color augmentations are disabled")
        gen = rng.child("kinds").generator()
        chosen = [kinds[int(i)] for i in gen.integers(0, len(kinds), size=p.num_ops)]
    gen = rng.child("magnitudes").generator()
    return [_sample_op(kind, p, gen) for kind in chosen]


# --- Application ---

def linear_part(op: AugmentOp) -> np.ndarray:
    if op.kind == "rotation":
        t = math.radians(op.magnitude[0])
        return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    if op.kind == "scale":
        return np.eye(2) * op.magnitude[0]
    if op.kind == "squeeze":
        return np.diag([op.magnitude[0], 1.0 / op.magnitude[0]])
    return np.eye(2)


def affine_matrix(op: AugmentOp, frame: Tuple[int, int]) -> np.ndarray:
    """3x3 homogeneous map acting about the frame center."""
    w, h = frame
    c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    lin = linear_part(op)
    shift = np.array([op.magnitude[0] * w, op.magnitude[1] * h]) if op.kind == "translation" else np.zeros(2)
    m = np.eye(3)
    m[:2, :2] = lin
    m[:2, 2] = c - lin @ c + shift
    return m


def _apply_spatial(s: RenderedSample, op: AugmentOp) -> RenderedSample:
    w, h = s.image1.frame
    m = affine_matrix(op, (w, h))
    lin = m[:2, :2]
    if abs(np.linalg.det(lin)) < MIN_ABS_DET:
        raise SingularTransformError(f"{op.kind} augmentation with magnitude {op.magnitude} is singular")
    inv = np.linalg.inv(m)
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]
    flow = bilinear_sample(s.flow, sx, sy) @ lin.T
    return s.model_copy(update={
        "image1": Image(data=np.clip(bilinear_sample(s.image1, sx, sy), 0.0, 1.0)),
        "image2": Image(data=np.clip(bilinear_sample(s.image2, sx, sy), 0.0, 1.0)),
        "flow": FlowField(data=flow),
    })


def _apply_noise(s: RenderedSample, op: AugmentOp) -> RenderedSample:
    std = op.magnitude[0]
    if std <= 0:
        return s
    gen = np.random.default_rng(op.noise_seed)
    noisy = [
        Image(data=np.clip(img.data + gen.normal(0.0, std, size=img.data.shape), 0.0, 1.0))
        for img in (s.image1, s.image2)
    ]
    return s.model_copy(update={"image1": noisy[0], "image2": noisy[1]})


def apply_augment(s: RenderedSample, ops: List[AugmentOp]) -> RenderedSample:
    """Apply ops in order; spatial ops transform both frames identically and the flow by W'(y) = A W(A^-1 y)."""
    for op in ops:
        s = _apply_spatial(s, op) if op.spatial else _apply_noise(s, op)
    return s


def augment_sample(s: RenderedSample, p: AugmentParams, rng: SeedPath) -> RenderedSample:
    ops = sample_augment_ops(p, rng)
    logger.debug(f"Augmenting sample {s.provenance.index} with {[op.kind for op in ops]}")
    return apply_augment(s, ops)
