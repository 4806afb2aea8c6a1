"""Dental vocabulary: tooth identifiers, landmark indexing, dentition taxonomy.

One arch holds 16 teeth. The tooth index t runs 1..16 across the arch:
right side from the third molar inward (right-8 down to right-1), then the
left side outward (left-1 up to left-8). Each tooth carries 5 landmarks
(g = 1..5): mesial point, distal point, cusp point, and the facial and
lingual gingival points; the flat landmark index is k = (t-1)*5 + g.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import combinations

import numpy as np

from .errors import InputError
from .validation import as_points_array, check_flags

__all__ = [
    "ARCHES",
    "TEETH_PER_ARCH",
    "LANDMARKS_PER_TOOTH",
    "NUM_LANDMARKS",
    "DENTITION_CODES",
    "ToothId",
    "LandmarkKind",
    "DentalAnnotation",
    "tooth_from_index",
    "tooth_index",
    "tooth_label",
    "tooth_from_label",
    "landmark_index",
    "landmark_tg",
    "classify_dentition",
    "presence_from_annotation",
    "third_molar_indices",
    "translate_annotation",
]

ARCHES = ("upper", "lower")
TEETH_PER_ARCH = 16
LANDMARKS_PER_TOOTH = 5
NUM_LANDMARKS = TEETH_PER_ARCH * LANDMARKS_PER_TOOTH

# Legal two-digit dentition codes: third-molar digit then capped missing count.
DENTITION_CODES = ("00", "01", "02", "03", "04", "10", "11", "12", "13", "14")


class LandmarkKind(Enum):
    """The five landmark kinds, in their fixed g order."""

    MP = 1
    DP = 2
    CP = 3
    FGP = 4
    LGP = 5

    @property
    def g(self) -> int:
        return self.value


@dataclass(frozen=True)
class ToothId:
    """One tooth position: arch, side, and position 1 (central) .. 8 (third molar)."""

    arch: str
    side: str
    position: int

    def __post_init__(self):
        if self.arch not in ARCHES:
            raise InputError(f"ToothId: arch must be one of {ARCHES}, got {self.arch!r}")
        if self.side not in ("left", "right"):
            raise InputError(f"ToothId: side must be left or right, got {self.side!r}")
        if not 1 <= self.position <= 8:
            raise InputError(f"ToothId: position must be 1..8, got {self.position}")

    @property
    def label(self) -> str:
        return f"{'U' if self.arch == 'upper' else 'L'}{'R' if self.side == 'right' else 'L'}{self.position}"


def tooth_from_index(t: int, arch: str) -> ToothId:
    """Tooth index 1..16 -> ToothId (right-8 .. right-1, left-1 .. left-8)."""
    if not 1 <= t <= TEETH_PER_ARCH:
        raise InputError(f"tooth index must be 1..16, got {t}")
    if t <= 8:
        return ToothId(arch, "right", 9 - t)
    return ToothId(arch, "left", t - 8)


def tooth_index(tooth: ToothId) -> int:
    """Inverse of tooth_from_index, ignoring the arch."""
    return 9 - tooth.position if tooth.side == "right" else 8 + tooth.position


def tooth_label(t: int, arch: str) -> str:
    return tooth_from_index(t, arch).label


def tooth_from_label(label: str) -> ToothId:
    """Parse labels like UR6 or LL1."""
    if len(label) != 3 or label[0] not in "UL" or label[1] not in "RL" or not label[2].isdigit():
        raise InputError(f"tooth label must look like UR6, got {label!r}")
    return ToothId(
        "upper" if label[0] == "U" else "lower",
        "right" if label[1] == "R" else "left",
        int(label[2]),
    )


def landmark_index(t: int, g: int) -> int:
    """(tooth t, kind g) -> flat landmark index k in 1..80."""
    if not 1 <= t <= TEETH_PER_ARCH:
        raise InputError(f"landmark_index: tooth index must be 1..16, got {t}")
    if not 1 <= g <= LANDMARKS_PER_TOOTH:
        raise InputError(f"landmark_index: kind index must be 1..5, got {g}")
    return (t - 1) * LANDMARKS_PER_TOOTH + g


def landmark_tg(k: int) -> tuple[int, int]:
    """Flat landmark index k in 1..80 -> (tooth t, kind g)."""
    if not 1 <= k <= NUM_LANDMARKS:
        raise InputError(f"landmark_tg: landmark index must be 1..80, got {k}")
    return (k - 1) // LANDMARKS_PER_TOOTH + 1, (k - 1) % LANDMARKS_PER_TOOTH + 1


def third_molar_indices() -> tuple[int, int]:
    """Tooth indices of the two third molars (position 8 on each side)."""
    return 1, 16


def classify_dentition(presence) -> str:
    """Two-digit dentition code from 16 presence flags.

    First digit: 1 iff any third molar is present. Second digit: number of
    absent teeth among the other 14, capped at 4.
    """
    flags = check_flags(presence, n=TEETH_PER_ARCH, name="presence")
    a, b = third_molar_indices()
    has_third = bool(flags[a - 1] or flags[b - 1])
    others = [flags[t - 1] for t in range(1, TEETH_PER_ARCH + 1) if t not in (a, b)]
    missing = min(4, sum(1 for f in others if not f))
    return f"{int(has_third)}{missing}"


@dataclass(frozen=True)
class DentalAnnotation:
    """Ground-truth landmarks for one dental model.

    `presence` has 16 flags indexed by tooth index; `landmarks` maps each
    present tooth index to a (5, 3) array ordered MP, DP, CP, FGP, LGP.
    """

    model_id: str
    patient_id: str
    arch: str
    presence: tuple[bool, ...]
    landmarks: dict[int, np.ndarray]
    dentition_type: str

    def __post_init__(self):
        if self.arch not in ARCHES:
            raise InputError(f"annotation arch must be one of {ARCHES}, got {self.arch!r}")
        flags = tuple(bool(f) for f in check_flags(self.presence, n=TEETH_PER_ARCH, name="presence"))
        object.__setattr__(self, "presence", flags)
        marked = {t for t in range(1, TEETH_PER_ARCH + 1) if flags[t - 1]}
        if set(self.landmarks) != marked:
            missing = sorted(marked - set(self.landmarks))
            extra = sorted(set(self.landmarks) - marked)
            raise InputError(
                f"annotation inconsistent: present teeth without landmarks {missing}, "
                f"landmarks for absent teeth {extra}"
            )
        fixed = {}
        for t, pts in self.landmarks.items():
            arr = as_points_array(pts, name=f"landmarks[{t}]")
            if arr.shape != (LANDMARKS_PER_TOOTH, 3):
                raise InputError(f"landmarks[{t}] must have shape (5, 3), got {arr.shape}")
            arr.setflags(write=False)
            fixed[t] = arr
        object.__setattr__(self, "landmarks", fixed)
        expected = classify_dentition(flags)
        if self.dentition_type != expected:
            raise InputError(
                f"annotation dentition type {self.dentition_type!r} does not match "
                f"presence flags (expected {expected!r})"
            )

    def landmark_position(self, t: int, g: int) -> np.ndarray | None:
        """Position of landmark (t, g), or None when tooth t is absent."""
        landmark_index(t, g)  # range check
        if t not in self.landmarks:
            return None
        return self.landmarks[t][g - 1]


def presence_from_annotation(ann: DentalAnnotation) -> np.ndarray:
    """y_t = 1 iff tooth t carries landmarks."""
    return np.array(ann.presence, dtype=bool)


def translate_annotation(ann: DentalAnnotation, delta) -> DentalAnnotation:
    """Shift every landmark by delta (mm), e.g. to follow a centered cloud.

    Annotations carry no frame of their own; whoever recenters a cloud must
    translate its annotation by the same offset or distances to the cloud
    become meaningless.
    """
    delta = np.asarray(delta, dtype=np.float64).reshape(3)
    if not np.isfinite(delta).all():
        raise InputError(f"translation must be finite, got {delta.tolist()}")
    return DentalAnnotation(
        model_id=ann.model_id,
        patient_id=ann.patient_id,
        arch=ann.arch,
        presence=ann.presence,
        landmarks={t: marks + delta for t, marks in ann.landmarks.items()},
        dentition_type=ann.dentition_type,
    )
