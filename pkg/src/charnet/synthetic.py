"""Seeded generator of dental-arch point clouds with exact ground truth.

Teeth are superellipsoid point clusters placed along a parabolic arch in
the xy-plane (z up, mm scale, arch about 55 mm wide so sigma = 2 mm and
r = 1 mm keep their clinical meaning). Landmarks come straight from each
cluster's analytic geometry: the mesial/distal extremes along the arch
tangent, the top of the crown, and the two points where the crown meets
the gingival ridge. Surface noise goes on the sampled points only, never
on the annotations.

Per-tooth random draws are keyed by quadrant position rather than by tooth
index, so swapping the left/right presence pattern of a spec mirrors the
generated cloud across the yz-plane exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dental import (
    ARCHES,
    DENTITION_CODES,
    LANDMARKS_PER_TOOTH,
    TEETH_PER_ARCH,
    DentalAnnotation,
    classify_dentition,
    third_molar_indices,
)
from .errors import InputError
from .pointcloud import PointCloud, compute_null_point

__all__ = [
    "ArchSpec",
    "GeneratedSample",
    "generate_arch",
    "generate_dataset",
    "UNIFORM_MIX",
    "WEIGHTED_MIX",
    "resolve_mix",
]

# Half-sizes (mesiodistal, buccolingual, height) in mm by quadrant position:
# 1 = central incisor .. 3 = canine .. 8 = third molar. Incisors are narrow
# and tall, molars wide and short; canines carry the tallest crowns.
POSITION_HALF_SIZES = {
    1: (2.2, 2.0, 5.0),
    2: (2.2, 2.0, 4.8),
    3: (2.4, 2.2, 5.2),
    4: (2.4, 2.6, 4.2),
    5: (2.4, 2.6, 4.2),
    6: (3.0, 3.2, 3.8),
    7: (2.9, 3.1, 3.6),
    8: (2.7, 2.9, 3.4),
}

TOOTH_GAP_MM = 1.2  # free arc length between neighboring crowns
MIDLINE_MARGIN_MM = 1.0  # free arc length on each side of the midline
SUPERELLIPSE_M = 4  # |u/ru|^m + |v/rv|^m + |z/rh|^m = 1 crown surface
GINGIVAL_HEIGHT_FRAC = 0.55  # gingival margin sits at z = -0.55 * rh
GINGIVA_HALF_WIDTH_MM = 4.5
GINGIVA_Z_RANGE = (-6.5, -1.5)

# Dentition-type mix of the reference 1,214-model corpus.
_TYPE_COUNTS = {
    "00": 668, "01": 85, "02": 106, "03": 14, "04": 10,
    "10": 211, "11": 44, "12": 59, "13": 9, "14": 8,
}
WEIGHTED_MIX = {code: count / 1214 for code, count in _TYPE_COUNTS.items()}
UNIFORM_MIX = {code: 0.1 for code in DENTITION_CODES}


@dataclass(frozen=True)
class ArchSpec:
    """Everything that determines one generated arch."""

    arch: str = "lower"
    presence: tuple[bool, ...] = (True,) * TEETH_PER_ARCH
    size_jitter: float = 0.2
    position_jitter: float = 0.2
    width: float = 55.0
    depth: float = 45.0
    points_per_tooth: int = 450
    gingiva_points: int = 6500
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHES:
            raise InputError(f"arch must be one of {ARCHES}, got {self.arch!r}")
        flags = tuple(bool(f) for f in self.presence)
        if len(flags) != TEETH_PER_ARCH:
            raise InputError(f"presence needs {TEETH_PER_ARCH} flags, got {len(flags)}")
        object.__setattr__(self, "presence", flags)
        if sum(flags) < 2:
            raise InputError("an arch needs at least 2 present teeth")
        if self.size_jitter < 0 or self.position_jitter < 0 or self.noise < 0:
            raise InputError("jitters and noise must be >= 0")
        if self.width <= 0 or self.depth <= 0:
            raise InputError("width and depth must be positive")
        if self.points_per_tooth < LANDMARKS_PER_TOOTH or self.gingiva_points < 1:
            raise InputError("too few points requested")

    def mirrored(self) -> "ArchSpec":
        """Left/right-swapped presence pattern; all scalars unchanged."""
        return replace(self, presence=tuple(reversed(self.presence)))


@dataclass(frozen=True)
class GeneratedSample:
    """Raw (pre-downsampling) cloud plus its exact annotation."""

    cloud: PointCloud
    annotation: DentalAnnotation

    def __post_init__(self):
        if self.cloud.has_null:
            raise InputError("generated clouds are raw; preprocessing appends the null point")

    @property
    def patient_id(self) -> str:
        return self.annotation.patient_id

    @property
    def dentition_type(self) -> str:
        return self.annotation.dentition_type


def _position_of(t: int) -> int:
    """Quadrant position 1..8; t=8,9 are the central incisors."""
    return 9 - t if t <= 8 else t - 8


def _arc_table(width: float, depth: float):
    """Dense arc-length table for the half-parabola x in [0, width/2]."""
    a = width / 2.0
    x = np.linspace(0.0, a, 4001)
    slope = -2.0 * depth * x / (a * a)
    ds = np.sqrt(1.0 + slope * slope)
    s = np.concatenate([[0.0], np.cumsum((ds[1:] + ds[:-1]) * 0.5 * np.diff(x))])
    return x, s


def _slot_arcs(spec: ArchSpec) -> dict[int, float]:
    """Unsigned arc-length of each quadrant position's crown center."""
    arcs = {}
    cursor = MIDLINE_MARGIN_MM
    for pos in range(1, 9):
        ru = POSITION_HALF_SIZES[pos][0]
        arcs[pos] = cursor + ru
        cursor += 2.0 * ru + TOOTH_GAP_MM
    return arcs


def _frame_at(x: float, width: float, depth: float):
    """Center point and local frame (mesial u-hat, facial v-hat, z-hat).

    The tangent's x-component is oriented toward the midline, the normal
    points outward (buccal/labial); both are even/odd in x in a way that
    makes the frames of mirrored slots exact reflections of each other.
    """
    a = width / 2.0
    y = depth * (1.0 - (x / a) ** 2)
    slope = -2.0 * depth * x / (a * a)
    norm_t = math.sqrt(1.0 + slope * slope)
    tangent = np.array([1.0 / norm_t, slope / norm_t, 0.0])
    u_hat = tangent if x < 0 else -tangent
    v_hat = np.array([-slope / norm_t, 1.0 / norm_t, 0.0])
    z_hat = np.array([0.0, 0.0, 1.0])
    return np.array([x, y, 0.0]), u_hat, v_hat, z_hat


def _superellipsoid_surface(rng, n: int, radii) -> np.ndarray:
    """n points on |u/ru|^m + |v/rv|^m + |z/rh|^m = 1 (direction sampling)."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    m = SUPERELLIPSE_M
    scale = (np.abs(d / np.asarray(radii)) ** m).sum(axis=1) ** (-1.0 / m)
    return d * scale[:, None]


def _tooth_landmarks(center, u_hat, v_hat, z_hat, radii) -> np.ndarray:
    """Rows MP, DP, CP, FGP, LGP from the crown's analytic geometry."""
    ru, rv, rh = radii
    h = GINGIVAL_HEIGHT_FRAC
    s = (1.0 - h**SUPERELLIPSE_M) ** (1.0 / SUPERELLIPSE_M)
    return np.stack(
        [
            center + ru * u_hat,  # mesial extreme along the arch
            center - ru * u_hat,  # distal extreme
            center + rh * z_hat,  # crown top
            center + s * rv * v_hat - h * rh * z_hat,  # facial gingival point
            center - s * rv * v_hat - h * rh * z_hat,  # lingual gingival point
        ]
    )


def _gingiva_band(spec: ArchSpec, max_arc: float) -> np.ndarray:
    """Mirror-symmetric ridge ribbon: one half sampled, both halves emitted."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 20]))
    half = (spec.gingiva_points + 1) // 2
    x_tab, s_tab = _arc_table(spec.width, spec.depth)
    arc = rng.uniform(0.0, min(max_arc, s_tab[-1]), size=half)
    lateral = rng.uniform(-GINGIVA_HALF_WIDTH_MM, GINGIVA_HALF_WIDTH_MM, size=half)
    z = rng.uniform(*GINGIVA_Z_RANGE, size=half)
    x = np.interp(arc, s_tab, x_tab)
    a = spec.width / 2.0
    y = spec.depth * (1.0 - (x / a) ** 2)
    slope = -2.0 * spec.depth * x / (a * a)
    norm_t = np.sqrt(1.0 + slope * slope)
    px = x + lateral * (-slope / norm_t)
    py = y + lateral * (1.0 / norm_t)
    left = np.stack([px, py, z], axis=1)
    right = left * np.array([-1.0, 1.0, 1.0])
    return np.concatenate([right, left])


def generate_arch(
    spec: ArchSpec, model_id: str | None = None, patient_id: str | None = None
) -> GeneratedSample:
    """Build one arch: tooth clusters, gingiva band, exact annotation.

    The five analytic landmark points of every present tooth are appended
    to the cloud before noise, so at zero noise each annotation has an
    exactly coincident sample point.
    """
    if model_id is None:
        model_id = f"synth-{spec.seed}"
    if patient_id is None:
        patient_id = f"patient-{spec.seed}"

    arcs = _slot_arcs(spec)
    x_tab, s_tab = _arc_table(spec.width, spec.depth)
    if arcs[8] + POSITION_HALF_SIZES[8][0] > s_tab[-1]:
        raise InputError("teeth do not fit the arch; increase width or depth")

    clouds = []
    landmarks: dict[int, np.ndarray] = {}
    max_arc = 0.0
    for t in range(1, TEETH_PER_ARCH + 1):
        if not spec.presence[t - 1]:
            continue
        pos = _position_of(t)
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 10, pos]))
        radii = np.array(POSITION_HALF_SIZES[pos]) + rng.uniform(
            -spec.size_jitter, spec.size_jitter, size=3
        )
        shift = rng.uniform(-spec.position_jitter, spec.position_jitter, size=3)
        local = _superellipsoid_surface(rng, spec.points_per_tooth, radii)

        x_abs = float(np.interp(arcs[pos], s_tab, x_tab))
        x_signed = x_abs if t > 8 else -x_abs  # t <= 8 is the patient's right
        center, u_hat, v_hat, z_hat = _frame_at(x_signed, spec.width, spec.depth)
        center = center + shift[0] * u_hat + shift[1] * v_hat + shift[2] * z_hat
        frame = np.stack([u_hat, v_hat, z_hat])

        cluster = center + local @ frame
        marks = _tooth_landmarks(center, u_hat, v_hat, z_hat, radii)
        # Every landmark must satisfy the superellipsoid surface equation in
        # the tooth frame; this pins center, radii, and frame consistency
        # regardless of how densely the crown was sampled.
        rel = (marks - center) @ frame.T
        residual = (np.abs(rel) / radii) ** SUPERELLIPSE_M
        assert np.abs(residual.sum(axis=1) - 1.0).max() < 1e-9, (
            "landmarks left the tooth surface"
        )
        clouds.append(np.concatenate([cluster, marks]))
        landmarks[t] = marks
        max_arc = max(max_arc, arcs[pos] + radii[0])

    clouds.append(_gingiva_band(spec, max_arc + TOOTH_GAP_MM))
    points = np.concatenate(clouds)
    if spec.noise > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 40]))
        points = points + noise_rng.normal(0.0, spec.noise, size=points.shape)

    null = compute_null_point(points)
    assert null[1] > points[:, 1].max(), "null point must clear the cloud in +y"

    annotation = DentalAnnotation(
        model_id=model_id,
        patient_id=patient_id,
        arch=spec.arch,
        presence=spec.presence,
        landmarks=landmarks,
        dentition_type=classify_dentition(spec.presence),
    )
    return GeneratedSample(PointCloud(points), annotation)


def resolve_mix(mix) -> dict[str, float]:
    """Accept 'uniform', 'weighted', or an explicit code->proportion map."""
    if mix == "uniform":
        return dict(UNIFORM_MIX)
    if mix == "weighted":
        return dict(WEIGHTED_MIX)
    if isinstance(mix, dict):
        unknown = set(mix) - set(DENTITION_CODES)
        if unknown:
            raise InputError(f"unknown dentition codes in mix: {sorted(unknown)}")
        total = sum(mix.values())
        if abs(total - 1.0) > 1e-9 or any(v < 0 for v in mix.values()):
            raise InputError("mix proportions must be non-negative and sum to 1")
        return {code: float(v) for code, v in mix.items() if v > 0}
    raise InputError(f"mix must be 'uniform', 'weighted', or a mapping, got {mix!r}")


def _presence_for_code(code: str, rng) -> tuple[bool, ...]:
    """Random presence pattern classifying to exactly `code`."""
    a, b = third_molar_indices()
    flags = [True] * TEETH_PER_ARCH
    if code[0] == "1":
        drop = int(rng.integers(3))  # 0: keep both, 1: drop right, 2: drop left
        if drop == 1:
            flags[a - 1] = False
        elif drop == 2:
            flags[b - 1] = False
    else:
        flags[a - 1] = flags[b - 1] = False
    missing = int(code[1])
    if missing == 4:
        missing = int(rng.integers(4, 7))
    others = [t for t in range(1, TEETH_PER_ARCH + 1) if t not in (a, b)]
    for t in rng.choice(others, size=missing, replace=False):
        flags[t - 1] = False
    out = tuple(flags)
    assert classify_dentition(out) == code
    return out


def generate_dataset(count: int, mix="uniform", seed: int = 0, **spec_overrides) -> list[GeneratedSample]:
    """Generate `count` samples whose dentition types follow `mix`.

    Per-type counts use largest-remainder rounding. Every sample gets its
    own synthetic patient. Extra keyword arguments override ArchSpec
    fields (e.g. noise=0.0).
    """
    proportions = resolve_mix(mix)
    if count < len(proportions):
        raise InputError(
            f"count {count} is less than the {len(proportions)} requested types"
        )
    codes = sorted(proportions)
    ideal = [count * proportions[c] for c in codes]
    take = [math.floor(v) for v in ideal]
    order = sorted(range(len(codes)), key=lambda i: ideal[i] - take[i], reverse=True)
    for i in order[: count - sum(take)]:
        take[i] += 1

    samples = []
    index = 0
    for code, n in zip(codes, take):
        for _ in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 1, index]))
            presence = _presence_for_code(code, rng)
            arch_seed = int(np.random.SeedSequence([seed, 2, index]).generate_state(1)[0])
            spec = ArchSpec(presence=presence, seed=arch_seed, **spec_overrides)
            samples.append(
                generate_arch(
                    spec,
                    model_id=f"synth-{seed}-{index:04d}",
                    patient_id=f"patient-{seed}-{index:04d}",
                )
            )
            index += 1
    return samples
