"""
Shooting-and-bouncing-rays engine for foliage scenes.

Rays leave the transmitter on a randomly rotated Fibonacci lattice and bounce
specularly off the leaves (double-sided, opaque, lossy dielectric). A ray that
passes within the reception sphere of the receiver nominates its face
sequence; every nominated sequence is then solved exactly with the image
method and re-checked for visibility, so reported delays and amplitudes do not
depend on the lattice. At every hit a Lambertian diffuse contribution is sent
straight to the receiver when it is visible.

Each reflection splits the energy: the specular part keeps sqrt(1 - mu_s^2) of
the reflected field, the diffuse lobe carries mu_s^2 |Gamma|^2 of the power.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.constants import epsilon_0, speed_of_light

from app.core.errors import NonFiniteAmplitudeError, ParameterRangeError, TraceError
from app.schemas.channel import MultipathComponent, PathKind
from app.schemas.foliage_schema import (
    CONCRETE_80GHZ,
    FOLIAGE_MATERIAL,
    MAX_DEPTH,
    Material,
    SceneGeometry,
    TracerConfig,
)
from app.schemas.geometry import ScattererSoup
from app.services.bvh import BVH, MIN_DISTANCE, build_bvh
from app.services.scatter_fill import random_rotation

logger = logging.getLogger(__name__)

__all__ = [
    "GroundPlane",
    "Scene",
    "wavelength",
    "free_space_amplitude",
    "free_space_path_loss_db",
    "complex_permittivity",
    "fresnel_reflection",
    "theta_hat",
    "fibonacci_directions",
    "trace",
    "mpcs_to_frame",
]

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
_BARY_TOL = 1e-9
_TINY = 1e-12


def wavelength(carrier_hz: float) -> float:
    return speed_of_light / carrier_hz


def free_space_amplitude(distance, carrier_hz: float):
    """Friis amplitude lambda / (4 pi d) for isotropic antennas."""
    return wavelength(carrier_hz) / (4.0 * math.pi * np.asarray(distance, dtype=np.float64))


def free_space_path_loss_db(distance: float, carrier_hz: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * distance * carrier_hz / speed_of_light)


def complex_permittivity(material: Material, carrier_hz: float) -> complex:
    return complex(material.eps_r, -material.kappa / (2.0 * math.pi * carrier_hz * epsilon_0))


def fresnel_reflection(cos_incidence, material: Material, carrier_hz: float):
    """
    Fresnel reflection coefficients (TE, TM) of a lossy dielectric half-space.

    TE is referenced to the field component normal to the plane of incidence,
    TM to the in-plane component, so both tend to -1 at grazing incidence.
    """
    cos_i = np.asarray(cos_incidence, dtype=np.float64)
    if np.any(cos_i < -_TINY) or np.any(cos_i > 1.0 + _TINY):
        raise ParameterRangeError("cos_incidence", "must lie in [0, 1]")
    cos_i = np.clip(cos_i, 0.0, 1.0)
    eps = complex_permittivity(material, carrier_hz)
    root = np.sqrt(eps - 1.0 + cos_i**2 + 0j)
    gamma_te = (cos_i - root) / (cos_i + root)
    gamma_tm = (eps * cos_i - root) / (eps * cos_i + root)
    return gamma_te, gamma_tm


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Explicit component sum keeps results identical for any batch size.
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(_dot(a, a).real) if np.iscomplexobj(a) else np.sqrt(_dot(a, a))


def _field_norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(_dot(a, np.conj(a)).real)


def theta_hat(directions: np.ndarray) -> np.ndarray:
    """Unit theta vector of each propagation direction (vertical polarization)."""
    k = np.atleast_2d(directions)
    x, y, z = k[:, 0], k[:, 1], k[:, 2]
    rho = np.hypot(x, y)
    pole = rho < _TINY
    safe = np.where(pole, 1.0, rho)
    out = np.empty_like(k, dtype=np.float64)
    out[:, 0] = np.where(pole, 1.0, z * x / safe)
    out[:, 1] = np.where(pole, 0.0, z * y / safe)
    out[:, 2] = np.where(pole, 0.0, -rho)
    return out


def fibonacci_directions(indices: np.ndarray, n_total: int) -> np.ndarray:
    """Directions ``indices`` of an ``n_total``-point Fibonacci sphere lattice."""
    i = np.asarray(indices, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n_total
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@dataclass(frozen=True)
class GroundPlane:
    """Optional flat ground: a square of two large triangles around the link."""

    height: float = 0.0
    material: Material = CONCRETE_80GHZ
    half_extent: float = 1000.0

    def triangles(self, center_xy) -> np.ndarray:
        cx, cy = float(center_xy[0]), float(center_xy[1])
        h, z = self.half_extent, self.height
        a = [cx - h, cy - h, z]
        b = [cx + h, cy - h, z]
        c = [cx + h, cy + h, z]
        d = [cx - h, cy + h, z]
        return np.array([[a, b, c], [a, c, d]], dtype=np.float64)


@dataclass(frozen=True)
class Scene:
    soup: ScattererSoup
    tx_position: np.ndarray
    rx_position: np.ndarray
    material: Material = FOLIAGE_MATERIAL
    carrier_hz: float = 80e9
    ground: Optional[GroundPlane] = None

    def __post_init__(self) -> None:
        tx = np.asarray(self.tx_position, dtype=np.float64).reshape(3)
        rx = np.asarray(self.rx_position, dtype=np.float64).reshape(3)
        object.__setattr__(self, "tx_position", tx)
        object.__setattr__(self, "rx_position", rx)
        if np.array_equal(tx, rx):
            raise ParameterRangeError("rx_position", "must differ from tx_position")
        if not self.carrier_hz > 0:
            raise ParameterRangeError("carrier_hz", f"must be > 0, got {self.carrier_hz}")

    @classmethod
    def from_geometry(cls, soup: ScattererSoup, geometry: SceneGeometry, material: Material) -> "Scene":
        ground = None
        if geometry.ground_enabled:
            ground = GroundPlane(height=geometry.ground_height, material=geometry.ground_material)
        return cls(
            soup=soup,
            tx_position=np.asarray(geometry.tx),
            rx_position=np.asarray(geometry.rx),
            material=material,
            carrier_hz=geometry.carrier_hz,
            ground=ground,
        )

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.rx_position - self.tx_position))

    def swapped(self) -> "Scene":
        return Scene(self.soup, self.rx_position, self.tx_position, self.material, self.carrier_hz, self.ground)


@dataclass(frozen=True)
class _Prepared:
    triangles: np.ndarray
    normals: np.ndarray
    face_material: np.ndarray
    materials: tuple[Material, ...]
    mu_s: np.ndarray
    bvh: BVH
    tx: np.ndarray
    rx: np.ndarray
    carrier_hz: float
    wavelength: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "wavelength", wavelength(self.carrier_hz))

    def fresnel(self, faces: np.ndarray, cos_i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g_te = np.zeros(len(faces), dtype=np.complex128)
        g_tm = np.zeros(len(faces), dtype=np.complex128)
        mat_of_face = self.face_material[faces]
        for mid, material in enumerate(self.materials):
            mask = mat_of_face == mid
            if mask.any():
                g_te[mask], g_tm[mask] = fresnel_reflection(cos_i[mask], material, self.carrier_hz)
        return g_te, g_tm


def _prepare(scene: Scene) -> _Prepared:
    parts = [scene.soup.mesh.triangles()]
    face_material = [np.zeros(scene.soup.count, dtype=np.int64)]
    materials: list[Material] = [scene.material]
    if scene.ground is not None:
        mid = 0.5 * (scene.tx_position + scene.rx_position)
        # Off-center square, so its shared diagonal misses the link midpoint.
        parts.append(scene.ground.triangles(mid[:2] + np.array([0.25, -0.35]) * scene.ground.half_extent))
        face_material.append(np.ones(2, dtype=np.int64))
        materials.append(scene.ground.material)
    triangles = np.concatenate(parts, axis=0).reshape(-1, 3, 3)
    normals = np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0])
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True) if len(normals) else normals
    return _Prepared(
        triangles=triangles,
        normals=normals,
        face_material=np.concatenate(face_material),
        materials=tuple(materials),
        mu_s=np.array([m.mu_s for m in materials]),
        bvh=build_bvh(triangles),
        tx=scene.tx_position,
        rx=scene.rx_position,
        carrier_hz=scene.carrier_hz,
    )


def _orient(normals: np.ndarray, d_in: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normals flipped toward the incoming ray, and the incidence cosine."""
    cos_i = -_dot(d_in, normals)
    flip = cos_i < 0
    normals = np.where(flip[:, None], -normals, normals)
    return normals, np.abs(cos_i)


def _reflect_field(field_in, d_in, d_out, normals, g_te, g_tm):
    """Apply the TE/TM reflection to complex field vectors transverse to ``d_in``."""
    s = np.cross(d_in, normals)
    s_len = np.linalg.norm(s, axis=1)
    normal_incidence = s_len < _TINY
    if normal_incidence.any():
        # Any transverse basis works at normal incidence (Gamma_TM = -Gamma_TE there).
        helper = np.where(
            (np.abs(d_in[normal_incidence, 0]) < 0.9)[:, None], [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]]
        )
        s[normal_incidence] = np.cross(d_in[normal_incidence], helper)
        s_len = np.linalg.norm(s, axis=1)
    s = s / s_len[:, None]
    p_in = np.cross(s, d_in)
    p_out = np.cross(s, d_out)
    e_s = _dot(field_in, s)
    e_p = _dot(field_in, p_in)
    return (g_te * e_s)[:, None] * s + (g_tm * e_p)[:, None] * p_out


def _phase(length: np.ndarray, lam: float) -> np.ndarray:
    return np.exp(-2j * np.pi * length / lam)


def _line_of_sight(prep: _Prepared) -> list[MultipathComponent]:
    delta = prep.rx - prep.tx
    d = float(np.linalg.norm(delta))
    k = (delta / d)[None]
    if prep.bvh.occluded(prep.tx[None], k, np.array([d]))[0]:
        return []
    pol = float(_dot(theta_hat(k), theta_hat(k))[0])
    amp = complex(free_space_amplitude(d, prep.carrier_hz) * pol * _phase(np.array(d), prep.wavelength))
    return [MultipathComponent(delay=d / speed_of_light, amplitude=amp, interaction_count=0, kind=PathKind.LOS)]


def _point_in_triangle(point: np.ndarray, tri: np.ndarray) -> bool:
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    w = point - tri[0]
    d11, d12, d22 = e1 @ e1, e1 @ e2, e2 @ e2
    w1, w2 = w @ e1, w @ e2
    den = d11 * d22 - d12 * d12
    if den <= 0:
        return False
    u = (d22 * w1 - d12 * w2) / den
    v = (d11 * w2 - d12 * w1) / den
    return u >= -_BARY_TOL and v >= -_BARY_TOL and u + v <= 1.0 + _BARY_TOL


def _specular_path(prep: _Prepared, faces: tuple[int, ...]) -> Optional[tuple[MultipathComponent, tuple]]:
    """
    Exact reflection path over ``faces`` by successive images, or None if it does not exist.

    Also returns the reflection points rounded to 1 nm, which identify the
    geometric path when it touches an edge shared by two faces.
    """
    if any(a == b for a, b in zip(faces, faces[1:])):
        return None
    images = [prep.tx]
    for f in faces:
        n = prep.normals[f]
        img = images[-1]
        images.append(img - 2.0 * ((img - prep.triangles[f, 0]) @ n) * n)

    target = prep.rx
    points: list[np.ndarray] = []
    for k in range(len(faces) - 1, -1, -1):
        f = faces[k]
        n = prep.normals[f]
        img = images[k + 1]
        span = target - img
        denom = span @ n
        if abs(denom) < _TINY:
            return None
        s = ((prep.triangles[f, 0] - img) @ n) / denom
        if not 0.0 < s < 1.0:
            return None
        point = img + s * span
        if not _point_in_triangle(point, prep.triangles[f]):
            return None
        points.insert(0, point)
        target = point

    vertices = np.vstack([prep.tx, *points, prep.rx])
    seg = np.diff(vertices, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len <= MIN_DISTANCE):
        return None
    dirs = seg / seg_len[:, None]
    if prep.bvh.occluded(vertices[:-1], dirs, seg_len).any():
        return None

    face_arr = np.asarray(faces, dtype=np.int64)
    normals, cos_i = _orient(prep.normals[face_arr], dirs[:-1])
    g_te, g_tm = prep.fresnel(face_arr, cos_i)
    keep = np.sqrt(1.0 - prep.mu_s[prep.face_material[face_arr]] ** 2)
    e_field = theta_hat(dirs[:1]).astype(np.complex128)
    for k in range(len(faces)):
        e_field = _reflect_field(
            e_field, dirs[k : k + 1], dirs[k + 1 : k + 2], normals[k : k + 1], g_te[k : k + 1], g_tm[k : k + 1]
        ) * keep[k]

    total = float(seg_len.sum())
    pol = complex(_dot(theta_hat(dirs[-1:]), e_field)[0])
    amp = complex(free_space_amplitude(total, prep.carrier_hz) * pol * _phase(np.array(total), prep.wavelength))
    mpc = MultipathComponent(
        delay=total / speed_of_light,
        amplitude=amp,
        interaction_count=len(faces),
        kind=PathKind.REFLECTED,
        faces=tuple(int(f) for f in faces),
    )
    return mpc, tuple(np.round(vertices[1:-1] * 1e9).astype(np.int64).ravel().tolist())


@dataclass
class _ChunkResult:
    candidates: set = field(default_factory=set)
    diffuse: list = field(default_factory=list)
    clamped: int = 0


def _diffuse_contributions(
    prep: _Prepared,
    out: _ChunkResult,
    points: np.ndarray,
    normals: np.ndarray,
    reflected: np.ndarray,
    length_at_hit: np.ndarray,
    mu: np.ndarray,
    paths: np.ndarray,
    faces: np.ndarray,
    depth: int,
    n_total: int,
) -> None:
    to_rx = prep.rx - points
    r_s = np.linalg.norm(to_rx, axis=1)
    ok = (r_s > MIN_DISTANCE) & (mu > 0)
    k_s = to_rx / np.where(r_s > 0, r_s, 1.0)[:, None]
    cos_s = _dot(k_s, normals)
    ok &= cos_s > 0
    rows = np.flatnonzero(ok)
    if len(rows) == 0:
        return
    blocked = prep.bvh.occluded(points[rows], k_s[rows], r_s[rows])
    rows = rows[~blocked]
    if len(rows) == 0:
        return

    k = k_s[rows]
    e_r = reflected[rows]
    e_t = e_r - _dot(e_r, k)[:, None] * k
    norm_r = _field_norm(e_r)
    norm_t = _field_norm(e_t)
    scale = np.where(norm_t > 0, norm_r / np.where(norm_t > 0, norm_t, 1.0), 0.0)
    pol = _dot(theta_hat(k), e_t * scale[:, None])

    lam = prep.wavelength
    total = length_at_hit[rows] + r_s[rows]
    amp = (
        mu[rows]
        * pol
        * np.sqrt(cos_s[rows])
        * lam
        / (2.0 * np.pi * math.sqrt(n_total) * r_s[rows])
        * _phase(total, lam)
    )
    # The point-like tube footprint overestimates power right next to the receiver.
    cap = free_space_amplitude(total, prep.carrier_hz)
    over = np.abs(amp) > cap
    if over.any():
        amp[over] *= cap[over] / np.abs(amp[over])
        out.clamped += int(over.sum())

    for i, row in enumerate(rows):
        if amp[i] == 0:
            continue
        out.diffuse.append(
            MultipathComponent(
                delay=float(total[i]) / speed_of_light,
                amplitude=complex(amp[i]),
                interaction_count=depth + 1,
                kind=PathKind.SCATTERED,
                faces=tuple(int(f) for f in paths[row, :depth]) + (int(faces[row]),),
            )
        )


def _trace_chunk(
    prep: _Prepared,
    config: TracerConfig,
    ray_ids: np.ndarray,
    rotation: np.ndarray,
) -> _ChunkResult:
    n_total = config.n_candidate_rays
    out = _ChunkResult()
    base = fibonacci_directions(ray_ids, n_total)
    # R @ d as component sums, so a ray's direction does not depend on its chunk.
    dirs = base[:, 0:1] * rotation[:, 0] + base[:, 1:2] * rotation[:, 1] + base[:, 2:3] * rotation[:, 2]
    m = len(dirs)
    origin = np.broadcast_to(prep.tx, (m, 3)).copy()
    e_field = theta_hat(dirs).astype(np.complex128)
    length = np.zeros(m)
    paths = np.full((m, config.max_depth), -1, dtype=np.int64)
    d_theta = math.sqrt(4.0 * math.pi / n_total)

    for depth in range(config.max_depth + 1):
        if m == 0:
            break
        hits = prep.bvh.intersect(origin, dirs)

        if depth >= 1:
            w = prep.rx - origin
            t_rx = _dot(w, dirs)
            perp = np.linalg.norm(w - t_rx[:, None] * dirs, axis=1)
            radius = config.rx_sphere_growth * (length + t_rx) * d_theta
            received = (t_rx > 0) & (t_rx < hits.t) & (perp <= radius)
            for row in np.flatnonzero(received):
                out.candidates.add(tuple(int(f) for f in paths[row, :depth]))

        if depth == config.max_depth:
            break

        alive = hits.hit
        origin, dirs, e_field, length, paths = origin[alive], dirs[alive], e_field[alive], length[alive], paths[alive]
        faces = hits.face[alive]
        t = hits.t[alive]
        if len(faces) == 0:
            break

        points = origin + t[:, None] * dirs
        normals, cos_i = _orient(prep.normals[faces], dirs)
        g_te, g_tm = prep.fresnel(faces, cos_i)
        d_out = dirs + 2.0 * cos_i[:, None] * normals
        d_out /= np.linalg.norm(d_out, axis=1, keepdims=True)
        reflected = _reflect_field(e_field, dirs, d_out, normals, g_te, g_tm)
        mu = prep.mu_s[prep.face_material[faces]]

        if config.enable_diffuse and depth + 1 <= config.diffuse_depth:
            _diffuse_contributions(prep, out, points, normals, reflected, length + t, mu, paths, faces, depth, n_total)

        e_field = reflected * np.sqrt(1.0 - mu**2)[:, None]
        paths[:, depth] = faces
        origin = points
        dirs = d_out
        length = length + t

        carrying = _field_norm(e_field) > 0
        origin, dirs, e_field, length, paths = (
            origin[carrying],
            dirs[carrying],
            e_field[carrying],
            length[carrying],
            paths[carrying],
        )
        m = len(origin)
    return out


def trace(
    scene: Scene,
    config: TracerConfig,
    rng: np.random.Generator,
    *,
    threads: int = 1,
    chunk: int = 8192,
) -> list[MultipathComponent]:
    """
    Multipath components from TX to RX, sorted by (delay, face sequence).

    Ray chunks are traced on a thread pool; the lattice rotation is the only
    random draw, so results do not depend on ``threads`` or ``chunk``.
    """
    if not 1 <= config.max_depth <= MAX_DEPTH:
        raise TraceError(f"max_depth {config.max_depth} outside [1, {MAX_DEPTH}]")
    start_ts = time.perf_counter()
    prep = _prepare(scene)
    rotation = random_rotation(rng)

    mpcs = _line_of_sight(prep)
    results: list[_ChunkResult] = []
    if len(prep.triangles):
        bounds = [
            np.arange(lo, min(lo + chunk, config.n_candidate_rays), dtype=np.int64)
            for lo in range(0, config.n_candidate_rays, chunk)
        ]
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(pool.map(lambda ids: _trace_chunk(prep, config, ids, rotation), bounds))

    candidates: set = set()
    clamped = 0
    for res in results:
        candidates |= res.candidates
        mpcs.extend(res.diffuse)
        clamped += res.clamped

    refined = 0
    duplicates = 0
    seen: set = set()
    for faces in sorted(candidates):
        solved = _specular_path(prep, faces)
        if solved is None or solved[0].amplitude == 0:
            continue
        mpc, where = solved
        if where in seen:
            duplicates += 1
            continue
        seen.add(where)
        mpcs.append(mpc)
        refined += 1
    if duplicates:
        logger.debug("duplicate specular paths collapsed", extra={"duplicates": duplicates})

    for mpc in mpcs:
        if not (math.isfinite(mpc.amplitude.real) and math.isfinite(mpc.amplitude.imag)):
            raise NonFiniteAmplitudeError(f"non-finite amplitude on path {mpc.faces} ({mpc.kind.value})")

    mpcs.sort(key=lambda m: (m.delay, m.faces, m.amplitude.real, m.amplitude.imag))
    if clamped:
        logger.debug("diffuse contributions clamped near receiver", extra={"clamped": clamped})
    logger.info(
        "trace completed",
        extra={
            "triangles": len(prep.triangles),
            "rays": config.n_candidate_rays,
            "candidates": len(candidates),
            "specular": refined,
            "mpcs": len(mpcs),
            "elapsed_ms": int((time.perf_counter() - start_ts) * 1000),
        },
    )
    return mpcs


def mpcs_to_frame(mpcs: list[MultipathComponent]) -> pd.DataFrame:
    """MPC dump: path_id, delay_s, amp_re, amp_im, n_interactions, kind."""
    return pd.DataFrame(
        {
            "path_id": np.arange(len(mpcs), dtype=np.int64),
            "delay_s": [m.delay for m in mpcs],
            "amp_re": [m.amplitude.real for m in mpcs],
            "amp_im": [m.amplitude.imag for m in mpcs],
            "n_interactions": [m.interaction_count for m in mpcs],
            "kind": [m.kind.value for m in mpcs],
        }
    )
