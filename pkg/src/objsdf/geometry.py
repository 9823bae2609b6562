"""Analytic SDF primitives and the min-composition that builds a scene SDF.

These primitives serve double duty: ground truth for synthetic dataset
generation / evaluation, and analytic stand-in models for exercising the
rendering and meshing code without a trained network.  All SDFs use the
negative-inside convention and are exact distances (the box uses the clamped
componentwise formula, which is a true SDF inside and out), so the Eikonal
property holds for the ground truth itself.

Ties in the composition always resolve to the lowest object id, matching the
autodiff min rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

SCHEMA_VERSION = 1

KINDS = ("sphere", "box", "halfspace")


def _check_rotation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
        raise ValueError("rotation must be orthonormal within 1e-9")
    return R


@dataclass
class Primitive:
    """One rigid object: a sphere, an axis-aligned box, or a half-space.

    The half-space is {z <= offset} in the local frame; `rotation` orients it.
    """

    kind: str
    object_id: int
    albedo: tuple[float, float, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float | None = None
    half_extents: np.ndarray | None = None
    offset: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind '{self.kind}'")
        self.rotation = _check_rotation(self.rotation)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.kind == "sphere":
            if self.radius is None or self.radius <= 0:
                raise ValueError("sphere needs a positive radius")
        elif self.kind == "box":
            self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
            if self.half_extents is None or np.any(self.half_extents <= 0):
                raise ValueError("box needs positive half extents")
        elif self.kind == "halfspace":
            if self.offset is None:
                raise ValueError("halfspace needs a plane offset")

    def to_local(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, dtype=np.float64) - self.translation) @ self.rotation

    def sdf(self, p: np.ndarray) -> np.ndarray:
        """Signed distance, negative inside; `p` is (..., 3)."""
        q = self.to_local(p)
        if self.kind == "sphere":
            return np.linalg.norm(q, axis=-1) - self.radius
        if self.kind == "halfspace":
            return q[..., 2] - self.offset
        a = np.abs(q) - self.half_extents
        outside = np.linalg.norm(np.maximum(a, 0.0), axis=-1)
        inside = np.minimum(np.max(a, axis=-1), 0.0)
        return outside + inside

    def normal(self, p: np.ndarray) -> np.ndarray:
        """Unit SDF gradient (world frame); ties pick the first axis."""
        q = self.to_local(p)
        if self.kind == "sphere":
            n = q.copy()
            r = np.linalg.norm(n, axis=-1, keepdims=True)
            small = r[..., 0] < 1e-12
            n = np.divide(n, r, out=np.zeros_like(n), where=r > 1e-12)
            n[small] = (0.0, 0.0, 1.0)
        elif self.kind == "halfspace":
            n = np.zeros_like(q)
            n[..., 2] = 1.0
        else:
            a = np.abs(q) - self.half_extents
            out = np.maximum(a, 0.0)
            norm = np.linalg.norm(out, axis=-1, keepdims=True)
            outside = norm[..., 0] > 1e-12
            n = np.zeros_like(q)
            n[outside] = (out[outside] / norm[outside]) * np.sign(q[outside])
            face = np.argmax(a, axis=-1)
            inside = ~outside
            idx = np.nonzero(inside)
            n[idx + (face[inside],)] = np.sign(q[idx + (face[inside],)])
        return n @ self.rotation.T


@dataclass
class SceneSpec:
    """Analytic ground-truth scene: K objects, the last one is the background."""

    primitives: list[Primitive]
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    light_direction: np.ndarray = field(default_factory=lambda: np.array([0.35, 0.2, 0.91]))
    ambient: float = 0.35
    diffuse: float = 0.65
    specular: float = 0.0          # optional view-dependent lobe for stress tests
    specular_exponent: float = 32.0
    background_color: tuple[float, float, float] = (0.05, 0.07, 0.10)

    def __post_init__(self):
        ids = sorted(p.object_id for p in self.primitives)
        if ids != list(range(len(self.primitives))):
            raise ValueError("object ids must be exactly 0..K-1")
        if self.primitives[-1].object_id != self.n_objects - 1:
            self.primitives = sorted(self.primitives, key=lambda p: p.object_id)
        self.bbox_lo = np.asarray(self.bbox_lo, dtype=np.float64)
        self.bbox_hi = np.asarray(self.bbox_hi, dtype=np.float64)
        if np.any(self.bbox_hi <= self.bbox_lo):
            raise ValueError("bbox must have positive extent")
        self.light_direction = np.asarray(self.light_direction, dtype=np.float64)
        norm = np.linalg.norm(self.light_direction)
        if abs(norm - 1.0) > 1e-12:  # keep normalization idempotent for round-trips
            self.light_direction = self.light_direction / norm

    @property
    def n_objects(self) -> int:
        return len(self.primitives)

    @property
    def background_id(self) -> int:
        return self.n_objects - 1

    def object_sdfs(self, p: np.ndarray) -> np.ndarray:
        """All K signed distances at once; `p` (..., 3) -> (..., K)."""
        return np.stack([prim.sdf(p) for prim in self.primitives], axis=-1)

    def centroid(self) -> np.ndarray:
        pts = [p.translation for p in self.primitives if p.kind != "halfspace"]
        return np.mean(pts, axis=0) if pts else 0.5 * (self.bbox_lo + self.bbox_hi)


def compose_min(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scene SDF as the minimum of object SDFs; argmin breaks ties low.

    `d` is (..., K); returns (min over K, argmin object id).
    """
    d = np.asarray(d)
    if d.shape[-1] == 0:
        raise ValueError("compose_min needs at least one object")
    label = np.argmin(d, axis=-1)
    dmin = np.take_along_axis(d, np.expand_dims(label, -1), axis=-1).squeeze(-1)
    return dmin, label


def scene_sdf_analytic(scene: SceneSpec, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """compose_min over all primitive SDFs at `p` (..., 3)."""
    return compose_min(scene.object_sdfs(p))


class AnalyticSdfModel:
    """SceneSpec dressed up with the SDF-query interface of a trained model.

    `channel_scales` multiplies individual SDF channels (scale 0 makes a
    channel constant), which gives exact non-unit-gradient references for
    Eikonal tests.
    """

    def __init__(self, scene: SceneSpec, channel_scales=None):
        self.scene = scene
        self.n_objects = scene.n_objects
        if channel_scales is None:
            channel_scales = np.ones(scene.n_objects)
        self.channel_scales = np.asarray(channel_scales, dtype=np.float64)

    def object_sdf_values(self, p: np.ndarray) -> np.ndarray:
        return self.scene.object_sdfs(p) * self.channel_scales

    def object_sdf_gradients(self, p: np.ndarray) -> np.ndarray:
        """(N, K, 3) exact gradients (unit normals scaled per channel)."""
        grads = np.stack([prim.normal(p) for prim in self.scene.primitives], axis=-2)
        return grads * self.channel_scales[:, None]


# ---- serialization -----------------------------------------------------------


def scene_to_dict(scene: SceneSpec) -> dict:
    prims = []
    for p in scene.primitives:
        entry = {
            "kind": p.kind,
            "object_id": p.object_id,
            "albedo": list(p.albedo),
            "quat_xyzw": Rotation.from_matrix(p.rotation).as_quat().tolist(),
            "translation": p.translation.tolist(),
        }
        if p.kind == "sphere":
            entry["radius"] = p.radius
        elif p.kind == "box":
            entry["half_extents"] = p.half_extents.tolist()
        else:
            entry["offset"] = p.offset
        prims.append(entry)
    return {
        "schema_version": SCHEMA_VERSION,
        "bbox": {"lo": scene.bbox_lo.tolist(), "hi": scene.bbox_hi.tolist()},
        "light": {
            "direction": scene.light_direction.tolist(),
            "ambient": scene.ambient,
            "diffuse": scene.diffuse,
            "specular": scene.specular,
            "specular_exponent": scene.specular_exponent,
        },
        "background_color": list(scene.background_color),
        "primitives": prims,
    }


def scene_from_dict(data: dict) -> SceneSpec:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema version {data.get('schema_version')}")
    prims = []
    for entry in data["primitives"]:
        prims.append(Primitive(
            kind=entry["kind"],
            object_id=entry["object_id"],
            albedo=tuple(entry["albedo"]),
            rotation=Rotation.from_quat(entry["quat_xyzw"]).as_matrix(),
            translation=np.array(entry["translation"]),
            radius=entry.get("radius"),
            half_extents=np.array(entry["half_extents"]) if "half_extents" in entry else None,
            offset=entry.get("offset"),
        ))
    light = data["light"]
    return SceneSpec(
        primitives=prims,
        bbox_lo=np.array(data["bbox"]["lo"]),
        bbox_hi=np.array(data["bbox"]["hi"]),
        light_direction=np.array(light["direction"]),
        ambient=light["ambient"],
        diffuse=light["diffuse"],
        specular=light.get("specular", 0.0),
        specular_exponent=light.get("specular_exponent", 32.0),
        background_color=tuple(data["background_color"]),
    )


def save_scene(scene: SceneSpec, path) -> None:
    from .util import atomic_write_text

    atomic_write_text(path, json.dumps(scene_to_dict(scene), indent=2))


def load_scene(path) -> SceneSpec:
    with open(path) as f:
        return scene_from_dict(json.load(f))


# ---- built-in scenes -----------------------------------------------------------


def reference_scene() -> SceneSpec:
    """Sphere + box over a floor: the three-object evaluation scene.

    The box sits close enough to the sphere that its sphere-facing side is
    occluded in every view; both objects float slightly above the floor so
    grazing views constrain their undersides.
    """
    return SceneSpec(
        primitives=[
            Primitive(kind="sphere", object_id=0, albedo=(0.85, 0.18, 0.15),
                      translation=np.array([-0.32, 0.0, -0.02]), radius=0.4),
            Primitive(kind="box", object_id=1, albedo=(0.20, 0.35, 0.90),
                      translation=np.array([0.47, 0.05, -0.12]),
                      half_extents=np.array([0.3, 0.3, 0.3])),
            Primitive(kind="halfspace", object_id=2, albedo=(0.75, 0.72, 0.68),
                      offset=-0.5),
        ],
        bbox_lo=np.array([-1.15, -1.15, -0.70]),
        bbox_hi=np.array([1.15, 1.15, 0.70]),
    )


def smoke_scene() -> SceneSpec:
    """One sphere over a floor: the quick-training smoke setup."""
    return SceneSpec(
        primitives=[
            Primitive(kind="sphere", object_id=0, albedo=(0.85, 0.25, 0.2),
                      translation=np.array([0.0, 0.0, -0.05]), radius=0.5),
            Primitive(kind="halfspace", object_id=1, albedo=(0.7, 0.7, 0.65),
                      offset=-0.6),
        ],
        bbox_lo=np.array([-1.0, -1.0, -0.8]),
        bbox_hi=np.array([1.0, 1.0, 0.7]),
    )


BUILTIN_SCENES = {"reference": reference_scene, "smoke": smoke_scene}
