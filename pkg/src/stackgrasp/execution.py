"""From an image-plane grasp to a robot-frame grasp pose.

The camera-to-robot mapping is a 12-parameter affine fit by least squares
from (u, v, depth) -> (x, y, z) reference pairs. The grasp point is the
valid depth pixel inside the grasp rectangle with minimum depth; the
approach direction averages surface normals over a window around it.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import OrientedRect, normalize_angle, rect_vertices


class CalibrationError(ValueError):
    """Bad or insufficient calibration data."""


class GraspExecutionError(RuntimeError):
    """Base class for failures while turning a grasp into a robot pose."""


class GraspPointError(GraspExecutionError):
    """No valid depth pixel inside the grasp rectangle."""


class SurfaceNormalError(GraspExecutionError):
    """Too little valid depth around the grasp point to estimate a normal."""


class OpeningLimitError(GraspExecutionError):
    """Required gripper opening exceeds the configured maximum."""


@dataclass
class DepthImage:
    """Depth raster in millimeters with a validity mask (0 = missing)."""

    values: np.ndarray  # (height, width) float
    valid: np.ndarray  # (height, width) bool

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ValueError("values and valid mask must be equal 2-d shapes")
        if np.any(self.values[self.valid] <= 0):
            raise ValueError("valid depths must be positive")

    @classmethod
    def from_millimeters(cls, values) -> "DepthImage":
        """Build from a raster where zero marks missing measurements."""
        arr = np.asarray(values, dtype=float)
        return cls(values=arr, valid=arr > 0)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AffineMap:
    """x_robot = linear @ (u, v, d) + offset, with a non-singular linear part."""

    linear: np.ndarray  # (3, 3)
    offset: np.ndarray  # (3,)
    residual_rms: float = 0.0

    def __post_init__(self) -> None:
        linear = np.asarray(self.linear, dtype=float)
        offset = np.asarray(self.offset, dtype=float)
        if linear.shape != (3, 3) or offset.shape != (3,):
            raise ValueError("linear must be 3x3 and offset length 3")
        if abs(float(np.linalg.det(linear))) <= 1e-9:
            raise ValueError("linear part is singular")
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "offset", offset)

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(linear=np.eye(3), offset=np.zeros(3))

    def apply(self, uvd) -> np.ndarray:
        return self.linear @ np.asarray(uvd, dtype=float) + self.offset

    def to_json_dict(self) -> dict:
        return {
            "linear": [[float(v) for v in row] for row in self.linear],
            "offset": [float(v) for v in self.offset],
            "residual_rms": float(self.residual_rms),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "AffineMap":
        return cls(
            linear=np.array(data["linear"], dtype=float),
            offset=np.array(data["offset"], dtype=float),
            residual_rms=float(data.get("residual_rms", 0.0)),
        )


def fit_affine(pairs: Sequence[tuple[Sequence[float], Sequence[float]]]) -> AffineMap:
    """Least-squares fit of the affine map from >= 4 reference pairs.

    Each pair is ((u, v, d), (x, y, z)). Raises CalibrationError for fewer
    than 4 pairs, a rank-deficient design (e.g. coplanar pixels), or a fit
    whose linear part is singular. The per-point RMS residual of the fit is
    stored on the returned map.
    """
    if len(pairs) < 4:
        raise CalibrationError(f"need at least 4 reference pairs, got {len(pairs)}")
    pix = np.array([p[0] for p in pairs], dtype=float)
    rob = np.array([p[1] for p in pairs], dtype=float)
    if pix.shape[1] != 3 or rob.shape[1] != 3:
        raise CalibrationError("reference pairs must be 3-d points")
    design = np.hstack([pix, np.ones((len(pairs), 1))])
    params, _, rank, _ = np.linalg.lstsq(design, rob, rcond=None)
    if rank < 4:
        raise CalibrationError(
            "rank-deficient calibration (reference pixels are degenerate)"
        )
    linear = params[:3, :].T
    offset = params[3, :]
    residuals = design @ params - rob
    rms = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    try:
        return AffineMap(linear=linear, offset=offset, residual_rms=rms)
    except ValueError as e:
        raise CalibrationError(str(e)) from e


def grasp_point(depth: DepthImage, rect: OrientedRect) -> tuple[int, int, float]:
    """The valid pixel inside ``rect`` with minimum depth.

    Ties break toward the pixel nearest the rectangle center, then row-major
    (v, then u). Raises GraspPointError when no valid pixel lies inside.
    """
    verts = rect_vertices(rect)
    u0 = max(int(math.floor(verts[:, 0].min())), 0)
    u1 = min(int(math.ceil(verts[:, 0].max())), depth.width - 1)
    v0 = max(int(math.floor(verts[:, 1].min())), 0)
    v1 = min(int(math.ceil(verts[:, 1].max())), depth.height - 1)
    if u0 > u1 or v0 > v1:
        raise GraspPointError("grasp rectangle does not overlap the image")
    us, vs = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    du = us - rect.x
    dv = vs - rect.y
    t = math.radians(rect.theta)
    c, s = math.cos(t), math.sin(t)
    xr = c * du + s * dv
    yr = -s * du + c * dv
    inside = (np.abs(xr) <= rect.w / 2.0 + 1e-9) & (np.abs(yr) <= rect.h / 2.0 + 1e-9)
    usable = inside & depth.valid[v0 : v1 + 1, u0 : u1 + 1]
    if not usable.any():
        raise GraspPointError("no valid depth pixel inside the grasp rectangle")
    cand_u = us[usable]
    cand_v = vs[usable]
    cand_d = depth.values[v0 : v1 + 1, u0 : u1 + 1][usable]
    dist2 = (cand_u - rect.x) ** 2 + (cand_v - rect.y) ** 2
    pick = np.lexsort((cand_u, cand_v, dist2, cand_d))[0]
    return int(cand_u[pick]), int(cand_v[pick]), float(cand_d[pick])


def approach_vector(
    depth: DepthImage,
    at: tuple[int, int],
    affine: AffineMap,
    radius: int = 5,
) -> np.ndarray:
    """Unit approach direction at pixel ``at``, in the robot frame.

    Every valid pixel in the (2*radius+1)^2 window is mapped to the robot
    frame; per-pixel surface normals come from the cross product of
    central-difference tangents, are averaged, normalized, and oriented
    downward (negative z). Raises SurfaceNormalError when fewer than 3
    valid pixels fall in the window or no normal can be formed.
    """
    if radius < 1:
        raise ValueError("radius must be at least 1")
    u0, v0 = at
    lo_u, hi_u = max(u0 - radius, 0), min(u0 + radius, depth.width - 1)
    lo_v, hi_v = max(v0 - radius, 0), min(v0 + radius, depth.height - 1)
    window_valid = depth.valid[lo_v : hi_v + 1, lo_u : hi_u + 1]
    if int(window_valid.sum()) < 3:
        raise SurfaceNormalError("fewer than 3 valid depth pixels in the window")

    def mapped(u: int, v: int) -> np.ndarray | None:
        if 0 <= u < depth.width and 0 <= v < depth.height and depth.valid[v, u]:
            return affine.apply((float(u), float(v), depth.values[v, u]))
        return None

    total = np.zeros(3)
    count = 0
    for v in range(lo_v, hi_v + 1):
        for u in range(lo_u, hi_u + 1):
            if not depth.valid[v, u]:
                continue
            left, right = mapped(u - 1, v), mapped(u + 1, v)
            up, down = mapped(u, v - 1), mapped(u, v + 1)
            if left is None or right is None or up is None or down is None:
                continue
            normal = np.cross(right - left, down - up)
            norm = float(np.linalg.norm(normal))
            if norm < 1e-12:
                continue
            total += normal / norm
            count += 1
    if count == 0:
        raise SurfaceNormalError("no surface normal could be formed in the window")
    norm = float(np.linalg.norm(total))
    if norm < 1e-12:
        raise SurfaceNormalError("window normals cancel out")
    approach = total / norm
    # orient into the surface: negative z, with deterministic fallbacks for
    # perfectly vertical surfaces
    if approach[2] > 0 or (approach[2] == 0 and (approach[1] > 0 or (approach[1] == 0 and approach[0] > 0))):
        approach = -approach
    return approach


@dataclass(frozen=True)
class RobotGraspPose:
    """Executable grasp: contact point, approach direction, wrist roll in
    degrees ([-90, 90)), and required opening in robot units."""

    point: np.ndarray  # (3,)
    approach: np.ndarray  # (3,), unit norm
    roll: float
    opening: float

    def to_json_dict(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "approach": [float(v) for v in self.approach],
            "roll": float(self.roll),
            "opening": float(self.opening),
        }


def to_robot_pose(
    grasp: OrientedRect,
    depth: DepthImage,
    affine: AffineMap,
    radius: int = 5,
    max_opening: float | None = None,
) -> RobotGraspPose:
    """Full image-to-robot conversion of one grasp rectangle.

    Roll maps the grasp axis direction through the linear part and reads the
    in-plane angle of the image; opening scales the rectangle width by the
    mean in-plane singular value of the linear part. An optional
    ``max_opening`` rejects grasps wider than the gripper.
    """
    u, v, d = grasp_point(depth, grasp)
    point = affine.apply((float(u), float(v), d))
    approach = approach_vector(depth, (u, v), affine, radius)
    t = math.radians(grasp.theta)
    axis = affine.linear @ np.array([math.cos(t), math.sin(t), 0.0])
    roll = normalize_angle(math.degrees(math.atan2(axis[1], axis[0])))
    in_plane = affine.linear[:, :2]
    opening = grasp.w * float(np.mean(np.linalg.svd(in_plane, compute_uv=False)))
    if max_opening is not None and opening > max_opening:
        raise OpeningLimitError(
            f"opening {opening:.1f} exceeds the maximum {max_opening:.1f}"
        )
    return RobotGraspPose(point=point, approach=approach, roll=roll, opening=opening)


def save_depth_pgm(path, depth: DepthImage) -> None:
    """Write a 16-bit binary PGM (big-endian, maxval 65535); invalid pixels
    are stored as 0 millimeters."""
    values = np.where(depth.valid, np.rint(depth.values), 0.0)
    if np.any(values < 0) or np.any(values > 65535):
        raise ValueError("depth values outside the 16-bit millimeter range")
    arr = values.astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii"))
        f.write(arr.tobytes())


def load_depth_pgm(path) -> DepthImage:
    """Read a binary PGM written by :func:`save_depth_pgm` (or compatible)."""
    raw = Path(path).read_bytes()
    m = re.match(rb"^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 65535:
        raise ValueError(f"{path}: expected 16-bit PGM, maxval {maxval}")
    data = raw[m.end() :]
    expected = width * height * 2
    if len(data) < expected:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data[:expected], dtype=">u2").reshape(height, width)
    return DepthImage.from_millimeters(arr.astype(float))


def load_calibration_pairs(path) -> list[tuple[list[float], list[float]]]:
    """Read [{"pixel": [u, v, d], "robot": [x, y, z]}, ...]."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise CalibrationError(f"{path}: expected a JSON list of pairs")
    pairs = []
    for i, entry in enumerate(data):
        try:
            pixel = [float(v) for v in entry["pixel"]]
            robot = [float(v) for v in entry["robot"]]
        except (KeyError, TypeError, ValueError) as e:
            raise CalibrationError(f"{path}: pair {i}: {e}") from e
        if len(pixel) != 3 or len(robot) != 3:
            raise CalibrationError(f"{path}: pair {i}: points must be 3-d")
        pairs.append((pixel, robot))
    return pairs
