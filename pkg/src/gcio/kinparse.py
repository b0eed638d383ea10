"""URDF-subset parser and forward kinematics for serial revolute chains.

Only the kinematic subset is read: ``<link>``, ``<joint type="revolute">``
and ``<joint type="fixed">`` with their ``<origin>``, ``<axis>`` and
``<limit>`` children.  Meshes, inertials, transmissions and similar
elements are ignored.  Fixed joints are folded into the following
revolute joint's origin (or into the end-effector offset), so the parsed
chain is a plain sequence of revolute joints plus one fixed tail
transform.

RPY follows the URDF convention: fixed-axis rotations applied as
``Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import importlib.resources
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from . import dualdiff as dd

__all__ = [
    "ChainError",
    "ChainParseError",
    "ChainStructureError",
    "ChainValidationError",
    "Joint",
    "KinematicChain",
    "parse_chain",
    "parse_chain_file",
    "serialize_chain",
    "forward_kinematics",
    "bundled_chain",
    "BUNDLED_CHAIN_RESOURCE",
]

BUNDLED_CHAIN_RESOURCE = "panda6.urdf"

_AXIS_TOL = 1e-9


class ChainError(ValueError):
    """Base class for chain parsing/validation failures."""


class ChainParseError(ChainError):
    """Malformed XML; carries the line/column of the failure."""


class ChainStructureError(ChainError):
    """The joint graph is not a serial path to the end-effector."""


class ChainValidationError(ChainError):
    """Element contents violate the subset's requirements."""


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis XYZ rotation: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_rpy(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rpy_matrix` (pitch taken in [-pi/2, pi/2])."""
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    if abs(math.cos(pitch)) > 1e-12:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    else:  # gimbal lock: yaw set to zero, roll absorbs the remainder
        roll = math.atan2(-R[0, 1], R[1, 1])
        yaw = 0.0
    return roll, pitch, yaw


def _transform(xyz, rpy) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rpy_matrix(*rpy)
    T[:3, 3] = xyz
    return T


@dataclass(frozen=True)
class Joint:
    """One revolute joint: fixed origin transform then rotation about axis."""

    name: str
    origin: np.ndarray  # 4x4 homogeneous transform preceding the rotation
    axis: np.ndarray  # unit 3-vector in the post-origin frame
    lower: float
    upper: float
    velocity: float | None = None


@dataclass(frozen=True)
class KinematicChain:
    """Serial revolute chain with a fixed end-effector offset."""

    joints: tuple[Joint, ...]
    ee_offset: np.ndarray  # 4x4 fixed transform after the last joint
    ee_link: str

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def velocity_limits(self) -> np.ndarray:
        return np.array(
            [j.velocity if j.velocity is not None else np.inf for j in self.joints]
        )

    def reach(self) -> float:
        """Upper bound on the end-effector distance from the base."""
        r = sum(float(np.linalg.norm(j.origin[:3, 3])) for j in self.joints)
        return r + float(np.linalg.norm(self.ee_offset[:3, 3]))


def _float_triplet(text: str, what: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != 3:
        raise ChainValidationError(f"{what} must have three components, got {text!r}")
    return np.array([float(p) for p in parts])


def _origin_of(elem: ET.Element) -> np.ndarray:
    origin = elem.find("origin")
    if origin is None:
        return np.eye(4)
    xyz = _float_triplet(origin.get("xyz", "0 0 0"), "origin xyz")
    rpy = _float_triplet(origin.get("rpy", "0 0 0"), "origin rpy")
    return _transform(xyz, rpy)


def parse_chain(text: str, ee_link: str | None = None) -> KinematicChain:
    """Parse a URDF-subset document into a serial revolute chain.

    The chain runs from the root link (the one that is never a child) to
    ``ee_link``; when ``ee_link`` is omitted the tree must be a single
    path and its leaf is used.  Fixed joints are folded away.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ChainParseError(f"malformed XML at line {line}, column {col}: {exc.msg}") from exc
    if root.tag != "robot":
        raise ChainValidationError(f"expected <robot> document, got <{root.tag}>")

    links = {e.get("name") for e in root.findall("link")}
    if not links:
        raise ChainStructureError("document declares no links")

    children: dict[str, list[ET.Element]] = {}
    child_links = set()
    for joint in root.findall("joint"):
        jtype = joint.get("type")
        if jtype not in ("revolute", "fixed"):
            raise ChainValidationError(
                f"joint {joint.get('name')!r} has unsupported type {jtype!r}"
            )
        parent = joint.find("parent")
        child = joint.find("child")
        if parent is None or child is None:
            raise ChainStructureError(
                f"joint {joint.get('name')!r} lacks parent/child links"
            )
        pname, cname = parent.get("link"), child.get("link")
        if pname not in links or cname not in links:
            raise ChainStructureError(
                f"joint {joint.get('name')!r} references undeclared links"
            )
        children.setdefault(pname, []).append(joint)
        child_links.add(cname)

    roots = sorted(links - child_links)
    if len(roots) != 1:
        raise ChainStructureError(f"expected one root link, found {roots}")

    # Walk from the root towards the end-effector, folding fixed joints
    # into the next revolute origin.
    joints: list[Joint] = []
    pending = np.eye(4)
    link = roots[0]
    while True:
        if ee_link is not None and link == ee_link:
            break
        out = children.get(link, [])
        if not out:
            if ee_link is not None:
                raise ChainStructureError(
                    f"no path from root {roots[0]!r} to end-effector {ee_link!r}"
                )
            break
        if len(out) > 1:
            branch_names = [j.get("name") for j in out]
            raise ChainStructureError(
                f"link {link!r} branches into joints {branch_names}; chain must be serial"
            )
        joint = out[0]
        origin = pending @ _origin_of(joint)
        if joint.get("type") == "fixed":
            pending = origin
        else:
            axis_elem = joint.find("axis")
            axis = (
                _float_triplet(axis_elem.get("xyz", "0 0 1"), "axis xyz")
                if axis_elem is not None
                else np.array([0.0, 0.0, 1.0])
            )
            if abs(np.linalg.norm(axis) - 1.0) > _AXIS_TOL:
                raise ChainValidationError(
                    f"joint {joint.get('name')!r} axis {axis} is not unit-norm"
                )
            limit = joint.find("limit")
            if limit is None or limit.get("lower") is None or limit.get("upper") is None:
                raise ChainValidationError(
                    f"revolute joint {joint.get('name')!r} lacks position limits"
                )
            lower = float(limit.get("lower"))
            upper = float(limit.get("upper"))
            if not lower < upper:
                raise ChainValidationError(
                    f"joint {joint.get('name')!r} limits [{lower}, {upper}] are empty"
                )
            vel = limit.get("velocity")
            joints.append(
                Joint(
                    name=joint.get("name", f"joint{len(joints)}"),
                    origin=origin,
                    axis=axis,
                    lower=lower,
                    upper=upper,
                    velocity=float(vel) if vel is not None else None,
                )
            )
            pending = np.eye(4)
        link = joint.find("child").get("link")

    return KinematicChain(joints=tuple(joints), ee_offset=pending, ee_link=link)


def parse_chain_file(path, ee_link: str | None = None) -> KinematicChain:
    with open(path, encoding="utf-8") as fh:
        return parse_chain(fh.read(), ee_link=ee_link)


def bundled_chain() -> KinematicChain:
    """The six-joint arm description shipped with the package."""
    text = (
        importlib.resources.files("gcio.data")
        .joinpath(BUNDLED_CHAIN_RESOURCE)
        .read_text(encoding="utf-8")
    )
    return parse_chain(text)


def serialize_chain(chain: KinematicChain) -> str:
    """Emit the chain back as a URDF-subset document.

    The output describes the folded chain: one revolute joint per entry
    plus a single fixed end-effector joint.
    """
    out = ['<?xml version="1.0"?>', '<robot name="chain">', '  <link name="link0"/>']
    for i in range(len(chain.joints)):
        out.append(f'  <link name="link{i + 1}"/>')
    out.append(f'  <link name="{chain.ee_link}"/>')
    for i, j in enumerate(chain.joints):
        xyz = " ".join(repr(v) for v in j.origin[:3, 3])
        rpy = " ".join(repr(v) for v in matrix_rpy(j.origin[:3, :3]))
        axis = " ".join(repr(v) for v in j.axis)
        vel = f' velocity="{j.velocity!r}"' if j.velocity is not None else ""
        out.append(f'  <joint name="{j.name}" type="revolute">')
        out.append(f'    <parent link="link{i}"/>')
        out.append(f'    <child link="link{i + 1}"/>')
        out.append(f'    <origin xyz="{xyz}" rpy="{rpy}"/>')
        out.append(f'    <axis xyz="{axis}"/>')
        out.append(f'    <limit lower="{j.lower!r}" upper="{j.upper!r}"{vel}/>')
        out.append("  </joint>")
    xyz = " ".join(repr(v) for v in chain.ee_offset[:3, 3])
    rpy = " ".join(repr(v) for v in matrix_rpy(chain.ee_offset[:3, :3]))
    out.append('  <joint name="ee_fixed" type="fixed">')
    out.append(f'    <parent link="link{len(chain.joints)}"/>')
    out.append(f'    <child link="{chain.ee_link}"/>')
    out.append(f'    <origin xyz="{xyz}" rpy="{rpy}"/>')
    out.append("  </joint>")
    out.append("</robot>")
    return "\n".join(out) + "\n"


def _axis_rotation(axis: np.ndarray, angle):
    """Rodrigues rotation about a fixed unit axis; ``angle`` may be a Dual
    or an array of any batch shape."""
    c = dd.cos(angle)
    s = dd.sin(angle)
    ax, ay, az = float(axis[0]), float(axis[1]), float(axis[2])
    one_c = 1.0 - c
    rows = [
        dd.stack(
            [
                c + ax * ax * one_c,
                ax * ay * one_c - az * s,
                ax * az * one_c + ay * s,
            ],
            axis=-1,
        ),
        dd.stack(
            [
                ay * ax * one_c + az * s,
                c + ay * ay * one_c,
                ay * az * one_c - ax * s,
            ],
            axis=-1,
        ),
        dd.stack(
            [
                az * ax * one_c - ay * s,
                az * ay * one_c + ax * s,
                c + az * az * one_c,
            ],
            axis=-1,
        ),
    ]
    return dd.stack(rows, axis=-2)


def forward_kinematics(chain: KinematicChain, q):
    """End-effector position for joint vector ``q``.

    ``q`` may be a plain array of shape ``(..., n_joints)`` (batched) or a
    :class:`~gcio.dualdiff.Dual`, in which case the returned position
    carries exact sensitivities.
    """
    n = chain.n_joints
    if dd.value(q).shape[-1] != n:
        raise ChainValidationError(
            f"joint vector has {dd.value(q).shape[-1]} entries, chain has {n}"
        )
    batch = dd.value(q).shape[:-1]
    R = np.broadcast_to(np.eye(3), batch + (3, 3))
    p = np.broadcast_to(np.zeros(3), batch + (3,))
    for i, joint in enumerate(chain.joints):
        O_R = joint.origin[:3, :3]
        O_t = joint.origin[:3, 3]
        p = p + dd.matvec(R, np.broadcast_to(O_t, batch + (3,)))
        R = dd.matmul(R, np.broadcast_to(O_R, batch + (3, 3)))
        R = dd.matmul(R, _axis_rotation(joint.axis, q[..., i]))
    p = p + dd.matvec(R, np.broadcast_to(chain.ee_offset[:3, 3], batch + (3,)))
    return p
