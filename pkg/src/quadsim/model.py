"""Robot description: link parameters, DH rows, body geometry and config I/O.

The config document is an INI file (``configparser`` dialect). Sections:

``[robot]``
    ``name``, ``gravity`` (m/s^2), ``mu`` (optional, defaults to 0.6).
``[geometry]``
    ``main_length`` and ``{front,hind}_{length,height,width}`` in metres.
``[spine]``
    ``front_joint`` / ``hind_joint``: actuated joint indices of the pitch and
    roll spine joints.
``[link <name>]``
    one per massed link: ``mass``, ``length``, ``width``, ``height`` (box
    extents along the link frame x, y, z axes) and ``com_offset`` (three
    floats, link frame). Names are ``main_body``, ``front_body``,
    ``hind_body`` and ``<LEG>_{hip,upper,lower}``.
``[leg <LEG>]``
    ``dh1`` .. ``dh4``: ``a alpha d theta_offset joint`` where ``joint`` is an
    integer in [0, 13] or the word ``fixed``.

Legs are ``FR``, ``FL``, ``HR``, ``HL``. Angles are radians, all units SI.
"""

from __future__ import annotations

import configparser
import logging
import math
import re
from dataclasses import dataclass, fields

logger = logging.getLogger(__name__)

LEG_NAMES = ("FR", "FL", "HR", "HL")
N_BASE = 6
N_JOINTS = 14
N_DOF = N_BASE + N_JOINTS
DEFAULT_MU = 0.6
DEFAULT_GRAVITY = 9.81

# Fixed (a, alpha, d) layout of the four DH rows of every leg; None marks a leg-specific length.
DH_PATTERN = ((0.0, 0.0, 0.0), (0.0, -math.pi / 2, 0.0), (None, 0.0, 0.0), (None, 0.0, 0.0))


class ConfigError(ValueError):
    """Raised for malformed or invalid robot/scenario documents."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LinkParams:
    mass: float
    length: float
    width: float
    height: float
    com_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def box(self) -> tuple[float, float, float]:
        return (self.length, self.width, self.height)


@dataclass(frozen=True)
class DHRow:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0
    joint_index: int | None = None

    @property
    def is_fixed(self) -> bool:
        return self.joint_index is None


@dataclass(frozen=True)
class BodyGeometry:
    main_length: float
    front_length: float
    front_height: float
    front_width: float
    hind_length: float
    hind_height: float
    hind_width: float
    main: LinkParams
    front: LinkParams
    hind: LinkParams


@dataclass(frozen=True)
class LegParams:
    name: str
    dh: tuple[DHRow, DHRow, DHRow, DHRow]
    hip: LinkParams
    upper: LinkParams
    lower: LinkParams


@dataclass(frozen=True)
class RobotModel:
    """Immutable description of the spined quadruped.

    Generalized coordinates are ``q = [x, y, z, roll, pitch, yaw, joints]``
    where joint ``j`` lives at ``q[6 + j]``.
    """

    name: str
    geometry: BodyGeometry
    legs: tuple[LegParams, LegParams, LegParams, LegParams]
    spine_front_joint: int = 0
    spine_hind_joint: int = 1
    gravity: float = DEFAULT_GRAVITY
    mu: float = DEFAULT_MU

    def links(self) -> list[tuple[str, LinkParams]]:
        """Massed links in link-id order."""
        out = [
            ("main_body", self.geometry.main),
            ("front_body", self.geometry.front),
            ("hind_body", self.geometry.hind),
        ]
        for leg in self.legs:
            out += [(f"{leg.name}_hip", leg.hip), (f"{leg.name}_upper", leg.upper),
                    (f"{leg.name}_lower", leg.lower)]
        return out

    @property
    def link_names(self) -> list[str]:
        return [name for name, _ in self.links()]

    @property
    def total_mass(self) -> float:
        return sum(p.mass for _, p in self.links())

    @property
    def n_dof(self) -> int:
        return N_BASE + self.n_actuated

    @property
    def n_actuated(self) -> int:
        return len(self.joint_indices())

    def joint_indices(self) -> list[int]:
        idx = [self.spine_front_joint, self.spine_hind_joint]
        for leg in self.legs:
            idx += [row.joint_index for row in leg.dh if row.joint_index is not None]
        return idx


def validate_model(model: RobotModel) -> list[str]:
    """Return one diagnostic string per violated invariant (empty if valid)."""
    diags: list[str] = []

    def check_link(label, p: LinkParams):
        if not p.mass > 0:
            diags.append(f"{label}: LinkParams.mass must be > 0 (got {p.mass})")
        for name in ("length", "width", "height"):
            v = getattr(p, name)
            if not v > 0:
                diags.append(f"{label}: LinkParams.{name} must be > 0 (got {v})")
        if len(p.com_offset) != 3 or not all(math.isfinite(c) for c in p.com_offset):
            diags.append(f"{label}: LinkParams.com_offset must be 3 finite numbers")

    geo = model.geometry
    for name in ("main_length", "front_length", "front_height", "front_width",
                 "hind_length", "hind_height", "hind_width"):
        v = getattr(geo, name)
        if not v > 0:
            diags.append(f"geometry: BodyGeometry.{name} must be > 0 (got {v})")
    for label, p in model.links():
        check_link(label, p)

    if [leg.name for leg in model.legs] != list(LEG_NAMES):
        diags.append(f"legs: expected legs {LEG_NAMES} in order, got "
                     f"{tuple(leg.name for leg in model.legs)}")
    for leg in model.legs:
        if len(leg.dh) != 4:
            diags.append(f"leg {leg.name}: expected 4 DH rows, got {len(leg.dh)}")
            continue
        for k, (row, pattern) in enumerate(zip(leg.dh, DH_PATTERN), start=1):
            for attr, want in zip(("a", "alpha", "d"), pattern):
                got = getattr(row, attr)
                if want is None:
                    if not got > 0:
                        diags.append(f"leg {leg.name} dh{k}: DHRow.{attr} (segment length) "
                                     f"must be > 0 (got {got})")
                elif abs(got - want) > 1e-12:
                    diags.append(f"leg {leg.name} dh{k}: DHRow.{attr} must be {want!r} "
                                 f"to follow the leg DH table (got {got})")
            if k < 4 and row.is_fixed:
                diags.append(f"leg {leg.name} dh{k}: DHRow.joint_index required for an actuated row")
            if k == 4 and not row.is_fixed:
                diags.append(f"leg {leg.name} dh4: foot row must be fixed")

    refs = model.joint_indices()
    for j in refs:
        if not 0 <= j < N_JOINTS:
            diags.append(f"joint_index {j} outside [0, {N_JOINTS - 1}]")
    seen = set()
    for j in refs:
        if j in seen:
            diags.append(f"joint_index {j}: each actuated joint must be referenced exactly once "
                         f"(uniqueness rule)")
        seen.add(j)
    missing = sorted(set(range(N_JOINTS)) - seen)
    if missing:
        diags.append(f"joint_index: joints {missing} are not referenced")

    if not model.gravity > 0:
        diags.append(f"robot: gravity must be > 0 (got {model.gravity})")
    if not model.mu >= 0:
        diags.append(f"robot: mu must be >= 0 (got {model.mu})")
    return diags


def default_robot() -> RobotModel:
    """Built-in 30 kg, 0.6 m long spined quadruped.

    The numbers are plausible desk values, not taken from any hardware.
    """
    half_pi = math.pi / 2
    L1 = L2 = 0.16

    def leg(name: str, first_joint: int) -> LegParams:
        dh = (
            DHRow(0.0, 0.0, 0.0, 0.0, first_joint),
            DHRow(0.0, -half_pi, 0.0, 0.0, first_joint + 1),
            DHRow(L1, 0.0, 0.0, 0.0, first_joint + 2),
            DHRow(L2, 0.0, 0.0, 0.0, None),
        )
        return LegParams(
            name=name,
            dh=dh,
            hip=LinkParams(0.3, 0.05, 0.05, 0.05),
            upper=LinkParams(1.2, L1, 0.04, 0.04, (L1 / 2, 0.0, 0.0)),
            lower=LinkParams(0.5, L2, 0.03, 0.03, (L2 / 2, 0.0, 0.0)),
        )

    geometry = BodyGeometry(
        main_length=0.30,
        front_length=0.15, front_height=0.10, front_width=0.22,
        hind_length=0.15, hind_height=0.10, hind_width=0.22,
        # Main frame: x forward, y left, z up.
        main=LinkParams(12.0, 0.30, 0.22, 0.10),
        # Front frame: x forward, y up, z right.
        front=LinkParams(5.0, 0.15, 0.10, 0.22, (0.075, 0.0, 0.0)),
        # Hind frame: x down, y left, z forward.
        hind=LinkParams(5.0, 0.10, 0.22, 0.15, (0.0, 0.0, -0.075)),
    )
    legs = tuple(leg(name, 2 + 3 * i) for i, name in enumerate(LEG_NAMES))
    return RobotModel(name="quadsim-default", geometry=geometry, legs=legs)


# --------------------------------------------------------------------------
# Config text I/O
# --------------------------------------------------------------------------

_ROBOT_KEYS = {"name", "gravity", "mu"}
_GEOMETRY_KEYS = {f.name for f in fields(BodyGeometry)} - {"main", "front", "hind"}
_SPINE_KEYS = {"front_joint", "hind_joint"}
_LINK_KEYS = {"mass", "length", "width", "height", "com_offset"}
_LEG_KEYS = {"dh1", "dh2", "dh3", "dh4"}


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    index: dict[tuple[str, str | None], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), lineno)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip().lower()), lineno)
    return index


class _Reader:
    def __init__(self, text: str):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text)
        except configparser.ParsingError as exc:
            lineno = exc.errors[0][0] if exc.errors else None
            raise ConfigError(f"malformed line {exc.errors[0][1]!r}" if exc.errors else str(exc),
                              line=lineno) from None
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("content before first [section]", line=exc.lineno) from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"duplicate section [{exc.section}]", line=exc.lineno) from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]",
                              line=exc.lineno) from None
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        self.parser = parser
        self.lines = _line_index(text)
        self.used: set[tuple[str, str]] = set()

    def line(self, section: str, key: str | None = None) -> int | None:
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def raw(self, section: str, key: str) -> str:
        if not self.parser.has_section(section):
            raise ConfigError(f"missing section [{section}]", field=section)
        if not self.parser.has_option(section, key):
            raise ConfigError(f"missing key {key!r} in [{section}]", line=self.line(section),
                              field=f"{section}.{key}")
        self.used.add((section, key))
        return self.parser.get(section, key).strip()

    def float(self, section: str, key: str) -> float:
        text = self.raw(section, key)
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected a number, got {text!r}",
                              line=self.line(section, key), field=f"{section}.{key}") from None

    def int(self, section: str, key: str) -> int:
        text = self.raw(section, key)
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected an integer, got {text!r}",
                              line=self.line(section, key), field=f"{section}.{key}") from None

    def floats(self, section: str, key: str, n: int) -> tuple[float, ...]:
        text = self.raw(section, key)
        parts = text.replace(",", " ").split()
        try:
            vals = tuple(float(p) for p in parts)
        except ValueError:
            vals = ()
        if len(vals) != n:
            raise ConfigError(f"{section}.{key}: expected {n} numbers, got {text!r}",
                              line=self.line(section, key), field=f"{section}.{key}")
        return vals

    def check_keys(self, section: str, allowed: set[str]) -> None:
        for key in self.parser.options(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]",
                                  line=self.line(section, key), field=f"{section}.{key}")


def _read_link(rd: _Reader, name: str) -> LinkParams:
    section = f"link {name}"
    if not rd.parser.has_section(section):
        raise ConfigError(f"missing section [{section}]", field=section)
    rd.check_keys(section, _LINK_KEYS)
    com = rd.floats(section, "com_offset", 3) if rd.has(section, "com_offset") else (0.0, 0.0, 0.0)
    return LinkParams(
        mass=rd.float(section, "mass"),
        length=rd.float(section, "length"),
        width=rd.float(section, "width"),
        height=rd.float(section, "height"),
        com_offset=com,
    )


def _read_dh(rd: _Reader, section: str, key: str) -> DHRow:
    text = rd.raw(section, key)
    parts = text.replace(",", " ").split()
    line = rd.line(section, key)
    if len(parts) != 5:
        raise ConfigError(f"{section}.{key}: expected 'a alpha d theta_offset joint', got {text!r}",
                          line=line, field=f"{section}.{key}")
    try:
        a, alpha, d, off = (float(p) for p in parts[:4])
        joint = None if parts[4].lower() == "fixed" else int(parts[4])
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r}", line=line,
                          field=f"{section}.{key}") from None
    return DHRow(a, alpha, d, off, joint)


def load_robot_config(text: str) -> RobotModel:
    """Parse config text into a validated :class:`RobotModel`.

    Raises:
        ConfigError: on malformed syntax (with line number), unknown keys or
            sections, or any violated model invariant (with field name).
    """
    rd = _Reader(text)
    link_names = ["main_body", "front_body", "hind_body"] + [
        f"{leg}_{part}" for leg in LEG_NAMES for part in ("hip", "upper", "lower")]
    allowed_sections = {"robot", "geometry", "spine"} | {f"link {n}" for n in link_names} | {
        f"leg {n}" for n in LEG_NAMES}
    for section in rd.parser.sections():
        if section not in allowed_sections:
            raise ConfigError(f"unknown section [{section}]", line=rd.line(section), field=section)

    if rd.parser.has_section("robot"):
        rd.check_keys("robot", _ROBOT_KEYS)
    name = rd.raw("robot", "name")
    gravity = rd.float("robot", "gravity") if rd.has("robot", "gravity") else DEFAULT_GRAVITY
    if rd.has("robot", "mu"):
        mu = rd.float("robot", "mu")
    else:
        mu = DEFAULT_MU
        logger.info("robot.mu not given; using default friction coefficient %.2f", DEFAULT_MU)

    if rd.parser.has_section("geometry"):
        rd.check_keys("geometry", _GEOMETRY_KEYS)
    geo_vals = {k: rd.float("geometry", k) for k in sorted(_GEOMETRY_KEYS)}
    geometry = BodyGeometry(
        **geo_vals,
        main=_read_link(rd, "main_body"),
        front=_read_link(rd, "front_body"),
        hind=_read_link(rd, "hind_body"),
    )

    if rd.parser.has_section("spine"):
        rd.check_keys("spine", _SPINE_KEYS)
    front_joint = rd.int("spine", "front_joint")
    hind_joint = rd.int("spine", "hind_joint")

    legs = []
    for leg_name in LEG_NAMES:
        section = f"leg {leg_name}"
        if not rd.parser.has_section(section):
            raise ConfigError(f"missing section [{section}]", field=section)
        rd.check_keys(section, _LEG_KEYS)
        dh = tuple(_read_dh(rd, section, f"dh{k}") for k in range(1, 5))
        legs.append(LegParams(
            name=leg_name,
            dh=dh,
            hip=_read_link(rd, f"{leg_name}_hip"),
            upper=_read_link(rd, f"{leg_name}_upper"),
            lower=_read_link(rd, f"{leg_name}_lower"),
        ))

    model = RobotModel(name=name, geometry=geometry, legs=tuple(legs),
                       spine_front_joint=front_joint, spine_hind_joint=hind_joint,
                       gravity=gravity, mu=mu)
    diags = validate_model(model)
    if diags:
        first = diags[0]
        raise ConfigError("invalid robot model: " + "; ".join(diags), field=first.split(":")[0])
    return model


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_robot_config(model: RobotModel) -> str:
    """Serialize ``model`` to config text; ``load_robot_config`` inverts it exactly."""
    out = ["[robot]", f"name = {model.name}", f"gravity = {_fmt(model.gravity)}",
           f"mu = {_fmt(model.mu)}", "", "[geometry]"]
    geo = model.geometry
    for key in ("main_length", "front_length", "front_height", "front_width",
                "hind_length", "hind_height", "hind_width"):
        out.append(f"{key} = {_fmt(getattr(geo, key))}")
    out += ["", "[spine]", f"front_joint = {model.spine_front_joint}",
            f"hind_joint = {model.spine_hind_joint}", ""]
    for name, p in model.links():
        out += [f"[link {name}]", f"mass = {_fmt(p.mass)}", f"length = {_fmt(p.length)}",
                f"width = {_fmt(p.width)}", f"height = {_fmt(p.height)}",
                "com_offset = " + " ".join(_fmt(c) for c in p.com_offset), ""]
    for leg in model.legs:
        out.append(f"[leg {leg.name}]")
        for k, row in enumerate(leg.dh, start=1):
            joint = "fixed" if row.joint_index is None else str(row.joint_index)
            out.append(f"dh{k} = {_fmt(row.a)} {_fmt(row.alpha)} {_fmt(row.d)} "
                       f"{_fmt(row.theta_offset)} {joint}")
        out.append("")
    return "\n".join(out)


def load_robot_file(path) -> RobotModel:
    with open(path, encoding="utf-8") as fh:
        return load_robot_config(fh.read())
