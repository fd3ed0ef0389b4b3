"""Tube and robot parameter types, validation, reference systems, and
domain-randomized resampling.

Units: millimeters for lengths and diameters, GPa for moduli, and m^-1 for
precurvature (as carried by the config files; kinematics converts to mm^-1
internally). Bending stiffness is reported in N*mm^2.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace, asdict
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

# The seven per-tube physical parameters eligible for randomization.
TUBE_PARAMETER_FIELDS = (
    "length_total",
    "length_curved",
    "inner_diameter",
    "outer_diameter",
    "youngs_modulus",
    "shear_modulus",
    "precurvature",
)


class RetriesExhausted(RuntimeError):
    """Raised when domain randomization cannot draw a valid system."""


@dataclass(frozen=True)
class TubeParams:
    """Geometry and material of a single pre-curved tube.

    length_total / length_curved in mm (the curved section is distal),
    diameters in mm, moduli in GPa, precurvature in m^-1 about the tube's
    local x-axis.
    """

    length_total: float
    length_curved: float
    inner_diameter: float
    outer_diameter: float
    youngs_modulus: float
    shear_modulus: float
    precurvature: float

    @property
    def precurvature_per_mm(self) -> float:
        """Precurvature converted to mm^-1 for kinematics."""
        return self.precurvature / 1000.0


@dataclass(frozen=True)
class CtrSystem:
    """One nested three-tube robot; tube index 0 is innermost and longest."""

    tubes: tuple[TubeParams, TubeParams, TubeParams]
    system_id: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tubes", tuple(self.tubes))

    @property
    def full_length(self) -> float:
        """Overall robot length: total length of the innermost tube (mm)."""
        return self.tubes[0].length_total


@dataclass(frozen=True)
class DomainRandomizationSpec:
    """Uniform +/-fraction perturbation of selected tube parameters."""

    fraction: float = 0.05
    parameters: tuple[str, ...] = TUBE_PARAMETER_FIELDS
    max_retries: int = 100

    def __post_init__(self):
        if not (0.0 <= self.fraction < 1.0):
            raise ValueError(f"fraction must be in [0, 1), got {self.fraction}")
        unknown = set(self.parameters) - set(TUBE_PARAMETER_FIELDS)
        if unknown:
            raise ValueError(f"unknown tube parameters: {sorted(unknown)}")


def validate_tube(tube: TubeParams, label: str = "tube") -> list[str]:
    """Return a message per violated tube invariant (empty list if valid)."""
    problems = []
    if not (0.0 < tube.length_curved <= tube.length_total):
        problems.append(
            f"{label}: 0 < length_curved <= length_total violated "
            f"(length_curved={tube.length_curved}, length_total={tube.length_total})"
        )
    if not (0.0 < tube.inner_diameter < tube.outer_diameter):
        problems.append(
            f"{label}: inner_diameter < outer_diameter violated "
            f"(inner_diameter={tube.inner_diameter}, outer_diameter={tube.outer_diameter})"
        )
    if tube.youngs_modulus <= 0.0:
        problems.append(f"{label}: youngs_modulus must be positive ({tube.youngs_modulus})")
    if tube.shear_modulus <= 0.0:
        problems.append(f"{label}: shear_modulus must be positive ({tube.shear_modulus})")
    if tube.precurvature < 0.0:
        problems.append(f"{label}: precurvature must be >= 0 ({tube.precurvature})")
    return problems


def validate_system(sys: CtrSystem) -> list[str]:
    """Return every violated invariant of the system (empty list means ok)."""
    problems = []
    for i, tube in enumerate(sys.tubes):
        problems.extend(validate_tube(tube, label=f"tube {i}"))
    lengths = [t.length_total for t in sys.tubes]
    if not (lengths[0] > lengths[1] > lengths[2]):
        problems.append(
            f"lengths not decreasing inner to outer (length_total={lengths})"
        )
    for i in range(2):
        od, nxt = sys.tubes[i].outer_diameter, sys.tubes[i + 1].inner_diameter
        if od > nxt:
            problems.append(
                f"nesting violated: tube {i} outer_diameter {od} > "
                f"tube {i + 1} inner_diameter {nxt}"
            )
    return problems


def second_moment_of_area(tube: TubeParams) -> float:
    """Annular second moment of area I = pi/64 (OD^4 - ID^4), in mm^4."""
    return math.pi / 64.0 * (tube.outer_diameter**4 - tube.inner_diameter**4)


def bending_stiffness(tube: TubeParams) -> float:
    """Bending stiffness E*I in N*mm^2 (E in GPa = 1e3 N/mm^2)."""
    return tube.youngs_modulus * 1e3 * second_moment_of_area(tube)


def torsional_stiffness(tube: TubeParams) -> float:
    """Torsional stiffness G*J in N*mm^2, with polar moment J = 2I."""
    return tube.shear_modulus * 1e3 * 2.0 * second_moment_of_area(tube)


def randomize(
    sys: CtrSystem,
    spec: DomainRandomizationSpec,
    rng: np.random.Generator,
) -> CtrSystem:
    """Resample each selected parameter uniformly from [p(1-f), p(1+f)].

    The perturbed system is re-validated; invalid draws (e.g. nesting broken
    by a tight clearance) are retried up to spec.max_retries times.
    """
    if spec.fraction == 0.0:
        return sys
    for _ in range(spec.max_retries):
        tubes = []
        for tube in sys.tubes:
            updates = {}
            for field in spec.parameters:
                p = getattr(tube, field)
                lo, hi = p * (1.0 - spec.fraction), p * (1.0 + spec.fraction)
                updates[field] = float(rng.uniform(lo, hi))
            tubes.append(replace(tube, **updates))
        candidate = replace(sys, tubes=tuple(tubes))
        if not validate_system(candidate):
            return candidate
    raise RetriesExhausted(
        f"no valid sample within {spec.max_retries} retries "
        f"(fraction={spec.fraction}, system={sys.name or sys.system_id})"
    )


# --------------------------------------------------------------------------
# Config file I/O. Schema (JSON): {"name": str, "id": int, "tubes": [ {...}
# seven TubeParams fields ... } x3 innermost first ]}.
# --------------------------------------------------------------------------

def system_from_dict(data: dict) -> CtrSystem:
    tubes = tuple(TubeParams(**{k: float(t[k]) for k in TUBE_PARAMETER_FIELDS})
                  for t in data["tubes"])
    if len(tubes) != 3:
        raise ValueError(f"expected 3 tubes, got {len(tubes)}")
    return CtrSystem(tubes=tubes, system_id=int(data.get("id", 0)),
                     name=str(data.get("name", "")))


def system_to_dict(sys: CtrSystem) -> dict:
    return {
        "name": sys.name,
        "id": sys.system_id,
        "tubes": [asdict(t) for t in sys.tubes],
    }


def load_system(source: str | Path) -> CtrSystem:
    """Load a robot config from a JSON file path or a packaged system name.

    Packaged names are "system0" .. "system3" (the four reference systems).
    """
    name = str(source)
    if name in REFERENCE_SYSTEM_NAMES:
        ref = resources.files("ctrreach.data.systems").joinpath(f"{name}.json")
        return system_from_dict(json.loads(ref.read_text()))
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"robot config file not found: {path}")
    return system_from_dict(json.loads(path.read_text()))


def save_system(sys: CtrSystem, path: str | Path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(sys), indent=2) + "\n")


REFERENCE_SYSTEM_NAMES = ("system0", "system1", "system2", "system3")


def reference_system(index: int) -> CtrSystem:
    """One of the four shipped reference systems (0 = longest)."""
    return load_system(REFERENCE_SYSTEM_NAMES[index])


def reference_systems() -> list[CtrSystem]:
    return [reference_system(i) for i in range(4)]


def load_systems(sources: Iterable[str | Path]) -> list[CtrSystem]:
    """Load several configs, reassigning system ids to registry order."""
    systems = []
    for i, src in enumerate(sources):
        sys = load_system(src)
        systems.append(replace(sys, system_id=i))
    return systems
