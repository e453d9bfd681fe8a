"""
Published hardware results kept as reference fixtures.

These numbers come from physical robots and scanners and cannot be
regenerated by the simulator; they are stored so reports can be laid out
next to them in the same column order (x, y, z in mm; roll, pitch, yaw in
degrees).
"""

from __future__ import annotations

from dataclasses import dataclass

from .io import ERROR_KEYS

COLUMNS = ("x", "y", "z", "roll", "pitch", "yaw")


@dataclass(frozen=True)
class ReferenceRow:
    label: str
    values: tuple  # (x, y, z, roll, pitch, yaw) in mm / deg
    note: str = ""

    def as_block(self) -> dict:
        return dict(zip(ERROR_KEYS, self.values))


# all-points fits on four robots before the iterative method
ALL_POINTS_BY_ROBOT = (
    ReferenceRow("UR5", (11.60, 2.81, 5.55, 0.49, -0.89, -0.47), "three false segmentations retained"),
    ReferenceRow("UR10e", (0.60, 1.75, -0.41, 0.10, -0.04, -0.23)),
    ReferenceRow("Franka", (4.34, -4.06, -0.13, -0.30, -0.34, -0.07)),
    ReferenceRow("AUBO", (-0.26, -0.27, -0.35, 0.14, 0.04, 0.01)),
)

# time-of-flight sensor on a UR10e, all-points fit on the 90 mm wrist circle
KINECT = ReferenceRow("Kinect", (-11.11, 3.90, 7.15, -0.15, 0.92, 1.56), "50 pairs")

# vendor sphere-based calibration scored with the same verification cloud
BY_PAIR_COUNT = (
    ReferenceRow("4 pairs", (-1.94, -0.90, -0.86, -0.07, 0.04, -0.10)),
    ReferenceRow("16 pairs", (-0.98, -1.01, -0.83, -0.07, 0.09, -0.11)),
)



@dataclass(frozen=True)
class ConvergenceBound:
    """Upper bounds the iterative method's errors settled under, per robot."""

    robot: str
    translation_mm: float
    rotation_deg: float


# iterative method over 50 shuffles on the hardware set
ITERATIVE_CONVERGED = (
    ConvergenceBound("UR5", 0.28, 0.25),
    ConvergenceBound("UR10e", 0.28, 0.25),
    ConvergenceBound("AUBO", 0.28, 0.25),
    ConvergenceBound("Franka", 0.4, 0.6),
)

ALL_TABLES = {
    "all_points_by_robot": ALL_POINTS_BY_ROBOT,
    "by_pair_count": BY_PAIR_COUNT,
    "kinect": (KINECT,),
}


def format_row(label: str, values, label_width: int = 10) -> str:
    """One table row: label then six values with two decimals."""
    if len(values) != 6:
        raise ValueError("a row has exactly six values")
    # round before printing so tiny negatives show as 0.00, not -0.00
    cells = " ".join(f"{round(float(v), 2) + 0.0:>8.2f}" for v in values)
    return f"{label:<{label_width}} {cells}"


def format_table(rows, title: str = "", label_width: int = 10) -> str:
    head = f"{'':<{label_width}} " + " ".join(f"{c:>8}" for c in COLUMNS)
    units = f"{'':<{label_width}} " + " ".join(f"{u:>8}" for u in ("mm",) * 3 + ("deg",) * 3)
    lines = ([title] if title else []) + [head, units]
    lines += [format_row(r.label, r.values, label_width) for r in rows]
    return "\n".join(lines)
