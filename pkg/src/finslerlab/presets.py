"""Built-in scenarios, stored as plain config dictionaries."""
from __future__ import annotations

import copy
import math

EUCLID_A = (1.0, 0.5, -0.25)


def _aq_tensor(a) -> list[list[str]]:
    # 1/2 (a (x) q + q (x) a) + 2 I
    n = len(a)
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            text = f"0.5*({a[i]!r}*q{j + 1} + q{i + 1}*{a[j]!r})"
            if i == j:
                text += " + 2"
            row.append(text)
        rows.append(row)
    return rows


def _ci(c: float, n: int) -> list[list[str]]:
    return [[repr(c) if i == j else "0" for j in range(n)] for i in range(n)]


_PRESETS: dict[str, dict] = {
    "euclid2-qq": {
        "dimension": 2,
        "energy": "0.5*(u1^2 + u2^2)",
        "k_tensor": [["q1*q1", "q1*q2"], ["q2*q1", "q2*q2"]],
    },
    "euclid3-aq": {
        "dimension": 3,
        "energy": "0.5*(u1^2 + u2^2 + u3^2)",
        "k_tensor": _aq_tensor(EUCLID_A),
    },
    "polar2-ci": {
        "dimension": 2,
        "energy": "0.5*(u1^2 + q1^2*u2^2)",
        "k_tensor": _ci(1.5, 2),
        "samples": {"q_box": [[0.5, 2.0], [-math.pi, math.pi]]},
    },
    "randers2-ci": {
        "dimension": 2,
        "energy": "(sqrt(u1^2 + u2^2) + 0.3*u1)^2",
        "k_tensor": _ci(2.0, 2),
    },
    "euclid2-bad": {
        "dimension": 2,
        "energy": "0.5*(u1^2 + u2^2)",
        "k_tensor": [["q1^2", "0"], ["0", "q2"]],
    },
}

# Flow start points that are not part of the config schema.  The polar start
# keeps the straight-line geodesic well away from the coordinate singularity.
PRESET_STARTS: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {
    "polar2-ci": ((1.0, 0.0), (0.3, 0.8)),
}

PASSING = ("euclid2-qq", "euclid3-aq", "polar2-ci", "randers2-ci")
NEGATIVE = ("euclid2-bad",)


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset_config(name: str) -> dict:
    try:
        return copy.deepcopy(_PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}") from None
