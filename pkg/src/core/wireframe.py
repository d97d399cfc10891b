"""Wireframe vehicle models and the parametric box-cab generator."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WireframeModel:
    """Vertices in meters with the footprint center at the origin.

    x points to the vehicle front, y to its left, z up; the base is ``z = 0``.
    """

    model_id: str
    length_m: float
    vertices: np.ndarray
    edges: tuple[tuple[int, int], ...]
    anchor_front: int
    anchor_rear: int

    def __post_init__(self) -> None:
        if not self.length_m > 0:
            raise ValueError(f"model {self.model_id}: length must be positive")
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"model {self.model_id}: vertices must be (N, 3)")
        n = len(verts)
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"model {self.model_id}: edge ({a}, {b}) out of range")
        base_z = float(verts[:, 2].min())
        for idx in (self.anchor_front, self.anchor_rear):
            if not 0 <= idx < n:
                raise ValueError(f"model {self.model_id}: anchor {idx} out of range")
            if abs(verts[idx, 2] - base_z) > 1e-6:
                raise ValueError(f"model {self.model_id}: anchor {idx} is off the base")

    @property
    def front(self) -> np.ndarray:
        return np.asarray(self.vertices[self.anchor_front], dtype=float)

    @property
    def rear(self) -> np.ndarray:
        return np.asarray(self.vertices[self.anchor_rear], dtype=float)

    def mis_sized(self, factor: float) -> "WireframeModel":
        """Same shape uniformly scaled, as a model built from wrong dimensions."""
        return WireframeModel(
            model_id=self.model_id,
            length_m=self.length_m * factor,
            vertices=np.asarray(self.vertices, dtype=float) * factor,
            edges=self.edges,
            anchor_front=self.anchor_front,
            anchor_rear=self.anchor_rear,
        )


@dataclass(frozen=True)
class BoxCabDimensions:
    """Body box plus a cabin box on top of it, all in meters.

    ``cabin_x`` spans the cabin base on the body top, ``roof_x`` the roof,
    ``roof_inset`` is how far the roof sits inside the body sides.
    """

    length: float
    width: float
    body_height: float
    height: float
    cabin_x: tuple[float, float]
    roof_x: tuple[float, float]
    roof_inset: float


COMBI = BoxCabDimensions(
    length=4.51,
    width=1.73,
    body_height=0.8,
    height=1.46,
    cabin_x=(-2.255, 1.155),
    roof_x=(-2.155, 0.255),
    roof_inset=0.12,
)

SEDAN = BoxCabDimensions(
    length=4.66,
    width=1.80,
    body_height=0.8,
    height=1.43,
    cabin_x=(-1.505, 1.155),
    roof_x=(-1.0, 0.30),
    roof_inset=0.12,
)

# Ring of four corners, front-left first, then clockwise seen from above
_RING = ((0, 1), (1, 2), (2, 3), (3, 0))


def _ring(x0: float, x1: float, half_w: float, z: float) -> list[list[float]]:
    return [[x1, half_w, z], [x1, -half_w, z], [x0, -half_w, z], [x0, half_w, z]]


def box_cab_model(model_id: str, dims: BoxCabDimensions) -> WireframeModel:
    """Generate the 18-vertex box-cab wireframe.

    Vertices 0-3 body bottom, 4-7 body top, 8-11 cabin base, 12-15 roof,
    16 front anchor, 17 rear anchor.
    """
    half_l = dims.length / 2.0
    half_w = dims.width / 2.0
    roof_w = half_w - dims.roof_inset
    vertices = (
        _ring(-half_l, half_l, half_w, 0.0)
        + _ring(-half_l, half_l, half_w, dims.body_height)
        + _ring(dims.cabin_x[0], dims.cabin_x[1], half_w, dims.body_height)
        + _ring(dims.roof_x[0], dims.roof_x[1], roof_w, dims.height)
        + [[half_l, 0.0, 0.0], [-half_l, 0.0, 0.0]]
    )
    edges: list[tuple[int, int]] = []
    for offset in (0, 4, 8, 12):
        edges += [(a + offset, b + offset) for a, b in _RING]
    edges += [(k, k + 4) for k in range(4)]
    edges += [(k + 8, k + 12) for k in range(4)]
    return WireframeModel(
        model_id=model_id,
        length_m=dims.length,
        vertices=np.array(vertices, dtype=float),
        edges=tuple(edges),
        anchor_front=16,
        anchor_rear=17,
    )


def default_models() -> dict[str, WireframeModel]:
    return {
        "combi": box_cab_model("combi", COMBI),
        "sedan": box_cab_model("sedan", SEDAN),
    }
