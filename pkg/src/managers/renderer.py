"""Off-screen rasterization of simulated frames and their foreground masks."""

from collections.abc import Sequence

import numpy as np
import pygame

from src.core.edgelet import RasterImage

BACKGROUND_LEVEL = 77
EDGE_LEVEL = 230
MASK_BORDER_PX = 5


class Renderer:
    """Draws anti-aliased wireframe edges over a flat background.

    Each frame is drawn on an off-screen surface, so no display is needed.
    Foreground polygons go to a second surface that becomes the frame mask.
    """

    def __init__(self, image_size: tuple[int, int]) -> None:
        """Initialize the renderer.

        Args:
            image_size: ``(width, height)`` of the frames in pixels.
        """
        self.image_size = image_size
        self.frame_surface: pygame.Surface = pygame.Surface(image_size)
        self.mask_surface: pygame.Surface = pygame.Surface(image_size)

    def render(
        self,
        segments: Sequence[tuple[np.ndarray, np.ndarray]],
        polygons: Sequence[np.ndarray] = (),
    ) -> RasterImage:
        """Render one frame.

        Args:
            segments: Line segments in top-left pixel coordinates.
            polygons: Foreground outlines; their dilated interior is the mask.

        Returns:
            Grayscale frame in [0, 1] with the foreground mask attached.
        """
        gray = (BACKGROUND_LEVEL,) * 3
        self.frame_surface.fill(gray)
        for p, q in segments:
            pygame.draw.aaline(
                self.frame_surface,
                (EDGE_LEVEL,) * 3,
                (float(p[0]), float(p[1])),
                (float(q[0]), float(q[1])),
            )

        self.mask_surface.fill((0, 0, 0))
        for polygon in polygons:
            points = [(float(x), float(y)) for x, y in polygon]
            if len(points) < 3:
                continue
            pygame.draw.polygon(self.mask_surface, (255, 255, 255), points)
            pygame.draw.lines(
                self.mask_surface, (255, 255, 255), True, points, MASK_BORDER_PX
            )

        # surfarray is indexed (x, y)
        samples = pygame.surfarray.array_red(self.frame_surface).T / 255.0
        mask = pygame.surfarray.array_red(self.mask_surface).T > 0
        return RasterImage(samples.astype(float), mask if polygons else None)
