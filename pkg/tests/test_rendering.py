import os

os.environ.setdefault("SDL_VIDEODRIVER", "dummy")

import numpy as np
import pygame
import pytest

from constants import MONTAGE_CAPTION_HEIGHT
from data_eval import load_image, save_image
from rendering import MONTAGE_ORDER, image_to_surface, montage_panels, render_montage, wrap_text


@pytest.fixture(scope="module")
def font():
    pygame.font.init()
    return pygame.font.SysFont(None, 24)


class TestWrapText:

    def test_short_text_is_one_line(self, font):
        assert wrap_text("psnr 30.1", font, 400) == ["psnr 30.1"]

    def test_long_text_wraps(self, font):
        text = "psnr 30.12 dB ssim 0.8123 iterations 2500 wall time 12.5 s"
        lines = wrap_text(text, font, 80)
        assert len(lines) > 1
        assert " ".join(lines) == text

    def test_newlines_split(self, font):
        assert wrap_text("a\nb", font, 400) == ["a", "b"]


class TestSurfaces:

    def test_orientation_and_clipping(self):
        image = np.zeros((4, 6))
        image[0, 5] = 2.0
        surface = image_to_surface(image)
        assert surface.get_size() == (6, 4)
        assert surface.get_at((5, 0))[:3] == (255, 255, 255)
        assert surface.get_at((0, 3))[:3] == (0, 0, 0)

    def test_montage_size(self, tmp_path, rng):
        images = [rng.random((16, 16)) for _ in MONTAGE_ORDER]
        path = str(tmp_path / "montage.png")
        render_montage(images, list(MONTAGE_ORDER), path, panel_size=32)
        loaded = pygame.image.load(path)
        assert loaded.get_size() == (32 * len(images), 32 + MONTAGE_CAPTION_HEIGHT)

    def test_montage_label_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            render_montage([np.zeros((4, 4))], ["a", "b"], str(tmp_path / "m.png"))

    def test_panels_in_order(self, tmp_path):
        for name in ("ssl", "gt", "tv"):
            save_image(str(tmp_path / f"{name}.pgm"), np.zeros((4, 4)))
        names = [name for name, _ in montage_panels(str(tmp_path), load_image)]
        assert names == ["gt", "tv", "ssl"]
