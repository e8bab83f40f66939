# rendering.py

import os

import numpy as np
import pygame

from constants import (
    COLOR_BLACK, COLOR_WHITE, COLOR_YELLOW, MONTAGE_CAPTION_HEIGHT, MONTAGE_PANEL_SIZE,
)

MONTAGE_ORDER = ("gt", "corrupted", "tv", "ssl")
CAPTIONS = {"gt": "groundtruth", "corrupted": "corrupted", "tv": "TV", "ssl": "SSL"}


def _init_fonts():
    if not pygame.font.get_init():
        pygame.font.init()


def wrap_text(text, font, max_width):
    """
    Wrap text to fit within a pixel width.

    :param text: The text string to wrap; newlines start new paragraphs.
    :param font: The Pygame font object.
    :param max_width: The maximum width in pixels.
    :return: A list of wrapped lines.
    """
    lines = []
    for paragraph in text.split('\n'):
        current_line = ''
        for word in paragraph.split(' '):
            test_line = f"{current_line} {word}".strip()
            if font.size(test_line)[0] <= max_width or not current_line:
                current_line = test_line
            else:
                lines.append(current_line)
                current_line = word
        lines.append(current_line)
    return lines


def image_to_surface(image, size=None):
    """
    Grayscale surface from an (H, W) array in [0, 1]; values outside are clipped.

    :param size: Optional (width, height) to scale to with nearest-neighbour sampling.
    """
    gray = np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    # surfarray is indexed (x, y)
    surface = pygame.surfarray.make_surface(np.ascontiguousarray(rgb.transpose(1, 0, 2)))
    if size is not None:
        surface = pygame.transform.scale(surface, size)
    return surface


def render_caption(surface, font, text, rect, color=COLOR_WHITE):
    caption = font.render(text, True, color)
    surface.blit(caption, caption.get_rect(center=rect.center))


def render_montage(images, labels, path, panel_size=MONTAGE_PANEL_SIZE):
    """
    Save a side-by-side PNG of equally sized panels with a caption strip under each.

    :param images: Sequence of (H, W) arrays in [0, 1].
    :param labels: One caption per image.
    :param path: Output .png path.
    """
    if len(images) != len(labels) or not images:
        raise ValueError("montage needs one label per image and at least one image")
    _init_fonts()
    font = pygame.font.SysFont(None, 24)

    # One panel per image, captions in a strip underneath
    width = panel_size * len(images)
    height = panel_size + MONTAGE_CAPTION_HEIGHT
    canvas = pygame.Surface((width, height))
    canvas.fill(COLOR_BLACK)
    for i, (image, label) in enumerate(zip(images, labels)):
        canvas.blit(image_to_surface(image, (panel_size, panel_size)), (i * panel_size, 0))
        render_caption(canvas, font, label,
                       pygame.Rect(i * panel_size, panel_size, panel_size, MONTAGE_CAPTION_HEIGHT))
    pygame.image.save(canvas, path)
    return path


def render_overlay(screen, font, lines, origin=(10, 10)):
    """
    Render the metrics overlay (one line per entry) over a translucent box.
    """
    line_height = font.get_height() + 2
    box_width = max((font.size(line)[0] for line in lines), default=0) + 10
    box = pygame.Surface((box_width, line_height * len(lines) + 6), pygame.SRCALPHA)
    box.fill((0, 0, 0, 160))
    screen.blit(box, origin)
    y = origin[1] + 3
    for line in lines:
        screen.blit(font.render(line, True, COLOR_YELLOW), (origin[0] + 5, y))
        y += line_height


def run_viewer(panels, metrics=None, window_size=512):
    """
    Interactive viewer: left/right arrows cycle panels, F3 toggles the metrics overlay, Esc quits.

    :param panels: list of (name, image) pairs.
    :param metrics: Optional dict of panel name -> list of overlay text lines.
    """
    if not panels:
        raise ValueError("viewer needs at least one panel")
    metrics = metrics or {}
    # Create the viewer window
    pygame.init()
    screen = pygame.display.set_mode((window_size, window_size + MONTAGE_CAPTION_HEIGHT))
    pygame.display.set_caption("Reconstruction Viewer")
    clock = pygame.time.Clock()
    font = pygame.font.SysFont(None, 24)
    # Scale every panel once up front
    surfaces = [image_to_surface(image, (window_size, window_size)) for _, image in panels]
    index = 0
    show_overlay = True

    running = True
    while running:
        clock.tick(30)
        # Handle events
        for event in pygame.event.get():
            if event.type == pygame.QUIT:
                running = False
            elif event.type == pygame.KEYDOWN:
                if event.key == pygame.K_ESCAPE:
                    running = False
                elif event.key == pygame.K_RIGHT:
                    index = (index + 1) % len(panels)
                elif event.key == pygame.K_LEFT:
                    index = (index - 1) % len(panels)
                elif event.key == pygame.K_F3:
                    show_overlay = not show_overlay

        # Draw the current panel
        name = panels[index][0]
        screen.fill(COLOR_BLACK)
        screen.blit(surfaces[index], (0, 0))
        render_caption(screen, font, f"{CAPTIONS.get(name, name)}  ({index + 1}/{len(panels)})",
                       pygame.Rect(0, window_size, window_size, MONTAGE_CAPTION_HEIGHT))
        if show_overlay and metrics.get(name):
            lines = []
            for line in metrics[name]:
                lines.extend(wrap_text(line, font, window_size - 40))
            render_overlay(screen, font, lines)
        pygame.display.flip()

    pygame.quit()


def montage_panels(out_dir, loader):
    """(name, image) pairs for the demo images present in out_dir, in montage order."""
    panels = []
    for name in MONTAGE_ORDER:
        path = os.path.join(out_dir, f"{name}.pgm")
        if os.path.exists(path):
            panels.append((name, loader(path)))
    return panels
