"""Regenerates the PNG fixtures used by the test suites."""
from pathlib import Path

from PIL import Image, ImageDraw

here = Path(__file__).parent / "images"
here.mkdir(exist_ok=True)

scene = Image.new("RGB", (224, 224), (200, 220, 255))
draw = ImageDraw.Draw(scene)
draw.rectangle([0, 0, 141, 141], fill=(120, 90, 60))
draw.ellipse([110, 110, 209, 209], fill=(40, 160, 40))
draw.rectangle([150, 10, 213, 73], fill=(220, 40, 40))
scene.save(here / "scene.png")

crops = {
    "rock": (0, 0, 142, 142),
    "leaf": (110, 110, 100, 100),
    "flag": (150, 10, 64, 64),
}
for name, (x, y, w, h) in crops.items():
    scene.crop((x, y, x + w, y + h)).save(here / f"{name}.png")

Image.new("RGB", (56, 56), (10, 10, 10)).save(here / "exemplar.png")
