import numpy as np
import pytest
from PIL import Image

from extractor.models import ModelBundle, ServerConfig

# Small stand-in stack: 16x16+1 patches, 64-wide LM, shared 32-dim space.
TEST_CONFIG = ServerConfig(
    vision_model="standin/patch32-48",
    language_model="standin/causal-64x2",
    text_model="standin/embed-32",
    seed=5,
    image_size=512,
)


@pytest.fixture(scope="session")
def bundle() -> ModelBundle:
    return ModelBundle(TEST_CONFIG)


@pytest.fixture(scope="session")
def config_file(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("server") / "server.json"
    path.write_text(TEST_CONFIG.to_json())
    return str(path)


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory) -> str:
    """Ten deterministic PNGs of varying sizes and aspect ratios."""
    out = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(42)
    sizes = [(640, 480), (512, 512), (800, 600), (520, 700), (1024, 768),
             (600, 512), (560, 560), (730, 520), (512, 640), (900, 512)]
    for i, (w, h) in enumerate(sizes):
        pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        Image.fromarray(pixels, "RGB").save(out / f"img{i:02d}.png")
    return str(out)
