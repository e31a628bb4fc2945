import numpy as np
import pytest

from hdcap.learner import LearnConfig, learn_stream
from hdcap.lsh import ROLE_CAPTION, ROLE_IMAGE, LshProjector, positional_codes
from hdcap.protomem import PrototypeMemory, SeedBundle
from hdcap.providers.synthetic import SyntheticWorld, WorldConfig

TOY_BETA = 4096
TOY_L_MAX = 10
TOY_SEED = 1234

ROAD_SNOW = (
    ("this", "image", "shows", "new", "car", "on", "road"),
    ("this", "image", "shows", "new", "car", "on", "snow"),
)


@pytest.fixture(scope="session")
def toy_world() -> SyntheticWorld:
    return SyntheticWorld(WorldConfig(seed=11, templates=ROAD_SNOW,
                                      synonyms=(("latest", "new"),),
                                      n_p=9, d_i=32, d_c=48))


@pytest.fixture(scope="session")
def toy_setup(toy_world, tmp_path_factory):
    """Learned accumulator + packed memory over 20 toy records."""
    base = tmp_path_factory.mktemp("toy-memory")
    seeds = SeedBundle.derive(TOY_SEED)
    cfg = toy_world.config
    mem = PrototypeMemory.create(str(base / "toy.hdfp"), TOY_L_MAX,
                                 toy_world.vocab_size, TOY_BETA, seeds)
    proj_img = LshProjector(seeds.lsh_image, cfg.d_i, TOY_BETA, ROLE_IMAGE)
    proj_cap = LshProjector(seeds.lsh_caption, cfg.d_c, TOY_BETA, ROLE_CAPTION)
    codes = positional_codes(seeds.positional, cfg.n_p, TOY_BETA)
    learn_cfg = LearnConfig(l_max=TOY_L_MAX, prefix_ids=toy_world.prefix_ids, flush_batch=8)
    records = list(toy_world.training_records(10))
    learn_stream(mem, records, proj_img, proj_cap, codes, learn_cfg)
    packed = mem.binarize_pack(str(base / "toy.packed.hdfp"))
    yield {
        "world": toy_world,
        "mem": mem,
        "packed": packed,
        "proj_img": proj_img,
        "proj_cap": proj_cap,
        "codes": codes,
        "records": records,
        "learn_cfg": learn_cfg,
        "seeds": seeds,
    }
    mem.close()
    packed.close()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(97)
