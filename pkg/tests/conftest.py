import numpy as np
import pytest
from hypothesis import settings

from sefc.config import tiny_config
from sefc.data import SeriesFrame, write_series
from sefc.model import SeLLM

settings.register_profile("repo", derandomize=True, deadline=None, print_blob=True)
settings.load_profile("repo")

ETTH1_COLUMNS = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"]
ETTH1_LENGTH = 8545 + 2881 + 2881


@pytest.fixture(scope="session")
def etth1_like(tmp_path_factory):
    """A file laid out like ETTh1 (timestamp column + 7 channels, 14307 hourly rows) with synthetic values."""
    rng = np.random.Generator(np.random.Philox(11))
    t = np.arange(ETTH1_LENGTH)
    values = np.stack([np.sin(2 * np.pi * t / 24 + k) * (k + 1) + 0.1 * rng.standard_normal(t.size)
                       for k in range(7)], axis=1)
    stamps = [f"2016-07-01 {h % 24:02d}:00:00+{h // 24}d" for h in t]
    path = tmp_path_factory.mktemp("etth1") / "ETTh1.csv"
    write_series(path, SeriesFrame(values, ETTH1_COLUMNS, stamps))
    return path


@pytest.fixture
def tiny_model():
    return SeLLM(tiny_config(), seed=0)


def sinusoid_windows(cfg, length=400, seed=0, stride=4):
    """Train/validation windows cut from a synthetic sinusoid, shaped for ``cfg``."""
    from sefc.data import WindowSpec, make_windows, split_by_fraction, synthetic_sinusoid

    train, val, _ = split_by_fraction(synthetic_sinusoid(length, seed=seed, period=8), (0.7, 0.3, 0.0))
    spec = WindowSpec(cfg.data.context_length, cfg.data.horizon, stride, cfg.data.patch_len)
    return list(make_windows(train, spec)), list(make_windows(val, spec))
