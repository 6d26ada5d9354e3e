import pytest

from shapesem.dataset import SyntheticConfig, simulate

SMALL_VOXELS = {"V1": 120, "V2": 120, "V3": 120, "LOC": 100, "FFA": 100, "PPA": 100}


@pytest.fixture(scope="session")
def noiseless_sim():
    cfg = SyntheticConfig(image_size=32, n_train=120, n_test=20,
                          test_trials=1, voxels_per_roi=dict(SMALL_VOXELS),
                          noise_sigma=0.0, seed=42)
    return simulate(cfg)


@pytest.fixture(scope="session")
def noisy_sim():
    cfg = SyntheticConfig(image_size=32, n_train=160, n_test=20,
                          test_trials=3, voxels_per_roi=dict(SMALL_VOXELS),
                          seed=43)
    return simulate(cfg)
