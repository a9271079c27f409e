import pytest

from netrepair import fileio, training


@pytest.fixture(scope="session")
def mini_subject(tmp_path_factory):
    """A small on-disk subject shared by scenario and CLI tests: synthetic
    data plus an under-trained and a fully-trained model."""
    root = tmp_path_factory.mktemp("mini_subject")
    spec = training.SyntheticSpec(class_count=5, feature_dim=8,
                                  per_class_count=80, overlap_factor=1.0,
                                  seed=6)
    train_set, test_set = training.generate_synthetic(spec)
    (root / "train.adat").write_bytes(
        fileio.save_dataset(train_set, spec.class_count))
    (root / "test.adat").write_bytes(
        fileio.save_dataset(test_set, spec.class_count))

    base = training.init_model([8, 16, 5], 5, seed=3)
    under, _ = training.train(base, train_set, training.TrainConfig(
        learning_rate=0.05, max_epochs=20, mode=training.MODE_UNDER,
        accuracy_cap=0.85, seed=3))
    (root / "under.anet").write_bytes(fileio.save_model(under))

    full, _ = training.train(base, train_set, training.TrainConfig(
        learning_rate=0.05, max_epochs=30, mode=training.MODE_FULL, seed=3))
    (root / "full.anet").write_bytes(fileio.save_model(full))

    return {
        "root": root,
        "train_path": root / "train.adat",
        "test_path": root / "test.adat",
        "under_path": root / "under.anet",
        "full_path": root / "full.anet",
        "train_set": train_set,
        "test_set": test_set,
        "under": under,
        "full": full,
    }
