"""Shared fixtures: schemas, small frames, and the bundled dataset."""
from pathlib import Path

import numpy as np
import pytest

from ttm.data import DataFrame, DatasetSchema, Feature, load_csv

DIABETES_FEATURES = (
    "pregnancies",
    "glucose",
    "blood_pressure",
    "skin_thickness",
    "insulin",
    "bmi",
    "pedigree",
    "age",
)

DIABETES_DIR = Path(__file__).resolve().parent.parent / "datasets" / "diabetes"


@pytest.fixture(scope="session")
def diabetes_schema():
    return DatasetSchema(
        features=tuple(Feature(n, "numeric") for n in DIABETES_FEATURES),
        categorical_values={},
        target_classes=("unlikely", "likely"),
    )


def _load_diabetes(split: str) -> DataFrame:
    return load_csv(
        str(DIABETES_DIR / f"{split}.csv"),
        "outcome",
        class_names=("unlikely", "likely"),
        id_column="id",
    )


@pytest.fixture(scope="session")
def diabetes_train():
    return _load_diabetes("train")


@pytest.fixture(scope="session")
def diabetes_test():
    return _load_diabetes("test")


@pytest.fixture(scope="session")
def mixed_schema():
    return DatasetSchema(
        features=(
            Feature("age", "numeric"),
            Feature("bmi", "numeric"),
            Feature("job", "categorical"),
        ),
        categorical_values={"job": ("clerk", "nurse", "pilot")},
        target_classes=("no", "yes"),
    )


@pytest.fixture(scope="session")
def mixed_frame(mixed_schema):
    rng = np.random.default_rng(0)
    n = 40
    ages = rng.uniform(18, 80, n).round(1)
    bmis = rng.uniform(16, 45, n).round(1)
    jobs = np.array([("clerk", "nurse", "pilot")[i % 3] for i in range(n)], dtype=object)
    labels = [(1 if a > 45 else 0) for a in ages]
    return DataFrame(
        mixed_schema, list(range(n)), {"age": ages, "bmi": bmis, "job": jobs}, labels
    )


@pytest.fixture(scope="session")
def diabetes_model(diabetes_train):
    from ttm.models import train_gbt

    return train_gbt(diabetes_train)


@pytest.fixture(scope="session")
def template_pack():
    from ttm.datagen import load_templates, template_pack_path

    return load_templates(template_pack_path())


@pytest.fixture(scope="session")
def diabetes_corpus(template_pack, diabetes_train):
    from ttm.datagen import default_caps, expand_templates

    caps = default_caps(diabetes_train)
    return expand_templates(template_pack, diabetes_train.schema, caps)


@pytest.fixture(scope="session")
def nn_backend(diabetes_corpus, diabetes_train):
    from ttm.dialogue import NearestNeighborBackend

    return NearestNeighborBackend(diabetes_corpus, diabetes_train.schema)


@pytest.fixture(scope="session")
def chat_engine(diabetes_model, diabetes_train, diabetes_test):
    from ttm.engine import Engine

    return Engine(diabetes_model, diabetes_train, diabetes_test, seed=0)
