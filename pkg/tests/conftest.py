import numpy as np
import pytest

from labembed import (
    TokenMode,
    build_sentences,
    build_vocabulary,
)
from labembed.synthgen import GeneratorConfig, assign_prediction_dates, generate_cohort


@pytest.fixture(scope="session")
def small_cohort():
    """A small synthetic cohort shared by read-only tests."""
    cfg = GeneratorConfig(n_patients=300, n_panels=12)
    diag = {}
    events, patients = generate_cohort(cfg, seed=7, diagnostics=diag)
    records = assign_prediction_dates(patients, seed=3, events=events)
    vocab = build_vocabulary(events, TokenMode.LoincPlusAbnormality, 5)
    sentences = build_sentences(events, vocab, seed=11)
    return dict(
        config=cfg,
        events=events,
        patients=patients,
        records=records,
        vocab=vocab,
        sentences=sentences,
        diagnostics=diag,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
