import sys

import numpy as np
import pytest

from siamcluster.features import Dataset, SynthConfig, Track, synth_generate


def make_dataset(tracks, dim=3, seed=0, vectors=None):
    """Build a Dataset from ``[(track_id, [timestamps...], label), ...]``.

    Frame ids are assigned consecutively in the order given.
    """
    rng = np.random.default_rng(seed)
    fids, tids, ts, recs = [], [], [], []
    next_id = 0
    for track_id, stamps, label in tracks:
        ids = list(range(next_id, next_id + len(stamps)))
        next_id += len(stamps)
        fids += ids
        tids += [track_id] * len(stamps)
        ts += list(stamps)
        recs.append(Track(track_id, tuple(ids), label))
    if vectors is None:
        vectors = rng.standard_normal((len(fids), dim))
    return Dataset(np.array(fids), np.array(tids), np.array(ts), np.asarray(vectors, float), recs)


@pytest.fixture
def tiny_synth():
    return synth_generate(SynthConfig(num_identities=3, tracks_per_identity=6, dim=16, noise_sigma=0.1, seed=3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
