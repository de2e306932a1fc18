import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import clustered_rows, write_dataset  # noqa: E402

from litquery.kg import GraphBuilder  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def _graph(rel, attrs=()):
    b = GraphBuilder()
    for h, r, t, s in rel:
        b.add_relational(h, r, t, s)
    for e, a, v, s in attrs:
        b.add_attribute(e, a, v, s)
    return b.build()


@pytest.fixture
def protein_graph():
    """Anchors e1/e2 associated with proteins that interact with drugs; three edges held out."""
    observed = [
        ("e1", "assoc", "p2"), ("e2", "assoc", "p4"), ("p1", "interacts", "d1"), ("p4", "interacts", "d4"),
        ("e1", "assoc", "p3"), ("e2", "assoc", "p3"), ("p3", "interacts", "d3"), ("p3", "interacts", "d4"),
    ]
    missing = [("e1", "assoc", "p1"), ("p2", "interacts", "d1"), ("p3", "interacts", "d2")]
    rel = [(*t, "train") for t in observed] + [(*t, "test") for t in missing]
    return _graph(rel)


@pytest.fixture
def age_graph():
    """Three people; the age of e2 is missing from the observed graph."""
    rel = [("e1", "knows", "e2", "train"), ("e2", "knows", "e3", "train")]
    attrs = [("e1", "hasAge", 22.0, "train"), ("e2", "hasAge", 24.0, "test"), ("e3", "hasAge", 27.0, "train")]
    return _graph(rel, attrs)


@pytest.fixture
def award_graph():
    """Two award winners with ages 22 and 24; the second winner and its age are unobserved."""
    rel = [("TA", "awardedTo", "e1", "train"), ("TA", "awardedTo", "e2", "test"), ("x", "knows", "e1", "train")]
    attrs = [("e1", "hasAge", 22.0, "train"), ("e2", "hasAge", 24.0, "test"), ("x", "hasAge", 40.0, "train")]
    return _graph(rel, attrs)


MEDIUM_ATTRS = {"age": [10, 20, 30, 40, 50], "size": [5, None, 1, None, 3]}


@pytest.fixture(scope="session")
def medium_dir(tmp_path_factory):
    rel, attrs = clustered_rows(n_clusters=5, per_cluster=12, density=0.15, holdout=0.15, valid=0.05, seed=0,
                                attributes=MEDIUM_ATTRS)
    return write_dataset(tmp_path_factory.mktemp("medium"), rel, attrs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
