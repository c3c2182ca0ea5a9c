import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reidkit.catalog import scan_dataset
from reidkit.gallery import (
    UNKNOWN,
    DuplicateIdentity,
    EmptyAnchors,
    Gallery,
    GalleryEntry,
    build_gallery,
    identify,
    load_gallery,
    match_embedding,
    save_gallery,
    select_anchors,
)
from reidkit.model import EMBEDDING_DIM, pairwise_distance
from reidkit.sampling import load_image


def entry_at_distance(d: float, component: int = 0) -> GalleryEntry:
    """Anchor embedding exactly distance d from the all-zeros query."""
    v = np.zeros(EMBEDDING_DIM)
    v[component] = d
    assert pairwise_distance(v, np.zeros(EMBEDDING_DIM)) == d
    return GalleryEntry(anchor_path=f"/fake/{d}.png", embedding=v)


def gallery_with_distances(dists: dict[str, float]) -> Gallery:
    return Gallery(entries={k: entry_at_distance(v) for k, v in dists.items()})


class TestSelectAnchors:
    def test_one_per_identity_first_record(self, front_manifest):
        anchors = select_anchors(front_manifest.train)
        identities = [a.identity_id for a in anchors]
        assert identities == sorted(set(r.identity_id for r in front_manifest.train))
        for anchor in anchors:
            group = [
                r for r in front_manifest.train if r.identity_id == anchor.identity_id
            ]
            assert anchor.index == min(r.index for r in group)

    def test_seeded_selection_deterministic(self, front_manifest):
        a = select_anchors(front_manifest.train, seed=5)
        b = select_anchors(front_manifest.train, seed=5)
        assert a == b
        assert len(a) == len(select_anchors(front_manifest.train))


class TestBuildGallery:
    def test_entries_sorted_and_cached(self, tinyconv_net, front_manifest):
        anchors = select_anchors(front_manifest.train)
        gallery = build_gallery(tinyconv_net, anchors)
        assert gallery.identities() == [a.identity_id for a in anchors]
        assert len(gallery) == len(anchors)
        for entry in gallery.entries.values():
            assert entry.embedding.shape == (EMBEDDING_DIM,)

    def test_duplicate_identity(self, tinyconv_net, front_manifest):
        anchors = select_anchors(front_manifest.train)
        with pytest.raises(DuplicateIdentity):
            build_gallery(tinyconv_net, anchors + [anchors[0]])

    def test_empty_anchors(self, tinyconv_net):
        with pytest.raises(EmptyAnchors):
            build_gallery(tinyconv_net, [])


class TestMatchEmbedding:
    def test_argmin_within_threshold(self):
        gallery = gallery_with_distances({"A": 0.3, "B": 0.6})
        result = match_embedding(gallery, np.zeros(EMBEDDING_DIM), threshold=0.4)
        assert result.verdict == "A"
        assert result.distances == {"A": 0.3, "B": 0.6}

    def test_all_beyond_threshold_is_unknown(self):
        gallery = gallery_with_distances({"A": 0.5, "B": 0.6})
        result = match_embedding(gallery, np.zeros(EMBEDDING_DIM), threshold=0.4)
        assert result.verdict == UNKNOWN
        assert set(result.distances) == {"A", "B"}

    def test_tie_breaks_lexicographically(self):
        gallery = gallery_with_distances({"B": 0.2, "A": 0.2, "C": 0.9})
        result = match_embedding(gallery, np.zeros(EMBEDDING_DIM), threshold=0.4)
        assert result.distances["A"] == result.distances["B"]
        assert result.verdict == "A"

    @pytest.mark.parametrize(
        "distance,expected",
        [(0.39, "only"), (0.40, "only"), (0.41, UNKNOWN)],
    )
    def test_threshold_boundary_inclusive(self, distance, expected):
        gallery = gallery_with_distances({"only": distance})
        result = match_embedding(gallery, np.zeros(EMBEDDING_DIM), threshold=0.4)
        assert result.distances["only"] == distance
        assert result.verdict == expected

    def test_empty_gallery(self):
        with pytest.raises(EmptyAnchors):
            match_embedding(Gallery(entries={}), np.zeros(EMBEDDING_DIM))

    def test_to_dict_sorted(self):
        gallery = gallery_with_distances({"b": 0.1, "a": 0.2})
        d = match_embedding(gallery, np.zeros(EMBEDDING_DIM)).to_dict()
        assert list(d["distances"]) == ["a", "b"]
        assert d["threshold"] == 0.4

    @settings(max_examples=50, deadline=None)
    @given(
        dists=st.dictionaries(
            st.sampled_from(["A", "B", "C", "D"]),
            st.one_of(
                st.just(0.0),
                st.floats(min_value=1e-6, max_value=2.0, allow_nan=False),
            ),
            min_size=1,
        ),
        t1=st.floats(min_value=0.0, max_value=2.0),
        t2=st.floats(min_value=0.0, max_value=2.0),
    )
    def test_threshold_monotonicity(self, dists, t1, t2):
        lo, hi = sorted((t1, t2))
        gallery = gallery_with_distances(dists)
        query = np.zeros(EMBEDDING_DIM)
        low = match_embedding(gallery, query, threshold=lo)
        high = match_embedding(gallery, query, threshold=hi)
        if low.verdict != UNKNOWN:
            assert high.verdict == low.verdict
        assert low.distances == high.distances


class TestIdentify:
    def test_anchor_query_matches_itself(self, tinyconv_net, front_manifest):
        anchors = select_anchors(front_manifest.train)
        gallery = build_gallery(tinyconv_net, anchors)
        result = identify(tinyconv_net, gallery, load_image(anchors[0]))
        assert result.verdict == anchors[0].identity_id
        assert result.distances[anchors[0].identity_id] == 0.0

    def test_zero_threshold_rejects_positive_distance(self, tinyconv_net, front_manifest):
        anchors = select_anchors(front_manifest.train)
        gallery = build_gallery(tinyconv_net, anchors)
        query = load_image(front_manifest.test[0])
        result = identify(tinyconv_net, gallery, query, threshold=0.0)
        if min(result.distances.values()) > 0:
            assert result.verdict == UNKNOWN


class TestGalleryIO:
    def test_round_trip(self, tinyconv_net, front_manifest, tmp_path):
        gallery = build_gallery(tinyconv_net, select_anchors(front_manifest.train))
        path = tmp_path / "gallery.json"
        save_gallery(gallery, path)
        loaded = load_gallery(path)
        assert loaded.identities() == gallery.identities()
        query = np.zeros(EMBEDDING_DIM, dtype=np.float32)
        before = match_embedding(gallery, query)
        after = match_embedding(loaded, query)
        assert before.verdict == after.verdict
        assert before.distances == after.distances

    def test_rejects_wrong_dimension(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"a": {"anchor_path": "x.png", "embedding": [1.0, 2.0]}}')
        with pytest.raises(Exception, match="shape"):
            load_gallery(path)

    def test_rejects_empty(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("{}")
        with pytest.raises(EmptyAnchors):
            load_gallery(path)
