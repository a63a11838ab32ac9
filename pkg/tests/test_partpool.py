import numpy as np
import pytest

from posepaste.errors import (
    ConfigError,
    CorruptManifestError,
    DomainError,
    MalformedInputError,
    MissingBlobError,
    UnavailableError,
    VersionMismatchError,
)
from posepaste.partpool import (
    Catalog,
    MergeRule,
    PartClass,
    PoolConfig,
    build_pool,
    crop_patch,
    drop_scatter,
    extract_segments,
    filter_segments,
    lip_catalog,
    load_pool,
    merge_composites,
    sample_parts,
    save_pool,
    toy_catalog,
)


def flood_fill_census(label_map):
    """Brute-force oracle: BFS flood fill, returns multiset of (class, area)."""
    label_map = np.asarray(label_map)
    h, w = label_map.shape
    seen = np.zeros((h, w), dtype=bool)
    result = []
    for i in range(h):
        for j in range(w):
            if seen[i, j] or label_map[i, j] == 0:
                continue
            value = label_map[i, j]
            stack = [(i, j)]
            seen[i, j] = True
            area = 0
            while stack:
                y, x = stack.pop()
                area += 1
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] \
                            and label_map[ny, nx] == value:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
            result.append((int(value), area))
    return sorted(result)


def paint_pixels(segments, shape):
    """Reassemble a label map from segments (for exact-union checks)."""
    out = np.zeros(shape, dtype=np.int64)
    for s in segments:
        t, l, h, w = s.bbox
        region = out[t:t + h, l:l + w]
        region[s.mask] = s.class_id
    return out


class TestExtractSegments:
    def test_all_background_empty(self):
        assert extract_segments(np.zeros((12, 12), dtype=np.int32), 7) == []

    def test_single_block(self):
        m = np.zeros((3, 3), dtype=np.int32)
        m[0:2, 1:3] = 5
        segs = extract_segments(m, 7)
        assert len(segs) == 1
        s = segs[0]
        assert s.class_id == 5 and s.area == 4 and s.bbox == (0, 1, 2, 2)
        assert s.mask.all()

    def test_two_blobs_match_flood_fill_oracle(self):
        m = np.zeros((64, 64), dtype=np.int32)
        m[5:15, 5:15] = 9
        m[40:55, 40:50] = 9
        m[20:30, 20:45] = 16
        segs = extract_segments(m, 27)
        assert len(segs) == 3
        got = sorted((s.class_id, s.area) for s in segs)
        assert got == flood_fill_census(m)

    def test_random_maps_match_oracle_and_reproduce_pixels(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            m = rng.integers(0, 5, size=(24, 24))
            segs = extract_segments(m, 5)
            assert sorted((s.class_id, s.area) for s in segs) == flood_fill_census(m)
            assert (paint_pixels(segs, m.shape) == m).all()

    def test_diagonal_pixels_are_separate_components(self):
        m = np.zeros((4, 4), dtype=np.int32)
        m[0, 0] = 2
        m[1, 1] = 2
        segs = extract_segments(m, 3)
        assert len(segs) == 2
        assert all(s.area == 1 for s in segs)

    def test_bbox_is_tight(self):
        rng = np.random.default_rng(1)
        m = (rng.random((20, 20)) < 0.3).astype(np.int32)
        for s in extract_segments(m, 2):
            assert s.mask.any(axis=1).all() and s.mask.any(axis=0).all()

    def test_out_of_range_label_rejected(self):
        m = np.full((4, 4), 9, dtype=np.int32)
        with pytest.raises(MalformedInputError):
            extract_segments(m, 7)


class TestMergeComposites:
    def setup_method(self):
        self.catalog, self.rules = lip_catalog()

    def test_no_rules_is_identity(self):
        m = np.zeros((10, 10), dtype=np.int32)
        m[2:5, 2:5] = 16
        segs = extract_segments(m, 27)
        assert merge_composites(segs, [], self.catalog) == segs

    def test_adjacent_leg_and_shoe_union(self):
        m = np.zeros((20, 10), dtype=np.int32)
        m[2:10, 3:6] = 16   # left leg
        m[10:13, 3:6] = 18  # left shoe, touching below
        segs = extract_segments(m, 27)
        rule = MergeRule(sources=(16, 18), target=21)
        merged = merge_composites(segs, [rule], self.catalog)
        assert segs == merged[:len(segs)]  # inputs preserved, in order
        extra = [s for s in merged if s.class_id == 21]
        assert len(extra) == 1
        assert extra[0].area == sum(s.area for s in segs)

    def test_absent_source_is_vacuous(self):
        m = np.zeros((10, 10), dtype=np.int32)
        m[2:5, 2:5] = 16  # leg but no shoe
        segs = extract_segments(m, 27)
        merged = merge_composites(segs, [MergeRule((16, 18), 21)], self.catalog)
        assert merged == segs

    def test_disconnected_sources_produce_no_single_class_composites(self):
        m = np.zeros((20, 20), dtype=np.int32)
        m[1:4, 1:4] = 16
        m[15:18, 15:18] = 18  # far from the leg
        segs = extract_segments(m, 27)
        merged = merge_composites(segs, [MergeRule((16, 18), 21)], self.catalog)
        assert [s.class_id for s in merged] == [16, 18]

    def test_unknown_class_in_rule_rejected(self):
        with pytest.raises(ConfigError):
            merge_composites([], [MergeRule((16, 99), 21)], self.catalog)

    def test_non_composite_target_rejected(self):
        with pytest.raises(ConfigError):
            merge_composites([], [MergeRule((16, 18), 17)], self.catalog)

    def test_inputs_never_mutated(self):
        m = np.zeros((20, 10), dtype=np.int32)
        m[2:10, 3:6] = 16
        m[10:13, 3:6] = 18
        segs = extract_segments(m, 27)
        snapshot = [(s.class_id, s.bbox, s.mask.copy(), s.area) for s in segs]
        merge_composites(segs, [MergeRule((16, 18), 21)], self.catalog)
        for s, (cid, bbox, mask, area) in zip(segs, snapshot):
            assert s.class_id == cid and s.bbox == bbox and s.area == area
            assert (s.mask == mask).all()


class TestFilterSegments:
    def _seg(self, cid, area):
        side = int(np.ceil(np.sqrt(area)))
        mask = np.zeros((side, side), dtype=bool)
        mask.reshape(-1)[:area] = True
        # Tightness is irrelevant for the filter; area is what matters.
        return extract_segments(mask.astype(np.int32) * cid, cid + 1)

    def test_area_boundary_is_exclusive_below(self):
        segs_keep = self._seg(5, 1225)
        segs_drop = self._seg(5, 1224)
        assert filter_segments(segs_keep, 1225, ()) == segs_keep
        total = sum(s.area for s in segs_drop)
        assert total == 1224 or all(s.area < 1225 for s in segs_drop)
        assert filter_segments(segs_drop, 1225, ()) == [s for s in segs_drop if s.area >= 1225]

    def test_excluded_class_dropped_regardless_of_area(self):
        m = np.zeros((80, 80), dtype=np.int32)
        m[:70, :72] = 4  # excluded accessory class, area 5040
        segs = extract_segments(m, 27)
        assert filter_segments(segs, 1225, {4}) == []

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        m = rng.integers(0, 4, size=(40, 40))
        segs = extract_segments(m, 4)
        once = filter_segments(segs, 20, {2})
        twice = filter_segments(once, 20, {2})
        assert once == twice

    def test_min_area_below_one_rejected(self):
        with pytest.raises(DomainError):
            filter_segments([], 0, ())


class TestDropScatter:
    def test_dominant_component_keeps_only_largest(self):
        m = np.zeros((40, 40), dtype=np.int32)
        m[0:30, 0:30] = 3          # 900 px
        m[38, 38] = 3              # speckle
        segs = extract_segments(m, 4)
        kept = drop_scatter(segs, 0.9)
        assert len(kept) == 1 and kept[0].area == 900

    def test_balanced_components_all_survive(self):
        m = np.zeros((40, 40), dtype=np.int32)
        m[0:10, 0:10] = 3
        m[20:30, 20:30] = 3
        segs = extract_segments(m, 4)
        assert len(drop_scatter(segs, 0.9)) == 2


class TestCropPatch:
    def test_full_frame_crop_is_identity_with_opaque_alpha(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        m = np.ones((8, 8), dtype=np.int32)
        seg = extract_segments(m, 2)[0]
        patch = crop_patch(img, seg)
        assert (patch.pixels[..., :3] == img).all()
        assert (patch.pixels[..., 3] == 255).all()

    def test_single_pixel_crop(self):
        img = np.zeros((5, 5, 3), dtype=np.uint8)
        img[2, 3] = (9, 8, 7)
        m = np.zeros((5, 5), dtype=np.int32)
        m[2, 3] = 1
        patch = crop_patch(img, extract_segments(m, 2)[0])
        assert patch.pixels.shape == (1, 1, 4)
        assert tuple(patch.pixels[0, 0]) == (9, 8, 7, 255)

    def test_checkerboard_alpha_count_equals_area(self):
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        m = np.indices((8, 8)).sum(axis=0) % 2
        segs = extract_segments(m.astype(np.int32), 2)
        total_alpha = sum(int((crop_patch(img, s).pixels[..., 3] > 0).sum()) for s in segs)
        assert total_alpha == sum(s.area for s in segs) == 32

    def test_out_of_bounds_bbox_rejected(self):
        from posepaste.partpool import SegmentMask
        seg = SegmentMask(class_id=1, bbox=(6, 6, 4, 4), mask=np.ones((4, 4), bool), area=16)
        with pytest.raises(MalformedInputError):
            crop_patch(np.zeros((8, 8, 3), dtype=np.uint8), seg)


def synthetic_item(rng, shape=(64, 64), classes=(1, 2, 3), blob=12):
    img = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
    label = np.zeros(shape, dtype=np.int32)
    for cid in classes:
        y = int(rng.integers(0, shape[0] - blob))
        x = int(rng.integers(0, shape[1] - blob))
        label[y:y + blob, x:x + blob] = cid
    return img, label, 60.0


class TestBuildPool:
    def setup_method(self):
        self.catalog, _ = toy_catalog()
        self.config = PoolConfig(min_area=16, excluded_classes=(), merge_rules=(),
                                 drop_scatter=False)

    def test_empty_dataset(self):
        pool = build_pool([], self.config, self.catalog)
        assert pool.total_entries() == 0
        assert set(pool.census()) == set(self.catalog.usable_ids())

    def test_single_passing_segment(self):
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        label = np.zeros((16, 16), dtype=np.int32)
        label[2:8, 2:8] = 2
        pool = build_pool([(img, label, 40.0)], self.config, self.catalog)
        assert pool.total_entries() == 1
        assert pool.census()[2] == 1

    def test_census_matches_oracle_over_ten_images(self):
        rng = np.random.default_rng(5)
        items = [synthetic_item(rng) for _ in range(10)]
        pool = build_pool(items, self.config, self.catalog)
        expect: dict[int, int] = {cid: 0 for cid in self.catalog.usable_ids()}
        for _, label, _ in items:
            for cid, area in flood_fill_census(label):
                if area >= self.config.min_area:
                    expect[cid] += 1
        assert pool.census() == expect

    def test_dimension_mismatch_skipped(self, caplog):
        good = (np.zeros((8, 8, 3), np.uint8), np.ones((8, 8), np.int32), 10.0)
        bad = (np.zeros((8, 9, 3), np.uint8), np.ones((8, 8), np.int32), 10.0)
        config = PoolConfig(min_area=1, excluded_classes=(), drop_scatter=False)
        pool = build_pool([bad, good], config, self.catalog)
        assert pool.total_entries() == 1

    def test_iteration_order_invariance(self):
        rng = np.random.default_rng(6)
        items = [(f"im{i}", *synthetic_item(rng)) for i in range(6)]
        pool_a = build_pool(items, self.config, self.catalog)
        pool_b = build_pool(list(reversed(items)), self.config, self.catalog)

        def signature(pool):
            sigs = []
            for cid in sorted(pool.entries):
                group = sorted(
                    (p.source_id, p.pixels.tobytes()) for p in pool.entries[cid])
                sigs.append((cid, group))
            return sigs

        assert signature(pool_a) == signature(pool_b)


class TestSampleParts:
    def _pool(self, counts):
        catalog, _ = toy_catalog()
        entries = {cid: [] for cid in catalog.usable_ids()}
        k = 0
        for cid, n in counts.items():
            for _ in range(n):
                px = np.full((4, 4, 4), k % 251, dtype=np.uint8)
                px[..., 3] = 255
                from posepaste.partpool import PartPatch
                entries[cid].append(PartPatch(cid, px, f"src{k}", 50.0))
                k += 1
        return __import__("posepaste.partpool", fromlist=["PartPool"]).PartPool(
            catalog=catalog, entries=entries, build_config=PoolConfig())

    def test_single_entry_pool(self):
        pool = self._pool({1: 1})
        got = sample_parts(pool, 1, np.random.default_rng(0))
        assert got[0].source_id == "src0"

    def test_same_seed_same_sequence(self):
        pool = self._pool({1: 3, 2: 5})
        a = sample_parts(pool, 20, np.random.default_rng(77))
        b = sample_parts(pool, 20, np.random.default_rng(77))
        assert [p.source_id for p in a] == [p.source_id for p in b]

    def test_uniform_over_entries(self):
        pool = self._pool({1: 2, 4: 2})
        n = 100_000
        picks = sample_parts(pool, n, np.random.default_rng(123))
        counts = {}
        for p in picks:
            counts[p.source_id] = counts.get(p.source_id, 0) + 1
        sigma = np.sqrt(n * 0.25 * 0.75)
        for c in counts.values():
            assert abs(c - n * 0.25) <= 3 * sigma

    def test_empty_pool_unavailable(self):
        pool = self._pool({})
        with pytest.raises(UnavailableError):
            sample_parts(pool, 1, np.random.default_rng(0))
        with pytest.raises(DomainError):
            sample_parts(self._pool({1: 1}), 0, np.random.default_rng(0))


class TestPoolRoundTrip:
    def _build(self, n_items, seed=0):
        rng = np.random.default_rng(seed)
        catalog, _ = toy_catalog()
        config = PoolConfig(min_area=16, excluded_classes=(), drop_scatter=False)
        items = [synthetic_item(rng) for _ in range(n_items)]
        return build_pool(items, config, catalog)

    def _assert_equal(self, a, b):
        assert [c.__dict__ for c in a.catalog.classes] == [c.__dict__ for c in b.catalog.classes]
        assert a.build_config == b.build_config
        assert sorted(a.entries) == sorted(b.entries)
        for cid in a.entries:
            assert len(a.entries[cid]) == len(b.entries[cid])
            for pa, pb in zip(a.entries[cid], b.entries[cid]):
                assert pa.source_id == pb.source_id
                assert pa.source_person_height == pb.source_person_height
                assert (pa.pixels == pb.pixels).all()

    def test_empty_pool_round_trip(self, tmp_path):
        pool = self._build(0)
        save_pool(pool, tmp_path / "pool")
        self._assert_equal(pool, load_pool(tmp_path / "pool"))

    def test_populated_round_trip_bit_exact(self, tmp_path):
        pool = self._build(30, seed=9)
        assert pool.total_entries() >= 50
        save_pool(pool, tmp_path / "pool")
        self._assert_equal(pool, load_pool(tmp_path / "pool"))

    def test_tampered_checksum_detected(self, tmp_path):
        import json
        pool = self._build(2, seed=1)
        save_pool(pool, tmp_path / "pool")
        manifest = json.loads((tmp_path / "pool" / "manifest.json").read_text())
        manifest["entries"][0]["sha256"] = "0" * 64
        (tmp_path / "pool" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CorruptManifestError):
            load_pool(tmp_path / "pool")

    def test_missing_blob_detected(self, tmp_path):
        pool = self._build(2, seed=2)
        save_pool(pool, tmp_path / "pool")
        victim = next((tmp_path / "pool" / "patches").iterdir())
        victim.unlink()
        with pytest.raises(MissingBlobError):
            load_pool(tmp_path / "pool")

    def test_version_mismatch_detected(self, tmp_path):
        import json
        pool = self._build(1, seed=3)
        save_pool(pool, tmp_path / "pool")
        manifest = json.loads((tmp_path / "pool" / "manifest.json").read_text())
        manifest["format_version"] = 99
        (tmp_path / "pool" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(VersionMismatchError):
            load_pool(tmp_path / "pool")

    def test_garbage_manifest_detected(self, tmp_path):
        (tmp_path / "pool").mkdir()
        (tmp_path / "pool" / "manifest.json").write_text("{not json")
        with pytest.raises(CorruptManifestError):
            load_pool(tmp_path / "pool")


class TestCatalog:
    def test_default_catalog_has_26_usable_classes(self):
        catalog, rules = lip_catalog()
        assert catalog.num_classes == 27
        assert len(catalog.usable_ids()) == 26
        assert len(rules) == 6
        assert not catalog.by_id[0].is_composite

    def test_sparse_ids_rejected(self):
        with pytest.raises(ConfigError):
            Catalog([PartClass(0, "bg"), PartClass(2, "x")])
