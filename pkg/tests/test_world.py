import numpy as np
import pytest

from kinospline import world as wd

import oracles


def small_random_world(seed=0, dims=(20, 20, 20), frac=0.03,
                       cells=(0.13, 0.2, 0.25)):
    rng = np.random.default_rng(seed)
    occ = rng.random(dims) < frac
    return wd.VoxelWorld(np.array(dims), np.array(cells), np.zeros(3), occ)


class TestGenerators:
    def test_density_zero_empty(self):
        spec = wd.MapGenSpec(kind="pillars", extent=(10, 10, 2),
                             cell_sizes=(0.25,) * 3, density=0.0)
        assert wd.generate(spec).occ.sum() == 0

    def test_pillar_count_matches_density(self):
        spec = wd.MapGenSpec(kind="pillars", extent=(20, 20, 4),
                             cell_sizes=(0.2,) * 3, density=0.1,
                             footprint=(0.5, 0.5), seed=7)
        w = wd.generate(spec)
        # 40 pillars of 0.5 x 0.5 m, full height, possibly overlapping:
        # occupied volume is bounded by count * footprint cells
        per_pillar = int(np.ceil(0.5 / 0.2) + 1) ** 2 * w.dims[2]
        assert 0 < w.occ.sum() <= 40 * per_pillar

    def test_same_seed_identical(self):
        spec = wd.MapGenSpec(kind="pillars", extent=(20, 20, 4),
                             cell_sizes=(0.25,) * 3, density=0.3, seed=13)
        assert np.array_equal(wd.generate(spec).occ, wd.generate(spec).occ)
        spec2 = wd.MapGenSpec(kind="noise", extent=(10, 10, 3),
                              cell_sizes=(0.25,) * 3, seed=3)
        assert np.array_equal(wd.generate(spec2).occ, wd.generate(spec2).occ)

    def test_noise_has_structure(self):
        spec = wd.MapGenSpec(kind="noise", extent=(10, 10, 3),
                             cell_sizes=(0.25,) * 3, seed=5)
        w = wd.generate(spec)
        frac = w.occ.mean()
        assert 0.005 < frac < 0.6

    def test_rounding_never_truncates(self):
        spec = wd.MapGenSpec(kind="empty", extent=(1.01, 1.0, 1.0),
                             cell_sizes=(0.25,) * 3)
        w = wd.generate(spec)
        assert w.dims[0] == 5 and w.dims[1] == 4

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            wd.MapGenSpec(kind="swamp", extent=(1, 1, 1), cell_sizes=(0.1,) * 3)
        with pytest.raises(ValueError):
            wd.MapGenSpec(kind="pillars", extent=(1, 1, 1),
                          cell_sizes=(0.1,) * 3, density=-1)


class TestConfigSpace:
    def test_zero_inflation_equals_raw(self):
        w = small_random_world()
        cs = wd.build_config_space(w, 0.0)
        assert np.array_equal(cs.occ_inflated, w.occ)

    def test_distance_field_matches_brute_force(self):
        w = small_random_world()
        cs = wd.build_config_space(w, 0.0)
        ref = oracles.brute_force_distance_field(w)
        assert np.abs(cs.dist - ref).max() < 1e-12

    def test_distance_zero_exactly_on_obstacles(self):
        w = small_random_world(seed=2)
        cs = wd.build_config_space(w, 0.3)
        assert np.all((cs.dist == 0) == w.occ)

    def test_metric_consistency(self):
        w = small_random_world(seed=3, dims=(12, 12, 12))
        cs = wd.build_config_space(w, 0.0)
        d = cs.dist
        step = w.cell_sizes
        for ax in range(3):
            diff = np.abs(np.diff(d, axis=ax))
            assert diff.max() <= step[ax] + 1e-9

    def test_inflation_monotone(self):
        w = small_random_world(seed=4)
        sets = [wd.build_config_space(w, d).occ_inflated
                for d in (0.0, 0.15, 0.3, 0.6)]
        for a, b in zip(sets, sets[1:]):
            assert np.all(a <= b)

    def test_single_cell_face_and_corner(self):
        occ = np.zeros((7, 7, 7), dtype=bool)
        occ[3, 3, 3] = True
        w = wd.VoxelWorld(np.array([7] * 3), np.array([0.2] * 3), np.zeros(3), occ)
        cs = wd.build_config_space(w, 0.6 * 0.2)
        # face neighbors: center-to-box distance c/2 <= delta
        for off in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                    (0, 0, 1), (0, 0, -1)):
            assert cs.occ_inflated[3 + off[0], 3 + off[1], 3 + off[2]]
        # corner neighbor center is sqrt(3)/2 c away from the box: free
        assert not cs.occ_inflated[4, 4, 4]

    def test_is_free_and_bounds(self):
        w = small_random_world(seed=5)
        cs = wd.build_config_space(w, 0.2)
        occ_cell = tuple(np.argwhere(cs.occ_inflated)[0])
        assert not cs.is_free(occ_cell)
        with pytest.raises(IndexError):
            cs.is_free((99, 0, 0))


class TestNNSearch:
    def test_empty_box_center(self):
        w = wd.VoxelWorld(np.array([40, 40, 40]), np.array([0.25] * 3),
                          np.zeros(3), np.zeros((40, 40, 40), dtype=bool))
        cs = wd.build_config_space(w, 0.0)
        pt, r = cs.nn_search(np.array([5.0, 5.0, 5.0]))
        assert r == pytest.approx(5.0, abs=1e-12)

    def test_wall_query_within_half_diagonal(self):
        occ = np.zeros((40, 40, 40), dtype=bool)
        occ[20, :, :] = True
        w = wd.VoxelWorld(np.array([40] * 3), np.array([0.25] * 3),
                          np.zeros(3), occ)
        cs = wd.build_config_space(w, 0.0)
        q = np.array([4.5, 5.0, 5.0])
        pt, r = cs.nn_search(q)
        true_wall = 0.5  # perpendicular distance to the wall surface
        half_diag = 0.5 * np.linalg.norm(w.cell_sizes)
        assert true_wall <= r <= true_wall + half_diag

    def test_matches_brute_force(self):
        w = small_random_world(seed=6, dims=(12, 12, 12))
        cs = wd.build_config_space(w, 0.2)
        rng = np.random.default_rng(0)
        diag = np.linalg.norm(w.cell_sizes)
        for _ in range(50):
            p = rng.uniform(0.3, np.asarray(w.extent) - 0.3)
            _, r = cs.nn_search(p)
            ref = oracles.brute_force_nn(cs, p)
            assert abs(r - ref) < 1e-9 or abs(r - ref) <= diag

    def test_out_of_bounds(self):
        w = small_random_world(seed=7)
        cs = wd.build_config_space(w, 0.0)
        with pytest.raises(ValueError):
            cs.nn_search(np.array([-1.0, 0.0, 0.0]))


class TestNeighbors:
    def test_interior_26(self):
        assert len(wd.neighbors26((5, 5, 5), (40, 40, 40))) == 26

    def test_corner_7(self):
        assert len(wd.neighbors26((0, 0, 0), (40, 40, 40))) == 7

    def test_face_17(self):
        assert len(wd.neighbors26((0, 5, 5), (40, 40, 40))) == 17


class TestMapIO:
    def test_rle_roundtrip(self, tmp_path):
        w = small_random_world(seed=8)
        path = tmp_path / "m.ksg"
        wd.save_map(w, path)
        w2 = wd.load_map(path)
        assert np.array_equal(w.occ, w2.occ)
        assert np.allclose(w.cell_sizes, w2.cell_sizes)
        assert np.array_equal(w.dims, w2.dims)

    def test_magic_check(self, tmp_path):
        path = tmp_path / "bad.ksg"
        path.write_text("NOTAMAP 1 1 1\n")
        with pytest.raises(ValueError):
            wd.load_map(path)

    def test_ascii_cells(self, tmp_path):
        path = tmp_path / "cells.txt"
        path.write_text("# fixture\n1 2 3\n0 0 0\n")
        w = wd.load_cells_ascii(path, (4, 4, 4), (0.5, 0.5, 0.5))
        assert w.occ[1, 2, 3] and w.occ[0, 0, 0]
        assert w.occ.sum() == 2


def test_updated_config_space_matches_rebuild():
    w = small_random_world(seed=9, dims=(14, 14, 10))
    base = wd.VoxelWorld(w.dims, w.cell_sizes, w.origin,
                         np.zeros(tuple(w.dims), dtype=bool))
    cs0 = wd.build_config_space(base, 0.3)
    fresh = w.occ.copy()
    cs1 = wd.updated_config_space(cs0, w, fresh)
    cs_ref = wd.build_config_space(w, 0.3)
    assert np.array_equal(cs1.occ_inflated, cs_ref.occ_inflated)


def test_reachable_mask_blocks_walls():
    occ = np.zeros((9, 9, 1), dtype=bool)
    occ[4, :, 0] = True
    w = wd.VoxelWorld(np.array([9, 9, 1]), np.array([0.2] * 3), np.zeros(3), occ)
    cs = wd.build_config_space(w, 0.0)
    mask = wd.reachable_mask(cs, (1, 4, 0))
    assert mask[2, 4, 0] and not mask[6, 4, 0]
