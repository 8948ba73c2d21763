# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

import rayserde as rs


@pytest.fixture(scope="module")
def small_grid():
    return rs.VoxelGridSpec([4, 48, 48], [1.0, 1.0, 1.0], [-24.0, -24.0, 0.0])


@pytest.fixture(scope="module")
def small_template(small_grid):
    return rs.build_template(small_grid, 60.0)


def random_voxels(grid, n, seed):
    rng = np.random.default_rng(seed)
    cells = rng.choice(grid.cell_count, size=n, replace=False)
    cells.sort()
    z, rest = np.divmod(cells, grid.dims[1] * grid.dims[2])
    y, x = np.divmod(rest, grid.dims[2])
    coords = np.stack([z, y, x], axis=1).astype(np.int32)
    return rs.SparseVoxelSet(grid, coords, rng.normal(size=(n, 4)))


def test_voxelize_mean_and_drop():
    grid = rs.VoxelGridSpec([10, 10, 10])
    pts = np.array([[0.2, 0.4, 0.1, 0.2], [0.6, 0.8, 0.5, 0.4], [-0.5, 0.0, 0.0, 0.0]])
    voxels, dropped = rs.voxelize(pts, grid)
    assert dropped == 1
    assert len(voxels) == 1
    assert voxels.point_counts.tolist() == [2]
    np.testing.assert_allclose(voxels.features[0], [0.4, 0.6, 0.3, 0.3])


def test_template_shape_and_quadrants(small_template):
    assert small_template.sector_of_cell.shape == (4, 48, 48)
    assert set(np.unique(small_template.sector_of_cell)) == set(range(6))
    quad = rs.build_template(rs.VoxelGridSpec([1, 2, 2]), 90.0)
    assert quad.sector_of_cell[0].tolist() == [[2, 3], [1, 0]]
    assert rs.sector_of(60.0, 60.0) == 1
    assert rs.azimuth_deg(-1.0, -1.0) == pytest.approx(225.0)


def test_template_file_round_trip(tmp_path, small_template):
    path = tmp_path / "t.rayt"
    small_template.save(path)
    assert rs.load_template(path) == small_template
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(rs.FormatError, match="magic"):
        rs.load_template(path)


@pytest.mark.parametrize("strategy", ["ray", "hilbert", "morton", "axis"])
def test_serialize_scatter_identity(small_grid, small_template, strategy):
    voxels = random_voxels(small_grid, 900, 1)
    ser = rs.serialize(voxels, strategy, small_template)
    assert ser.total_length == len(voxels)
    blocks = [ser.features(i) + 1.0 for i in range(len(ser))]
    back = rs.scatter(ser, blocks, voxels)
    np.testing.assert_array_equal(back.features, voxels.features + 1.0)
    np.testing.assert_array_equal(back.coords, voxels.coords)
    with pytest.raises(rs.ContractError):
        rs.scatter(ser, blocks[:-1] if len(blocks) > 1 else [], voxels)


def test_ray_serialization_needs_template(small_grid):
    with pytest.raises(rs.ConfigError):
        rs.serialize(random_voxels(small_grid, 10, 2), "ray")


def test_curves_round_trip():
    for k in range(512):
        assert rs.hilbert_key(rs.hilbert_cell(k, 3), 3) == k
        assert rs.morton_key(rs.morton_cell(k, 3), 3) == k
    assert rs.morton_key([1, 1, 1], 1) == 7


def test_selective_scan_and_grad_check():
    p = rs.SsmParams(8, 4, seed=3)
    assert p.A.shape == (4, 8)
    x = np.random.default_rng(0).normal(size=(64, 4))
    y = rs.selective_scan(x, p)
    assert y.shape == (64, 4)
    assert np.all(rs.selective_scan(np.zeros((10, 4)), p) == 0.0)
    y32 = rs.selective_scan(x, p, precision="f32")
    assert np.max(np.abs(y - y32)) < 1e-4
    report = rs.grad_check(p, x, 1e-5)
    assert report["rel_err"] <= 1e-4
    with pytest.raises(rs.ContractError):
        rs.selective_scan(np.zeros((5, 3)), p)


def test_sector_forward_counts_scans(small_grid, small_template):
    voxels = random_voxels(small_grid, 600, 4)
    block = rs.SectorMambaBlock(radius=1)
    out, stats = rs.sector_forward(voxels, small_template, block)
    assert stats["scan_invocations"] == stats["sectors"] == 6
    out4, _ = rs.sector_forward(voxels, small_template, block, workers=4)
    np.testing.assert_array_equal(out.features, out4.features)


def test_simulation_far_field_sparsity():
    scene = rs.Scene()
    scene.add_box(1, [45.0, 0.0, 0.75], [2.0, 1.0, 1.5])
    counts = rs.returns_per_object(scene, rs.standard_sensor(), seed=0)
    assert 0 < counts[1] < 10
    pts, hits = rs.simulate_scan(rs.make_far_field_scene(1), rs.standard_sensor(), seed=1)
    assert pts.shape[1] == 4 and pts.shape[0] == hits.shape[0]
    assert (hits == -1).any()


def test_compare_strategies_report():
    grid = rs.standard_grid()
    scenes = rs.simulate_suite(1, 0, grid)
    tmpl = rs.build_template(grid)
    report = rs.compare_strategies(scenes, ["ray", "hilbert"], tmpl, max_refs=20)
    names = [s["strategy"] for s in report["strategies"]]
    assert names == ["ray", "hilbert"]
    assert len(report["paired"]) == 1


def test_cli_in_process(tmp_path):
    code, out, err = rs.run_cli(["ssm-check", "--seed", "7", "-o", str(tmp_path)])
    assert code == 0, err
    assert (tmp_path / "ssm-check.json").exists()
    code, _, err = rs.run_cli(["serialize", "--strategy", "spiral"])
    assert code == 2
    assert "strategy" in err
