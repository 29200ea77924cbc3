"""Tests for procedural universe generation and planet surfaces."""

import json
import math

import numpy as np
import pytest

from scalefree_world.horizon import PartitionTree
from scalefree_world.scene import Component, ComponentKind, Node, detach, dumps_scene
from scalefree_world.transform import Vec3
from scalefree_world.universe import (
    LEVELS,
    GenConfig,
    GenConfigError,
    GenerationError,
    RecipeError,
    build_surface_patch,
    build_surface_patches,
    cell_label,
    find_planet,
    generate_level,
    generate_world,
    load_gen_config,
    nodes_per_level,
    sample_surface,
    surface_config,
    update_partition,
)


def nodes_of_type(world, type_name):
    return [node for node in world.iter_subtree() if node.type_name == type_name]


@pytest.fixture(scope="module")
def planet_world():
    """Seed 11 generated down to the planet surfaces."""
    return generate_world(11, 6)


class TestGenerateWorld:
    """Test suite for hierarchy generation."""

    def test_depth_zero(self):
        """Test that depth 0 yields only the world node."""
        world = generate_world(1, 0)

        assert world.count() == 1
        assert world.type_name == "world_sol"
        assert world.seed == 1

    def test_replay_is_byte_identical(self):
        """Test that equal seeds give identical snapshots and other seeds do not."""
        first = dumps_scene(generate_world(2024, 5))

        assert dumps_scene(generate_world(2024, 5)) == first
        assert dumps_scene(generate_world(2025, 5)) != first

    def test_ids_follow_seeds(self, planet_world):
        """Test that generated handles are unique and repeat on replay."""
        ids = [node.id for node in planet_world.iter_subtree()]

        assert len(set(ids)) == len(ids)
        assert [node.id for node in generate_world(11, 6).iter_subtree()] == ids

    def test_level_types(self):
        """Test that every generated level holds its own node type."""
        world = generate_world(5, 5)

        for node in world.iter_subtree():
            assert node.type_name == LEVELS[node.depth()]
        counts = nodes_per_level(world)
        assert len(counts) == 6
        assert all(count > 0 for count in counts)

    def test_depth_range(self):
        """Test that depths outside [0, 8] are rejected."""
        with pytest.raises(GenerationError):
            generate_world(1, 9)
        with pytest.raises(GenerationError):
            generate_world(1, -1)

    def test_no_recipe(self):
        """Test that leaf types have no recipe."""
        with pytest.raises(RecipeError):
            generate_level(Node("camera"))

    def test_children_fit_in_parents(self, planet_world):
        """Test that clusters and galaxies sit inside their parents' bounds."""
        for node in nodes_of_type(planet_world, "spacecluster"):
            reach = node.position.length() + node.absolute_size / node.parent.absolute_size
            assert reach <= 1.0 + 1e-12

    def test_orbits_inside_star_bounds(self, planet_world):
        """Test that apoapsis stays within the star's bounds."""
        planets = nodes_of_type(planet_world, "planet")
        assert planets

        for planet in planets:
            params = planet.get_component(ComponentKind.ORBIT).payload
            assert params.a * (1.0 + params.e) <= planet.parent.bounds.radius

    def test_planets_only_on_primary_stars(self, planet_world):
        """Test that secondary stars carry no planets."""
        for system in nodes_of_type(planet_world, "starsystem"):
            for star in system.children[1:]:
                assert star.children == ()

    def test_subtree_regeneration(self, planet_world):
        """Test that a star's planets regenerate from the star seed alone."""
        star = nodes_of_type(planet_world, "planet")[0].parent
        fresh = Node("star", absolute_size=star.absolute_size, bounds=star.bounds, seed=star.seed)
        fresh.set_var("mass", star.custom_vars["mass"])

        for planet in generate_level(fresh):
            generate_level(planet)

        original = [dumps_scene(p) for p in star.children]
        regenerated = [dumps_scene(p) for p in fresh.children]
        assert regenerated == original

    def test_cameras(self):
        """Test one transferable camera per planet, above face 0."""
        world = generate_world(3, 8)

        cameras = nodes_of_type(world, "camera")
        assert len(cameras) == len(nodes_of_type(world, "planet"))
        for camera in cameras:
            assert camera.transferable
            assert camera.parent.custom_vars["face"] == 0
            assert find_planet(camera).type_name == "planet"


class TestUpdatePartition:
    """Test suite for partition-driven regeneration."""

    CONFIG = GenConfig(galaxy_partition_depth=2)

    def test_split_replaces_root_systems(self):
        """Test that split cells get systems and the root cell's systems leave."""
        world = generate_world(21, 3, self.CONFIG)
        galaxy = nodes_of_type(world, "galaxy")[0]

        created, destroyed = update_partition(galaxy, Vec3(0.9, 0.9, 0.9), self.CONFIG)

        assert () in destroyed
        active = {cell_label(p) for p in galaxy.partition_component().payload.active_cells}
        labels = {child.custom_vars["cell"] for child in galaxy.children}
        assert labels <= active
        assert "" not in labels

    def test_regeneration_is_deterministic(self):
        """Test equal content for equal updates, and the original content after a merge."""
        observer = Vec3(0.9, -0.2, 0.4)
        worlds = [generate_world(21, 3, self.CONFIG) for _ in range(2)]
        for world in worlds:
            update_partition(nodes_of_type(world, "galaxy")[0], observer, self.CONFIG)

        assert dumps_scene(worlds[0]) == dumps_scene(worlds[1])

        galaxy = nodes_of_type(worlds[0], "galaxy")[0]
        created, _ = update_partition(galaxy, Vec3(10.0, 0.0, 0.0), self.CONFIG)
        assert created == [()]
        assert dumps_scene(worlds[0]) == dumps_scene(generate_world(21, 3, self.CONFIG))

    def test_split_factor_from_config(self):
        """Test that a wider split factor splits a galaxy the default leaves whole."""
        observer = Vec3(4.0, 0.0, 0.0)
        wide = GenConfig(galaxy_partition_depth=2, split_factor=2.0, merge_factor=3.0)
        narrow_galaxy = nodes_of_type(generate_world(21, 3, self.CONFIG), "galaxy")[0]
        wide_galaxy = nodes_of_type(generate_world(21, 3, wide), "galaxy")[0]

        assert update_partition(narrow_galaxy, observer, self.CONFIG) == ([], [])

        created, destroyed = update_partition(wide_galaxy, observer, wide)
        assert destroyed == [()]
        assert len(created) == 8
        tree = wide_galaxy.partition_component().payload
        assert (tree.split_factor, tree.merge_factor) == (2.0, 3.0)

    def test_host_without_partition(self):
        """Test that hosts need a partition component."""
        with pytest.raises(GenerationError):
            update_partition(Node("galaxy"), Vec3.zero())

    def test_host_without_cell_recipe(self):
        """Test that non-galaxy hosts only report cell changes."""
        host = Node("planet_surface_node")
        tree = PartitionTree(arity=4, half_size=1.0, max_depth=1)
        host.add_component(Component(ComponentKind.PARTITION2D, tree))

        created, destroyed = update_partition(host, Vec3.zero())

        assert len(created) == 4 and destroyed == [()]
        assert host.children == ()


class TestSurface:
    """Test suite for surface sampling and patches."""

    def test_height_bounded(self):
        """Test |height| <= amplitude everywhere."""
        config = GenConfig(noise_amplitude_m=500.0)

        for lat in np.linspace(-math.pi / 2, math.pi / 2, 9):
            for lon in np.linspace(-math.pi, math.pi, 13):
                sample = sample_surface(77, float(lat), float(lon), config)
                assert abs(sample.height) <= 500.0
                assert 0.0 <= sample.temperature <= 1.0
                assert 0.0 <= sample.moisture <= 1.0

    def test_antimeridian_and_poles(self):
        """Test continuity across lon = +/-pi and at the poles."""
        for lat in (-1.0, 0.0, 0.6):
            east = sample_surface(5, lat, math.pi)
            west = sample_surface(5, lat, -math.pi)
            assert east.height == pytest.approx(west.height, abs=1e-6)

        north = [sample_surface(5, math.pi / 2, lon).height for lon in (0.0, 1.0, 2.5)]
        assert north == pytest.approx([north[0]] * 3, abs=1e-6)

    def test_same_seed_same_surface(self):
        """Test that samples depend only on seed and position."""
        assert sample_surface(9, 0.3, 0.7) == sample_surface(9, 0.3, 0.7)
        assert sample_surface(9, 0.3, 0.7) != sample_surface(10, 0.3, 0.7)

    def test_neighbouring_cells_share_edges(self, planet_world):
        """Test identical vertices along the edge of two cells of one face."""
        planet = nodes_of_type(planet_world, "planet")[0]
        resolution = 4
        count = resolution + 1

        left = build_surface_patch(planet, (0, 0), resolution).vertices.reshape(count, count, 3)
        right = build_surface_patch(planet, (0, 1), resolution).vertices.reshape(count, count, 3)

        np.testing.assert_array_equal(left[:, -1], right[:, 0])

    @pytest.mark.parametrize("resolution", [1, 3, 4, 5, 6, 7, 10, 16])
    def test_neighbouring_faces_share_edges(self, planet_world, resolution):
        """Test bit-identical vertices along the cube edge between faces 0 and 2."""
        planet = nodes_of_type(planet_world, "planet")[0]
        count = resolution + 1

        face0 = build_surface_patch(planet, (0,), resolution).vertices.reshape(count, count, 3)
        face2 = build_surface_patch(planet, (2,), resolution).vertices.reshape(count, count, 3)

        np.testing.assert_array_equal(face0[0, :], face2[::-1, -1])

    @pytest.mark.parametrize("resolution", [3, 5, 7])
    def test_neighbouring_face_cells_share_edges(self, planet_world, resolution):
        """Test bit-identical vertices between depth-one cells across a cube edge."""
        planet = nodes_of_type(planet_world, "planet")[0]
        count = resolution + 1

        left = build_surface_patch(planet, (0, 0), resolution).vertices.reshape(count, count, 3)
        right = build_surface_patch(planet, (2, 3), resolution).vertices.reshape(count, count, 3)

        np.testing.assert_array_equal(left[0, :], right[::-1, -1])

    def test_zero_amplitude_is_a_sphere(self, planet_world):
        """Test that without relief every vertex sits at the planet radius."""
        planet = nodes_of_type(planet_world, "planet")[0]
        config = GenConfig(noise_amplitude_m=0.0)

        mesh = build_surface_patch(planet, (3, 2, 1), 3, config)

        radii = np.linalg.norm(mesh.vertices, axis=1)
        np.testing.assert_allclose(radii, planet.absolute_size, rtol=1e-12)

    def test_patch_winding_faces_outward(self, planet_world):
        """Test that triangle normals point away from the planet centre."""
        planet = nodes_of_type(planet_world, "planet")[0]
        mesh = build_surface_patch(planet, (4, 3), 2, GenConfig(noise_amplitude_m=0.0))

        a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
        normals = np.cross(b - a, c - a)
        assert np.all(np.einsum("ij,ij->i", normals, a + b + c) > 0.0)

    def test_resolution(self, planet_world):
        """Test triangle counts and the resolution lower bound."""
        planet = nodes_of_type(planet_world, "planet")[0]

        assert build_surface_patch(planet, (1,), 1).triangle_count == 2
        assert build_surface_patch(planet, (1,), 3).triangle_count == 18
        with pytest.raises(GenerationError):
            build_surface_patch(planet, (1,), 0)
        with pytest.raises(GenerationError):
            build_surface_patch(planet, (6,), 2)
        with pytest.raises(GenerationError):
            build_surface_patch(planet, (1, 4), 2)

    def test_patches_in_order(self, planet_world):
        """Test that batch building matches single builds."""
        planet = nodes_of_type(planet_world, "planet")[0]
        cells = [(5,), (0, 3), (2, 1, 1)]

        batch = build_surface_patches(planet, cells, 2)

        for cell, mesh in zip(cells, batch):
            np.testing.assert_array_equal(
                mesh.vertices, build_surface_patch(planet, cell, 2).vertices
            )


class TestGenConfig:
    """Test suite for generation settings."""

    def test_from_dict(self):
        """Test that given keys override defaults."""
        config = GenConfig.from_dict({"planets_per_system": [2, 2], "noise_octaves": 3})

        assert config.planets_per_system == (2, 2)
        assert config.noise_octaves == 3
        assert config.world_size_m == GenConfig().world_size_m

    @pytest.mark.parametrize(
        "data",
        [
            {"planet_count": [1, 2]},
            {"eccentricity": [0.0, 1.0]},
            {"noise_octaves": 2.5},
            {"star_size_m": [5.0, 1.0]},
            {"planets_per_system": 3},
        ],
    )
    def test_invalid(self, data):
        """Test that unknown keys and malformed values are rejected."""
        with pytest.raises(GenConfigError):
            GenConfig.from_dict(data)

    def test_load_file(self, tmp_path):
        """Test reading a config file and reporting broken JSON."""
        path = tmp_path / "gen.json"
        path.write_text(json.dumps({"clusters_per_world": [1, 1]}), encoding="utf-8")
        assert load_gen_config(path).clusters_per_world == (1, 1)

        path.write_text("{", encoding="utf-8")
        with pytest.raises(GenConfigError, match="line 1"):
            load_gen_config(path)

    def test_partition_factors(self):
        """Test that the factors reach the surface quadtrees and keep split below merge."""
        config = GenConfig(split_factor=1.2, merge_factor=1.8)
        world = generate_world(11, 6, config)

        for face in nodes_of_type(world, "planet_surface_node"):
            tree = face.partition_component().payload
            assert (tree.split_factor, tree.merge_factor) == (1.2, 1.8)
        with pytest.raises(GenConfigError, match="split_factor"):
            GenConfig(split_factor=2.0, merge_factor=2.0)

    def test_file_keys_beat_base(self, tmp_path):
        """Test that a config file overrides the base it is layered on."""
        path = tmp_path / "gen.json"
        path.write_text(json.dumps({"merge_factor": 4.0}), encoding="utf-8")
        base = GenConfig(split_factor=1.8, merge_factor=2.5)

        config = load_gen_config(path, base)

        assert (config.split_factor, config.merge_factor) == (1.8, 4.0)

    def test_config_changes_output(self):
        """Test that count ranges drive the generated structure."""
        config = GenConfig(clusters_per_world=(1, 1), galaxies_per_cluster=(4, 4))
        world = generate_world(4, 2, config)

        assert nodes_per_level(world) == [1, 1, 4]


class TestSurfaceConfig:
    """Test suite for noise settings carried on planets."""

    def test_stored_settings_win(self):
        """Test that a planet's stored noise settings override the base config."""
        config = GenConfig(noise_octaves=3, noise_amplitude_m=100.0)
        planet = nodes_of_type(generate_world(8, 6, config), "planet")[0]

        restored = surface_config(planet, GenConfig())

        assert restored.noise_octaves == 3
        assert restored.noise_amplitude_m == 100.0

    def test_without_surface(self):
        """Test that planets without a surface node use the base config."""
        base = GenConfig(noise_gain=0.4)

        assert surface_config(Node("planet"), base) is base

    def test_malformed_settings(self):
        """Test that broken stored settings are reported."""
        planet = nodes_of_type(generate_world(8, 6), "planet")[0]
        del planet.children[0].get_component(ComponentKind.SURFACE_MOD).payload["gain"]

        with pytest.raises(GenerationError):
            surface_config(planet)

    def test_detached_planet_still_found(self):
        """Test planet lookup from a face node after detaching the planet."""
        planet = nodes_of_type(generate_world(8, 7), "planet")[0]
        detach(planet)
        face = planet.children[0].children[0]

        assert find_planet(face) is planet
        with pytest.raises(GenerationError):
            find_planet(Node("galaxy"))
