"""Tests for the scene graph and scene snapshots."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalefree_world.config import SceneLimits
from scalefree_world.horizon import PartitionTree, partition_update
from scalefree_world.orbit import ConstantRotation, OrbitParams, orbit_component
from scalefree_world.scene import (
    BoxBounds,
    Component,
    ComponentError,
    ComponentKind,
    CompoundBounds,
    DetachError,
    LimitError,
    Node,
    SceneError,
    SnapshotError,
    SphereBounds,
    StructureError,
    attach,
    child_seed,
    clamp_point,
    contains_point,
    detach,
    dumps_scene,
    load_scene,
    node_path,
    resolve_node_path,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    seeded_id,
    validate_tree,
)
from scalefree_world.transform import Quaternion, Vec3


@pytest.fixture
def small_scene():
    """World with two typed children, one of them holding a grandchild."""
    world = Node("world_sol", absolute_size=1e6, seed=7)
    a = attach(world, Node("galaxy", absolute_size=1e3, position=Vec3(0.1, 0.2, 0.3)))
    b = attach(world, Node("starsystem", absolute_size=10.0, position=Vec3(-0.5, 0.0, 0.25)))
    c = attach(a, Node("starsystem", absolute_size=1.0, position=Vec3(0.0, 0.5, 0.0)))
    return world, a, b, c


class TestStructure:
    """Test suite for attach, detach and tree validation."""

    def test_attach_appends_in_order(self, small_scene):
        """Test that children keep insertion order."""
        world, a, b, _ = small_scene

        assert world.children == (a, b)
        assert a.parent is world

    def test_attach_to_own_descendant(self, small_scene):
        """Test that attaching a node below itself is a structure error."""
        world, a, _, c = small_scene
        detached = detach(a)

        with pytest.raises(StructureError):
            attach(c, detached)

    def test_attach_node_with_parent(self, small_scene):
        """Test that a node cannot have two parents."""
        _, a, b, _ = small_scene

        with pytest.raises(StructureError):
            attach(b, a)

    def test_detach_world_node(self, small_scene):
        """Test that the world node cannot be detached."""
        world, *_ = small_scene

        with pytest.raises(DetachError):
            detach(world)

    def test_detach_keeps_subtree(self, small_scene):
        """Test that a detached node becomes a world node with its children."""
        world, a, _, c = small_scene

        detach(a)

        assert a.is_world
        assert c.parent is a
        assert world.count() == 2

    def test_nesting_limit(self):
        """Test that nesting beyond the limit is refused."""
        limits = SceneLimits(max_nesting=3)
        node = Node("root")
        for _ in range(3):
            node = attach(node, Node("level"), limits)

        with pytest.raises(LimitError):
            attach(node, Node("level"), limits)

    def test_nesting_limit_counts_subtree_height(self):
        """Test that attaching a deep subtree checks its full height."""
        limits = SceneLimits(max_nesting=3)
        world = attach(Node("root"), Node("level"), limits).parent
        subtree = Node("sub")
        attach(attach(subtree, Node("x")), Node("y"))

        with pytest.raises(LimitError):
            attach(world.children[0], subtree, limits)

    def test_child_limit(self):
        """Test the per-node child limit."""
        limits = SceneLimits(max_children=2)
        world = Node("root")
        attach(world, Node("a"), limits)
        attach(world, Node("b"), limits)

        with pytest.raises(LimitError):
            attach(world, Node("c"), limits)

    def test_validate_tree(self, small_scene):
        """Test that a well-formed tree validates."""
        world, *_ = small_scene

        validate_tree(world)

    def test_invalid_node_values(self):
        """Test that sizes and seeds are range-checked."""
        with pytest.raises(SceneError):
            Node("bad", absolute_size=0.0)
        with pytest.raises(SceneError):
            Node("bad", seed=-1)
        with pytest.raises(SceneError):
            Node("bad", seed=1 << 64)

    def test_second_partition_component(self):
        """Test that a node holds at most one partition component."""
        node = Node("galaxy")
        node.add_component(Component(ComponentKind.PARTITION3D, PartitionTree(8, 1.0)))

        with pytest.raises(ComponentError):
            node.add_component(Component(ComponentKind.PARTITION2D, PartitionTree(4, 1.0)))

    def test_child_seed_depends_on_index_and_type(self):
        """Test that child seeds differ by index and type and repeat for equal inputs."""
        assert child_seed(1, 0, "star") == child_seed(1, 0, "star")
        assert child_seed(1, 0, "star") != child_seed(1, 1, "star")
        assert child_seed(1, 0, "star") != child_seed(1, 0, "planet")
        assert 0 <= child_seed(1, 0, "star") < 1 << 64


class TestBounds:
    """Test suite for bounds containment."""

    def test_sphere_boundary_is_inside(self):
        """Test that a point on the sphere surface counts as inside."""
        assert contains_point(SphereBounds(2.0), Vec3(0.0, 2.0, 0.0))
        assert not contains_point(SphereBounds(2.0), Vec3(0.0, 2.0 + 1e-9, 0.0))

    def test_box(self):
        """Test box containment per axis."""
        box = BoxBounds(Vec3(1.0, 0.5, 2.0))

        assert contains_point(box, Vec3(1.0, -0.5, 2.0))
        assert not contains_point(box, Vec3(0.0, 0.6, 0.0))

    @given(
        st.tuples(*[st.floats(-5.0, 5.0)] * 3),
    )
    def test_compound_is_union(self, point):
        """Test that compound containment is the union of its shifted members."""
        sphere = SphereBounds(1.0)
        box = BoxBounds(Vec3(0.5, 0.5, 0.5))
        offset = Vec3(2.0, 0.0, 0.0)
        compound = CompoundBounds(((sphere, Vec3.zero()), (box, offset)))
        p = Vec3(*point)

        assert contains_point(compound, p) == (
            contains_point(sphere, p) or contains_point(box, p - offset)
        )

    @given(
        st.floats(1e-3, 1e3),
        st.tuples(*[st.floats(-1e6, 1e6)] * 3),
    )
    def test_sphere_clamp_lands_inside(self, radius, point):
        """Test that clamping onto a sphere always yields a contained point."""
        sphere = SphereBounds(radius)
        p = Vec3(*point)

        clamped = clamp_point(sphere, p)

        assert contains_point(sphere, clamped)
        if contains_point(sphere, p):
            assert clamped == p

    def test_box_and_compound_clamp(self):
        """Test clamping onto a box per axis and onto the nearest compound member."""
        box = BoxBounds(Vec3(1.0, 0.5, 2.0))
        compound = CompoundBounds(((SphereBounds(1.0), Vec3.zero()), (box, Vec3(5.0, 0.0, 0.0))))

        assert clamp_point(box, Vec3(3.0, -0.2, -9.0)) == Vec3(1.0, -0.2, -2.0)
        assert clamp_point(compound, Vec3(-3.0, 0.0, 0.0)) == Vec3(-1.0, 0.0, 0.0)
        assert clamp_point(compound, Vec3(7.0, 0.0, 0.0)) == Vec3(6.0, 0.0, 0.0)

    def test_invalid_shapes(self):
        """Test that degenerate shapes are rejected."""
        with pytest.raises(SceneError):
            SphereBounds(0.0)
        with pytest.raises(SceneError):
            BoxBounds(Vec3(1.0, 0.0, 1.0))
        with pytest.raises(SceneError):
            CompoundBounds(())


class TestNodePaths:
    """Test suite for node path resolution."""

    def test_index_path(self, small_scene):
        """Test plain index segments."""
        world, _, _, c = small_scene

        assert resolve_node_path(world, "/0/0") is c
        assert resolve_node_path(world, "/") is world

    def test_typed_path(self, small_scene):
        """Test type-filtered segments."""
        world, _, b, _ = small_scene

        assert resolve_node_path(world, "/starsystem:0") is b

    def test_node_path_round_trip(self, small_scene):
        """Test that node_path resolves back to the node."""
        world, _, _, c = small_scene

        assert node_path(c) == "/0/0"
        assert resolve_node_path(world, node_path(c)) is c

    @pytest.mark.parametrize("path", ["/2", "/galaxy:1", "/x", "/0/0/0"])
    def test_unresolved(self, small_scene, path):
        """Test that missing or malformed segments raise a structure error."""
        world, *_ = small_scene

        with pytest.raises(StructureError):
            resolve_node_path(world, path)


class TestSnapshots:
    """Test suite for scene snapshots."""

    def make_rich_scene(self):
        world = Node("world_sol", absolute_size=8.8e26, seed=(1 << 64) - 1)
        star = attach(world, Node("star", absolute_size=1e9, position=Vec3(0.1, 0.2, 0.3)))
        star.set_var("mass", 2e30)
        star.set_var("color", Vec3(1.0, 0.5, 0.25))
        star.set_var("name", "sol")
        star.set_var("visible", True)
        star.add_component(
            Component(
                ComponentKind.CONSTANT_ROTATION,
                ConstantRotation(Vec3(0.0, 1.0, 0.0), 1e-5),
            )
        )

        planet = Node(
            "planet",
            absolute_size=6.371e6,
            rotation=Quaternion.from_axis_angle(Vec3(1.0, 1.0, 0.0), 0.3),
            bounds=CompoundBounds(((SphereBounds(1.5), Vec3.zero()),)),
        )
        params = OrbitParams.create(a=150.0, e=0.1, m_node=6e24, m_parent=2e30)
        planet.add_component(orbit_component(params))
        attach(star, planet)

        probe = attach(planet, Node("probe", position=Vec3(1.0 / 3.0, 0.0, 0.0)))
        probe.transferable = True
        probe.velocity = Vec3(0.1, 0.0, 0.0)
        probe.angular_velocity = Vec3(0.0, 0.01, 0.0)

        galaxy = attach(world, Node("galaxy", bounds=BoxBounds(Vec3(1.0, 1.0, 1.0))))
        tree = PartitionTree(arity=8, half_size=1.0, max_depth=3)
        partition_update(tree, Vec3(0.9, 0.9, 0.9))
        galaxy.add_component(Component(ComponentKind.PARTITION3D, tree))
        return world

    def test_round_trip_is_lossless(self):
        """Test that save then load reproduces the same snapshot text."""
        world = self.make_rich_scene()
        text = dumps_scene(world)

        loaded = scene_from_dict(json.loads(text))

        assert dumps_scene(loaded) == text

    def test_round_trip_keeps_values(self, tmp_path):
        """Test that typed values survive a file round trip."""
        world = self.make_rich_scene()
        path = tmp_path / "scene.json"
        save_scene(world, path)

        loaded = load_scene(path)
        star = loaded.children[0]
        planet = star.children[0]
        probe = planet.children[0]
        galaxy = loaded.children[1]

        assert loaded.seed == (1 << 64) - 1
        assert star.custom_vars == {
            "mass": 2e30,
            "color": Vec3(1.0, 0.5, 0.25),
            "name": "sol",
            "visible": True,
        }
        assert planet.get_component(ComponentKind.ORBIT).payload == (
            world.children[0].children[0].get_component(ComponentKind.ORBIT).payload
        )
        assert isinstance(planet.bounds, CompoundBounds)
        assert probe.transferable
        assert probe.position.x == 1.0 / 3.0
        assert probe.angular_velocity == Vec3(0.0, 0.01, 0.0)
        restored = galaxy.partition_component().payload
        original = world.children[1].partition_component().payload
        assert restored.active_cells == original.active_cells

    def test_ids_survive_round_trip(self):
        """Test that snapshots keep node ids instead of renumbering them."""
        root = Node("world_sol", node_id=7)
        attach(root, Node("planet", node_id=42))

        data = scene_to_dict(root)
        loaded = scene_from_dict(json.loads(json.dumps(data)))

        assert data["root"]["id"] == 7
        assert data["root"]["children"][0]["id"] == 42
        assert [node.id for node in loaded.iter_subtree()] == [7, 42]

    def test_duplicate_ids_rejected(self):
        """Test that a tree with a repeated id cannot be saved or loaded."""
        root = Node("world_sol", node_id=7)
        attach(root, Node("planet", node_id=7))

        with pytest.raises(SnapshotError, match="more than once"):
            scene_to_dict(root)

        data = scene_to_dict(Node("world_sol", node_id=9))
        data["root"]["children"] = [dict(data["root"], children=[])]
        with pytest.raises(SnapshotError, match="more than once"):
            scene_from_dict(data)

    def test_seeded_ids_leave_allocator_alone(self):
        """Test that content-derived handles never push the counter past 64 bits."""
        generated = Node("planet", seed=5, node_id=seeded_id(5, "planet"))
        fresh = Node("planet")

        assert generated.id == seeded_id(5, "planet")
        assert generated.id >= 1 << 63
        assert fresh.id < 1 << 63
        assert seeded_id(5, "planet") != seeded_id(5, "star")

    def test_wrong_format(self):
        """Test that foreign JSON objects are rejected."""
        with pytest.raises(SnapshotError):
            scene_from_dict({"format": "something-else", "version": 1, "root": {}})

    def test_malformed_node(self):
        """Test that a node record without required fields is rejected."""
        data = scene_to_dict(Node("world_sol"))
        del data["root"]["size"]

        with pytest.raises(SnapshotError):
            scene_from_dict(data)

    def test_invalid_json_file(self, tmp_path):
        """Test that a broken file reports its location."""
        path = tmp_path / "broken.json"
        path.write_text('{"format": ', encoding="utf-8")

        with pytest.raises(SnapshotError, match="line 1"):
            load_scene(path)
