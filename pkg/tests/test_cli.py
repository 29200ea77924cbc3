"""Tests for the CLI module."""

import json
import math
import os
from unittest.mock import patch

import pytest

from scalefree_world import cli
from scalefree_world.cli import create_parser, exit_code_for, main, parse_seed
from scalefree_world.horizon import partition_update
from scalefree_world.orbit import AnomalyConvergenceError
from scalefree_world.procgen import (
    DegenerateInsetError,
    GroupStore,
    OpExecutionError,
    ProcgenError,
)
from scalefree_world.scene import Node, SphereBounds, attach, load_scene, save_scene
from scalefree_world.transform import Vec3

UNIT_SQUARE = {"type": "create_rect", "out": "base", "width": 1.0, "height": 1.0}

SKY_PARAMS = {
    "c_atmosphere": [0.3, 0.5, 0.9],
    "n_planet": [0.0, -1.0, 0.0],
    "w_planet": 6.373e6,
    "w_atmosphere": 1e5,
    "h": 2000.0,
    "stars": [{"color": [1.0, 1.0, 1.0], "direction": [0.0, 1.0, 0.0]}],
}


def run_main(*argv, env=None):
    """Run the CLI entry point and return its exit code."""
    with patch("sys.argv", ["scalefree-world", *argv]), patch(
        "scalefree_world.cli.load_dotenv"
    ), patch.dict(os.environ, env or {}, clear=True):
        with pytest.raises(SystemExit) as exc_info:
            main()
    return exc_info.value.code


def write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


@pytest.fixture
def small_scene(tmp_path):
    """A 1 km world holding one 10 m planet half way to its edge."""
    world = Node("world_sol", absolute_size=1000.0, bounds=SphereBounds(1.0))
    attach(world, Node("planet", absolute_size=10.0, position=Vec3(0.5, 0.0, 0.0)))
    path = tmp_path / "scene.json"
    save_scene(world, path)
    return path


class TestParser:
    """Test suite for argument parsing."""

    def test_create_parser(self):
        """Test parser creation and argument configuration."""
        parser = create_parser()

        # No arguments shows help rather than failing
        args = parser.parse_args([])
        assert args.command is None

        args = parser.parse_args(["gen", "--seed", "0x2a", "--depth", "4", "--out", "w.json"])

        assert args.command == "gen"
        assert args.seed == 42
        assert args.depth == 4
        assert args.config is None

    def test_transform_paths(self):
        """Test that --from and --to land in their own attributes."""
        args = create_parser().parse_args(
            ["transform", "--scene", "w.json", "--from", "/0", "--to", "/0/starsystem:1"]
        )

        assert args.from_path == "/0"
        assert args.to_path == "/0/starsystem:1"

    def test_orbit_needs_times(self):
        """Test that orbit requires either --t or --period-samples."""
        with pytest.raises(SystemExit):
            create_parser().parse_args(["orbit", "--params", "o.json"])

    @pytest.mark.parametrize("text, expected", [("7", 7), ("0x10", 16), ("0b11", 3)])
    def test_parse_seed(self, text, expected):
        """Test decimal and prefixed seeds."""
        assert parse_seed(text) == expected

    @pytest.mark.parametrize("text", ["-1", str(1 << 64), "seven"])
    def test_parse_seed_rejects(self, text):
        """Test that negative, oversized and non-numeric seeds are refused."""
        with pytest.raises(Exception, match="seed"):
            parse_seed(text)


class TestExitCodes:
    """Test suite for mapping failures to exit codes."""

    def test_numeric_failures(self):
        """Test that numerical failures map to 3, also when wrapped by a program run."""
        assert exit_code_for(AnomalyConvergenceError(0.9, 1.0, 0.5, 0.1)) == 3
        wrapped = OpExecutionError((1,), "inset", DegenerateInsetError("too deep"), GroupStore())
        assert exit_code_for(wrapped) == 3

    def test_input_failures(self):
        """Test that everything else maps to 2."""
        assert exit_code_for(ProcgenError("bad")) == 2
        assert exit_code_for(FileNotFoundError("missing.json")) == 2


class TestMain:
    """Test suite for the CLI entry point."""

    def test_no_command_prints_help(self):
        """Test that running without a command shows help and returns."""
        with patch("sys.argv", ["scalefree-world"]), patch("scalefree_world.cli.load_dotenv"):
            with patch("scalefree_world.cli.create_parser") as mock_parser:
                mock_parser.return_value.parse_args.return_value.command = None
                main()

        mock_parser.return_value.print_help.assert_called_once()

    def test_gen_is_reproducible(self, tmp_path):
        """Test that the same seed writes byte-identical snapshots."""
        first, second = tmp_path / "a.json", tmp_path / "b.json"

        with patch("builtins.print") as mock_print:
            assert run_main("gen", "--seed", "42", "--depth", "3", "--out", str(first)) == 0
        assert run_main("gen", "--seed", "42", "--depth", "3", "--out", str(second)) == 0

        assert first.read_bytes() == second.read_bytes()
        mock_print.assert_any_call("Level 0 (world_sol): 1")

    def test_gen_depth_out_of_range(self, tmp_path):
        """Test that an unsupported depth is an input error."""
        out = tmp_path / "w.json"

        assert run_main("gen", "--depth", "9", "--out", str(out)) == 2
        assert not out.exists()

    def test_seed_environment_override(self, tmp_path):
        """Test that SNE_SEED replaces --seed."""
        overridden, direct = tmp_path / "a.json", tmp_path / "b.json"

        code = run_main(
            "gen", "--seed", "1", "--depth", "2", "--out", str(overridden), env={"SNE_SEED": "99"}
        )
        assert code == 0
        assert run_main("gen", "--seed", "99", "--depth", "2", "--out", str(direct)) == 0

        assert overridden.read_bytes() == direct.read_bytes()

    def test_mesh_seed_override(self, tmp_path, mocker):
        """Test that SNE_SEED also reaches the op program run."""
        ops = write_json(tmp_path / "ops.json", [UNIT_SQUARE])
        spy = mocker.spy(cli, "run_program")

        code = run_main(
            "mesh", "--ops", str(ops), "--out", str(tmp_path / "x.obj"), env={"SNE_SEED": "0x10"}
        )

        assert code == 0
        assert spy.call_args.args[1] == 16

    def test_invalid_environment(self, tmp_path):
        """Test that inconsistent settings stop before any work."""
        out = tmp_path / "w.json"

        code = run_main("gen", "--out", str(out), env={"SNE_SPLIT_FACTOR": "3.0"})

        assert code == 2
        assert not out.exists()

    def test_partition_factor_environment(self, tmp_path):
        """Test that SNE_SPLIT_FACTOR and SNE_MERGE_FACTOR reach the generated partitions."""
        out = tmp_path / "w.json"
        env = {"SNE_SPLIT_FACTOR": "1.8", "SNE_MERGE_FACTOR": "2.5"}

        assert run_main("gen", "--seed", "5", "--depth", "3", "--out", str(out), env=env) == 0

        galaxies = [n for n in load_scene(out).iter_subtree() if n.type_name == "galaxy"]
        assert galaxies
        for galaxy in galaxies:
            tree = galaxy.partition_component().payload
            assert (tree.split_factor, tree.merge_factor) == (1.8, 2.5)

        # 3.2 units from a 2-unit root cell: split only because 3.2 < 1.8 * 2
        tree = galaxies[0].partition_component().payload
        assert partition_update(tree, Vec3(4.2, 0.0, 0.0))[1] == [()]

    def test_config_file_beats_environment(self, tmp_path):
        """Test that partition factors in --config win over the environment."""
        config = write_json(tmp_path / "gen.json", {"split_factor": 1.1})
        out = tmp_path / "w.json"
        env = {"SNE_SPLIT_FACTOR": "1.8"}

        code = run_main("gen", "--depth", "3", "--config", str(config), "--out", str(out), env=env)

        assert code == 0
        galaxy = next(n for n in load_scene(out).iter_subtree() if n.type_name == "galaxy")
        assert galaxy.partition_component().payload.split_factor == 1.1

    def test_transform_identity(self, small_scene, capsys):
        """Test that a node relative to itself is the identity at distance zero."""
        assert run_main("transform", "--scene", str(small_scene), "--from", "/", "--to", "/") == 0

        lines = capsys.readouterr().out.splitlines()
        assert lines[:4] == [
            "1.0 0.0 0.0 0.0",
            "0.0 1.0 0.0 0.0",
            "0.0 0.0 1.0 0.0",
            "0.0 0.0 0.0 1.0",
        ]
        assert lines[4] == "distance_m 0.0"

    def test_transform_distance(self, small_scene, capsys):
        """Test the metric distance from the world to its planet."""
        code = run_main("transform", "--scene", str(small_scene), "--from", "/", "--to", "/0")

        assert code == 0
        last = capsys.readouterr().out.splitlines()[-1]
        label, value = last.split()
        assert label == "distance_m"
        assert float(value) == pytest.approx(500.0, rel=1e-12)

    def test_transform_bad_path(self, small_scene, capsys):
        """Test that an unresolvable path is an input error."""
        code = run_main("transform", "--scene", str(small_scene), "--from", "/", "--to", "/5")

        assert code == 2
        assert "does not resolve" in capsys.readouterr().err

    def test_orbit_csv(self, tmp_path):
        """Test that a circular orbit samples stay on its radius."""
        params = write_json(
            tmp_path / "orbit.json", {"a": 1e7, "e": 0.0, "m_node": 1.0, "m_parent": 5.972e24}
        )
        out = tmp_path / "orbit.csv"

        code = run_main(
            "orbit", "--params", str(params), "--period-samples", "4", "--out", str(out)
        )

        assert code == 0
        header, *rows = out.read_text(encoding="utf-8").splitlines()
        assert header == "t,x,y,z"
        assert len(rows) == 4
        for row in rows:
            t, x, y, z = (float(v) for v in row.split(","))
            assert y == 0.0
            assert math.hypot(x, z) == pytest.approx(1e7, rel=1e-9)

    def test_orbit_bad_eccentricity(self, tmp_path):
        """Test that a hyperbolic orbit is refused."""
        params = write_json(
            tmp_path / "orbit.json", {"a": 1e7, "e": 1.5, "m_node": 1.0, "m_parent": 1.0}
        )

        assert run_main("orbit", "--params", str(params), "--t", "0") == 2

    def test_simulate_static_scene(self, small_scene, tmp_path):
        """Test that a scene without motion produces no events and keeps its nodes."""
        out, events = tmp_path / "after.json", tmp_path / "events.log"

        code = run_main(
            "simulate",
            "--scene",
            str(small_scene),
            "--steps",
            "3",
            "--dt",
            "60",
            "--out",
            str(out),
            "--events",
            str(events),
        )

        assert code == 0
        assert events.read_text(encoding="utf-8") == ""
        assert load_scene(out).count() == 2

    def test_simulate_event_ids_match_scene(self, tmp_path, capsys):
        """Test that event lines name the ids stored in the scene files."""
        world = Node("world_sol", absolute_size=1000.0, node_id=7001)
        planet = attach(
            world, Node("planet", absolute_size=10.0, position=Vec3(0.5, 0.0, 0.0), node_id=7002)
        )
        craft = attach(planet, Node("craft", position=Vec3(0.9, 0.0, 0.0), node_id=7003))
        craft.transferable = True
        craft.velocity = Vec3(1.0, 0.0, 0.0)
        scene, out = tmp_path / "scene.json", tmp_path / "after.json"
        save_scene(world, scene)

        code = run_main(
            "simulate", "--scene", str(scene), "--steps", "1", "--dt", "1", "--out", str(out)
        )

        assert code == 0
        assert capsys.readouterr().out.splitlines() == ["transfer 7003 7002 7001"]
        saved = load_scene(out)
        assert [node.id for node in saved.iter_subtree()] == [7001, 7002, 7003]
        assert saved.children[1].id == 7003

    def test_mesh_from_ops(self, tmp_path, capsys):
        """Test that an op program is meshed into an OBJ file."""
        inset = {
            "type": "inset",
            "from": "base",
            "out": ["base", "sides"],
            "amount": 0.25,
            "extrude": 0.4,
        }
        ops = write_json(tmp_path / "ops.json", [UNIT_SQUARE, inset])
        out = tmp_path / "house.obj"

        assert run_main("mesh", "--ops", str(ops), "--out", str(out)) == 0

        faces = [line for line in out.read_text().splitlines() if line.startswith("f ")]
        assert len(faces) == 10
        assert "Wrote 10 triangles" in capsys.readouterr().out

    def test_mesh_invalid_program(self, tmp_path, capsys):
        """Test that schema errors exit with 2."""
        ops = write_json(tmp_path / "ops.json", [UNIT_SQUARE, {"type": "inzet", "from": "base"}])

        assert run_main("mesh", "--ops", str(ops), "--out", str(tmp_path / "x.obj")) == 2
        assert "inzet" in capsys.readouterr().err

    def test_mesh_degenerate_inset(self, tmp_path, capsys):
        """Test that a degenerate inset is a numerical failure."""
        inset = {"type": "inset", "from": "base", "out": "base", "amount": 0.5}
        ops = write_json(tmp_path / "ops.json", [UNIT_SQUARE, inset])

        assert run_main("mesh", "--ops", str(ops), "--out", str(tmp_path / "x.obj")) == 3
        assert "Numerical error" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "argv",
        [
            ["transform", "--scene", "{path}", "--from", "/", "--to", "/"],
            ["simulate", "--scene", "{path}", "--steps", "1", "--dt", "1", "--out", "{out}"],
            ["mesh", "--ops", "{path}", "--out", "{out}"],
            ["orbit", "--params", "{path}", "--t", "0"],
            ["sky", "--params", "{path}", "--width", "2", "--height", "2", "--out", "{out}"],
            ["gen", "--config", "{path}", "--depth", "1", "--out", "{out}"],
        ],
    )
    def test_non_utf8_input(self, tmp_path, capsys, argv):
        """Test that input files which are not UTF-8 are input errors, not crashes."""
        path = tmp_path / "input.json"
        path.write_bytes(b'{"a": "\xff\xfe"}')
        out = tmp_path / "result"

        code = run_main(*(arg.format(path=path, out=out) for arg in argv))

        assert code == 2
        assert "UTF-8" in capsys.readouterr().err
        assert not out.exists()

    def test_mesh_scene_needs_node(self, small_scene, tmp_path):
        """Test that --scene without --node is rejected."""
        code = run_main("mesh", "--scene", str(small_scene), "--out", str(tmp_path / "x.obj"))

        assert code == 2

    def test_sky_render(self, tmp_path):
        """Test that the sky command writes a binary PPM of the requested size."""
        params = write_json(tmp_path / "sky.json", SKY_PARAMS)
        out = tmp_path / "sky.ppm"

        code = run_main(
            "sky", "--params", str(params), "--width", "4", "--height", "2", "--out", str(out)
        )

        assert code == 0
        assert out.read_bytes().startswith(b"P6")

    def test_sky_invalid_size(self, tmp_path):
        """Test that a zero width is refused before reading parameters."""
        code = run_main(
            "sky",
            "--params",
            str(tmp_path / "missing.json"),
            "--width",
            "0",
            "--height",
            "2",
            "--out",
            str(tmp_path / "sky.ppm"),
        )

        assert code == 2
