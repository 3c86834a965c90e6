import copy
import json
import socket
from pathlib import Path

import numpy as np
import pytest

from workcell.config import (
    FNV_OFFSET_BASIS,
    build,
    canonical_json,
    config_hash,
    config_hash_hex,
    fnv1a_64,
    load_calibration,
    load_config,
    parse_and_validate,
    registered_robot_types,
)
from workcell.errors import StartupError, ValidationError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def load_doc(name):
    return json.loads((CONFIG_DIR / f"{name}.json").read_text())


def validate_doc(doc):
    return parse_and_validate(json.dumps(doc))


class TestShippedConfigs:
    def test_single_arm_config(self):
        cfg = load_config(CONFIG_DIR / "ur5_kinect4.json")
        assert cfg.robot.dof == 6
        assert len(cfg.cameras) == 4
        assert cfg.robot.action_space == "joint_velocity"
        assert sum(c.role == "master" for c in cfg.cameras) == 1

    def test_bimanual_config(self):
        cfg = load_config(CONFIG_DIR / "bimanual_rs3.json")
        assert cfg.robot.dof == 12
        assert len(cfg.cameras) == 3
        assert cfg.robot.action_space == "ee_twist"
        assert cfg.robot.follower_map is not None

    def test_calibration_files_cover_all_cameras(self):
        for name in ("ur5_kinect4", "bimanual_rs3"):
            cfg = load_config(CONFIG_DIR / f"{name}.json")
            calib = load_calibration(CONFIG_DIR / cfg.calibration_path, cfg.camera_ids)
            for cid in cfg.camera_ids:
                assert calib[cid].intrinsics.width > 0

    def test_packaged_schema_matches_docs_copy(self):
        from importlib import resources

        docs = (Path(__file__).resolve().parent.parent / "docs" / "workcell.schema.json")
        packaged = resources.files("workcell").joinpath("schemas/workcell.schema.json")
        assert json.loads(docs.read_text()) == json.loads(packaged.read_text())


class TestValidation:
    def test_two_masters_rejected(self):
        doc = load_doc("ur5_kinect4")
        doc["cameras"][1]["role"] = "master"
        doc["cameras"][1]["delay_us"] = 0.0
        with pytest.raises(ValidationError, match="master"):
            validate_doc(doc)

    def test_no_master_rejected(self):
        doc = load_doc("ur5_kinect4")
        doc["cameras"][0]["role"] = "subordinate"
        with pytest.raises(ValidationError):
            validate_doc(doc)

    def test_unknown_robot_type(self):
        doc = load_doc("ur5_kinect4")
        doc["robot"]["type"] = "pr2_sim"
        with pytest.raises(ValidationError, match="unknown component"):
            validate_doc(doc)
        assert "ur5_sim" in registered_robot_types()

    def test_dof_must_match_dh_rows(self):
        doc = load_doc("ur5_kinect4")
        doc["robot"]["dof"] = 7
        with pytest.raises(ValidationError, match="dof"):
            validate_doc(doc)

    def test_bimanual_dof_counts_both_arms(self):
        doc = load_doc("bimanual_rs3")
        doc["robot"]["dof"] = 6
        doc["robot"]["home_q"] = doc["robot"]["home_q"][:6]
        with pytest.raises(ValidationError):
            validate_doc(doc)

    def test_bad_action_space(self):
        doc = load_doc("ur5_kinect4")
        doc["robot"]["action_space"] = "torque"
        with pytest.raises(ValidationError):
            validate_doc(doc)

    def test_home_q_length(self):
        doc = load_doc("ur5_kinect4")
        doc["robot"]["home_q"] = [0.0] * 5
        with pytest.raises(ValidationError, match="home_q"):
            validate_doc(doc)

    def test_joint_limits_ordered(self):
        doc = load_doc("ur5_kinect4")
        doc["robot"]["q_min"] = [10.0] * 6
        with pytest.raises(ValidationError, match="q_min"):
            validate_doc(doc)

    def test_follower_map_required_for_two_arms(self):
        doc = load_doc("bimanual_rs3")
        del doc["robot"]["follower_map"]
        with pytest.raises(ValidationError, match="follower_map"):
            validate_doc(doc)

    def test_duplicate_camera_ids(self):
        doc = load_doc("ur5_kinect4")
        doc["cameras"][1]["id"] = doc["cameras"][0]["id"]
        with pytest.raises(ValidationError, match="duplicate"):
            validate_doc(doc)

    def test_master_delay_must_be_zero(self):
        doc = load_doc("ur5_kinect4")
        doc["cameras"][0]["delay_us"] = 10.0
        with pytest.raises(ValidationError, match="delay"):
            validate_doc(doc)

    def test_inverted_spawn_region(self):
        doc = load_doc("ur5_kinect4")
        doc["scene"]["spawn_region"] = [0.1, 0.0, -0.1, 0.1]
        with pytest.raises(ValidationError, match="spawn_region"):
            validate_doc(doc)

    def test_all_violations_collected(self):
        doc = load_doc("ur5_kinect4")
        doc["robot"]["type"] = "unknown_bot"
        doc["cameras"][0]["role"] = "subordinate"
        doc["scene"]["spawn_region"] = [1.0, 1.0, 0.0, 0.0]
        with pytest.raises(ValidationError) as exc:
            validate_doc(doc)
        assert len(exc.value.violations) >= 3

    def test_not_json(self):
        with pytest.raises(ValidationError, match="JSON"):
            parse_and_validate("{nope")

    def test_missing_calibration_entry(self, tmp_path):
        p = tmp_path / "cal.json"
        p.write_text(json.dumps({"cam0": {
            "fx": 100.0, "fy": 100.0, "cx": 10.0, "cy": 10.0,
            "width": 20, "height": 20,
            "position": [0, 0, 1], "orientation": [0, 1, 0, 0]}}))
        with pytest.raises(ValidationError, match="cam1"):
            load_calibration(p, ["cam0", "cam1"])


class TestConfigHash:
    def test_empty_string_is_offset_basis(self):
        assert fnv1a_64(b"") == FNV_OFFSET_BASIS == 0xCBF29CE484222325

    def test_known_vector(self):
        # FNV-1a 64 of "a" per the published algorithm constants.
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C

    def test_key_order_invariance(self):
        doc = load_doc("ur5_kinect4")
        shuffled = dict(reversed(list(doc.items())))
        shuffled["robot"] = dict(reversed(list(doc["robot"].items())))
        assert config_hash(doc) == config_hash(shuffled)
        assert canonical_json(doc) == canonical_json(shuffled)

    def test_hash_matches_loaded_config(self):
        doc = load_doc("ur5_kinect4")
        cfg = load_config(CONFIG_DIR / "ur5_kinect4.json")
        assert config_hash(cfg) == config_hash(doc)
        assert config_hash_hex(cfg) == f"{config_hash(doc):016x}"

    def test_100_single_field_mutations_change_hash(self):
        doc = load_doc("ur5_kinect4")
        base = config_hash(doc)
        leaves = []

        def walk(node, path):
            if isinstance(node, dict):
                for k, v in node.items():
                    walk(v, path + [k])
            elif isinstance(node, list):
                for i, v in enumerate(node):
                    walk(v, path + [i])
            else:
                leaves.append(path)

        walk(doc, [])
        rng = np.random.Generator(np.random.PCG64(5))
        for trial in range(100):
            mutated = copy.deepcopy(doc)
            path = leaves[int(rng.integers(len(leaves)))]
            node = mutated
            for p in path[:-1]:
                node = node[p]
            old = node[path[-1]]
            if isinstance(old, bool):
                node[path[-1]] = not old
            elif isinstance(old, (int, float)):
                node[path[-1]] = old + float(rng.uniform(0.5, 1.5))
            else:
                node[path[-1]] = str(old) + "_x"
            assert config_hash(mutated) != base, f"mutation at {path} left hash unchanged"


class TestBuild:
    def test_rebuild_same_hash_and_sequential_platforms(self):
        hashes = []
        for name in ("ur5_kinect4", "bimanual_rs3", "ur5_kinect4"):
            cfg = load_config(CONFIG_DIR / f"{name}.json")
            wc = build(cfg, bind_port=False)
            wc.scheduler.run_until(0.2)
            hashes.append(wc.hash_hex)
            wc.shutdown()
            wc.shutdown()  # idempotent
        assert hashes[0] == hashes[2]
        assert hashes[0] != hashes[1]

    def test_missing_calibration_file_names_path(self, tmp_path):
        doc = load_doc("ur5_kinect4")
        doc["calibration_path"] = "does_not_exist.json"
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(doc))
        cfg = load_config(p)
        with pytest.raises(StartupError, match="does_not_exist.json"):
            build(cfg, bind_port=False)

    def test_port_in_use(self):
        cfg = load_config(CONFIG_DIR / "ur5_kinect4.json")
        blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        blocker.bind(("127.0.0.1", cfg.robot.port))
        blocker.listen(1)
        try:
            with pytest.raises(StartupError, match=str(cfg.robot.port)):
                build(cfg)
        finally:
            blocker.close()

    def test_build_binds_and_releases_port(self):
        cfg = load_config(CONFIG_DIR / "ur5_kinect4.json")
        wc = build(cfg)
        try:
            assert wc.server_socket.getsockname()[1] == cfg.robot.port
        finally:
            wc.shutdown()
        probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind(("127.0.0.1", cfg.robot.port))
        probe.close()

    def test_scene_spawned_inside_region(self):
        from workcell.sim.scene import spawn_block

        cfg = load_config(CONFIG_DIR / "bimanual_rs3.json")
        wc = build(cfg, bind_port=False)
        x0, y0, x1, y1 = cfg.scene.spawn_region
        for seed in range(10):
            s = spawn_block(wc.node.scene, seed)
            assert x0 <= s.block_center[0] <= x1
            assert y0 <= s.block_center[1] <= y1
        wc.shutdown()
