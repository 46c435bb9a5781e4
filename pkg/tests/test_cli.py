#!/usr/bin/env python3
"""
Test script for the command-line surface and run configuration
"""
import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

import json
import os
import tempfile

from app import main
from core.config_manager import ConfigManager
from core.errors import ConfigError
from utils.output import read_csv

P0 = dict(r=0.02, sigma=0.2, aPrime=-0.10, a=0.05, b=0.15, bPrime=0.30,
          delta=0.30, alpha=0.5, beta=0.1, eta=1.0, w=5.0)


def write_config(directory: str, data, name: str = "run.json") -> str:
    path = os.path.join(directory, name)
    with open(path, 'w') as f:
        json.dump(data, f)
    return path


def read_json(path: str):
    with open(path, 'r') as f:
        return json.load(f)


def test_solve_json():
    print("🧪 Testing solve...")
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "solve.json")
        assert main(["solve", "--out", out]) == 0
        result = read_json(out)
        assert result["header"]["command"] == "solve"
        assert result["header"]["config"]["params"]["aPrime"] == -0.10
        assert result["regime"] == "Standard"
        assert abs(result["pi"] - 23.7526) < 1e-3
        assert abs(result["psi"] - 5.0) < 1e-10
    print("✅ Solve test completed!")


def test_solve_ill_posed_exits_2():
    print("🧪 Testing the ill-posed exit code...")
    with tempfile.TemporaryDirectory() as tmp:
        config = write_config(tmp, dict(P0, delta=0.01))
        assert main(["solve", "--config", config, "--out", os.path.join(tmp, "x.json")]) == 2
    print("✅ Ill-posed test completed!")


def test_solve_abstention():
    print("🧪 Testing solve for overlapping priors...")
    with tempfile.TemporaryDirectory() as tmp:
        config = write_config(tmp, {"params": dict(P0, a=0.1, b=0.1)})
        out = os.path.join(tmp, "solve.json")
        assert main(["solve", "--config", config, "--out", out]) == 0
        result = read_json(out)
        assert result["regime"] == "Abstention-Case2"
        assert result["pi"] == 0.0 and result["initialGulp"] == 5.0
    print("✅ Abstention solve test completed!")

def test_solve_abstention_case1():
    print("🧪 Testing solve for overlapping priors with delta below r + beta...")
    with tempfile.TemporaryDirectory() as tmp:
        config = write_config(tmp, {"params": dict(P0, a=0.1, b=0.1, delta=0.05)})
        out = os.path.join(tmp, "solve.json")
        assert main(["solve", "--config", config, "--out", out]) == 0
        result = read_json(out)
        assert result["regime"] == "Abstention-Case1" and result["pi"] == 0.0
        assert abs(result["phi"] - 25.0) < 1e-8
        assert abs(result["psi"] - 5.0) < 1e-10
    print("✅ Case 1 solve test completed!")


def test_verify_closedform():
    print("🧪 Testing verify closedform and its negative control...")
    with tempfile.TemporaryDirectory() as tmp:
        common = ["--paths", "500", "--dt", "0.0078125", "--horizon", "8"]
        out = os.path.join(tmp, "cf.json")
        assert main(["verify", "closedform", "--plan-k-factor", "1.2", *common, "--out", out]) == 3
        result = read_json(out)
        assert result["check"] == "closedform" and result["pass"] is False
        assert "costDirect" in result["failed"]
    print("✅ Verify closedform test completed!")



def test_simulate_csv():
    print("🧪 Testing simulate...")
    with tempfile.TemporaryDirectory() as tmp:
        first, second = os.path.join(tmp, "a.csv"), os.path.join(tmp, "b.csv")
        argv = ["simulate", "--paths", "3", "--horizon", "1", "--dt", "0.015625", "--seed", "42"]
        assert main(argv + ["--out", first]) == 0
        assert main(argv + ["--out", second]) == 0
        a, b = read_csv(first), read_csv(second)
        assert a["rows"] == b["rows"]
        assert a["columns"] == ["path", "t", "B", "eps_a", "eps_b", "L", "Y", "C", "V"]
        assert a["header"]["command"] == "simulate" and a["header"]["config"]["mc"]["seed"] == 42
        assert len(a["rows"]) == 3 * 65

        col = {name: i for i, name in enumerate(a["columns"])}
        for row in a["rows"]:
            assert row[col["Y"]] >= row[col["L"]] * (1 - 1e-12)
            if row[col["t"]] == 0.0:
                assert abs(row[col["V"]] - 5.0) < 1e-9
                assert row[col["eps_a"]] == 1.0
    print("✅ Simulate test completed!")


def test_usage_errors():
    print("🧪 Testing usage errors...")
    assert main(["bogus"]) == 1
    assert main(["verify", "bogus"]) == 1
    assert main(["solve", "--paths", "many"]) == 1
    print("✅ Usage error test completed!")


def test_bad_config_exits_1():
    print("🧪 Testing invalid configuration files...")
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "x.json")
        config = write_config(tmp, {"params": dict(P0, gamma=1.0)})
        assert main(["solve", "--config", config, "--out", out]) == 1
        config = write_config(tmp, {"mc": {"nPaths": 1}}, name="mc.json")
        assert main(["solve", "--config", config, "--out", out]) == 1
        assert main(["solve", "--config", os.path.join(tmp, "missing.json"), "--out", out]) == 1
    print("✅ Invalid configuration test completed!")


def test_statics_sigma_csv():
    print("🧪 Testing statics sigma...")
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "sigma.csv")
        assert main(["statics", "sigma", "--out", out]) == 0
        data = read_csv(out)
        assert data["columns"] == ["sigma", "pi"]
        assert data["header"]["statics"]["observed"] == "decreasing"
        pis = [row[1] for row in data["rows"]]
        assert len(pis) == 20 and all(b < a for a, b in zip(pis, pis[1:]))

        spread = os.path.join(tmp, "spread.json")
        assert main(["statics", "spread", "--format", "json", "--expect-case", "iii", "--out", spread]) == 0
        assert read_json(spread)["case"] == "iii"
        assert main(["statics", "spread", "--expect-case", "i", "--out", spread]) == 1
    print("✅ Statics test completed!")


def test_gexp_eval():
    print("🧪 Testing gexp eval...")
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "gexp.json")
        assert main(["gexp", "eval", "--lo", "0.1", "--hi", "0.1", "--steps", "4", "--dt", "0.25", "--out", out]) == 0
        result = read_json(out)
        assert abs(result["value"] - 0.1) < 1e-12
        assert abs(result["enumerated"] - result["value"]) < 1e-12
    print("✅ gexp eval test completed!")


def test_verify_commands():
    print("🧪 Testing verify fixedpoint and worstcase...")
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "fp.json")
        assert main(["verify", "fixedpoint", "--steps", "8", "--out", out]) == 0
        result = read_json(out)
        assert result["check"] == "fixedpoint" and result["pass"] is True

        out = os.path.join(tmp, "wc.json")
        argv = ["verify", "worstcase", "--candidates", "3", "--paths", "200", "--dt", "0.03125", "--out", out]
        assert main(argv) == 0
        assert read_json(out)["violations"] == []
    print("✅ Verify command test completed!")


def test_config_manager():
    print("🧪 Testing the configuration manager...")
    manager = ConfigManager()
    assert manager.get_default_params().to_dict() == P0
    config = manager.load_run_config(overrides={"seed": 7, "paths": 10, "format": "csv"},
                                     options={"points": 5})
    assert config.mc.seed == 7 and config.mc.n_paths == 10
    assert config.format == "csv" and config.options == {"points": 5}
    assert config.to_dict()["mc"]["nPaths"] == 10

    with tempfile.TemporaryDirectory() as tmp:
        flat = write_config(tmp, dict(P0, w=7.0))
        assert manager.load_run_config(flat).params.w == 7.0
        try:
            manager.load_run_config(write_config(tmp, [1, 2], name="list.json"))
            raise AssertionError("expected ConfigError")
        except ConfigError:
            print("   ✅ non-object config rejected")
        empty = ConfigManager(tmp)
        try:
            empty.get_default_params()
            raise AssertionError("expected ConfigError")
        except ConfigError:
            print("   ✅ missing defaults reported")
    print("✅ Configuration manager test completed!")


if __name__ == "__main__":
    test_solve_json()
    test_solve_ill_posed_exits_2()
    test_solve_abstention()
    test_solve_abstention_case1()
    test_simulate_csv()
    test_usage_errors()
    test_bad_config_exits_1()
    test_statics_sigma_csv()
    test_gexp_eval()
    test_verify_commands()
    test_verify_closedform()
    test_config_manager()
