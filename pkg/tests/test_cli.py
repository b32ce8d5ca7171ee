import csv
import re

import pytest
import yaml

from mdfn import cli
from mdfn.io import OUTPUT_ENV

NUMBER = re.compile(r"^-?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$|^(nan|-?inf)$")
UNIT_SUFFIX = re.compile(r"_(s|min|V|A|mA|m|um|g|mg|mol_m3|mAh_cm2|Wh_g|1)$")
# label columns and quantities that are dimensionless by definition
UNITLESS = {"step_index", "snapshot", "mode", "design", "direction", "termination", "status", "message",
            "case_id", "chemistries", "stage", "accepted", "c_rate", "retention", "soc_at_cutoff",
            "depletion_flag", "override_nmc_fraction"}
DIMENSIONLESS = re.compile(r"^(override_)?(eps_e|eps_cbd|b)_p\d+$")

FAST = "solver: {nodes_per_region: 10, radial_shells: 6}\noutput: {snapshot_count: 2}\n"


def strict_csv(path):
    """Parse a bundle CSV as strictly as a downstream tool would."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        assert first.startswith("# mdfn ") and "config_hash=" in first
        rows = list(csv.reader(fh, strict=True))
    header, body = rows[0], rows[1:]
    assert len(set(header)) == len(header)
    for row in body:
        assert len(row) == len(header), f"{path.name}: ragged row"
    for j, name in enumerate(header):
        values = [r[j] for r in body if r[j] != ""]
        numeric = values and all(NUMBER.match(v) for v in values)
        if numeric:
            assert UNIT_SUFFIX.search(name) or name in UNITLESS or DIMENSIONLESS.match(name), \
                f"{path.name}: column {name!r} has no unit"
        for v in values:
            if re.match(r"^-?\d", v):
                assert "," not in v and " " not in v
    return first, header, body


def run(argv, capsys=None):
    code = cli.main(argv)
    err = capsys.readouterr().err if capsys else ""
    return code, err


def write_config(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def summary(directory):
    return yaml.safe_load((directory / "summary.yaml").read_text())


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = cli.main(["simulate", "--preset", "default-bilayer", "--c-rate", "3", "--out", str(out)])
    return code, out


class TestSimulate:
    def test_default_bilayer_3c(self, simulated):
        code, out = simulated
        assert code == 0
        s = summary(out)
        assert s["exit_code"] == 0 and s["command"] == "simulate"
        assert s["result"]["achieved_capacity_mAh_cm2"] == pytest.approx(3.19, rel=0.05)

    def test_bundle_contents(self, simulated):
        _, out = simulated
        names = {p.name for p in out.iterdir()}
        assert {"voltage.csv", "probes_step0.csv", "snapshots_step0.csv", "summary.csv",
                "summary.yaml", "diagnostics.log"} <= names
        _, header, _ = strict_csv(out / "probes_step0.csv")
        for loc in ("Sep", "Mid", "CC"):
            assert any(loc in h for h in header)
        _, header, body = strict_csv(out / "snapshots_step0.csv")
        assert len({r[1] for r in body}) == 21

    def test_every_csv_is_strict_and_carries_hash(self, simulated):
        _, out = simulated
        h = summary(out)["config_hash"]
        csvs = sorted(out.glob("*.csv"))
        assert csvs
        for p in csvs:
            first, _, _ = strict_csv(p)
            assert f"config_hash={h}" in first

    def test_specific_capacity_row(self, tmp_path):
        cfg = write_config(tmp_path, "design: {preset: default-bilayer}\n" + FAST)
        assert cli.main(["simulate", "--config", cfg, "--c-rate", "0.05", "--out", str(tmp_path / "o")]) == 0
        _, header, body = strict_csv(tmp_path / "o" / "summary.csv")
        row = dict(zip(header, body[0]))
        assert float(row["retention"]) == 1.0
        assert float(row["achieved_capacity_mAh_cm2"]) == pytest.approx(3.74, rel=0.05)

    def test_discharge_and_snapshot_flag(self, tmp_path):
        cfg = write_config(tmp_path, "design: {preset: nmc-only-72um}\n" + FAST)
        out = tmp_path / "d"
        assert cli.main(["simulate", "--config", cfg, "--c-rate", "1", "--direction", "discharge",
                         "--snapshot-count", "4", "--out", str(out)]) == 0
        s = summary(out)
        assert s["result"]["direction"] == "discharge"
        _, _, body = strict_csv(out / "snapshots_step0.csv")
        assert len({r[1] for r in body}) == 5

    def test_hash_depends_on_run(self, tmp_path):
        cfg = write_config(tmp_path, "design: {preset: nmc-only-72um}\n" + FAST)
        hashes = []
        for rate in ("1", "2", "1"):
            out = tmp_path / f"r{len(hashes)}"
            cli.main(["simulate", "--config", cfg, "--c-rate", rate, "--out", str(out)])
            hashes.append(summary(out)["config_hash"])
        assert hashes[0] == hashes[2] != hashes[1]


class TestExitCodes:
    def test_usage(self, capsys):
        assert run(["simulate", "--bogus"], capsys)[0] == 2
        assert run(["simulate", "--direction", "sideways"], capsys)[0] == 2
        assert run(["simulate", "--preset", "default-bilayer", "--config", "x.yaml"], capsys)[0] == 2
        assert run([], capsys)[0] == 2

    def test_config_errors(self, tmp_path, capsys):
        code, err = run(["simulate", "--config", str(tmp_path / "none.yaml")], capsys)
        assert code == 3 and "cannot read" in err
        bad = write_config(tmp_path, "design:\n  preset: default-bilayer\n  colour: red\n")
        code, err = run(["simulate", "--config", bad, "--out", str(tmp_path / "o")], capsys)
        assert code == 3 and "line 3" in err
        assert run(["simulate", "--preset", "default-bilayer", "--c-rate", "-1"], capsys)[0] == 3
        assert run(["sweep", "--preset", "default-bilayer", "--out", str(tmp_path / "s")], capsys)[0] == 3
        assert summary(tmp_path / "s")["error"]["category"] == "config"

    def test_solver_failure(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "design: {preset: default-bilayer}\n"
                                     "solver: {max_newton: 1, dt_min: 0.05, dt_initial: 0.1}\n"
                                     "protocol: {steps: [{mode: cc-charge, c_rate: 50}], I_1C: 0.00576}\n")
        out = tmp_path / "f"
        code, err = run(["simulate", "--config", cfg, "--out", str(out)], capsys)
        assert code == 4 and "failed" in err
        assert summary(out)["failure"].startswith("step 0")

    def test_infeasible_study(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "design: {preset: optimal-bilayer}\n" + FAST +
                           "study: {kind: ratio, target: 500.0, fractions: [0.5]}\n")
        out = tmp_path / "i"
        code, _ = run(["sweep", "--config", cfg, "--out", str(out)], capsys)
        assert code == 5
        s = summary(out)
        assert s["cases"][0]["status"] == "infeasible" and s["best_case"] is None

    def test_codes_are_distinct(self):
        codes = {cli.EXIT_OK, cli.EXIT_USAGE, cli.EXIT_CONFIG, cli.EXIT_SOLVER, cli.EXIT_INFEASIBLE}
        assert len(codes) == 5


class TestOutputDirectory:
    def test_environment_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        cfg = write_config(tmp_path, "design: {preset: nmc-only-72um}\n" + FAST)
        assert cli.main(["simulate", "--config", cfg, "--c-rate", "2"]) == 0
        assert (tmp_path / "env" / "simulate" / "summary.yaml").exists()

    def test_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        cfg = write_config(tmp_path, "design: {preset: nmc-only-72um}\n"
                                     "solver: {nodes_per_region: 10, radial_shells: 6}\n"
                                     f"output: {{directory: {tmp_path / 'cfg'}, snapshot_count: 1}}\n")
        assert cli.main(["simulate", "--config", cfg, "--c-rate", "2"]) == 0
        assert (tmp_path / "cfg" / "summary.yaml").exists()
        assert cli.main(["simulate", "--config", cfg, "--c-rate", "2", "--out", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "summary.yaml").exists()
        assert not (tmp_path / "env").exists()


class TestStudies:
    def test_cycle_preset(self, tmp_path):
        cfg = write_config(tmp_path, "design: {preset: default-bilayer}\n" + FAST)
        out = tmp_path / "c"
        assert cli.main(["cycle", "--config", cfg, "--protocol", "3c-3c", "--out", str(out)]) == 0
        s = summary(out)
        assert s["protocol"] == "3c-3c" and len(s["capacities_mAh_cm2"]) == 4
        _, _, body = strict_csv(out / "steps.csv")
        assert len(body) == 4
        assert cli.main(["cycle", "--config", cfg, "--protocol", "nope", "--out", str(out)]) == 3

    def test_thickness_sweep_threads(self, tmp_path):
        cfg = write_config(tmp_path, "design: {preset: default-bilayer}\n" + FAST +
                           "study: {kind: thickness, totals: [6.0e-5, 1.12e-4]}\n")
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        assert cli.main(["sweep", "--config", cfg, "--out", str(out1)]) == 0
        assert cli.main(["sweep", "--config", cfg, "--threads", "2", "--out", str(out2)]) == 0
        b1 = strict_csv(out1 / "cases.csv")[2]
        b2 = strict_csv(out2 / "cases.csv")[2]
        assert b1 == b2 and len(b1) == 2

    def test_benchmark(self, tmp_path):
        cfg = write_config(tmp_path, "design: {preset: default-bilayer}\n" + FAST +
                           "study: {kind: benchmark, target: 3.74, designs: [default-bilayer, nmc-only-72um]}\n")
        out = tmp_path / "b"
        assert cli.main(["benchmark", "--config", cfg, "--out", str(out)]) == 0
        _, header, body = strict_csv(out / "benchmark.csv")
        rows = [dict(zip(header, r)) for r in body]
        assert [r["design"] for r in rows] == ["default-bilayer", "nmc-only-72um"]
        for r in rows:
            assert float(r["specific_capacity_mAh_cm2"]) == pytest.approx(3.74, rel=0.01)

    def test_optimize_small(self, tmp_path):
        cfg = write_config(tmp_path, "design: {preset: default-bilayer}\n" + FAST +
                           "study: {kind: optimize, target: 3.74, grids: {b_p2: [1.8]}, "
                           "totals: [8.8e-5], fractions: [0.5]}\n")
        out = tmp_path / "o"
        assert cli.main(["optimize", "--config", cfg, "--out", str(out)]) == 0
        s = summary(out)
        assert s["design"]["b_p2"] in (1.8, 2.1)
        assert 0 < s["objective_retention"] <= 1
        strict_csv(out / "trace.csv")
        strict_csv(out / "optimum.csv")
