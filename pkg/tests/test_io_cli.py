import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vnnkit import io
from vnnkit.cli import main
from vnnkit.cohort import CohortTable
from vnnkit.covariance import FeatureMatrix
from vnnkit.errors import ConfigError, IngestError

from conftest import FIXTURES


def run(argv):
    return main([str(a) for a in argv])


def summary(out, command):
    return json.loads((out / f"{command}.summary.json").read_text())


class TestFormatting:
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, v):
        assert float(io.fmt(v)) == v

    def test_cells(self):
        assert io.fmt(float("nan")) == ""
        assert io.fmt(np.int64(3)) == "3"
        assert io.fmt(True) == "1"
        assert io.fmt(0.1) == "0.10000000000000001"
        assert io.fmt(None) == ""


class TestIngest:
    def test_round_trip(self, tmp_path):
        cohort = CohortTable(("a", "b"), [[1.0 / 3, 2e-300], [np.pi, -7.25]], ("r1", "r2"), [60.5, 71.0],
                             ["F", "M"], ["HC", "D"], [np.nan, 1.25])
        io.write_features(tmp_path / "f.csv", cohort.subject_ids, FeatureMatrix(cohort.features,
                                                                                 cohort.feature_names))
        io.write_phenotype(tmp_path / "p.csv", cohort)
        back = io.ingest_cohort(tmp_path / "f.csv", tmp_path / "p.csv", ("age", "sex", "diagnosis")).cohort
        np.testing.assert_array_equal(back.features, cohort.features)
        np.testing.assert_array_equal(back.age, cohort.age)
        np.testing.assert_array_equal(back.severity, cohort.severity)
        assert back.subject_ids == cohort.subject_ids and back.feature_names == cohort.feature_names
        assert list(back.sex) == ["F", "M"] and list(back.diagnosis) == ["HC", "D"]

    def test_duplicate_id(self):
        with pytest.raises(IngestError, match="s01"):
            io.read_features(FIXTURES / "features_duplicate_id.csv")

    def test_missing_required_column(self):
        with pytest.raises(IngestError, match="'sex'"):
            io.read_phenotype(FIXTURES / "phenotype_missing_sex.csv", ("age", "sex"))
        assert io.read_phenotype(FIXTURES / "phenotype_missing_sex.csv").ids[0] == "s01"

    def test_bad_cells(self, tmp_path):
        (tmp_path / "f.csv").write_text("subject_id,r1\ns1,abc\n")
        with pytest.raises(IngestError, match=r"f.csv:2:2"):
            io.read_features(tmp_path / "f.csv")
        (tmp_path / "g.csv").write_text("subject_id,r1\ns1,inf\n")
        with pytest.raises(IngestError, match="non-finite"):
            io.read_features(tmp_path / "g.csv")
        (tmp_path / "h.csv").write_text("subject_id,r1\ns1,1,2\n")
        with pytest.raises(IngestError, match="columns"):
            io.read_features(tmp_path / "h.csv")
        (tmp_path / "p.csv").write_text("subject_id,age,sex\ns1,60,X\n")
        with pytest.raises(IngestError, match="sex"):
            io.read_phenotype(tmp_path / "p.csv")
        with pytest.raises(IngestError, match="not found"):
            io.read_features(tmp_path / "missing.csv")

    def test_join_reports_unmatched(self, tmp_path):
        ids, feats = io.read_features(FIXTURES / "features_small.csv")
        (tmp_path / "p.csv").write_text("subject_id,age\ns01,60\ns02,61\ns99,70\n")
        join = io.join_cohort(ids, feats, io.read_phenotype(tmp_path / "p.csv"))
        assert join.cohort.subject_ids == ("s01", "s02")
        assert join.only_in_features == ["s03", "s04"] and join.only_in_phenotype == ["s99"]


class TestConfigAndOutput:
    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"epochs": 3, "bogus": 1}')
        with pytest.raises(ConfigError, match="bogus"):
            io.load_config(tmp_path / "c.json", {"epochs"})

    def test_not_an_object(self, tmp_path):
        (tmp_path / "c.json").write_text("[1]")
        with pytest.raises(ConfigError):
            io.load_config(tmp_path / "c.json", {"epochs"})

    def test_output_precedence(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv(io.OUT_ENV, str(tmp_path / "env"))
        assert io.resolve_output_dir(str(tmp_path / "flag")) == tmp_path / "flag"
        assert io.resolve_output_dir(None) == tmp_path / "env"
        monkeypatch.delenv(io.OUT_ENV)
        assert io.resolve_output_dir(None).resolve() == (tmp_path / io.DEFAULT_OUT).resolve()
        assert (tmp_path / "flag").is_dir() and (tmp_path / "env").is_dir()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, model = root / "data", root / "model"
    assert run(["synth", "--m", 16, "--n", 200, "--seed", 3, "--out", data]) == 0
    assert run(["train", "--features", data / "features.csv", "--phenotype", data / "phenotype.csv",
                "--epochs", 20, "--seed", 1, "--out", model]) == 0
    return root, data, model


class TestCli:
    def test_synth_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run(["synth", "--graphon", "cosine2", "--m", 64, "--n", 500, "--seed", 7,
                        "--out", tmp_path / d]) == 0
        for name in ("features.csv", "phenotype.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_synth_brainage(self, tmp_path):
        assert run(["synth", "--kind", "brainage", "--m", 12, "--n-hc", 30, "--n-d", 10, "--out", tmp_path]) == 0
        planted = json.loads((tmp_path / "planted.json").read_text())
        assert len(planted["regions"]) == 10
        pheno = io.read_phenotype(tmp_path / "phenotype.csv", ("age", "sex", "diagnosis"))
        assert list(pheno.diagnosis).count("D") == 10

    def test_predict_matches_training_fit(self, trained, tmp_path):
        _, data, model = trained
        assert run(["predict", "--model", model / "model.json", "--features", data / "features.csv",
                    "--phenotype", data / "phenotype.csv", "--out", tmp_path]) == 0
        assert summary(tmp_path, "predict")["mae"] == summary(model, "train")["full_mae"]
        rows = (tmp_path / "predictions.csv").read_text().splitlines()
        assert rows[0] == "subject_id,prediction,age" and len(rows) == 201

    def test_predict_dimension_mismatch(self, trained, tmp_path, capsys):
        _, _, model = trained
        assert run(["predict", "--model", model / "model.json", "--features", FIXTURES / "features_small.csv",
                    "--out", tmp_path]) == 1
        assert "2 columns" in capsys.readouterr().err

    def test_transfer_to_larger_resolution(self, trained, tmp_path):
        root, _, model = trained
        assert run(["synth", "--m", 64, "--n", 300, "--seed", 4, "--out", root / "big"]) == 0
        assert run(["transfer", "--model", model / "model.json", "--features", root / "big" / "features.csv",
                    "--out", tmp_path]) == 0
        s = summary(tmp_path, "transfer")
        assert s["m"] == 64 and s["source_digest"] != s["target_digest"]
        readouts = np.loadtxt(tmp_path / "transfer.csv", delimiter=",", skiprows=1, usecols=1)
        assert readouts.shape == (300,) and np.all(np.isfinite(readouts))

    def test_duplicate_id_exit_code(self, tmp_path, capsys):
        assert run(["train", "--features", FIXTURES / "features_duplicate_id.csv",
                    "--phenotype", FIXTURES / "phenotype_missing_sex.csv", "--out", tmp_path]) == 1
        assert "s01" in capsys.readouterr().err

    def test_brainage_requires_sex(self, tmp_path, capsys):
        assert run(["brainage", "--features", FIXTURES / "features_small.csv",
                    "--phenotype", FIXTURES / "phenotype_missing_sex.csv", "--out", tmp_path]) == 1
        assert "'sex'" in capsys.readouterr().err

    def test_future_model_version(self, tmp_path, capsys):
        assert run(["predict", "--model", FIXTURES / "model_future_version.json",
                    "--features", FIXTURES / "features_small.csv", "--out", tmp_path]) == 1
        assert "version" in capsys.readouterr().err

    def test_config_file(self, tmp_path):
        (tmp_path / "c.json").write_text('{"m": 6, "n": 20}')
        assert run(["synth", "--config", tmp_path / "c.json", "--n", 30, "--out", tmp_path / "o"]) == 0
        s = summary(tmp_path / "o", "synth")
        assert s["m"] == 6 and s["n"] == 30  # explicit flag wins over config

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text('{"bogus": 1}')
        assert run(["synth", "--config", tmp_path / "c.json", "--out", tmp_path]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(io.OUT_ENV, str(tmp_path / "env"))
        assert run(["synth", "--m", 4, "--n", 10]) == 0
        assert (tmp_path / "env" / "features.csv").exists()

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--m", "x"])
        assert exc.value.code == 2

    def test_cutdist(self, tmp_path):
        assert run(["cutdist", "--graphon", "cosine1", "--sizes", "2,4,8", "--cross-graphon", "oscillating",
                    "--out", tmp_path]) == 0
        s = json.loads((tmp_path / "cutdist.json").read_text())
        assert len(s["distances"]) == 2 and set(s["cross_distances"]) == {"2", "4", "8"}

    def test_sweeps(self, trained, tmp_path):
        _, _, model = trained
        assert run(["sweep-stability", "--model", model / "model.json", "--m", 16, "--counts", "40,80,160,320",
                    "--trials", 3, "--out", tmp_path / "s"]) == 0
        assert len((tmp_path / "s" / "stability.csv").read_text().splitlines()) == 5
        assert run(["sweep-transfer", "--model", model / "model.json", "--sizes", "16,32,64",
                    "--out", tmp_path / "t"]) == 0
        assert len(json.loads((tmp_path / "t" / "transfer.json").read_text())["median"]) == 2

    def test_brainage_command(self, tmp_path):
        assert run(["synth", "--kind", "brainage", "--m", 8, "--n-hc", 60, "--n-d", 30, "--n-planted", 3, "--out", tmp_path]) == 0
        assert run(["brainage", "--features", tmp_path / "features.csv", "--phenotype", tmp_path / "phenotype.csv",
                    "--nonlinearity", "identity", "--epochs", 10, "--ensemble-size", 2, "--out", tmp_path]) == 0
        s = summary(tmp_path, "brainage")
        assert s["members"] == 2 and s["cohort"]["D"]["n"] == 30
        assert len((tmp_path / "regions.csv").read_text().splitlines()) == 9

    def test_inspect(self, capsys):
        assert run(["inspect"]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["architectures"]["small"]["parameters"] == 48  # 4*2 + 16*2 + 4*2 taps
        assert "quadratic" in info["signals"]

    def test_console_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "vnnkit.cli", "inspect", "--graphon", "cosine1"],
                             capture_output=True, text=True, check=True)
        assert json.loads(res.stdout)["eigenvalues"] == [0.5, 0.25]
