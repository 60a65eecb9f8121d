import json
import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rtjoint.chains import summarize_series
from rtjoint.cli import (
    InputError,
    emit_report,
    load_matrix_csv,
    main,
    simulate_main,
    write_matrix_csv,
)


def _write(path, text):
    path.write_text(text)
    return path


class TestLoad:
    def test_missing_tokens_and_header(self, tmp_path):
        f = _write(tmp_path / "y.csv", "i1,i2\n1,NA\n0,\n")
        m = load_matrix_csv(f, "binary")
        assert m.shape == (2, 2) and np.isnan(m[0, 1]) and np.isnan(m[1, 1])

    def test_log_transform(self, tmp_path):
        f = _write(tmp_path / "rt.csv", f"{math.e},{math.e ** 2}\n")
        np.testing.assert_allclose(load_matrix_csv(f, log_transform=True), [[1.0, 2.0]])

    def test_zero_rt_with_log(self, tmp_path):
        f = _write(tmp_path / "rt.csv", "3.0,0\n")
        with pytest.raises(InputError, match="recode"):
            load_matrix_csv(f, log_transform=True)

    def test_non_binary(self, tmp_path):
        f = _write(tmp_path / "y.csv", "1,0\n2,1\n")
        with pytest.raises(InputError, match="row 2, column 1"):
            load_matrix_csv(f, "binary")

    def test_ragged(self, tmp_path):
        f = _write(tmp_path / "y.csv", "1,0\n1\n")
        with pytest.raises(InputError, match="ragged"):
            load_matrix_csv(f)

    def test_non_numeric(self, tmp_path):
        f = _write(tmp_path / "y.csv", "1,0\n1,x\n")
        with pytest.raises(InputError, match="non-numeric"):
            load_matrix_csv(f)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert simulate_main(["--n", "60", "--k", "6", "--seed", "3", "--out", str(root)]) == 0
    return root


class TestJob:
    def test_minimal_run(self, dataset, tmp_path):
        out = tmp_path / "out"
        rc = main(["--y", str(dataset / "Y.csv"), "--rt", str(dataset / "RT.csv"),
                   "--xg", "120", "--seed", "1", "--out", str(out)])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["ident"] == 2 and manifest["config"]["burnin"] == 10
        assert len(manifest["input_sha256"]["y"]) == 64
        header = (out / "chain_parameters.csv").read_text().splitlines()[0].split(",")
        assert header[0] == "iteration" and "a[1]" in header
        assert "Residual Analysis" not in (out / "summary.txt").read_text()

    def test_manifest_rerun_is_byte_identical(self, dataset, tmp_path):
        first = tmp_path / "a"
        main(["--y", str(dataset / "Y.csv"), "--rt", str(dataset / "RT.csv"), "--xg", "80",
              "--residual", "--xgresid", "40", "--out", str(first)])
        second = tmp_path / "b"
        assert main(["--from-manifest", str(first / "manifest.json"), "--out", str(second)]) == 0
        for name in ("chain_parameters.csv", "chain_persons.csv", "fit.json",
                     "summary.txt", "summary.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_config_error_writes_nothing(self, dataset, tmp_path, capsys):
        out = tmp_path / "bad"
        rc = main(["--y", str(dataset / "Y.csv"), "--rt", str(dataset / "RT.csv"),
                   "--xg", "100", "--residual", "--xgresid", "1000", "--out", str(out)])
        assert rc == 2 and not out.exists()
        assert "xgresid" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["--y", str(tmp_path / "nope.csv"), "--rt", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2 and "does not exist" in capsys.readouterr().err

    def test_quadratic_with_item_order(self, dataset, tmp_path):
        order = tmp_path / "order.csv"
        order.write_text(",".join(str(j) for j in range(1, 7)) + "\n")
        out = tmp_path / "q"
        rc = main(["--y", str(dataset / "Y.csv"), "--rt", str(dataset / "RT.csv"), "--xg", "30",
                   "--speed-model", "quadratic", "--item-order", str(order), "--seed", "2",
                   "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary["Sigma_P"]) == 4

    def test_prior_override(self, dataset, tmp_path):
        priors = tmp_path / "priors.json"
        priors.write_text(json.dumps({"item": {"nu_i": 8, "sigma2_shape": 2.0},
                                      "population": {"nu_p": 6}}))
        out = tmp_path / "p"
        rc = main(["--y", str(dataset / "Y.csv"), "--rt", str(dataset / "RT.csv"), "--xg", "20",
                   "--priors", str(priors), "--seed", "5", "--out", str(out)])
        assert rc == 0
        assert "priors" in json.loads((out / "manifest.json").read_text())["input_sha256"]

    def test_bad_prior_field(self, dataset, tmp_path, capsys):
        priors = tmp_path / "priors.json"
        priors.write_text(json.dumps({"item": {"nope": 1}}))
        rc = main(["--y", str(dataset / "Y.csv"), "--rt", str(dataset / "RT.csv"),
                   "--priors", str(priors), "--out", str(tmp_path / "o")])
        assert rc == 2 and "nope" in capsys.readouterr().err


class TestRoundTrip:
    @given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 5)),
                  elements=st.one_of(st.just(np.nan),
                                     st.floats(-1e6, 1e6, allow_subnormal=False))))
    @settings(max_examples=40, deadline=None)
    def test_lossless(self, mat):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "m.csv"
            write_matrix_csv(path, mat, [f"c{j}" for j in range(mat.shape[1])])
            back = load_matrix_csv(path)
        np.testing.assert_array_equal(back, mat)


class TestReport:
    def _table(self):
        rng = np.random.default_rng(0)
        series = {f"{p}[1]": rng.normal(size=200) for p in ("a", "b", "phi", "lam", "sigma2")}
        series.update({n: rng.normal(size=200) for n in ("mu_a", "mu_b", "mu_phi", "mu_lam")})
        for i in range(1, 5):
            for j in range(i, 5):
                series[f"Sigma_I[{i},{j}]"] = rng.normal(size=200)
        for i in range(1, 3):
            for j in range(i, 3):
                series[f"Sigma_P[{i},{j}]"] = rng.normal(size=200)
        series["const"] = np.full(200, 1.0)
        return summarize_series(series)

    def test_text_and_structured_agree(self):
        text, data = emit_report(self._table())
        assert "mu_a" in text and "Sigma_I" in text and "Sigma_P" in text
        eap = data["items"][0]["b"]["EAP"]
        assert f"{eap:.3f}" in text
        assert "residual_analysis" not in data

    def test_json_has_no_nan(self):
        _, data = emit_report(self._table())
        text = json.dumps(data, allow_nan=False)
        assert "NaN" not in text
