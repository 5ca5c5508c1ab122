"""Smoke test for the supercell_py extension module.

Build first, e.g. `pip install --no-build-isolation -e crates/python`.
"""

import csv
import io
import json
import tempfile

import supercell_py as sc


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def main():
    assert sc.canonicalize("10/3/2020", "date") == "2020-10-03"
    assert sc.canonicalize("1,234.50", "number") == "1234.5"
    assert sc.canonicalize("NY", "dict:states", [["new york", "NY"]]) == "new york"

    est, exact = sc.jaccard(["alpha", "beta"], ["alpha", "beta"])
    assert est == exact == 1.0

    assert sc.gradient_check("pooled", 1) < 1e-3
    assert sc.gradient_check("birecurrent", 1) < 1e-3

    with tempfile.TemporaryDirectory() as tmp:
        paths = sc.write_fixtures(tmp, seed=3, days=2)
        train, test = paths["covid-train"], paths["covid-test"]
        counts = sc.decompose(train)
        assert counts == {"jhu": 200, "mobility": 100}, counts

        config = json.dumps({"buckets": 512, "dim": 8, "hidden": 12, "lr": 0.02, "epochs": 30, "seed": 3})
        model = sc.train(train, config)
        matching, total = model.agreement(train)
        assert matching == total, (matching, total)

        table = rows(model.integrate(train))
        assert table == rows(sc.oracle(train))
        assert table[0][:3] == ["date", "state", "country"]

        keys, attrs, agg = model.predict(["ohio", "us", "2020-10-01"], ["confirmed", "deaths"], ["10", "1"], "jhu")
        assert keys == ["2020-10-01", "ohio", "us"], keys
        assert attrs == ["confirmed", "deaths"], attrs

        path = f"{tmp}/model.bin"
        model.save(path)
        again = sc.Model.load(path)
        assert again.size_bytes() == model.size_bytes()
        m, t = again.agreement(test)
        print(f"held-out agreement {m}/{t}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
