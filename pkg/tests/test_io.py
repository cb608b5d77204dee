import json

import numpy as np
import pytest
from shapely.geometry import box, mapping

from sepp.errors import InputError
from sepp.geometry import CovariateMap, Domain, GridSpec
from sepp.io import (EventMeta, load_covariates, natural_units, read_events, read_geojson_covariates,
                     read_grid_covariates, write_events, write_grid_covariates)
from sepp.model import ModelParams


def test_event_round_trip(tmp_path, cov, catalog):
    path = tmp_path / "ev.csv"
    write_events(path, catalog, EventMeta(time_unit="hours"))
    back, meta = read_events(path, cov.domain)
    np.testing.assert_array_equal(back.t, catalog.t)
    np.testing.assert_array_equal(back.x, catalog.x)
    np.testing.assert_array_equal(back.codes, catalog.codes)
    assert meta.time_unit == "hours" and meta.T == catalog.T and back.marks == catalog.marks


def _write(tmp_path, body, meta=None):
    p = tmp_path / "ev.csv"
    p.write_text(body)
    if meta is not None:
        (tmp_path / "ev.meta.json").write_text(json.dumps(meta))
    return p


@pytest.mark.parametrize("body, line, fragment", [
    ("t,x,y\n1,2,3\n2,abc,3\n", 3, "not a number"),
    ("t,x,y\n1,2,3\n2,2\n", 3, "expected 3 fields"),
    ("t,x,y,mark\n1,2,3,target\n2,2,3,burglary\n", 3, "undeclared mark"),
    ("t,x,y\n1,2,3\n12,2,3\n", 3, "outside [0, 10"),
    ("t,x,y\n1,2,3\n1,2,3\n2,99,3\n", 4, "outside the covariate domain"),
    ("t,y,x\n1,2,3\n", 1, "header"),
    ("t,x,y\n1,nan,3\n", 2, "finite"),
])
def test_malformed_events_report_line(tmp_path, body, line, fragment):
    p = _write(tmp_path, body, {"T": 10.0})
    with pytest.raises(InputError) as info:
        read_events(p, Domain.rectangle(0, 0, 50, 50))
    assert info.value.line == line
    assert fragment in str(info.value)


def test_missing_T_and_unknown_meta_key(tmp_path):
    p = _write(tmp_path, "t,x,y\n1,2,3\n")
    with pytest.raises(InputError, match="T"):
        read_events(p, Domain.rectangle(0, 0, 5, 5))
    p = _write(tmp_path, "t,x,y\n1,2,3\n", {"T": 5, "colour": "red"})
    with pytest.raises(InputError, match="unknown event metadata"):
        read_events(p, Domain.rectangle(0, 0, 5, 5))


def test_grid_round_trip(tmp_path, cov):
    p = tmp_path / "cov.csv"
    write_grid_covariates(p, cov)
    back = load_covariates(p)
    np.testing.assert_array_equal(back.design, cov.design)
    assert back.names == cov.names and back.grid == cov.grid


@pytest.mark.parametrize("text, fragment", [
    ("#origin_x=0\n#origin_y=0\n#cell_dx=1\n#cell_dy=1\n#ncols=2\n#nrows=1\na\n1\n", "expected 2 cell rows"),
    ("#origin_x=0\n#origin_y=0\n#cell_dx=1\n#ncols=2\n#nrows=1\na\n1\n2\n", "missing"),
    ("#origin_x=0\n#origin_y=0\n#cell_dx=1\n#cell_dy=1\n#ncols=2.5\n#nrows=1\na\n1\n2\n", "positive integer"),
    ("#bogus=1\n", "unknown grid key"),
    ("#origin_x=0\n#origin_y=0\n#cell_dx=1\n#cell_dy=1\n#ncols=2\n#nrows=1\na,b\n1,2\n3\n", "expected 2 fields"),
    ("#origin_x=0\n#origin_y=0\n#cell_dx=1\n#cell_dy=1\n#ncols=1\n#nrows=1\nintercept\n1\n", "intercept"),
])
def test_grid_csv_errors(tmp_path, text, fragment):
    p = tmp_path / "cov.csv"
    p.write_text(text)
    with pytest.raises(InputError, match=fragment):
        read_grid_covariates(p)


def _geojson(tmp_path, polys, values):
    doc = {"type": "FeatureCollection",
           "features": [{"type": "Feature", "geometry": mapping(p), "properties": {"z": v}}
                        for p, v in zip(polys, values)]}
    p = tmp_path / "cov.geojson"
    p.write_text(json.dumps(doc))
    return p


def test_geojson_tiling(tmp_path):
    good = read_geojson_covariates(_geojson(tmp_path, [box(0, 0, 1, 1), box(1, 0, 3, 1)], [0.5, -1.0]))
    np.testing.assert_allclose(good.areas, [1.0, 2.0])
    assert good.names[1:] == ("z",) or list(good.names[1:]) == ["z"]
    with pytest.raises(InputError):
        read_geojson_covariates(_geojson(tmp_path, [box(0, 0, 2, 1), box(1, 0, 3, 1)], [0.5, -1.0]))


def test_unknown_covariate_suffix(tmp_path):
    with pytest.raises(InputError, match="unrecognised"):
        load_covariates(tmp_path / "cov.shp")


def test_natural_units():
    p = ModelParams([0.0], {"target": 0.1}, omega=48.0, sigma2=100.0)
    out = natural_units(p, EventMeta(time_unit="hours", length_unit="meters"))
    assert out["omega_days"] == pytest.approx(2.0)
    assert out["sigma_feet"] == pytest.approx(10 / 0.3048)
