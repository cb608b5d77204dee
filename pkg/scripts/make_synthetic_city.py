"""Regenerate the bundled synthetic-city fixture (deterministic)."""

from pathlib import Path

import numpy as np

from sepp import io as sio
from sepp.geometry import CovariateMap, GridSpec
from sepp.model import ModelParams
from sepp.simulate import SimConfig, gp_covariate_draw, simulate
from sepp.studies import intercept_for_count

OUT = Path(__file__).resolve().parents[1] / "src" / "sepp" / "data" / "synthetic_city"
T, T_TEST = 730.0, 90.0
INDICATOR_RATE = 5e-8  # disorder events per square foot per day


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240601)
    grid = GridSpec(0.0, 0.0, 100.0, 100.0, 40, 40)
    z = np.vstack([gp_covariate_draw(grid, 600.0, 1.0, rng) for _ in range(2)])
    z = (z - z.mean(axis=1, keepdims=True)) / z.std(axis=1, keepdims=True)
    cov = CovariateMap.from_grid(grid, np.round(z.T, 6), names=("commercial", "vacancy"))
    sio.write_grid_covariates(OUT / "covariates.csv", cov)
    b0 = intercept_for_count(cov, [0.8, -0.5], T, 1500.0)
    params = ModelParams([b0, 0.8, -0.5], {"target": 0.45, "disorder": 0.1}, 7.0, 150.0 ** 2)
    sim_config = {"covariates": "covariates.csv", "params": params.to_dict(), "T": T, "seed": 7,
                  "time_unit": "days", "length_unit": "feet", "epoch": "2020-01-01",
                  "indicator_rates": {"disorder": INDICATOR_RATE}, "exterior": "drop"}
    sio.write_json(OUT / "sim_config.json", sim_config)
    test_config = {**sim_config, "T": T_TEST, "seed": 8, "epoch": "2022-01-01"}
    sio.write_json(OUT / "sim_test_config.json", test_config)
    meta = sio.EventMeta(time_unit="days", length_unit="feet")
    for name, cfg in (("events.csv", sim_config), ("test_events.csv", test_config)):
        sim = simulate(SimConfig(cov, params, cfg["T"], seed=cfg["seed"], indicator_rates=cfg["indicator_rates"]))
        sio.write_events(OUT / name, sim.catalog, sio.EventMeta(**{**meta.to_dict(), "epoch": cfg["epoch"]}))
        print(name, sim.catalog.n, int(sim.catalog.is_target.sum()))
    sio.write_json(OUT / "fit_config.json", {"interior": {"space_buffer": 600.0, "time_buffer": 60.0},
                                             "ll_tol": 1e-6, "param_tol": 1e-5,
                                             "covariance": ["rathbun", "hessian"]})


if __name__ == "__main__":
    main()
