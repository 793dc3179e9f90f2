"""Smoke test for the pykdmhe extension on the small linear preset."""

import math
import os
import tempfile

import pykdmhe


def main():
    config = pykdmhe.Config.preset("linear")
    assert config.subsystems == 2 and config.n_states == 6
    assert pykdmhe.Config.from_toml(config.to_toml()).hash() == config.hash()

    data = pykdmhe.simulate(config)
    assert len(data.train) == 500 and len(data.test) == 200

    model = pykdmhe.identify(config, data.train)
    print(model)

    report = pykdmhe.validate(model, data.validate)
    assert report.rmse < 1e-10, report.rmse

    est = pykdmhe.estimate(config, model, data.test)
    assert math.isfinite(est.rmse) and est.rmse < 0.05, est.rmse
    assert est.min_covariance_eigenvalue > 0.0
    print(f"validation rmse {report.rmse:.3e}, estimation rmse {est.rmse:.3e}")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        again = pykdmhe.Model.load(path)
        assert again.global_a() == model.global_a()
        traj = os.path.join(tmp, "test.csv")
        data.test.save(traj)
        assert pykdmhe.Trajectory.load(traj).states == data.test.states

    try:
        pykdmhe.Config.preset("missing")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
