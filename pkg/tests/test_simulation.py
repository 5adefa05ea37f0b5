import numpy as np
import pytest

from conftest import SIGMA
from rrr_contact.control import QuinticTrajectory
from rrr_contact.dynamics import DynamicsParams, project_link_wrench
from rrr_contact.errors import SchemaMismatch
from rrr_contact.kinematics import ContactLocation, inverse_kinematics
from rrr_contact.simulation import (CAMPAIGN_CASES, LOG_COLUMNS, ClampSpring, ContactSpec,
                                    PrescribedWrench, RunLog, SensorPipeline, Sensors,
                                    SpringWall, campaign_scenario, default_scenario,
                                    fitted_stiffness, quantize, replay_estimates, run,
                                    summarize, write_summary)


def test_null_scenario_stays_at_rest():
    log = run(default_scenario(duration=0.3, sensors=SensorPipeline(enabled=False)))
    assert len(log) == 300
    assert np.all(log.block("xtrue", ("rx", "ry", "phi")) == 0.0)
    for name in ("mo", "kf", "sosml"):
        assert np.all(log.block(f"F_{name}") == 0.0)
    assert log.events == [] and log.meta["aborted"] is None


def test_null_scenario_with_sensors_has_no_detection():
    log = run(default_scenario(duration=0.3))
    assert log.events == []
    assert np.max(np.abs(log.block("xtrue", ("rx", "ry")))) < 1e-4


def test_runs_are_deterministic():
    sc = default_scenario(duration=0.2, sensors=SensorPipeline(torque_noise_std=0.05), seed=3,
                          trajectory=QuinticTrajectory.point_to_point([0, 0, 0], [0.03, 0, 0], 0.2))
    a, b = run(sc).array, run(sc).array
    assert np.array_equal(a, b, equal_nan=True)
    sc.seed = 4
    assert not np.array_equal(a, run(sc).array, equal_nan=True)


def test_logged_wrench_matches_projection():
    loc = ContactLocation(1, 1, (0.2, 0.0))
    F_link = np.array([3.0, -4.0, 0.0])
    sc = default_scenario(duration=0.15, observers=(), sensors=SensorPipeline(enabled=False),
                          contact=ContactSpec(loc, PrescribedWrench(F_link, onset=0.05)))
    log = run(sc)
    X = log.block("xtrue", ("rx", "ry", "phi"))
    F = log.block("Fext")
    assert np.all(F[:50] == 0.0)
    for k in (50, 90, 149):
        q = inverse_kinematics(X[k], SIGMA, sc.geometry)
        F_ref, _ = project_link_wrench(loc, F_link, q, X[k], sc.geometry)
        assert np.allclose(F[k], F_ref, atol=1e-12)
    assert log.meta["t_onset"] == pytest.approx(0.05)


def test_quantize_properties():
    a = np.linspace(-1, 1, 101)
    q = quantize(a, 0.01)
    assert np.max(np.abs(q - a)) <= 0.005 + 1e-15
    assert np.array_equal(quantize(q, 0.01), q)


def test_sensor_velocity_filter_converges():
    sensors = Sensors(SensorPipeline(), 1e-3)
    rate = np.array([0.5, -0.2, 0.1])
    for k in range(300):
        _, _, v = sensors.measure(rate * k * 1e-3, np.zeros(3))
    assert np.allclose(v, rate, atol=0.01)


def test_disabled_sensors_pass_through():
    sensors = Sensors(SensorPipeline(enabled=False), 1e-3)
    qa, qp, v = sensors.measure([0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [1.0, 2.0, 3.0])
    assert np.array_equal(qa, [0.1, 0.2, 0.3]) and np.array_equal(v, [1.0, 2.0, 3.0])


def test_sensor_validation():
    with pytest.raises(ValueError):
        SensorPipeline(cutoff_hz=0.0)
    with pytest.raises(ValueError):
        SensorPipeline(torque_noise_std=-1.0)


def test_prescribed_profiles():
    ramp = PrescribedWrench([0.0, 10.0, 0.0], onset=1.0, profile="ramp", ramp_time=2.0, hold=1.0)
    assert [ramp.scale(t) for t in (0.5, 2.0, 3.0, 3.5, 4.0, 6.0)] == [0.0, 0.5, 1.0, 1.0, 1.0, 0.0]
    assert ramp.scale(5.0) == pytest.approx(0.5)
    tab = PrescribedWrench(onset=0.0, profile="table", table=[[0, 0, 0, 0], [1, 2, 4, 6]])
    assert np.allclose(tab.wrench_at(0.5, None, None), [1, 2, 3])
    with pytest.raises(ValueError):
        PrescribedWrench(profile="pulse")


def test_spring_wall_is_unilateral():
    wall = SpringWall([0.0, 0.0], [0.0, 1.0], stiffness=5000.0, damping=50.0)
    assert np.all(wall.wrench_at(0, np.array([0.0, 0.01, 0.0]), np.zeros(3)) == 0.0)
    F = wall.wrench_at(0, np.array([0.0, -0.002, 0.0]), np.zeros(3))
    assert np.allclose(F, [0.0, 10.0, 0.0])
    # separating fast: damping may not pull
    F = wall.wrench_at(0, np.array([0.0, -0.001, 0.0]), np.array([0.0, 1.0, 0.0]))
    assert np.all(F == 0.0)


def test_clamp_anchors_at_onset():
    clamp = ClampSpring(onset=0.1, stiffness=2000.0, damping=5.0)
    assert np.all(clamp.wrench_at(0.05, np.array([1.0, 1.0, 0]), np.zeros(3)) == 0.0)
    assert np.all(clamp.wrench_at(0.1, np.array([0.1, 0.2, 0]), np.zeros(3)) == 0.0)
    F = clamp.wrench_at(0.2, np.array([0.11, 0.2, 0]), np.array([0.5, 0.0, 0.0]))
    assert np.allclose(F, [-20.0 - 2.5, 0.0, 0.0])
    clamp.reset()
    assert clamp.anchor is None


def test_reaction_without_gravity_commands_zero_torque():
    sc = default_scenario(duration=0.3, sensors=SensorPipeline(enabled=False),
                          contact=ContactSpec(ContactLocation.platform(),
                                              PrescribedWrench([0.0, 30.0, 0.0], onset=0.1)))
    log = run(sc)
    trig = log.column("trig_mo")
    k = int(np.argmax(trig > 0))
    assert k > 100
    tau = log.block("tau", ("1", "2", "3"))
    assert np.all(tau[k + 1:] == 0.0)


def test_reaction_with_gravity_holds_gravity_compensation():
    geom_sc = default_scenario()
    params = DynamicsParams.default(geom_sc.geometry, gravity=(0.0, -9.81))
    sc = default_scenario(params=params, duration=0.3, sensors=SensorPipeline(enabled=False),
                          contact=ContactSpec(ContactLocation.platform(),
                                              PrescribedWrench([30.0, 0.0, 0.0], onset=0.1)))
    log = run(sc)
    k = int(np.argmax(log.column("trig_mo") > 0))
    Fm = log.block("Fm")
    assert np.all(np.abs(Fm[k + 1:, 1]) > 0)


def test_ramp_stiffness_fit():
    K = 1000.0
    sc = default_scenario(gains=default_scenario().gains.__class__([K, K, 85.0]), duration=2.2,
                          observers=(), sensors=SensorPipeline(enabled=False),
                          contact=ContactSpec(ContactLocation.platform(),
                                              PrescribedWrench([0.0, 5.0, 0.0], onset=0.1,
                                                               profile="ramp", ramp_time=2.0)))
    log = run(sc)
    assert fitted_stiffness(log, 1, 0.3, 2.1) == pytest.approx(K, rel=0.02)
    assert summarize(log, sc)["fitted_stiffness_N_per_m"] == pytest.approx(K, rel=0.02)


def test_log_round_trip_and_schema_checks(tmp_path):
    log = run(default_scenario(duration=0.05))
    path = tmp_path / "log.csv"
    log.write_csv(path)
    back = RunLog.read_csv(path)
    assert np.array_equal(back.array, log.array, equal_nan=True)
    text = path.read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(text[:3] + [text[3][: len(text[3]) // 2]]))
    with pytest.raises(SchemaMismatch):
        RunLog.read_csv(tmp_path / "short.csv")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(SchemaMismatch):
        RunLog.read_csv(tmp_path / "empty.csv")
    (tmp_path / "cols.csv").write_text(",".join(LOG_COLUMNS[:-1]) + "\n")
    with pytest.raises(SchemaMismatch):
        RunLog.read_csv(tmp_path / "cols.csv")


def test_summary_written(tmp_path):
    sc = default_scenario(duration=0.05)
    write_summary(summarize(run(sc), sc), tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "key,value" and any(r.startswith("samples,50") for r in rows)


def test_replay_reproduces_logged_estimates():
    sc = default_scenario(duration=0.2, sensors=SensorPipeline(torque_noise_std=0.05),
                          trajectory=QuinticTrajectory.point_to_point([0, 0, 0], [0.03, 0.01, 0], 0.2))
    log = run(sc)
    est = replay_estimates(log, sc)
    logged = np.hstack([log.block(f"F_{n}") for n in ("mo", "kf", "sosml")])
    assert np.array_equal(est, logged)


@pytest.mark.parametrize("case", sorted(CAMPAIGN_CASES))
def test_campaign_scenarios_are_consistent(case):
    sc = campaign_scenario(case, 0.65)
    free = campaign_scenario(case, 0.65, with_contact=False)
    assert free.contact is None and sc.contact is not None
    assert sc.duration == free.duration
    assert sc.trajectory.end_time > sc.duration - 0.1


@pytest.mark.slow
def test_long_free_motion_has_no_false_positive():
    poses = [[0, 0, 0], [0.08, 0.0, 0.1], [0.0, 0.08, -0.1], [-0.08, -0.02, 0.0], [0, 0, 0]]
    traj = QuinticTrajectory(poses * 4 + [[0, 0, 0]], [2.95] * 20, start_time=0.5)
    sc = default_scenario(trajectory=traj, duration=60.0, reaction=False)
    log = run(sc)
    assert log.meta["aborted"] is None and len(log) == 60000
    assert log.events == []
