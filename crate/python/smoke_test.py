"""Quick check of the Python bindings."""

import math

import gridshield as gs


def main():
    scn = gs.Scenario("canadian_urban")
    assert scn.agent_count == 4, scn

    quiet = gs.run(scn.attack_free())
    assert quiet.exit_code == 0
    assert quiet.events() == []

    res = gs.run(scn)
    assert res.exit_code == 0
    s = res.summary()
    for key, t in [("attack_onset", 0.10), ("isolation", 0.14), ("bess_pickup", 0.16), ("handover", 0.25)]:
        assert abs(s["milestones"][key] - t) < 1e-6, (key, s["milestones"][key])
    assert res.to_csv().startswith("# gridshield-csv v1\n")
    assert len(res.rows) == len(res.column("t"))
    assert max(res.column("thd0")) > 0.3

    short = gs.run(gs.Scenario("canadian_urban", ["sim.duration=0.001"]))
    assert short.summary()["steps"] == 10

    cells = gs.sweep(gs.Scenario("two_dg", ["sweep.duration=0.2"]), [0.0, 0.01], [1.0, 1.02], jobs=2)
    assert len(cells) == 4
    null = next(c for c in cells if c["a_a"] == 0.0 and c["scale_factor"] == 1.0)
    assert null["dV_pu"] < 1e-3 and not null["diverged"]

    p, q = gs.power_flow(1.0, 1.0, 0.0, 0.5, math.pi / 2)
    assert abs(p) < 1e-12 and abs(q) < 1e-12
    assert gs.apply_attack("scaling", 2.0, 1.5, 0.5, 0.0, 1.0) == 4.5
    assert gs.apply_attack("additive", 2.0, 1.5, 2.0, 0.0, 1.0) == 1.5
    assert gs.clipped_thd(1.0) < 1e-9
    assert gs.clipped_thd(6.0) > 0.3

    bess = gs.BessState(2e6, 0.9, 1e6)
    bess.step(1e6, 1.0)
    assert bess.output == 1e6 and bess.soc < 0.9

    try:
        gs.Scenario("no/such.scn")
    except ValueError:
        pass
    else:
        raise AssertionError("missing scenario accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
