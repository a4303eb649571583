"""Smoke test for the hbmon extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import hbmon

DAY_MS = 86_400_000


def check_arithmetic():
    assert hbmon.expected_samples(56 * 86_400, 15) == 322_560
    assert hbmon.expected_samples(86_400, 15) == 5_760
    assert hbmon.partition_key(1_617_580_800_000) == 18_722
    assert hbmon.encode_raw(25.7) == 2570
    assert hbmon.decode_raw(2100) == 21.0
    assert hbmon.aq_voltage_to_code(2.5) == 512
    rates = [
        hbmon.loss_rate(e, a).display_percent()
        for e, a in [(322_560, 316_251), (322_560, 316_121), (322_560, 315_978), (967_680, 948_350)]
    ]
    assert rates == ["1.96", "2.00", "2.04", "2.00"], rates
    try:
        hbmon.loss_rate(0, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")


def check_analysis():
    day = [(k * 15_000, float(k)) for k in range(5_760)]
    thin = hbmon.uniform_resample(day)
    assert len(thin) == 720
    assert all(b[0] - a[0] == 120_000 for a, b in zip(thin, thin[1:]))
    assert hbmon.median_resample([(0, 10.0), (15_000, 10.0), (30_000, 999.0)]) == [(0, 10.0)]
    assert hbmon.nearest_rank([float(v) for v in range(1, 101)], 7) == 7.0

    # 46 days of 5-minute readings on a 60-day cycle; analyze the middle 16
    step = 300_000
    pts = [(k * step, 40.0 + 3.0 * math.sin(2 * math.pi * k * step / (60 * DAY_MS))) for k in range(46 * 288)]
    a = hbmon.analyze(pts, 15 * DAY_MS, 31 * DAY_MS)
    assert a.band_halfwidth == 10.0
    assert a.p7 <= a.p93
    assert not a.out_of_band
    assert len(a.readings) == len(a.cma) == len(a.bounds) == 16 * 288


def check_simulation():
    run = hbmon.simulate(days=2, seed=3, check_invariants=True)
    t = run.total
    assert t["expected"] == 3 * 2 * 5_760
    assert t["total_lost"] == t["edge_loss"] + t["consumer_loss"]
    assert t["stored"] == t["consumed"]
    assert sum(m[1] for m in run.hourly_metrics) == t["hub_received"]
    assert 0.0 < run.loss_rate_percent < 5.0
    with tempfile.TemporaryDirectory() as d:
        rows = run.export(d)
        assert rows == t["stored"]
        header = (Path(d) / "sensing.csv").read_text().splitlines()[0]
        assert header == "Id,UtcTimestampMs,PartitionKey,DeviceId,CollectorId,Humidity,Temperature,CO2,Dust,AirQuality,Vibration"

    lossless = hbmon.simulate(days=1, tier="sla", consumer_drop=0.0, edge_drop=0.0)
    assert lossless.loss_rate_percent == 0.0
    assert lossless.edge_share is None


if __name__ == "__main__":
    check_arithmetic()
    check_analysis()
    check_simulation()
    print("hbmon smoke test passed")
