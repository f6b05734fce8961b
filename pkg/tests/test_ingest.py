import numpy as np
import pytest

from parkcast.datamodel import Grid, to_minutes
from parkcast.errors import FileUnreadable, InvalidConfig, SchemaMismatch
from parkcast.ingest import (SyntheticCityConfig, generate_synthetic_city, holidays_to_grid,
                             parse_holidays_csv, parse_traffic_csv, parse_transactions_csv,
                             parse_weather_csv, traffic_to_grid, weather_to_grid,
                             write_holidays_csv, write_traffic_csv, write_transactions_csv,
                             write_weather_csv)


def test_transactions_reject_bad_rows(tmp_path):
    p = tmp_path / "tx.csv"
    p.write_text("garage_id,entry_time,exit_time\n"
                 "g,2018-01-01T08:00Z,2018-01-01T09:00Z\n"
                 "g,2018-01-01T10:00Z,2018-01-01T09:00Z\n"
                 "g,not-a-time,2018-01-01T09:00Z\n")
    res = parse_transactions_csv(p)
    assert len(res) == 1
    assert [r.line for r in res.rejects] == [3, 4]
    assert res[0].exit_time - res[0].entry_time == 60


def test_missing_column_and_missing_file(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("time,rain_binary\n2018-01-01T00:00Z,0\n")
    with pytest.raises(SchemaMismatch):
        parse_weather_csv(p)
    with pytest.raises(FileUnreadable):
        parse_traffic_csv(tmp_path / "absent.csv")


def test_weather_rain_must_be_binary(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("time,temperature_tenth_celsius,rain_binary\n"
                 "2018-01-01T00:00Z,55,1\n2018-01-01T00:10Z,56,2\n")
    res = parse_weather_csv(p)
    assert len(res) == 1 and len(res.rejects) == 1


def test_round_trip_of_generated_city(tmp_path):
    city = generate_synthetic_city(SyntheticCityConfig(seed=1, days=2, n_locations=2))
    write_transactions_csv(city.transactions, tmp_path / "t.csv")
    write_traffic_csv(list(city.traffic), tmp_path / "f.csv")
    write_weather_csv(city.weather, tmp_path / "w.csv")
    write_holidays_csv(city.holidays, tmp_path / "h.csv")
    tx = parse_transactions_csv(tmp_path / "t.csv")
    tr = parse_traffic_csv(tmp_path / "f.csv")
    we = parse_weather_csv(tmp_path / "w.csv")
    ho = parse_holidays_csv(tmp_path / "h.csv")
    assert not (tx.rejects or tr.rejects or we.rejects or ho.rejects)
    assert len(tx) == len(city.transactions)
    loc, flow = traffic_to_grid(tr, city.grid)
    np.testing.assert_array_equal(flow, city.traffic_flow)
    assert loc == tuple(city.location_ids)


def test_weather_hold_limit():
    from parkcast.ingest import WeatherObservation
    obs = [WeatherObservation(0, 10.0, 0), WeatherObservation(10, 20.0, 1)]
    temp, rain = weather_to_grid(obs, Grid(0, 100), max_hold=60)
    assert temp[9] == 10.0 and temp[70] == 20.0 and np.isnan(temp[71])
    assert rain[10] == 1.0


def test_holidays_cover_whole_days():
    from datetime import date
    g = Grid(to_minutes("2018-01-01T00:00Z"), 3 * 1440)
    flags = holidays_to_grid([(date(2018, 1, 2), 1), (date(2018, 1, 3), 0)], g)
    assert flags[:1440].sum() == 0 and flags[1440:2880].sum() == 1440 and flags[2880:].sum() == 0


def test_generator_is_deterministic():
    a = generate_synthetic_city(SyntheticCityConfig(seed=5, days=3))
    b = generate_synthetic_city(SyntheticCityConfig(seed=5, days=3))
    c = generate_synthetic_city(SyntheticCityConfig(seed=6, days=3))
    np.testing.assert_array_equal(a.truth.occupancy_rate, b.truth.occupancy_rate)
    assert a.transactions == b.transactions
    assert not np.array_equal(a.truth.occupancy_rate, c.truth.occupancy_rate)


def test_generator_structure(small_city):
    occ = small_city.truth.occupancy_rate
    assert 0 <= occ.min() and occ.max() <= 1
    # daily structure: the 13:00 occupancy well above the 04:00 occupancy
    days = occ.reshape(-1, 1440)
    assert days[:, 13 * 60].mean() > 3 * days[:, 4 * 60].mean()
    assert np.all(small_city.truth.conservation_residual(0) == 0)


def test_weekday_profiles_change_only_that_day():
    base = SyntheticCityConfig(seed=2, days=7, noise_level=0.0)
    flat = [0.0] * 24
    alt = SyntheticCityConfig(seed=2, days=7, noise_level=0.0, weekday_profiles={"2": flat})
    assert alt.weekday_profiles == {2: flat}
    city = generate_synthetic_city(alt)
    influx = city.truth.influx.reshape(7, 1440)
    assert influx[2].sum() == 0 and influx[1].sum() > 0
    assert generate_synthetic_city(base).truth.influx.reshape(7, 1440)[2].sum() > 0


@pytest.mark.parametrize("bad", [{"days": 0}, {"daily_profile": [1.0] * 23},
                                 {"weekly_multipliers": [1.0] * 6}, {"noise_level": -1},
                                 {"weekday_profiles": {9: [1.0] * 24}}])
def test_invalid_generator_config(bad):
    with pytest.raises(InvalidConfig):
        SyntheticCityConfig(**bad).validate()
