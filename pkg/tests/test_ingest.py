import io
import json

import pytest

from courtrate.ingest import (
    GAME_REJECTED,
    INCONSISTENT,
    LINEUP_UNKNOWN,
    SUB_NOT_ON_COURT,
    LogFormatError,
    crosscheck_boxscore,
    dumps_event_log,
    extract_intervals,
    parse_event_log,
    read_boxscores,
    read_intervals_csv,
    write_boxscores,
    write_intervals_csv,
)

HOME = ["H1", "H2", "H3", "H4", "H5"]
AWAY = ["A1", "A2", "A3", "A4", "A5"]


def header(game="G1", **extra):
    rec = {"kind": "header", "game_id": game, "season": "2009", "date": "2009-01-02",
           "home_team": "HOM", "away_team": "AWY", "starters": {"HOM": HOME, "AWY": AWAY}}
    rec.update(extra)
    return rec


def ev(period, clock, kind, team=None, player_in=None, player_out=None, player=None, value=None, game="G1"):
    return {"game_id": game, "season": "2009", "period": period, "clock_remaining": clock, "kind": kind,
            "team": team, "player_in": player_in, "player_out": player_out, "player": player, "value": value}


def ends(periods=(1, 2, 3, 4), game="G1"):
    return [ev(p, 0, "period_end", game=game) for p in periods]


def lines(*records):
    return [json.dumps(r) + "\n" for r in records]


def basic_game():
    return lines(
        header(),
        ev(1, 720, "possession_start", "HOM"),
        ev(1, 700, "points", "HOM", player="H1", value=2),
        ev(1, 690, "possession_start", "AWY"),
        ev(1, 680, "points", "AWY", player="A1", value=3),
        ev(1, 600, "substitution", "HOM", player_in="H6", player_out="H1"),
        ev(1, 590, "possession_start", "HOM"),
        ev(1, 580, "points", "HOM", player="H6", value=1),
        ev(1, 560, "possession_start", "AWY"),
        *ends(),
    )


def test_basic_intervals():
    (log,) = parse_event_log(basic_game())
    assert log.rejected is None and log.n_substitutions == 1
    ivs = extract_intervals(log)
    # period 1 split at the substitution, then one interval for each later period
    assert [iv.duration for iv in ivs] == [120.0, 600.0, 720.0, 720.0, 720.0]
    first, second = ivs[:2]
    assert (first.n_home_poss, first.n_away_poss, first.pts_home, first.pts_away) == (1, 1, 2, 3)
    assert (second.n_home_poss, second.n_away_poss, second.pts_home, second.pts_away) == (1, 1, 1, 0)
    assert first.home_on_court == frozenset(HOME)
    assert second.home_on_court == frozenset(HOME[1:] + ["H6"])
    assert not any(iv.excluded for iv in ivs)
    assert [iv.idx for iv in ivs] == list(range(5))
    # lineup carries into later periods without a declaration
    assert ivs[-1].home_on_court == second.home_on_court


def test_period_lineup_declaration_restores_starters():
    recs = [json.loads(l) for l in basic_game()]
    recs[0]["period_lineups"] = {"3": {"HOM": HOME, "AWY": AWAY}}
    (log,) = parse_event_log(lines(*recs))
    ivs = extract_intervals(log)
    assert ivs[2].home_on_court != frozenset(HOME)
    assert ivs[3].home_on_court == frozenset(HOME)
    assert dumps_event_log([log]).splitlines()[0] == json.dumps(recs[0])


def test_serialize_roundtrip():
    logs = parse_event_log(basic_game())
    again = parse_event_log(io.StringIO(dumps_event_log(logs)))
    assert again[0].events == logs[0].events
    assert extract_intervals(again[0]) == extract_intervals(logs[0])


def test_unknown_outgoing_player_excludes_rest_of_period():
    recs = lines(
        header(),
        ev(1, 720, "possession_start", "HOM"),
        ev(1, 500, "substitution", "HOM", player_in="H6", player_out=None),
        ev(1, 400, "possession_start", "AWY"),
        ev(1, 300, "substitution", "AWY", player_in="A6", player_out="A1"),
        ev(1, 200, "possession_start", "HOM"),
        *ends((1, 2)),
    )
    (log,) = parse_event_log(recs)
    ivs = extract_intervals(log)
    assert [iv.excluded for iv in ivs] == [False, True, True, True]
    assert {iv.reason for iv in ivs[1:-1]} == {LINEUP_UNKNOWN}
    assert ivs[1].home_on_court == frozenset()
    # counts are still carried on excluded intervals
    assert ivs[1].n_away_poss == 1 and ivs[2].n_home_poss == 1
    # without a declaration the next period stays unknown
    assert ivs[3].reason == LINEUP_UNKNOWN


def test_substitution_of_player_not_on_court():
    recs = lines(header(), ev(1, 700, "substitution", "HOM", player_in="H7", player_out="H9"), *ends((1,)))
    ivs = extract_intervals(parse_event_log(recs)[0])
    assert [iv.reason for iv in ivs] == ["", SUB_NOT_ON_COURT]


def test_points_without_possession_are_inconsistent():
    recs = lines(header(), ev(1, 700, "points", "HOM", player="H1", value=2), *ends((1,)))
    (iv,) = extract_intervals(parse_event_log(recs)[0])
    assert iv.excluded and iv.reason == INCONSISTENT


def test_zero_length_segment_carries_counts():
    recs = lines(
        header(),
        ev(1, 600, "possession_start", "HOM"),
        ev(1, 600, "substitution", "HOM", player_in="H6", player_out="H1"),
        ev(1, 600, "substitution", "AWY", player_in="A6", player_out="A1"),
        ev(1, 600, "points", "HOM", player="H6", value=3),
        *ends((1,)),
    )
    ivs = extract_intervals(parse_event_log(recs)[0])
    assert [iv.duration for iv in ivs] == [120.0, 600.0]
    assert ivs[0].n_home_poss == 1 and ivs[0].pts_home == 0
    assert ivs[1].pts_home == 3 and "A6" in ivs[1].away_on_court


@pytest.mark.parametrize(
    "bad, reason",
    [
        ([ev(1, 700, "possession_start", "HOM"), ev(1, 710, "possession_start", "AWY")], "clock_backwards"),
        ([ev(1, 700, "possession_start", "HOM"), ev(2, 700, "possession_start", "HOM")], "missing_period_end"),
        ([ev(1, 700, "possession_start", "XXX"), ev(1, 0, "period_end")], "unknown_team"),
        ([ev(1, 5, "period_end")], "period_end_not_at_zero"),
    ],
)
def test_inconsistent_games_are_rejected(bad, reason):
    (log,) = parse_event_log(lines(header(), *bad))
    assert log.rejected == reason
    ivs = extract_intervals(log)
    assert all(iv.excluded and iv.reason == GAME_REJECTED for iv in ivs)
    assert sum(iv.duration for iv in ivs) == 4 * 720


def test_bad_starters_rejected():
    rec = header(starters={"HOM": HOME[:4], "AWY": AWAY})
    assert parse_event_log(lines(rec, *ends()))[0].rejected == "starters_not_five"
    rec = header(starters={"HOM": HOME, "AWY": HOME})
    assert parse_event_log(lines(rec, *ends()))[0].rejected == "starters_overlap"


@pytest.mark.parametrize(
    "record, match",
    [
        ({**ev(1, 700, "possession_start", "HOM"), "extra": 1}, "unexpected"),
        ({k: v for k, v in ev(1, 700, "possession_start", "HOM").items() if k != "player"}, "missing"),
        (ev(1, 700, "dunk", "HOM"), "unknown event kind"),
        (ev(1, 700, "points", "HOM", value=4), "points value"),
        (ev(1, -1, "possession_start", "HOM"), "clock_remaining"),
        (ev(1, 700, "substitution", "HOM", player_in="H1", player_out="H1"), "player_in == player_out"),
    ],
)
def test_schema_errors_carry_line_numbers(record, match):
    with pytest.raises(LogFormatError, match=match) as info:
        parse_event_log(lines(header(), ev(1, 710, "possession_start", "HOM"), record))
    assert info.value.lineno == 3


def test_malformed_json_and_orphan_events():
    with pytest.raises(LogFormatError, match="line 1"):
        parse_event_log(["{not json\n"])
    with pytest.raises(LogFormatError, match="before its header"):
        parse_event_log(lines(ev(1, 700, "possession_start", "HOM")))
    with pytest.raises(LogFormatError, match="duplicate header"):
        parse_event_log(lines(header(), header()))


def test_intervals_csv_roundtrip():
    ivs = extract_intervals(parse_event_log(basic_game())[0])
    buf = io.StringIO()
    write_intervals_csv(ivs, buf)
    buf.seek(0)
    assert read_intervals_csv(buf) == ivs
    assert read_intervals_csv(io.StringIO("")) == []
    with pytest.raises(ValueError, match="missing columns"):
        read_intervals_csv(io.StringIO("game_id,season\nG,1\n"))


def test_crosscheck_boxscore():
    ivs = extract_intervals(parse_event_log(basic_game())[0])
    box = {p: 2880.0 for p in HOME[1:] + AWAY}
    box.update({"H1": 120.0, "H6": 2760.0})
    report = crosscheck_boxscore(ivs, box)
    assert not report.flagged and report.total_seconds == 2880.0
    box["H1"] = 200.0
    report = crosscheck_boxscore(ivs, box, tolerance=30)
    assert report.flagged and report.flagged_players == ["H1"]
    buf = io.StringIO()
    write_boxscores({"G1": box}, buf)
    buf.seek(0)
    assert read_boxscores(buf) == {"G1": box}
    with pytest.raises(ValueError):
        crosscheck_boxscore(ivs + [ivs[0].__class__("G2", "2009", 0, 1.0, frozenset(), frozenset(), 0, 0, 0, 0)],
                            box)
