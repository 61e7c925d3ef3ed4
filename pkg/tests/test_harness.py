import math
import re

import numpy as np
import pytest

from cdqn import charts, cli, config as config_mod, harness, nn
from cdqn.config import ConfigError, RunConfig
from cdqn.harness import (
    duel,
    evaluate,
    first_stop_episode,
    load_checkpoint,
    rolling_mean_met,
    run_training,
    save_checkpoint,
)
from cdqn.metrics import DuelResult, DuelRow, EpisodeRow, MetricsLog, read_rows, write_metrics
from cdqn.nn import Layer, NetworkParams

QUICK = dict(max_episodes=6, stop_threshold=1e9, eval_every=3, eval_episodes=2)


def quick_config(**kwargs) -> RunConfig:
    merged = {**QUICK, **kwargs}
    return RunConfig(**merged)


def balancing_policy_net() -> NetworkParams:
    # Q1 - Q0 = k . s with gains that keep the pole up from any start
    k = np.array([0.0, 0.2, 10.0, 2.0])
    w = np.vstack([-k / 2.0, k / 2.0])
    return NetworkParams([Layer(w, np.zeros(2), "identity")])


class TestEarlyStop:
    def test_scripted_sequence_fires_at_first_window(self):
        rewards = [100.0, 300.0, 300.0, 50.0]
        assert first_stop_episode(rewards, threshold=200.0, window=2) == 2
        assert first_stop_episode(rewards, threshold=200.0, window=3) == 3
        assert first_stop_episode(rewards, threshold=260.0, window=2) == 3

    def test_requires_full_window(self):
        assert first_stop_episode([500.0] * 9, threshold=200.0, window=10) is None
        assert first_stop_episode([500.0] * 10, threshold=200.0, window=10) == 10

    def test_threshold_boundary_inclusive(self):
        assert rolling_mean_met([150.0, 250.0], threshold=200.0, window=2)
        assert not rolling_mean_met([150.0, 249.0], threshold=200.01, window=2)

    def test_never_fires_when_unreachable(self):
        assert first_stop_episode([499.0] * 50, threshold=500.0, window=5) is None

    def test_run_training_stops_at_first_eligible_episode(self):
        # every episode lasts >= 9 steps, so a threshold of 5 fires exactly
        # when the window first fills
        cfg = quick_config(seed=3, max_episodes=50, stop_threshold=5.0, stop_window=4)
        result = run_training(cfg)
        assert result.episodes_to_solve == 4
        assert len(result.log.rows) == 4

    def test_episode_cap_behavior(self):
        cfg = quick_config(seed=1, max_episodes=1, stop_threshold=1e9)
        result = run_training(cfg)
        assert result.episodes_to_solve is None
        assert len(result.log.rows) == 1


class TestRunTraining:
    def test_metrics_log_shape_and_epsilon_schedule(self):
        cfg = quick_config(seed=5)
        result = run_training(cfg)
        rows = result.log.rows
        assert [r.episode for r in rows] == list(range(1, 7))
        for i, row in enumerate(rows):
            expected_eps = max(cfg.epsilon_end, cfg.epsilon_start * cfg.epsilon_decay**i)
            assert row.epsilon == expected_eps
            assert row.mean_peace >= 0.0
            assert math.isfinite(row.mean_loss)

    def test_full_run_determinism_byte_for_byte(self, tmp_path):
        cfg = quick_config(seed=11)
        paths = []
        for name in ("a.csv", "b.csv"):
            result = run_training(cfg)
            path = tmp_path / name
            write_metrics(result.log, path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_lambda_zero_matches_baseline_over_episodes(self, tmp_path):
        solves = {}
        for kind, weight in (("dqn", 1.0), ("causal", 0.0)):
            cfg = quick_config(
                agent_kind=kind, seed=21, max_episodes=15, penalty_weight=weight
            )
            result = run_training(cfg)
            path = tmp_path / f"{kind}.params"
            nn.save_params(result.agent.params, path)
            solves[kind] = path.read_bytes()
        assert solves["dqn"] == solves["causal"]

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_reported_with_location(self):
        cfg = quick_config(seed=2, max_episodes=30, learning_rate=1e200)
        with pytest.raises(harness.TrainingDiverged, match="episode"):
            run_training(cfg)


class TestEvaluateAndDuel:
    def make_checkpoint(self, tmp_path, name, params, cfg=None):
        path = tmp_path / name
        save_checkpoint(path, params, 0.5, 7, cfg or RunConfig())
        return path

    def test_untrained_net_scores_like_near_random(self, tmp_path):
        path = self.make_checkpoint(tmp_path, "rand.params", nn.init_network([4, 64, 64, 2], 3))
        mean, scores = evaluate(path, episodes=30, seed=9)
        assert 5.0 <= mean <= 50.0
        assert len(scores) == 30

    def test_evaluate_deterministic(self, tmp_path):
        path = self.make_checkpoint(tmp_path, "rand.params", nn.init_network([4, 8, 2], 4))
        assert evaluate(path, 5, seed=3) == evaluate(path, 5, seed=3)

    def test_perfect_policy_hits_step_cap(self, tmp_path):
        path = self.make_checkpoint(tmp_path, "perfect.params", balancing_policy_net())
        mean, scores = evaluate(path, episodes=20, seed=1)
        assert mean == 500.0
        assert all(s == 500.0 for s in scores)

    def test_corrupt_checkpoint_raises_load_error(self, tmp_path):
        path = tmp_path / "broken.params"
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(harness.CheckpointError, match="broken.params"):
            evaluate(path, 3, seed=0)

    def test_duel_identical_checkpoints_tie_exactly(self, tmp_path):
        a = self.make_checkpoint(tmp_path, "a.params", nn.init_network([4, 8, 2], 5))
        b = self.make_checkpoint(tmp_path, "b.params", nn.init_network([4, 8, 2], 5))
        result = duel(a, b, rounds=6, episodes_per_round=3, seed=13)
        for row in result.rows:
            assert row.score_a == row.score_b
        assert result.mean_a == result.mean_b

    def test_duel_row_shape(self, tmp_path):
        a = self.make_checkpoint(tmp_path, "a.params", nn.init_network([4, 8, 2], 6))
        b = self.make_checkpoint(tmp_path, "b.params", nn.init_network([4, 8, 2], 7))
        result = duel(a, b, rounds=10, episodes_per_round=2, seed=1)
        assert [r.round for r in result.rows] == list(range(1, 11))

    def test_checkpoint_sidecar_round_trip(self, tmp_path):
        cfg = RunConfig(max_steps=123, gamma=0.9)
        path = self.make_checkpoint(tmp_path, "c.params", nn.init_network([4, 8, 2], 8), cfg)
        _, meta = load_checkpoint(path)
        assert meta["epsilon"] == "0.5"
        assert meta["episode"] == "7"
        env_spec = harness.env_spec_from_meta(meta)
        assert env_spec.max_steps == 123


class TestMetricsCsv:
    def test_empty_log_writes_header_only(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics(MetricsLog([]), path)
        assert path.read_text() == (
            "episode,train_reward,test_reward,mean_peace,sum_peace,mean_loss,mean_penalty,epsilon\n"
        )

    def test_three_rows_make_four_lines(self, tmp_path):
        log = MetricsLog(
            [EpisodeRow(i, 1.0, 2.0, 0.25, 0.5, 0.125, 0.0625, 0.9) for i in (1, 2, 3)]
        )
        path = tmp_path / "m.csv"
        write_metrics(log, path)
        assert len(path.read_text().splitlines()) == 4

    def test_round_trip_restores_values(self, tmp_path):
        row = EpisodeRow(3, 17.0, 4.2, 0.123456789012345, 1.9, 3.3e-7, 1.0 / 3.0, 0.99)
        path = tmp_path / "m.csv"
        write_metrics(MetricsLog([row]), path)
        header, rows = read_rows(path)
        assert header[0] == "episode"
        for col in header:
            assert abs(rows[0][col] - getattr(row, col)) <= 1e-12 * max(1.0, abs(getattr(row, col)))

    def test_duel_round_trip(self, tmp_path):
        result = DuelResult([DuelRow(1, 350.0, 120.0), DuelRow(2, 200.0, 100.0)])
        path = tmp_path / "d.csv"
        write_metrics(result, path)
        header, rows = read_rows(path)
        assert header == ["round", "score_a", "score_b"]
        assert rows[0]["score_a"] == 350.0


def first_series_ordinates(svg_text: str) -> list[float]:
    # first data series is drawn with the default matplotlib blue
    match = re.search(
        r'<path d="(M[^"]*?)"\s*clip-path="[^"]*" style="fill: none; stroke: #1f77b4',
        svg_text,
        re.S,
    )
    assert match, "no data-series path found"
    points = match.group(1).replace("\n", " ").strip()[1:].split("L")
    return [float(p.split()[1]) for p in points]


class TestCharts:
    def write_csv(self, tmp_path, rows):
        log = MetricsLog(rows)
        path = tmp_path / "m.csv"
        write_metrics(log, path)
        return path

    def test_single_row_renders_marker(self, tmp_path):
        path = self.write_csv(tmp_path, [EpisodeRow(1, 10.0, 5.0, 0.1, 0.1, 1.0, 0.5, 0.9)])
        out = tmp_path / "one.svg"
        charts.render_chart(path, ["train_reward"], out)
        text = out.read_text()
        assert text.startswith("<?xml")
        assert "<svg" in text

    def test_identical_inputs_render_identical_bytes(self, tmp_path):
        path = self.write_csv(
            tmp_path, [EpisodeRow(i, 2.0 * i, 1.0, 0.1, 0.1, 1.0, 0.5, 0.9) for i in range(1, 8)]
        )
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        charts.render_chart(path, ["train_reward", "test_reward"], a)
        charts.render_chart(path, ["train_reward", "test_reward"], b)
        assert a.read_bytes() == b.read_bytes()

    def test_monotone_series_has_monotone_polyline(self, tmp_path):
        path = self.write_csv(
            tmp_path, [EpisodeRow(i, 10.0 * i, 1.0, 0.1, 0.1, 1.0, 0.5, 0.9) for i in range(1, 9)]
        )
        out = tmp_path / "mono.svg"
        charts.render_chart(path, ["train_reward"], out)
        ys = first_series_ordinates(out.read_text())
        # SVG y grows downward, so an increasing series has decreasing ordinates
        assert len(ys) == 8
        assert all(b < a for a, b in zip(ys, ys[1:]))

    def test_missing_column_named(self, tmp_path):
        path = self.write_csv(tmp_path, [EpisodeRow(1, 1.0, 1.0, 0.1, 0.1, 1.0, 0.5, 0.9)])
        with pytest.raises(ValueError, match="no_such_column"):
            charts.render_chart(path, ["no_such_column"], tmp_path / "x.svg")


class TestConfig:
    def test_file_with_comments_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# experiment defaults\n"
            "agent.gamma = 0.95\n"
            "run.seed = 4  # inline comment\n"
            "net.hidden = 32, 16\n"
        )
        cfg = config_mod.load_config(path, {"run.seed": "9"})
        assert cfg.gamma == 0.95
        assert cfg.seed == 9
        assert cfg.hidden == (32, 16)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("agent.gama = 0.9\n")
        with pytest.raises(ConfigError, match="agent.gama"):
            config_mod.load_config(path)

    def test_validation_collects_all_problems(self):
        cfg = RunConfig(gamma=1.5, penalty_floor=0.0, stop_window=0)
        with pytest.raises(ConfigError) as err:
            config_mod.validate_config(cfg)
        message = str(err.value)
        assert "agent.gamma" in message
        assert "agent.penalty_floor" in message
        assert "run.stop_window" in message

    def test_dump_parses_back_to_equal_config(self):
        cfg = RunConfig(agent_kind="causal", seed=77, bin_edges=((0.0,), (-1.0, 1.0), (), (0.5,)))
        text = config_mod.dump_config(cfg)
        pairs = config_mod.kvformat.parse(text)
        again = config_mod.apply_pairs(RunConfig(), pairs)
        assert again == cfg

    def test_bin_edges_parsing(self):
        cfg = config_mod.apply_pairs(
            RunConfig(), {"agent.bin_edges": "0 | -1, 1 | | 0.5"}
        )
        assert cfg.bin_edges == ((0.0,), (-1.0, 1.0), (), (0.5,))


class TestCli:
    def test_train_writes_reports_and_exits_zero(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = cli.main(
            [
                "train",
                "--seed", "3",
                "--agent", "dqn",
                "--out", str(out),
                "--run.max_episodes", "3",
                "--run.eval_every", "2",
                "--run.eval_episodes", "1",
                "--agent.batch_size", "16",
            ]
        )
        assert code == 0
        assert (out / "metrics.csv").exists()
        assert (out / "rewards.svg").exists()
        assert (out / "causal_effect.svg").exists()
        assert (out / "checkpoint.params").exists()
        assert (out / "checkpoint.params.meta").exists()
        assert "episodes=3" in capsys.readouterr().out

    def test_unknown_config_key_exits_one(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("agent.gama = 0.9\n")
        assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as err:
            cli.main(["train", "--no-such-flag", "1"])
        assert err.value.code == 1

    def test_corrupt_checkpoint_exits_two(self, tmp_path):
        path = tmp_path / "x.params"
        path.write_bytes(b"nope")
        assert cli.main(["evaluate", "--checkpoint", str(path), "--episodes", "1"]) == 2

    def test_chart_missing_column_exits_one(self, tmp_path):
        csv_path = tmp_path / "m.csv"
        write_metrics(MetricsLog([EpisodeRow(1, 1.0, 1.0, 0.1, 0.1, 1.0, 0.5, 0.9)]), csv_path)
        code = cli.main(
            ["chart", "--csv", str(csv_path), "--columns", "nope", "--out", str(tmp_path / "c.svg")]
        )
        assert code == 1

    def test_duel_cli_writes_csv(self, tmp_path, capsys):
        params = nn.init_network([4, 8, 2], 2)
        for name in ("a", "b"):
            save_checkpoint(tmp_path / f"{name}.params", params, 0.0, 1, RunConfig())
        code = cli.main(
            [
                "duel",
                "--checkpoint-a", str(tmp_path / "a.params"),
                "--checkpoint-b", str(tmp_path / "b.params"),
                "--rounds", "4",
                "--episodes-per-round", "2",
                "--out", str(tmp_path / "duel"),
            ]
        )
        assert code == 0
        header, rows = read_rows(tmp_path / "duel" / "duel.csv")
        assert header == ["round", "score_a", "score_b"]
        assert len(rows) == 4
        assert "duel means" in capsys.readouterr().out


class TestComparisonTable:
    def test_table_reports_medians_and_duel_means(self):
        text = harness.format_comparison(
            baseline_solves=[530, 600, None],
            causal_solves=[147, 200, 180],
            max_episodes=1000,
            duel_mean_dqn=120.0,
            duel_mean_causal=350.0,
        )
        assert "median_episodes_to_solve" in text
        assert "600" in text  # baseline median with the unsolved run censored
        assert "180" in text
        assert "solved_runs" in text
        assert "2/3" in text and "3/3" in text
        assert "duel_mean_score" in text
        assert "350.000" in text
