from __future__ import annotations

import json

from popgate.cli import main
from popgate.dataset import read_dataset
from popgate.util import write_jsonl

from mockserver import pageviews_server


def run_cli(argv) -> int:
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


def triples_rows(n: int, relation: str = "director"):
    return [
        {
            "subj_id": f"S{i:04d}",
            "subj": f"Widget{i:04d}",
            "subj_aliases": [f"Widget{i:04d}"],
            "relation": relation,
            "objects": [
                {"id": f"O{i:04d}", "label": f"Maker{i:04d}", "aliases": []}
            ],
        }
        for i in range(n)
    ]


class TestUsageErrors:
    def test_unknown_subcommand_exit_2(self, capsys):
        assert run_cli(["frobnicate"]) == 2

    def test_no_subcommand_exit_2(self):
        assert run_cli([]) == 2

    def test_missing_required_flag_exit_2(self):
        assert run_cli(["index"]) == 2


class TestRuntimeErrors:
    def test_report_missing_run_file_names_path(self, tmp_path, capsys):
        dataset = tmp_path / "dataset.jsonl"
        write_jsonl(dataset, [])
        code = run_cli(
            ["report", "--dataset", dataset, "--runs", tmp_path / "nope.jsonl", "--out", tmp_path]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "nope.jsonl" in err

    def test_run_without_backend_is_runtime_error(self, tmp_path, capsys):
        dataset = tmp_path / "dataset.jsonl"
        write_jsonl(
            dataset,
            [
                {
                    "id": "S0:director",
                    "question": "Who was the director of X?",
                    "answers": ["Y"],
                    "subj": "X",
                    "subj_id": "S0",
                    "relation": "director",
                    "popularity": 100,
                }
            ],
        )
        code = run_cli(
            ["run", "--dataset", dataset, "--mode", "vanilla", "--out", tmp_path / "o.jsonl"]
        )
        assert code == 1
        assert "oracle" in capsys.readouterr().err


class TestPipeline:
    def test_full_cli_pipeline(self, tmp_path, capsys):
        triples = tmp_path / "triples.jsonl"
        write_jsonl(triples, triples_rows(30, "director") + triples_rows(30, "genre"))

        dataset = tmp_path / "dataset.jsonl"
        assert (
            run_cli(
                [
                    "build-dataset",
                    "--triples", triples,
                    "--cap", 100,
                    "--seed", 3,
                    "--out", dataset,
                ]
            )
            == 0
        )
        examples = read_dataset(dataset)
        assert len(examples) == 60
        assert examples[0].popularity is None

        # genre rows reuse the director subjects, so dedup must NOT collapse
        # across relations
        assert {ex.relation_type for ex in examples} == {"director", "genre"}

        views = {ex.subject_label: (i + 1) * 37 for i, ex in enumerate(examples)}
        annotated = tmp_path / "dataset_pop.jsonl"
        with pageviews_server(views) as server:
            assert (
                run_cli(
                    [
                        "fetch-popularity",
                        "--dataset", dataset,
                        "--month", "2022-12",
                        "--cache", tmp_path / "pv-cache",
                        "--endpoint", server.base_url,
                        "--out", annotated,
                    ]
                )
                == 0
            )
        enriched = read_dataset(annotated)
        assert all(ex.popularity and ex.popularity > 0 for ex in enriched)

        corpus = tmp_path / "corpus.jsonl"
        docs = {
            ex.subject_id: {
                "doc_id": f"D{ex.subject_id}",
                "title": ex.subject_label,
                "text": f"{ex.subject_label} was made by Maker{ex.subject_id[1:]}.",
            }
            for ex in enriched
        }
        write_jsonl(corpus, docs.values())
        index = tmp_path / "corpus.pgidx"
        assert run_cli(["index", "--corpus", corpus, "--out", index]) == 0

        run_vanilla = tmp_path / "run_vanilla.jsonl"
        run_retrieval = tmp_path / "run_retrieval.jsonl"
        for mode, out, extra in (
            ("vanilla", run_vanilla, []),
            ("retrieval", run_retrieval, ["--index", index]),
        ):
            assert (
                run_cli(
                    [
                        "run",
                        "--dataset", annotated,
                        "--mode", mode,
                        "--oracle",
                        "--shots", 0,
                        "--seed", 11,
                        "--out", out,
                        *extra,
                    ]
                )
                == 0
            )

        report_dir = tmp_path / "report"
        assert (
            run_cli(
                [
                    "report",
                    "--dataset", annotated,
                    "--runs", run_vanilla, run_retrieval,
                    "--min-bin-n", 1,
                    "--out", report_dir,
                ]
            )
            == 0
        )
        assert (report_dir / "report_vanilla.json").exists()
        assert (report_dir / "report_retrieval.json").exists()
        assert (report_dir / "report_retrieval_quadrants.csv").exists()

        policy = tmp_path / "policy.json"
        assert (
            run_cli(
                [
                    "tune",
                    "--dataset", annotated,
                    "--vanilla", run_vanilla,
                    "--retrieval", run_retrieval,
                    "--split", 0.75,
                    "--repeats", 10,
                    "--seed", 2,
                    "--out", policy,
                ]
            )
            == 0
        )
        tune_stdout = capsys.readouterr().out
        assert "mean_test_adaptive_accuracy" in tune_stdout

        decisions = tmp_path / "decisions.jsonl"
        assert (
            run_cli(["route", "--dataset", annotated, "--policy", policy, "--out", decisions])
            == 0
        )
        lines = decisions.read_text().strip().splitlines()
        assert len(lines) == 60
        assert all(json.loads(l)["decision"] in ("retrieve", "parametric") for l in lines)

        savings_out = tmp_path / "savings.json"
        assert (
            run_cli(
                [
                    "savings",
                    "--dataset", annotated,
                    "--vanilla", run_vanilla,
                    "--retrieval", run_retrieval,
                    "--policy", policy,
                    "--out", savings_out,
                ]
            )
            == 0
        )
        savings = json.loads(savings_out.read_text())
        assert 0.0 <= savings["savings_fraction"] <= 1.0
        assert savings["latency_estimates"]["adaptive_ms"] >= 0

    def test_inputs_never_mutated(self, tmp_path):
        triples = tmp_path / "triples.jsonl"
        write_jsonl(triples, triples_rows(10))
        before = triples.read_bytes()
        out = tmp_path / "dataset.jsonl"
        assert run_cli(["build-dataset", "--triples", triples, "--seed", 0, "--out", out]) == 0
        assert triples.read_bytes() == before

    def test_build_dataset_idempotent(self, tmp_path):
        triples = tmp_path / "triples.jsonl"
        write_jsonl(triples, triples_rows(40))
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        freq = tmp_path / "freq.txt"
        freq.write_text("Widget0001 " * 3 + "Widget0002 " * 40)
        for out in (out_a, out_b):
            assert (
                run_cli(
                    [
                        "build-dataset",
                        "--triples", triples,
                        "--freq-corpus", freq,
                        "--seed", 5,
                        "--out", out,
                    ]
                )
                == 0
            )
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_run_genread_via_endpoint_config(self, tmp_path):
        from mockserver import completions_server
        from popgate.evaluation import read_records

        dataset = tmp_path / "dataset.jsonl"
        write_jsonl(
            dataset,
            [
                {
                    "id": f"S{i}:capital",
                    "question": f"What is the capital of Land{i}?",
                    "answers": [f"City{i}"],
                    "subj": f"Land{i}",
                    "subj_id": f"S{i}",
                    "relation": "capital",
                    "popularity": 1000,
                }
                for i in range(3)
            ],
        )

        def reply(prompt):
            land = prompt.rsplit("Land", 1)[1].split("?", 1)[0].rstrip(".")
            if prompt.startswith("Generate"):
                return f"Land{land} is a country whose capital is City{land}."
            return f"The capital is City{land}."

        with completions_server(reply) as server:
            endpoint = tmp_path / "endpoint.json"
            endpoint.write_text(
                json.dumps(
                    {
                        "base_url": server.base_url,
                        "model": "mock",
                        "cache_dir": str(tmp_path / "lm-cache"),
                    }
                )
            )
            out = tmp_path / "run_genread.jsonl"
            code = run_cli(
                [
                    "run",
                    "--dataset", dataset,
                    "--mode", "genread",
                    "--endpoint", endpoint,
                    "--shots", 0,
                    "--out", out,
                ]
            )
            assert code == 0
            stage1_prompts = [
                r["body"]["prompt"] for r in server.requests if r["body"]["prompt"].startswith("Generate")
            ]
            assert len(stage1_prompts) == 3
        records = read_records(out)
        assert all(r.mode == "genread" for r in records)
        assert all(r.correct for r in records)
        assert all(r.genread_empty_context is False for r in records)

    def test_config_paths_fallback_and_flag_override(self, tmp_path):
        def dataset_rows(n, prefix):
            return [
                {
                    "id": f"{prefix}{i}:director",
                    "question": f"Who was the director of {prefix}{i}?",
                    "answers": [f"Maker{i}"],
                    "subj": f"{prefix}{i}",
                    "subj_id": f"{prefix}{i}",
                    "relation": "director",
                    "popularity": 1000,
                }
                for i in range(n)
            ]

        small = tmp_path / "small.jsonl"
        big = tmp_path / "big.jsonl"
        write_jsonl(small, dataset_rows(2, "A"))
        write_jsonl(big, dataset_rows(5, "B"))
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "paths": {"dataset": str(small)},
                    "run": {"mode": "vanilla", "shots": 0, "seed": 1},
                }
            )
        )

        out_a = tmp_path / "a.jsonl"
        assert run_cli(["run", "--config", config, "--oracle", "--out", out_a]) == 0
        assert len(out_a.read_text().strip().splitlines()) == 2

        out_b = tmp_path / "b.jsonl"
        assert (
            run_cli(
                ["run", "--config", config, "--dataset", big, "--oracle", "--out", out_b]
            )
            == 0
        )
        assert len(out_b.read_text().strip().splitlines()) == 5  # flag wins

    def test_index_idempotent(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        write_jsonl(
            corpus,
            [{"doc_id": f"d{i}", "title": f"T{i}", "text": f"token{i} shared"} for i in range(5)],
        )
        out_a = tmp_path / "a.pgidx"
        out_b = tmp_path / "b.pgidx"
        for out in (out_a, out_b):
            assert run_cli(["index", "--corpus", corpus, "--out", out]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_demo_small(self, tmp_path, capsys):
        out = tmp_path / "demo"
        assert (
            run_cli(["demo", "--seed", 7, "--size", 200, "--repeats", 10, "--out", out]) == 0
        )
        captured = capsys.readouterr()
        report = json.loads(captured.out)
        assert report["adaptive"]["mean_test_adaptive_accuracy"] >= max(
            report["baselines"].values()
        )
        for artifact in (
            "dataset.jsonl",
            "corpus.jsonl",
            "index.pgidx",
            "run_vanilla.jsonl",
            "run_retrieval.jsonl",
            "policy.json",
            "report.json",
        ):
            assert (out / artifact).exists()
