"""Command line interface: ingest, index, query, eval."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import index as index_io
from .config import EngineConfig
from .content import corpus_files, load_corpus, load_source_file
from .errors import MMRagError
from .pipeline import answer_query, build_index, evaluate, make_gateway, read_qa_file


def fail(code: str, message: str) -> None:
    click.echo(f"ERROR {code}: {' '.join(message.split())}", err=True)
    sys.exit(1)


class ErrorReportingGroup(click.Group):
    def invoke(self, ctx: click.Context):  # type: ignore[override]
        try:
            return super().invoke(ctx)
        except MMRagError as exc:
            fail(exc.code, str(exc))
        except OSError as exc:
            fail("E_IO", str(exc))
        except ValueError as exc:
            fail("E_INPUT", str(exc))


def _config(ctx: click.Context) -> EngineConfig:
    return ctx.obj["config"]


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=not text.endswith("\n"))


@click.group(cls=ErrorReportingGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="INI config file.")
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug logging.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, verbose: int) -> None:
    """Multimodal knowledge-graph RAG engine."""
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    ctx.ensure_object(dict)
    ctx.obj["config"] = EngineConfig.load(config_path) if config_path else EngineConfig()


@main.command()
@click.argument("corpus_dir", type=click.Path(file_okay=False))
def ingest(corpus_dir: str) -> None:
    """Validate every document in CORPUS_DIR."""
    files = corpus_files(corpus_dir) if Path(corpus_dir).is_dir() else []
    if not files:
        fail("E_NO_DOCUMENTS", f"no documents in {corpus_dir}")
    seen: dict[str, Path] = {}
    failures = 0
    for path in files:
        try:
            source = load_source_file(path)
            if source.source_id in seen:
                raise MMRagError(f"source_id {source.source_id!r} already used by {seen[source.source_id].name}")
            seen[source.source_id] = path
            click.echo(f"PASS {path.name}: {source.source_id} ({len(source.units)} units)")
        except MMRagError as exc:
            failures += 1
            click.echo(f"FAIL {path.name}: {exc.code}: {exc}")
        except (OSError, UnicodeDecodeError) as exc:
            failures += 1
            click.echo(f"FAIL {path.name}: E_IO: {exc}")
    click.echo(f"{len(files) - failures} passed, {failures} failed")
    if failures:
        sys.exit(1)


@main.command()
@click.argument("corpus_dir", type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Index archive to write.")
@click.option("--chunk-only", is_flag=True, help="Skip graph construction (chunk-only ablation).")
@click.option("--workers", type=int, default=None, help="Concurrent model calls while indexing.")
@click.pass_context
def index(ctx: click.Context, corpus_dir: str, out: str, chunk_only: bool, workers: int | None) -> None:
    """Build an index archive from CORPUS_DIR."""
    config = _config(ctx)
    if chunk_only:
        config = config.with_retrieval(chunk_only_mode=True)
    sources = load_corpus(corpus_dir)
    if not sources:
        fail("E_NO_DOCUMENTS", f"no documents in {corpus_dir}")
    gateway = make_gateway(config, corpus_dir)
    idx = build_index(sources, config, gateway, workers)
    index_io.persist(idx, out)
    manifest_path = Path(out).with_name(Path(out).name + ".manifest.json")
    manifest_path.write_text(json.dumps(idx.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    counts = idx.manifest["counts"]
    click.echo(
        f"indexed {len(sources)} documents: {counts['entities']} entities, "
        f"{counts['relations']} relations, {counts['chunks']} chunks, "
        f"{counts['skipped_units']} skipped units -> {out}"
    )
    for unit in idx.manifest["units"]:
        if unit["status"] != "processed":
            click.echo(f"  {unit['status']} {unit['id']} ({unit['stage']}): {unit['error']}")


@main.command()
@click.argument("index_path", type=click.Path(dir_okay=False))
@click.argument("question")
@click.option("--dry-run", is_flag=True, help="Print the assembled context instead of calling the model.")
@click.option("--json", "as_json", is_flag=True, help="Print ranked candidates as JSON.")
@click.option("--no-reranker", is_flag=True, help="Disable reranking (w/o reranker ablation).")
@click.option("--corpus-root", type=click.Path(file_okay=False), help="Where image references resolve.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write output to a file instead of stdout.")
@click.pass_context
def query(
    ctx: click.Context,
    index_path: str,
    question: str,
    dry_run: bool,
    as_json: bool,
    no_reranker: bool,
    corpus_root: str | None,
    out: str | None,
) -> None:
    """Answer QUESTION from the index at INDEX_PATH."""
    if dry_run and as_json:
        raise click.UsageError("--dry-run and --json are mutually exclusive")
    config = _config(ctx)
    idx = index_io.load(index_path)
    config = config.with_retrieval(chunk_only_mode=bool(idx.manifest.get("chunk_only")))
    if no_reranker:
        config = config.with_retrieval(use_reranker=False)
    gateway = make_gateway(config, corpus_root)
    outcome = answer_query(question, idx, config, gateway, dry_run=dry_run or as_json)
    if as_json:
        _emit(json.dumps(outcome.result.to_json(), indent=2, sort_keys=True) + "\n", out)
    else:
        _emit(outcome.answer, out)


@main.command("eval")
@click.argument("index_path", type=click.Path(dir_okay=False))
@click.argument("qa_file", type=click.Path(dir_okay=False))
@click.option("--strict", is_flag=True, help="Count errored items as wrong instead of excluding them.")
@click.option("--no-reranker", is_flag=True)
@click.option("--corpus-root", type=click.Path(file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Write per-item records as JSONL.")
@click.pass_context
def eval_cmd(
    ctx: click.Context,
    index_path: str,
    qa_file: str,
    strict: bool,
    no_reranker: bool,
    corpus_root: str | None,
    out: str | None,
) -> None:
    """Answer and judge every question in QA_FILE (JSONL of question/reference)."""
    config = _config(ctx)
    items = read_qa_file(qa_file)
    idx = index_io.load(index_path)
    config = config.with_retrieval(chunk_only_mode=bool(idx.manifest.get("chunk_only")))
    if no_reranker:
        config = config.with_retrieval(use_reranker=False)
    summary = evaluate(items, idx, config, make_gateway(config, corpus_root), strict=strict)
    records = "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in summary.records)
    if out:
        Path(out).write_text(records, encoding="utf-8")
    else:
        click.echo(records, nl=False)
    acc = "n/a" if summary.accuracy is None else f"{summary.accuracy:.4f}"
    click.echo(
        f"accuracy {acc} ({summary.correct}/{summary.denominator}; "
        f"{summary.errored} errored of {summary.total}{', strict' if strict else ''})"
    )


if __name__ == "__main__":
    main()
