"""Module grouping per-radius databases into ensembles and reading manifests."""

from dataclasses import dataclass
import json
import logging
from pathlib import Path
from typing import Any, Sequence, Union

from typegram.corpus.types import Bitness, Vocabulary
from typegram.errors import DatabaseFormatError, ParameterMismatchError
from typegram.ngramdb.labels import LabelTable
from typegram.protocol import NGramStore, QueryResult
from typegram.utils import check_enum_value

logger = logging.getLogger(__name__)

DEFAULT_PORTFOLIO = (2, 4, 8, 12, 48)
COMPACT_PORTFOLIO = (2, 8, 16, 64)
LEGACY_PORTFOLIO = (2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 30, 60)
PORTFOLIO_PRESETS = {
    "default": DEFAULT_PORTFOLIO,
    "compact": COMPACT_PORTFOLIO,
    "legacy": LEGACY_PORTFOLIO,
}

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def check_portfolio(portfolio: Sequence[int]) -> tuple[int, ...]:
    """Return the portfolio as a tuple after checking it strictly increases.

    Raises:
        ValueError: If the portfolio is empty, unsorted or holds radii below 1.

    """
    ns = tuple(int(n) for n in portfolio)
    if not ns:
        raise ValueError("portfolio must name at least one window radius")
    if ns[0] < 1 or any(a >= b for a, b in zip(ns, ns[1:])):
        raise ValueError(f"portfolio must be strictly increasing radii >= 1: {ns}")
    return ns


@dataclass(frozen=True, eq=False)
class DatabaseEnsemble:
    """Databases of increasing radius sharing bitness, vocabulary and labels."""

    databases: tuple[NGramStore, ...]
    labels: LabelTable
    bitness: Bitness
    vocabulary: Vocabulary

    def __post_init__(self) -> None:
        """Check that every member agrees with the ensemble parameters.

        Raises:
            ParameterMismatchError: On any disagreement or unsorted radii.

        """
        try:
            check_portfolio([db.n for db in self.databases])
        except ValueError as exc:
            raise ParameterMismatchError(str(exc))
        for db in self.databases:
            if db.bitness != self.bitness or db.vocabulary != self.vocabulary:
                raise ParameterMismatchError(
                    f"database n={db.n} is {int(db.bitness)}-bit "
                    f"{db.vocabulary.value}, ensemble is {int(self.bitness)}-bit "
                    f"{self.vocabulary.value}"
                )
            if db.labels.names != self.labels.names:
                raise ParameterMismatchError(
                    f"database n={db.n} does not share the ensemble label table"
                )

    @property
    def ns(self) -> tuple[int, ...]:
        """Window radii, ascending."""
        return tuple(db.n for db in self.databases)

    @property
    def n_max(self) -> int:
        """Largest window radius."""
        return self.databases[-1].n

    def query(self, position: int, key: int, k: int = 3) -> QueryResult:
        """Query the member database at ``position``."""
        return self.databases[position].query(key, k)

    def close(self) -> None:
        """Release memory maps held by members."""
        for db in self.databases:
            close = getattr(db, "close", None)
            if callable(close):
                close()


def database_filename(vocabulary: Vocabulary, bitness: Bitness, n: int) -> str:
    """Name of a member database file inside an ensemble directory."""
    return f"{vocabulary.value}-{int(bitness)}-n{n}.tgdb"


def save_ensemble(ensemble: DatabaseEnsemble, directory: Union[str, Path]) -> Path:
    """Serialize every member and write the manifest; return the manifest path."""
    from typegram.ngramdb.storage import serialize

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    members = []
    for db in ensemble.databases:
        name = database_filename(ensemble.vocabulary, ensemble.bitness, db.n)
        serialize(db, directory / name)
        members.append({"n": db.n, "path": name})
    manifest: dict[str, Any] = {
        "format_version": MANIFEST_VERSION,
        "bitness": int(ensemble.bitness),
        "vocabulary": ensemble.vocabulary.value,
        "databases": members,
    }
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
    logger.info("Wrote ensemble manifest %s", path)
    return path


def read_manifest(path: Union[str, Path]) -> dict[str, Any]:
    """Read and check an ensemble manifest.

    Raises:
        DatabaseFormatError: On unreadable JSON, wrong version or missing keys.

    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            manifest = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatabaseFormatError(f"cannot read manifest {path}: {exc}")
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DatabaseFormatError(
            f"manifest {path} has version {manifest.get('format_version')}, "
            f"expected {MANIFEST_VERSION}"
        )
    for key in ("bitness", "vocabulary", "databases"):
        if key not in manifest:
            raise DatabaseFormatError(f"manifest {path} lacks '{key}'")
    return manifest


def load_ensemble(path: Union[str, Path], verify: bool = True) -> DatabaseEnsemble:
    """Open every database named by a manifest as a memory map.

    Raises:
        DatabaseFormatError: On manifest or database file problems.
        ParameterMismatchError: When members disagree with the manifest.

    """
    from typegram.ngramdb.storage import open_mapped

    path = Path(path)
    manifest = read_manifest(path)
    bitness = check_enum_value(manifest["bitness"], Bitness)
    vocabulary = check_enum_value(manifest["vocabulary"], Vocabulary)
    databases = []
    for member in manifest["databases"]:
        db = open_mapped(path.parent / member["path"], verify=verify)
        if db.n != member["n"]:
            raise ParameterMismatchError(
                f"{member['path']} holds n={db.n}, manifest says n={member['n']}"
            )
        databases.append(db)
    if not databases:
        raise DatabaseFormatError(f"manifest {path} lists no databases")
    return DatabaseEnsemble(
        databases=tuple(databases),
        labels=databases[0].labels,
        bitness=bitness,
        vocabulary=vocabulary,
    )
