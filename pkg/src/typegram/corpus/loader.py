"""Module loading and writing corpus, type-library and signature-library files.

Corpus files hold one JSON object per line::

    {"binary_id": "...", "address": "0x401000", "bitness": 64, "code": "...",
     "vars": {"v1": "int32_t"}, "calls": {"sub_401200": "memcpy"},
     "split": "train", "opt": "O2"}

Type libraries map a type name to ``{kind, total_width, fields, bitness?,
pointee?}`` or to a list of such entries, one per bitness. Signature libraries
map a signature name to ``{params: [{name, type}], return}``.
"""

from dataclasses import replace
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from typegram.corpus.types import (
    COMPOSITE_KINDS,
    AnnotatedFunction,
    Bitness,
    Corpus,
    FieldRecord,
    SignatureLabel,
    Split,
    TypeKind,
    TypeLabel,
    TypeLayout,
    TypeLibrary,
)
from typegram.errors import CorpusError, LayoutError
from typegram.utils import (
    check_enum_value,
    format_address,
    parse_address,
    write_jsonl,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class _DuplicateKey(ValueError):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key


def _unique_pairs(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    """JSON object hook rejecting repeated keys instead of keeping the last one."""
    result: dict[str, Any] = {}
    for key, value in pairs:
        if key in result:
            raise _DuplicateKey(key)
        result[key] = value
    return result


def _load_json_document(path: PathLike) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle, object_pairs_hook=_unique_pairs)
    except OSError as exc:
        raise CorpusError(f"cannot read file: {exc.strerror}", str(path))
    except _DuplicateKey as exc:
        raise CorpusError(f"duplicate name {exc.key!r}", str(path))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid JSON: {exc.msg}", str(path), exc.lineno)
    if not isinstance(document, dict):
        raise CorpusError("expected a JSON object at top level", str(path))
    return document


def parse_layout(name: str, entry: dict[str, Any]) -> TypeLayout:
    """Build a layout from a type-library entry and check its invariants.

    Offsets must strictly increase and every field must end within the total
    width. Fields may overlap in bytes (unions) as long as offsets differ.

    Raises:
        LayoutError: On decreasing or duplicate offsets or out-of-bounds fields.

    """
    total_width = int(entry.get("total_width", 0))
    fields = []
    previous: Optional[int] = None
    for raw in entry.get("fields", []):
        record = FieldRecord(
            name=str(raw["name"]),
            offset=int(raw["offset"]),
            width=int(raw["width"]),
            type_name=str(raw.get("type", "")),
        )
        if record.offset < 0 or record.width < 0:
            raise LayoutError(f"{name}: negative offset or width in {record.name!r}")
        if previous is not None and record.offset == previous:
            raise LayoutError(f"{name}: two fields share offset {record.offset}")
        if previous is not None and record.offset < previous:
            raise LayoutError(
                f"{name}: field offsets must increase "
                f"({record.offset} follows {previous})"
            )
        if record.offset + record.width > total_width:
            raise LayoutError(
                f"{name}: field {record.name!r} ends past total width {total_width}"
            )
        fields.append(record)
        previous = record.offset
    return TypeLayout(total_width=total_width, fields=tuple(fields))


def _parse_type_entry(name: str, entry: dict[str, Any]) -> TypeLabel:
    kind = check_enum_value(entry.get("kind", TypeKind.OTHER.value), TypeKind)
    bitness = entry.get("bitness")
    layout = None
    # A pointer to struct without fields of its own takes its pointee's layout.
    borrowed = kind is TypeKind.POINTER_TO_STRUCT and entry.get("pointee")
    if entry.get("fields") or (kind in COMPOSITE_KINDS and not borrowed):
        layout = parse_layout(name, entry)
    return TypeLabel(
        name=name,
        kind=kind,
        layout=layout,
        bitness=check_enum_value(bitness, Bitness) if bitness is not None else None,
        pointee=entry.get("pointee"),
    )


def _with_pointee_layout(
    library: TypeLibrary, label: TypeLabel, path: PathLike
) -> TypeLabel:
    """Check the pointee of a pointer to struct and borrow its layout.

    A pointer without bitness whose pointee only has per-bitness variants keeps
    no layout of its own; readers follow the pointee for the bitness at hand.

    Raises:
        CorpusError: If the pointee is unknown or is not a struct.

    """
    pointee = str(label.pointee)
    if label.bitness is not None:
        target = library.resolve(pointee, label.bitness)
        targets = [target] if target is not None else []
    else:
        targets = list(library.variants(pointee))
    if not targets:
        raise CorpusError(
            f"type {label.name!r} points to unknown type {pointee!r}", str(path)
        )
    for target in targets:
        if target.kind is not TypeKind.STRUCT:
            raise CorpusError(
                f"type {label.name!r} points to {pointee!r}, "
                f"a {target.kind.value} rather than a struct",
                str(path),
            )
    if label.layout is not None:
        return label
    source = library.resolve(pointee, label.bitness)
    if source is None and len(targets) == 1:
        source = targets[0]
    return label if source is None else replace(label, layout=source.layout)


def load_type_library(path: PathLike) -> TypeLibrary:
    """Load a type-library file.

    Args:
        path (str | Path): JSON document mapping type name to entry (or list).

    Returns:
        TypeLibrary: Every composite entry carries a validated layout, and
        pointers to structs carry their pointee's.

    Raises:
        CorpusError: On invalid JSON, a name defined twice for one bitness, or a
            pointer to struct whose pointee is unknown or not a struct.
        LayoutError: On overlapping offsets or decreasing offsets.

    """
    document = _load_json_document(path)
    entries: dict[str, list[TypeLabel]] = {}
    for name, raw in document.items():
        variants = raw if isinstance(raw, list) else [raw]
        labels: list[TypeLabel] = []
        for variant in variants:
            try:
                label = _parse_type_entry(name, variant)
            except LayoutError as exc:
                raise LayoutError(str(exc), str(path))
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"malformed entry for {name!r}: {exc}", str(path))
            if any(other.bitness == label.bitness for other in labels):
                raise CorpusError(
                    f"type {name!r} defined twice for bitness {label.bitness}",
                    str(path),
                )
            labels.append(label)
        entries[name] = labels
    parsed = TypeLibrary(entries)
    for labels in entries.values():
        labels[:] = [
            (
                _with_pointee_layout(parsed, label, path)
                if label.kind is TypeKind.POINTER_TO_STRUCT and label.pointee
                else label
            )
            for label in labels
        ]
    logger.info("Loaded %d types from %s", len(entries), path)
    return TypeLibrary(entries)


def load_signature_library(path: PathLike) -> dict[str, SignatureLabel]:
    """Load a signature-library file.

    Raises:
        CorpusError: On invalid JSON, duplicate names or malformed entries.

    """
    document = _load_json_document(path)
    library = {}
    for name, raw in document.items():
        try:
            library[name] = SignatureLabel(
                function_name=str(raw.get("name", name)),
                parameters=tuple(
                    (str(p["name"]), str(p["type"])) for p in raw.get("params", [])
                ),
                return_type_name=str(raw.get("return", "void")),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise CorpusError(f"malformed signature {name!r}: {exc}", str(path))
    logger.info("Loaded %d signatures from %s", len(library), path)
    return library


def _parse_annotations(raw: Any, key: str) -> dict[str, str]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ValueError(f"'{key}' must be an object")
    return {str(name): str(label) for name, label in raw.items()}


def _parse_function(record: dict[str, Any]) -> AnnotatedFunction:
    try:
        bitness = check_enum_value(record["bitness"], Bitness)
    except ValueError:
        raise ValueError(f"invalid bitness {record['bitness']!r}, expected 32 or 64")
    return AnnotatedFunction(
        binary_id=str(record["binary_id"]),
        function_address=parse_address(record["address"]),
        bitness=bitness,
        source_text=str(record["code"]),
        variable_annotations=_parse_annotations(record.get("vars"), "vars"),
        call_annotations=_parse_annotations(record.get("calls"), "calls"),
        split_tag=check_enum_value(record.get("split", Split.TRAIN.value), Split),
        opt_level=record.get("opt"),
    )


def _check_function(
    function: AnnotatedFunction,
    type_library: TypeLibrary,
    signature_library: dict[str, SignatureLabel],
) -> None:
    occurrences = function.stream.occurrences
    for identifier, type_name in function.variable_annotations.items():
        if identifier not in occurrences:
            raise ValueError(f"annotated identifier {identifier!r} not in code")
        if type_library.resolve(type_name, function.bitness) is None:
            raise ValueError(
                f"unresolved type {type_name!r} for {identifier!r} "
                f"at bitness {int(function.bitness)}"
            )
    for callee, signature in function.call_annotations.items():
        if callee not in occurrences:
            raise ValueError(f"annotated callee {callee!r} not in code")
        if signature not in signature_library:
            raise ValueError(f"unresolved signature {signature!r} for {callee!r}")


def iter_corpus(
    path: PathLike,
    type_library: TypeLibrary,
    signature_library: Optional[dict[str, SignatureLabel]] = None,
) -> Iterable[AnnotatedFunction]:
    """Stream validated functions from a corpus file.

    Raises:
        CorpusError: With the line number of the first bad record.

    """
    signature_library = signature_library or {}
    seen: set[tuple[str, int]] = set()
    for lineno, line in _numbered_lines(path):
        try:
            # Repeated identifiers inside "vars" or "calls" are conflicts.
            record = json.loads(line, object_pairs_hook=_unique_pairs)
            if not isinstance(record, dict):
                raise ValueError("record must be a JSON object")
            function = _parse_function(record)
            _check_function(function, type_library, signature_library)
        except _DuplicateKey as exc:
            raise CorpusError(f"key {exc.key!r} given twice", str(path), lineno)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON: {exc.msg}", str(path), lineno)
        except KeyError as exc:
            raise CorpusError(f"missing key {exc}", str(path), lineno)
        except ValueError as exc:
            raise CorpusError(str(exc), str(path), lineno)
        if function.identity in seen:
            raise CorpusError(
                f"duplicate function {function.binary_id}@"
                f"{format_address(function.function_address)}",
                str(path),
                lineno,
            )
        seen.add(function.identity)
        yield function


def load_corpus(
    path: PathLike,
    type_library: Union[TypeLibrary, PathLike, None] = None,
    signature_library: Union[dict[str, SignatureLabel], PathLike, None] = None,
) -> Corpus:
    """Load a corpus file and resolve it against its libraries.

    Args:
        path (str | Path): Line-delimited corpus file.
        type_library: Loaded library or path to a type-library file.
        signature_library: Loaded library or path to a signature-library file.

    Returns:
        Corpus: Fully resolved, immutable corpus.

    Raises:
        CorpusError: On parse errors (with line number), unresolved annotation
            names, duplicate (binary_id, address) pairs or invalid bitness.

    """
    if type_library is None:
        type_library = TypeLibrary()
    elif not isinstance(type_library, TypeLibrary):
        type_library = load_type_library(type_library)
    if signature_library is None:
        signature_library = {}
    elif not isinstance(signature_library, dict):
        signature_library = load_signature_library(signature_library)

    functions = tuple(iter_corpus(path, type_library, signature_library))
    logger.info("Loaded %d functions from %s", len(functions), path)
    return Corpus(
        functions=functions,
        type_library=type_library,
        signature_library=signature_library,
    )


def _numbered_lines(path: PathLike) -> Iterable[tuple[int, str]]:
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read file: {exc.strerror}", str(path))
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if line.strip():
                yield lineno, line


def _type_entry(label: TypeLabel) -> dict[str, Any]:
    entry: dict[str, Any] = {"kind": label.kind.value}
    if label.bitness is not None:
        entry["bitness"] = int(label.bitness)
    if label.pointee is not None:
        entry["pointee"] = label.pointee
    if label.layout is not None:
        entry["total_width"] = label.layout.total_width
        entry["fields"] = [
            {"name": f.name, "offset": f.offset, "width": f.width, "type": f.type_name}
            for f in label.layout.fields
        ]
    return entry


def dump_type_library(library: TypeLibrary, path: PathLike) -> None:
    """Write a type library in the format ``load_type_library`` reads."""
    document: dict[str, Any] = {}
    for name in library:
        variants = [_type_entry(label) for label in library.variants(name)]
        document[name] = variants[0] if len(variants) == 1 else variants
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2, sort_keys=True)


def dump_signature_library(
    library: dict[str, SignatureLabel], path: PathLike
) -> None:
    """Write a signature library in the format ``load_signature_library`` reads."""
    document = {
        name: {
            "name": sig.function_name,
            "params": [{"name": p, "type": t} for p, t in sig.parameters],
            "return": sig.return_type_name,
        }
        for name, sig in library.items()
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2, sort_keys=True)


def function_record(function: AnnotatedFunction) -> dict[str, Any]:
    """Return the corpus-file JSON object of one function."""
    record: dict[str, Any] = {
        "binary_id": function.binary_id,
        "address": format_address(function.function_address),
        "bitness": int(function.bitness),
        "code": function.source_text,
        "vars": dict(function.variable_annotations),
        "calls": dict(function.call_annotations),
        "split": function.split_tag.value,
    }
    if function.opt_level is not None:
        record["opt"] = function.opt_level
    return record


def dump_corpus(functions: Iterable[AnnotatedFunction], path: PathLike) -> int:
    """Write functions as a corpus file and return how many were written."""
    return write_jsonl(path, (function_record(f) for f in functions))
