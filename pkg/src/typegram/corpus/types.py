"""Module defining corpus, type-library and signature-library records."""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Iterator, Mapping, Optional

from typegram.lexer.tokens import TokenStream, tokenize


class Bitness(IntEnum):
    """Target word size of a binary."""

    B32 = 32
    B64 = 64


class Split(str, Enum):
    """Corpus partition a function belongs to."""

    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


class Vocabulary(str, Enum):
    """Label vocabulary a database indexes."""

    TYPES = "types"
    SIGNATURES = "signatures"


class TypeKind(str, Enum):
    """Shape class of a type."""

    PRIMITIVE = "primitive"
    POINTER = "pointer"
    STRUCT = "struct"
    POINTER_TO_STRUCT = "pointer_to_struct"
    UNION = "union"
    ARRAY = "array"
    FUNCTION_POINTER = "function_pointer"
    OTHER = "other"


# Kinds that must carry a layout.
COMPOSITE_KINDS = frozenset(
    {TypeKind.STRUCT, TypeKind.POINTER_TO_STRUCT, TypeKind.UNION}
)
# Positive class of struct identification. Arrays and unions stay out.
STRUCT_KINDS = frozenset({TypeKind.STRUCT, TypeKind.POINTER_TO_STRUCT})


@dataclass(frozen=True, slots=True)
class FieldRecord:
    """One field of a composite type."""

    name: str
    offset: int
    width: int
    type_name: str


@dataclass(frozen=True)
class TypeLayout:
    """Memory shape of a composite type, fields ordered by offset."""

    total_width: int
    fields: tuple[FieldRecord, ...] = ()

    def offset_widths(self) -> frozenset[tuple[int, int]]:
        """Return the set of (offset, width) pairs used by the layout metric."""
        return frozenset((f.offset, f.width) for f in self.fields)


@dataclass(frozen=True)
class TypeLabel:
    """Fully qualified type with its layout when composite."""

    name: str
    kind: TypeKind
    layout: Optional[TypeLayout] = None
    bitness: Optional[Bitness] = None
    pointee: Optional[str] = None

    @property
    def is_struct(self) -> bool:
        """True for struct and pointer-to-struct kinds."""
        return self.kind in STRUCT_KINDS


@dataclass(frozen=True)
class SignatureLabel:
    """Function signature label: name, parameters and return type."""

    function_name: str
    parameters: tuple[tuple[str, str], ...] = ()
    return_type_name: str = "void"


class TypeLibrary(Mapping[str, TypeLabel]):
    """Type names mapped to labels, with optional per-bitness variants.

    Indexing by name returns the bitness-neutral entry, or the only variant when
    a name has exactly one. ``resolve`` picks the variant for a bitness.
    """

    def __init__(self, entries: Optional[Mapping[str, list[TypeLabel]]] = None):
        """Initialize from name to variant-list entries."""
        self._entries: dict[str, tuple[TypeLabel, ...]] = {
            name: tuple(variants) for name, variants in (entries or {}).items()
        }

    def __getitem__(self, name: str) -> TypeLabel:
        """Return the bitness-neutral or single variant of ``name``."""
        variants = self._entries[name]
        for label in variants:
            if label.bitness is None:
                return label
        return variants[0]

    def __iter__(self) -> Iterator[str]:
        """Iterate type names."""
        return iter(self._entries)

    def __len__(self) -> int:
        """Return the number of distinct type names."""
        return len(self._entries)

    def variants(self, name: str) -> tuple[TypeLabel, ...]:
        """Return every variant stored under ``name``."""
        return self._entries.get(name, ())

    def resolve(self, name: str, bitness: Optional[Bitness]) -> Optional[TypeLabel]:
        """Return the variant of ``name`` for ``bitness``, or None."""
        neutral = None
        for label in self._entries.get(name, ()):
            if label.bitness is None:
                neutral = label
            elif label.bitness == bitness:
                return label
        return neutral

    def kind_of(
        self, name: str, bitness: Optional[Bitness] = None
    ) -> Optional[TypeKind]:
        """Return the kind of ``name``, or None for unknown names."""
        label = self.resolve(name, bitness)
        if label is None and name in self._entries:
            label = self[name]
        return label.kind if label is not None else None


@dataclass(frozen=True)
class AnnotatedFunction:
    """One decompiled function with its ground-truth annotations."""

    binary_id: str
    function_address: int
    bitness: Bitness
    source_text: str
    variable_annotations: dict[str, str] = field(default_factory=dict)
    call_annotations: dict[str, str] = field(default_factory=dict)
    split_tag: Split = Split.TRAIN
    opt_level: Optional[str] = None

    @cached_property
    def stream(self) -> TokenStream:
        """Normalized token stream of the source text."""
        return tokenize(self.source_text)

    @property
    def identity(self) -> tuple[str, int]:
        """(binary_id, function_address), unique within a corpus."""
        return (self.binary_id, self.function_address)


@dataclass(frozen=True)
class Corpus:
    """Functions plus the libraries every annotation resolves in."""

    functions: tuple[AnnotatedFunction, ...]
    type_library: TypeLibrary = field(default_factory=TypeLibrary)
    signature_library: dict[str, SignatureLabel] = field(default_factory=dict)

    def split(self, tag: Split) -> list[AnnotatedFunction]:
        """Return the functions carrying ``tag``, in corpus order."""
        return [f for f in self.functions if f.split_tag is tag]

    def bitnesses(self, tag: Optional[Split] = None) -> list[Bitness]:
        """Return the bitnesses present (optionally within one split), ascending."""
        return sorted(
            {f.bitness for f in self.functions if tag is None or f.split_tag is tag}
        )

    def find(self, binary_id: str, address: int) -> Optional[AnnotatedFunction]:
        """Return the function with the given identity, or None."""
        return self._by_identity.get((binary_id, address))

    @cached_property
    def _by_identity(self) -> dict[tuple[str, int], AnnotatedFunction]:
        return {f.identity: f for f in self.functions}
