"""Builders for small corpora and libraries shared by the tests."""

import random
from typing import Optional, Sequence

from typegram.corpus.types import (
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
    Vocabulary,
)
from typegram.engine.inference import variable_identifiers
from typegram.lexer.tokens import tokenize
from typegram.ngramdb.database import NGramDatabase
from typegram.ngramdb.labels import LabelTable, sort_pairs

S_LAYOUT = TypeLayout(
    total_width=8,
    fields=(
        FieldRecord("a", 0, 4, "int32_t"),
        FieldRecord("b", 4, 4, "int32_t"),
    ),
)
T_LAYOUT = TypeLayout(
    total_width=16,
    fields=(
        FieldRecord("a", 0, 4, "int32_t"),
        FieldRecord("b", 4, 8, "int64_t"),
        FieldRecord("c", 12, 4, "int32_t"),
    ),
)


def make_type_library() -> TypeLibrary:
    """Primitive, pointer, struct, pointer-to-struct, union and array types."""
    labels = [
        TypeLabel("int32_t", TypeKind.PRIMITIVE),
        TypeLabel("int64_t", TypeKind.PRIMITIVE),
        TypeLabel("char*", TypeKind.POINTER),
        TypeLabel("S", TypeKind.STRUCT, S_LAYOUT),
        TypeLabel("T", TypeKind.STRUCT, T_LAYOUT),
        TypeLabel("S*", TypeKind.POINTER_TO_STRUCT, pointee="S"),
        TypeLabel(
            "U", TypeKind.UNION, TypeLayout(4, (FieldRecord("u", 0, 4, "int32_t"),))
        ),
        TypeLabel("int32_t[4]", TypeKind.ARRAY),
    ]
    return TypeLibrary({label.name: [label] for label in labels})


def make_signature_library(names: Sequence[str]) -> dict[str, SignatureLabel]:
    """One-parameter signatures named after ``names``."""
    return {
        name: SignatureLabel(name, (("arg", "int32_t"),), "int32_t") for name in names
    }


def make_function(
    code: str,
    variables: Optional[dict[str, str]] = None,
    calls: Optional[dict[str, str]] = None,
    *,
    split: Split = Split.TRAIN,
    binary_id: str = "bin",
    address: int = 0x1000,
    bitness: Bitness = Bitness.B64,
    opt_level: Optional[str] = None,
) -> AnnotatedFunction:
    """Build an annotated function."""
    return AnnotatedFunction(
        binary_id=binary_id,
        function_address=address,
        bitness=bitness,
        source_text=code,
        variable_annotations=dict(variables or {}),
        call_annotations=dict(calls or {}),
        split_tag=split,
        opt_level=opt_level,
    )


def make_corpus(
    functions: Sequence[AnnotatedFunction],
    type_library: Optional[TypeLibrary] = None,
    signature_library: Optional[dict[str, SignatureLabel]] = None,
) -> Corpus:
    """Wrap functions into a corpus with the shared type library by default."""
    return Corpus(
        functions=tuple(functions),
        type_library=type_library if type_library is not None else make_type_library(),
        signature_library=signature_library or {},
    )


def unique_context_functions(
    count: int, split: Split = Split.TRAIN
) -> list[AnnotatedFunction]:
    """Functions whose tokens never repeat across functions.

    Every context of every annotated variable is therefore unique to one label.
    """
    labels = ("int32_t", "char*", "S*", "int64_t")
    functions = []
    for i in range(count):
        code = f"int a{i} ; a{i} = b{i} + <NUM> ; c{i} = a{i} ; return c{i} ;"
        functions.append(
            make_function(
                code,
                {
                    f"a{i}": labels[i % len(labels)],
                    f"b{i}": "S",
                    f"c{i}": labels[(i + 1) % len(labels)],
                },
                split=split,
                binary_id=f"bin{i // 10}",
                address=0x1000 + 0x10 * i,
            )
        )
    return functions


_STATEMENTS = (
    "{v} = {w} + <NUM> ;",
    "*(_DWORD *)({a} + <NUM>) = {v} ;",
    "if ( {v} > <NUM> ) {w} = {f} ( {a} , {v} ) ;",
    "{v} = {f} ( {w} ) ;",
    "while ( {v} ) {v} = *(_QWORD *){v} ;",
    "{v} = *(_QWORD *)({a} + <NUM>) ;",
    "if ( !{w} ) return <NUM> ;",
    "{v} += {w} << <NUM> ;",
)
_LABELS = ("int32_t", "int64_t", "char*", "S*", "T", "int32_t[4]")


def realistic_functions(
    count: int,
    seed: int = 0,
    split: Split = Split.TRAIN,
    tokens: int = 120,
) -> list[AnnotatedFunction]:
    """Decompiler-like functions of about ``tokens`` tokens drawn from a shared pool.

    Variable names, callees and statement shapes repeat across functions, so
    contexts recur the way they do in real binaries.
    """
    rng = random.Random(seed)
    functions = []
    for i in range(count):
        arguments = [f"a{j}" for j in range(1, rng.randint(2, 4))]
        head = ", ".join(f"__int64 {a}" for a in arguments)
        lines = [f"__int64 __fastcall sub_{i:X}({head})", "{"]
        while len(tokenize("\n".join(lines)).tokens) < tokens:
            lines.append(
                rng.choice(_STATEMENTS).format(
                    v=f"v{rng.randint(1, 12)}",
                    w=f"v{rng.randint(1, 12)}",
                    a=rng.choice(arguments),
                    f=f"sub_{rng.randint(1, 8)}",
                )
            )
        lines += ["return v1 ;", "}"]
        code = "\n".join(lines)
        names = variable_identifiers(tokenize(code))
        functions.append(
            make_function(
                code,
                {name: rng.choice(_LABELS) for name in names},
                split=split,
                binary_id=f"bin{seed}",
                address=0x1000 + 0x10 * i,
            )
        )
    return functions


def random_database(
    key_count: int, seed: int = 7, n: int = 4, labels: int = 12
) -> NGramDatabase:
    """Random 32-bit signature database with one to five labels per key."""
    rng = random.Random(seed)
    names = tuple(sorted(f"type_{i:02d}" for i in range(labels)))
    entries = {}
    while len(entries) < key_count:
        key = rng.getrandbits(64)
        chosen = rng.sample(range(labels), rng.randint(1, 5))
        entries[key] = sort_pairs((i, rng.randint(1, 1000)) for i in chosen)
    return NGramDatabase(
        n=n,
        bitness=Bitness.B32,
        vocabulary=Vocabulary.SIGNATURES,
        labels=LabelTable(names, tuple(rng.randint(1, 10**12) for _ in names)),
        entries=entries,
    )
